"""Joint learning of probabilistic Fourier subsampling and unrolled
proximal-gradient signal recovery."""

__version__ = "0.1.0"
