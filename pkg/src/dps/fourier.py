"""Unitary discrete Fourier transforms (1D and 2D, radix-2 lengths only).

Both directions carry the 1/sqrt(N) normalization, so the forward and
inverse transforms are exact adjoints and Parseval's identity holds.
"""

import numpy as np

from . import kernels


def _check_pow2(n: int) -> None:
    if n < 1 or (n & (n - 1)):
        raise ValueError(f"transform length {n} must be a power of two")


def dft_forward(s: np.ndarray) -> np.ndarray:
    """Unitary DFT along the last axis; accepts real or complex input."""
    s = np.asarray(s)
    n = s.shape[-1]
    _check_pow2(n)
    z = s.reshape(-1, n).astype(np.complex128)
    out = kernels.fft_batch(z, -1) / np.sqrt(n)
    return out.reshape(s.shape)


def dft_inverse(x: np.ndarray) -> np.ndarray:
    """Adjoint (= inverse) of :func:`dft_forward`."""
    x = np.asarray(x)
    n = x.shape[-1]
    _check_pow2(n)
    z = x.reshape(-1, n).astype(np.complex128)
    out = kernels.fft_batch(z, +1) / np.sqrt(n)
    return out.reshape(x.shape)


def dft2_forward(img: np.ndarray) -> np.ndarray:
    """Separable unitary 2D DFT over the last two axes."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    _check_pow2(h)
    _check_pow2(w)
    out = dft_forward(img.astype(np.complex128))
    out = dft_forward(out.swapaxes(-1, -2)).swapaxes(-1, -2)
    return out


def dft2_inverse(grid: np.ndarray) -> np.ndarray:
    """Adjoint (= inverse) of :func:`dft2_forward`."""
    grid = np.asarray(grid)
    h, w = grid.shape[-2:]
    _check_pow2(h)
    _check_pow2(w)
    out = dft_inverse(grid.astype(np.complex128))
    out = dft_inverse(out.swapaxes(-1, -2)).swapaxes(-1, -2)
    return out
