import numpy as np
import pytest

from dps.rng import RngHandle


@pytest.fixture
def rng():
    return RngHandle(1234)


def naive_dft(s: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(N^2) unitary DFT sum, the independent oracle for the FFT."""
    s = np.asarray(s, dtype=np.complex128)
    n = s.shape[-1]
    sign = 1 if inverse else -1
    mat = np.exp(sign * 2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    return s @ mat.T


def naive_dft2(img: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Naive 2D unitary DFT double sum."""
    img = np.asarray(img, dtype=np.complex128)
    h, w = img.shape
    sign = 1 if inverse else -1
    wh = np.exp(sign * 2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h) / np.sqrt(h)
    ww = np.exp(sign * 2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w) / np.sqrt(w)
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            out[u, v] = wh[u] @ img @ ww[v]
    return out
