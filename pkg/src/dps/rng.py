"""Seeded, splittable random generation built on the counter-based Philox
bit generator. Equal (seed, stream labels) always give bit-identical
streams, so batch workers can own independent reproducible substreams.
"""

from __future__ import annotations

import hashlib

import numpy as np

# uniform draws for Gumbel noise are clamped away from {0, 1} so the double
# log can never produce an infinity
_U_LO = 1e-20
_U_HI = 1.0 - 1e-16


def _derive_key(seed: int, path: tuple) -> np.ndarray:
    """Hash (seed, stream labels) into a 128-bit Philox key."""
    h = hashlib.blake2s()
    h.update(str(int(seed)).encode())
    for label in path:
        h.update(b"/")
        h.update(str(label).encode())
    digest = h.digest()
    lo = int.from_bytes(digest[:8], "little")
    hi = int.from_bytes(digest[8:16], "little")
    return np.array([lo, hi], dtype=np.uint64)


class RngHandle:
    """A seeded random stream; ``substream`` derives independent children."""

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(seed, self._path)))

    def substream(self, *labels) -> "RngHandle":
        return RngHandle(self.seed, self._path + labels)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape, sigma: float = 1.0) -> np.ndarray:
        if sigma == 0:
            return np.zeros(shape)
        return self._gen.normal(0.0, sigma, shape)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def choice_without_replacement(self, n: int, m: int) -> np.ndarray:
        return self._gen.choice(n, size=m, replace=False)

    def shuffle(self, arr: np.ndarray) -> None:
        self._gen.shuffle(arr)


def gumbel_noise(shape, rng: RngHandle) -> np.ndarray:
    """i.i.d. standard Gumbel samples -log(-log(u)), u uniform on (0,1)."""
    u = np.clip(rng.uniform(shape), _U_LO, _U_HI)
    return -np.log(-np.log(u))


def gaussian_noise(shape, sigma: float, rng: RngHandle) -> np.ndarray:
    """Zero-mean normal samples with standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return rng.normal(shape, sigma)
