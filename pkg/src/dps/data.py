"""Synthetic sparse datasets (1D vectors, 2D images) and their file format.

Dataset files carry a magic/version header and a JSON spec block followed
by a little-endian float64 payload, so a dataset is both bit-exact on
round-trip and regenerable from (spec, seed).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .fourier import dft2_forward, dft_forward
from .rng import RngHandle

MAGIC = b"DPSDATA\x00"
VERSION = 1

_BLUR_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def gen_sparse_1d(n: int, k: int, rng: RngHandle, batch: int = None):
    """Random k-sparse real vectors and their unitary spectra.

    Support is uniform without replacement, amplitudes i.i.d. standard
    normal. Returns (s, x) with shapes (batch, n) / (n,) when batch=None.
    """
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    b = 1 if batch is None else batch
    s = np.zeros((b, n))
    if k > 0:
        support = np.argsort(rng.uniform((b, n)), axis=1)[:, :k]
        amps = rng.normal((b, k))
        np.put_along_axis(s, support, amps, axis=1)
    x = dft_forward(s)
    if batch is None:
        return s[0], x[0]
    return s, x


def _circular_blur(img: np.ndarray) -> np.ndarray:
    """Small separable binomial blur with wrap-around boundaries."""
    out = np.zeros_like(img)
    for off, c in zip(range(-2, 3), _BLUR_TAPS):
        out += c * np.roll(img, off, axis=-1)
    out2 = np.zeros_like(out)
    for off, c in zip(range(-2, 3), _BLUR_TAPS):
        out2 += c * np.roll(out, off, axis=-2)
    return out2


def gen_sparse_2d(h: int, w: int, k: int, rng: RngHandle, blur: bool = True, batch: int = None):
    """Sparse point-scatterer images, optionally blurred into few-pixel
    features, normalized into [0, 1]; plus their 2D spectra.

    Amplitudes are folded-normal (|N(0,1)|) so the zero background survives
    the [0, 1] normalization.
    """
    n = h * w
    if not 0 < k <= n:
        raise ValueError("need 0 < k <= h*w")
    b = 1 if batch is None else batch
    flat = np.zeros((b, n))
    support = np.argsort(rng.uniform((b, n)), axis=1)[:, :k]
    amps = np.abs(rng.normal((b, k)))
    np.put_along_axis(flat, support, amps, axis=1)
    s = flat.reshape(b, h, w)
    if blur:
        s = _circular_blur(s)
    peak = s.reshape(b, -1).max(axis=1)
    s /= np.maximum(peak, 1e-300)[:, None, None]
    x = dft2_forward(s)
    if batch is None:
        return s[0], x[0]
    return s, x


@dataclass
class Dataset:
    """Signals per split plus the generation spec that produced them."""

    spec: dict
    signals: dict  # split -> real array (count, n) or (count, h, w)

    def spectra(self, split: str) -> np.ndarray:
        sig = self.signals[split]
        if sig.ndim == 3:
            return dft2_forward(sig)
        return dft_forward(sig)

    def counts(self) -> dict:
        return {k: v.shape[0] for k, v in self.signals.items()}


def make_2d_dataset(
    h: int,
    w: int,
    k: int,
    seed: int,
    n_train: int = 800,
    n_val: int = 200,
    n_test: int = 300,
    blur: bool = True,
) -> Dataset:
    rng = RngHandle(seed).substream("dataset2d")
    spec = {
        "kind": "sparse2d",
        "shape": [h, w],
        "k": k,
        "blur": blur,
        "amplitude": "folded-normal",
        "seed": seed,
        "splits": {"train": n_train, "val": n_val, "test": n_test},
    }
    signals = {}
    for split, count in spec["splits"].items():
        s, _ = gen_sparse_2d(h, w, k, rng.substream(split), blur=blur, batch=count)
        signals[split] = s
    return Dataset(spec, signals)


def save_dataset(path, ds: Dataset) -> None:
    header = json.dumps({"spec": ds.spec, "order": list(ds.signals)}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for split in ds.signals:
            arr = np.ascontiguousarray(ds.signals[split], dtype="<f8")
            f.write(arr.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError("not a dataset file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        spec = header["spec"]
        if spec["kind"] == "sparse2d":
            shape = tuple(spec["shape"])
        else:
            shape = (spec["n"],)
        signals = {}
        for split in header["order"]:
            count = spec["splits"][split]
            raw = f.read(count * int(np.prod(shape)) * 8)
            arr = np.frombuffer(raw, dtype="<f8").reshape((count, *shape)).copy()
            signals[split] = arr
    return Dataset(spec, signals)
