"""Reconstruction-quality metrics: PSNR, windowed SSIM, report export."""

from __future__ import annotations

import csv
import math

import numpy as np

SSIM_WINDOW = 8
SSIM_C1_FACTOR = 0.01
SSIM_C2_FACTOR = 0.03


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))


def psnr(pred: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs give +inf."""
    err = mse(pred, ref)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over uniform sliding windows (stride 1).

    Constants C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if a.ndim == 1:
        a = a[None, :]
        b = b[None, :]
        window = min(window, a.shape[1])
    if a.shape[1] < window:
        raise ValueError("images smaller than the SSIM window")
    win_h = min(window, a.shape[0])
    npix = window * win_h
    c1 = (SSIM_C1_FACTOR * peak) ** 2
    c2 = (SSIM_C2_FACTOR * peak) ** 2

    def sums(img):
        pad = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
        np.cumsum(np.cumsum(img, axis=0), axis=1, out=pad[1:, 1:])
        return (
            pad[win_h:, window:]
            - pad[: img.shape[0] + 1 - win_h, window:]
            - pad[win_h:, : img.shape[1] + 1 - window]
            + pad[: img.shape[0] + 1 - win_h, : img.shape[1] + 1 - window]
        )

    mu_a = sums(a) / npix
    mu_b = sums(b) / npix
    var_a = sums(a * a) / npix - mu_a**2
    var_b = sums(b * b) / npix - mu_b**2
    cov = sums(a * b) / npix - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def lowfreq_fraction(indices: np.ndarray, shape, radius_frac: float = 0.25) -> float:
    """Fraction of selected coefficients inside the centered low-frequency
    disk of radius radius_frac * (min(h, w) / 2)."""
    from .sampler import freq_radius_2d

    h, w = shape
    radius = freq_radius_2d(h, w)[np.asarray(indices, dtype=np.int64)]
    return float(np.mean(radius <= radius_frac * (min(h, w) / 2.0)))


def write_report(path, rows: list, peak: float = 1.0) -> None:
    """Per-example metric rows plus an aggregate footer.

    rows: list of dicts with keys 'index', 'mse', 'psnr' and optional
    'ssim'. The header records the frozen SSIM parameters.
    """
    has_ssim = any("ssim" in r for r in rows)
    fields = ["index", "mse", "psnr"] + (["ssim"] if has_ssim else [])
    with open(path, "w", newline="") as f:
        f.write(
            f"# ssim_window={SSIM_WINDOW} c1=({SSIM_C1_FACTOR}*peak)^2 "
            f"c2=({SSIM_C2_FACTOR}*peak)^2 peak={peak}\n"
        )
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in fields})
        finite = [r for r in rows if math.isfinite(r["psnr"])]
        footer = {
            "index": "aggregate-mean/std",
            "mse": np.mean([r["mse"] for r in rows]),
            "psnr": f"{np.mean([r['psnr'] for r in finite]):.6f}/{np.std([r['psnr'] for r in finite]):.6f}",
        }
        if has_ssim:
            footer["ssim"] = np.mean([r["ssim"] for r in rows])
        writer.writerow(footer)
