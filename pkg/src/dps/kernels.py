"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time: set ``DPS_DISABLE_NUMBA=1`` to
force the numpy path (also used automatically when numba is unavailable).
Both paths compute identical algorithms; ``benchmarks/bench_kernels.py``
compares them.
"""

import os

import numpy as np

_DISABLE = os.environ.get("DPS_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

if not _DISABLE:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False


def using_numba() -> bool:
    """True when the numba fast path is active."""
    return HAVE_NUMBA


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_batch_numpy(z: np.ndarray, sign: int) -> np.ndarray:
    """Radix-2 FFT along the last axis of a (batch, n) complex array.

    sign=-1 is the forward transform exp(-2*pi*i*j*k/n); no normalization
    is applied here (callers scale by 1/sqrt(n) for the unitary transform).
    """
    b, n = z.shape
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    out = z[:, _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        out = out.reshape(b, n // size, size)
        even = out[:, :, :half]
        odd = out[:, :, half:] * tw
        out = np.concatenate((even + odd, even - odd), axis=2).reshape(b, n)
        size *= 2
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _fft_batch_nb(z, sign):  # pragma: no cover - exercised via fft_batch
        b, n = z.shape
        # bit-reversal permutation, in place
        j = 0
        for i in range(1, n):
            bit = n >> 1
            while j & bit:
                j ^= bit
                bit >>= 1
            j |= bit
            if i < j:
                for e in range(b):
                    tmp = z[e, i]
                    z[e, i] = z[e, j]
                    z[e, j] = tmp
        size = 2
        while size <= n:
            half = size // 2
            step = sign * 2.0 * np.pi / size
            for k in range(half):
                w = complex(np.cos(step * k), np.sin(step * k))
                for start in range(0, n, size):
                    i = start + k
                    for e in range(b):
                        u = z[e, i]
                        v = z[e, i + half] * w
                        z[e, i] = u + v
                        z[e, i + half] = u - v
            size *= 2
        return z

    def fft_batch(z: np.ndarray, sign: int) -> np.ndarray:
        return _fft_batch_nb(np.ascontiguousarray(z, dtype=np.complex128), sign)

else:

    def fft_batch(z: np.ndarray, sign: int) -> np.ndarray:
        return fft_batch_numpy(np.asarray(z, dtype=np.complex128), sign)


def masked_softmax_grad_numpy(
    keys: np.ndarray,
    order: np.ndarray,
    upstream: np.ndarray,
    tau: float,
    shared: bool,
) -> np.ndarray:
    """Accumulate softmax-relaxation gradients for sequential masked draws.

    keys:     (batch, m, n) perturbed logits per draw, or (batch, 1, n)
              when all draws share one perturbation (top-M mode); the
              -inf masks are rebuilt from ``order``
    order:    (batch, m) indices selected at each draw
    upstream: (batch, m, n) gradient w.r.t. the one-hot selection rows
    tau:      softmax temperature
    shared:   True accumulates all draws into one length-n vector (top-M
              mode), False keeps one row per draw (per-sample mode)

    Returns (m, n) or (n,) gradient summed over the batch.
    """
    b, m, n = upstream.shape
    grad = np.zeros(n if shared else (m, n))
    masked = np.zeros((b, n), dtype=bool)
    rows = np.arange(b)
    for d in range(m):
        k = keys[:, min(d, keys.shape[1] - 1), :] / tau
        k = np.where(masked, -np.inf, k)
        k -= k.max(axis=1, keepdims=True)
        p = np.exp(k)
        p /= p.sum(axis=1, keepdims=True)
        u = upstream[:, d, :]
        g = p * (u - (p * u).sum(axis=1, keepdims=True)) / tau
        g[masked] = 0.0
        if shared:
            grad += g.sum(axis=0)
        else:
            grad[d] += g.sum(axis=0)
        masked[rows, order[:, d]] = True
    return grad


def accumulate_outer_numpy(out: np.ndarray, row: np.ndarray, col: np.ndarray) -> None:
    """out[e, m, n] += row[e, m] * col[e, n] (all real)."""
    out += row[:, :, None] * col[:, None, :]


if HAVE_NUMBA:

    @njit(cache=True)
    def _masked_softmax_grad_nb(keys, order, upstream, tau, grad_out, shared):
        b, m, n = upstream.shape
        kd_max = keys.shape[1] - 1
        p = np.empty(n)
        for e in range(b):
            masked = np.zeros(n, dtype=np.bool_)
            for d in range(m):
                kd = min(d, kd_max)
                hi = -np.inf
                for i in range(n):
                    if not masked[i] and keys[e, kd, i] / tau > hi:
                        hi = keys[e, kd, i] / tau
                tot = 0.0
                for i in range(n):
                    if masked[i]:
                        p[i] = 0.0
                    else:
                        p[i] = np.exp(keys[e, kd, i] / tau - hi)
                        tot += p[i]
                dot = 0.0
                for i in range(n):
                    p[i] /= tot
                    dot += p[i] * upstream[e, d, i]
                row = 0 if shared else d
                for i in range(n):
                    if not masked[i]:
                        grad_out[row, i] += p[i] * (upstream[e, d, i] - dot) / tau
                masked[order[e, d]] = True
        return grad_out

    def masked_softmax_grad(keys, order, upstream, tau, shared):
        m, n = upstream.shape[1], upstream.shape[2]
        out = np.zeros((1 if shared else m, n))
        _masked_softmax_grad_nb(
            np.ascontiguousarray(keys, dtype=np.float64),
            np.ascontiguousarray(order, dtype=np.int64),
            np.ascontiguousarray(upstream, dtype=np.float64),
            float(tau),
            out,
            shared,
        )
        return out[0] if shared else out

    @njit(cache=True)
    def _accumulate_outer_nb(out, row, col):
        b, m = row.shape
        n = col.shape[1]
        for e in range(b):
            for i in range(m):
                r = row[e, i]
                for j in range(n):
                    out[e, i, j] += r * col[e, j]

    def accumulate_outer(out, row, col):
        _accumulate_outer_nb(
            out,
            np.ascontiguousarray(row, dtype=np.float64),
            np.ascontiguousarray(col, dtype=np.float64),
        )

else:
    masked_softmax_grad = masked_softmax_grad_numpy
    accumulate_outer = accumulate_outer_numpy
