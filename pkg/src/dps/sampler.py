"""Probabilistic subsampling with trainable logits.

Hard selections are drawn with the Gumbel-max trick, without replacement,
either one categorical per selected coefficient ("per-sample" mode, an
M x N logit matrix) or M draws from one shared categorical ("top-m" mode,
a length-N logit vector). The forward pass always yields hard index sets;
gradients flow through the temperature-tau softmax relaxation recorded on
a tape (straight-through estimator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import RngHandle, gaussian_noise, gumbel_noise

PER_SAMPLE = "per-sample"
TOP_M = "top-m"

# stand-in for the -inf mask; exp() underflows to exactly 0 after the
# max-subtraction in the stabilized softmax
MASK_VALUE = -1e30


@dataclass
class LogitBank:
    """Trainable unnormalized log-probabilities over N coefficients."""

    mode: str
    values: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mode not in (PER_SAMPLE, TOP_M):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mode == PER_SAMPLE and self.values.ndim != 2:
            raise ValueError("per-sample mode needs an M x N logit matrix")
        if self.mode == TOP_M and self.values.ndim != 1:
            raise ValueError("top-m mode needs a length-N logit vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("logits must be finite")
        if self.grad is None:
            self.grad = np.zeros_like(self.values)

    @property
    def n(self) -> int:
        return self.values.shape[-1]


def init_logit_bank(mode: str, m: int, n: int, rng: RngHandle, sigma: float = 0.5) -> LogitBank:
    """Fresh bank with N(0, sigma^2) logits (default variance 1/4)."""
    shape = (m, n) if mode == PER_SAMPLE else (n,)
    return LogitBank(mode, gaussian_noise(shape, sigma, rng))


@dataclass
class SamplingPattern:
    """M distinct selected indices out of {0..N-1}."""

    indices: np.ndarray
    n: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.min(initial=0) < 0 or self.indices.max(initial=-1) >= self.n:
            raise ValueError("pattern index out of range")
        if len(np.unique(self.indices)) != self.indices.size:
            raise ValueError("pattern indices must be distinct")

    @property
    def m(self) -> int:
        return self.indices.size


@dataclass
class SoftSampleTape:
    """Forward record needed to evaluate the softmax-relaxation backward.

    keys holds the Gumbel-perturbed logits per draw, (batch, M, N); order
    holds the selected index per draw so the -inf masks of the sequential
    without-replacement process can be rebuilt.
    """

    mode: str
    tau: float
    keys: np.ndarray  # (batch, M, N), or (batch, 1, N) when draws share one perturbation
    order: np.ndarray

    @property
    def batch(self) -> int:
        return self.keys.shape[0]

    @property
    def draws(self) -> int:
        return self.order.shape[1]

    @property
    def n(self) -> int:
        return self.keys.shape[2]

    def soft_rows(self) -> np.ndarray:
        """The relaxed selection rows: per-draw masked softmax(keys/tau).

        Shape (batch, M, N); masked entries are exactly zero. Used by the
        relaxed end-to-end gradient checks.
        """
        b, m, n = self.batch, self.draws, self.n
        rows = np.zeros((b, m, n))
        masked = np.zeros((b, n), dtype=bool)
        batch_idx = np.arange(b)
        for d in range(m):
            k = np.where(masked, -np.inf, self.keys[:, min(d, self.keys.shape[1] - 1), :] / self.tau)
            k -= k.max(axis=1, keepdims=True)
            p = np.exp(k)
            rows[:, d, :] = p / p.sum(axis=1, keepdims=True)
            masked[batch_idx, self.order[:, d]] = True
        return rows


def normalize_probs(logits: np.ndarray, mask=None) -> np.ndarray:
    """Softmax with optional masked-out indices (which get probability 0)."""
    z = np.asarray(logits, dtype=np.float64).copy()
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype != bool:
            idx = np.zeros(z.shape[-1], dtype=bool)
            idx[mask] = True
            mask = idx
        z[..., mask] = MASK_VALUE
    hi = z.max(axis=-1, keepdims=True)
    if np.any(hi <= MASK_VALUE):
        raise ValueError("all entries are masked")
    p = np.exp(z - hi)
    return p / p.sum(axis=-1, keepdims=True)


def sample_hard_per_sample(bank: LogitBank, rng: RngHandle, tau: float, batch: int = 1):
    """Draw one pattern per batch element via M sequential Gumbel-max picks.

    Returns (indices (batch, M), tape). Each of the M categoricals has its
    own logit row and its own Gumbel draw; previously selected coefficients
    are masked out.
    """
    if bank.mode != PER_SAMPLE:
        raise ValueError("bank is not in per-sample mode")
    m, n = bank.values.shape
    if m > n:
        raise ValueError("cannot select more indices than coefficients")
    noise = gumbel_noise((batch, m, n), rng)
    keys = bank.values[None, :, :] + noise
    order = np.empty((batch, m), dtype=np.int64)
    masked = np.zeros((batch, n), dtype=bool)
    batch_idx = np.arange(batch)
    for d in range(m):
        k = np.where(masked, -np.inf, keys[:, d, :])
        order[:, d] = np.argmax(k, axis=1)
        masked[batch_idx, order[:, d]] = True
    return order, SoftSampleTape(PER_SAMPLE, float(tau), keys, order)


def sample_hard_topM(bank: LogitBank, rng: RngHandle, tau: float, m: int, batch: int = 1):
    """Draw patterns as the M largest Gumbel-perturbed shared logits.

    Equivalent in distribution to M sequential draws without replacement;
    the tape exposes exactly that sequential view (selection order sorted
    by descending key) for the relaxed backward pass.
    """
    if bank.mode != TOP_M:
        raise ValueError("bank is not in top-m mode")
    n = bank.n
    if m > n:
        raise ValueError("cannot select more indices than coefficients")
    keys1 = bank.values[None, :] + gumbel_noise((batch, n), rng)
    # argsort ascending on -keys = descending keys; ties broken by index
    order = np.argsort(-keys1, axis=1, kind="stable")[:, :m]
    return order, SoftSampleTape(TOP_M, float(tau), keys1[:, None, :], order)


def backward_logits(tape: SoftSampleTape, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits from upstream gradients on the selection
    rows, via the tau-softmax relaxation of each (masked) draw.

    upstream has shape (batch, M, N) or (M, N) for a single element; the
    result is summed over the batch and matches the bank's shape
    (M x N per-sample, length-N top-m).
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 2:
        up = up[None]
    expected = (tape.batch, tape.draws, tape.n)
    if up.shape != expected:
        raise ValueError(f"upstream shape {up.shape} does not match tape {expected}")
    return kernels.masked_softmax_grad(
        tape.keys, tape.order, up, tape.tau, shared=(tape.mode == TOP_M)
    )


def entropy_penalty(bank: LogitBank):
    """Total Shannon entropy of the M categoricals and its logit gradient.

    Only defined for per-sample mode (the penalty is not used with top-m
    sampling).
    """
    if bank.mode != PER_SAMPLE:
        raise ValueError("entropy penalty applies to per-sample mode only")
    p = normalize_probs(bank.values)
    logp = np.log(np.maximum(p, 1e-300))
    h_rows = -(p * logp).sum(axis=1)
    grad = -p * (logp + h_rows[:, None])
    return float(h_rows.sum()), grad


def apply_pattern(pattern: SamplingPattern, x: np.ndarray) -> np.ndarray:
    """Measurement y = A x: gather the selected coefficients."""
    x = np.asarray(x).reshape(-1)
    if x.size != pattern.n:
        raise ValueError("input length does not match pattern")
    return x[pattern.indices]


def adjoint_apply(pattern: SamplingPattern, y: np.ndarray) -> np.ndarray:
    """Adjoint A^T y: scatter measurements back, zeros elsewhere."""
    y = np.asarray(y).reshape(-1)
    if y.size != pattern.m:
        raise ValueError("input length does not match pattern")
    out = np.zeros(pattern.n, dtype=y.dtype)
    out[pattern.indices] = y
    return out


def _freq_magnitude_1d(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.minimum(k, n - k).astype(np.float64)


def freq_radius_2d(h: int, w: int) -> np.ndarray:
    """Centered frequency radius per flattened coefficient of an h x w grid."""
    fy = np.minimum(np.arange(h), h - np.arange(h)).astype(np.float64)
    fx = np.minimum(np.arange(w), w - np.arange(w)).astype(np.float64)
    return np.hypot(fy[:, None], fx[None, :]).reshape(-1)


def fixed_pattern(kind: str, shape, m: int, rng: RngHandle = None) -> SamplingPattern:
    """Non-trained baseline patterns.

    kind="uniform-random": M distinct indices, uniform without replacement.
    kind="low-pass": the M coefficients of smallest frequency magnitude
    (|k| in 1D, centered radius in 2D), deterministic with index tie-break.
    """
    if isinstance(shape, (tuple, list)):
        h, w = shape
        n = h * w
        radius = freq_radius_2d(h, w)
    else:
        n = int(shape)
        radius = _freq_magnitude_1d(n)
    if m > n:
        raise ValueError("cannot select more indices than coefficients")
    if kind == "uniform-random":
        if rng is None:
            raise ValueError("uniform-random pattern needs an rng")
        idx = rng.choice_without_replacement(n, m)
    elif kind == "low-pass":
        idx = np.argsort(radius, kind="stable")[:m]
    else:
        raise ValueError(f"unknown fixed pattern kind {kind!r}")
    return SamplingPattern(np.sort(idx) if kind == "uniform-random" else idx, n)


def save_pattern(path, pattern: SamplingPattern, mode: str) -> None:
    """Plain-text export: header line, then one selected index per line."""
    with open(path, "w") as f:
        f.write(f"N={pattern.n} M={pattern.m} mode={mode}\n")
        for i in pattern.indices:
            f.write(f"{int(i)}\n")


def load_pattern(path) -> SamplingPattern:
    with open(path) as f:
        header = f.readline().split()
        fields = dict(part.split("=") for part in header)
        idx = [int(line) for line in f if line.strip()]
    return SamplingPattern(np.array(idx, dtype=np.int64), int(fields["N"]))


def save_logits_csv(path, bank: LogitBank) -> None:
    """CSV export of the raw logits (one row per categorical)."""
    values = np.atleast_2d(bank.values)
    np.savetxt(path, values, delimiter=",", fmt="%.17g")
