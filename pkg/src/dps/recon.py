"""Recovery networks with hand-derived reverse-mode gradients.

Three models:
  * a 3-layer unfolded shrinkage network for 1D spectra whose linear maps
    are trainable dense layers on stacked real/imaginary channels,
  * a 3-step unrolled proximal-gradient scheme for 2D grids with scalar
    per-step stepsizes and thresholds,
  * a fully-connected baseline taking the raw measurement vector.

Every forward returns a tape; the matching backward yields exact gradients
for all trainable parameters and for the selection rows (dL/dA, one row
per selected coefficient) so they chain into ``sampler.backward_logits``.

Selection is abstracted by selectors: ``HardSelector`` wraps integer index
patterns (production path), ``DenseSelector`` wraps arbitrary real row
matrices (used for relaxed end-to-end gradient checks).

Gradients of complex intermediates are stored as complex arrays with the
convention g = dL/dRe + i * dL/dIm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .fourier import dft2_forward, dft2_inverse
from .rng import RngHandle

DEFAULT_BETA = 10.0


# ---------------------------------------------------------------------------
# selectors


class HardSelector:
    """Batch of index patterns; A has one-hot rows."""

    def __init__(self, indices: np.ndarray, n: int):
        self.indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        self.n = int(n)
        self.batch, self.m = self.indices.shape

    def measure(self, x: np.ndarray) -> np.ndarray:
        return np.take_along_axis(x, self.indices, axis=1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros((self.batch, self.n), dtype=y.dtype)
        np.put_along_axis(out, self.indices, y, axis=1)
        return out


class DenseSelector:
    """Batch of dense real selection-row matrices, shape (batch, M, N)."""

    def __init__(self, rows: np.ndarray):
        self.rows = np.asarray(rows, dtype=np.float64)
        if self.rows.ndim == 2:
            self.rows = self.rows[None]
        self.batch, self.m, self.n = self.rows.shape

    def measure(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("emn,en->em", self.rows, x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return np.einsum("emn,em->en", self.rows, y)


def _rows_grad_adjoint(dA: np.ndarray, dvec: np.ndarray, coeff: np.ndarray) -> None:
    """dL/dA contribution of b = A^T r: dA[e,m,n] += <dvec[e,n], r[e,m]>."""
    kernels.accumulate_outer(dA, coeff.real, dvec.real)
    kernels.accumulate_outer(dA, coeff.imag, dvec.imag)


def _rows_grad_measure(dA: np.ndarray, dmeas: np.ndarray, vec: np.ndarray) -> None:
    """dL/dA contribution of y = A v: dA[e,m,n] += <dmeas[e,m], v[e,n]>."""
    kernels.accumulate_outer(dA, dmeas.real, vec.real)
    kernels.accumulate_outer(dA, dmeas.imag, vec.imag)


# ---------------------------------------------------------------------------
# smooth shrinkage


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def smooth_soft_threshold(v: np.ndarray, lam: float, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Sigmoid-gated shrinkage: v*sig(beta(v-lam)) + v*sig(-beta(v+lam)).

    Odd, smooth everywhere, suppresses |v| << lam and passes |v| >> lam.
    """
    if lam <= 0 or beta <= 0:
        raise ValueError("lam and beta must be positive")
    return v * (_sigmoid(beta * (v - lam)) + _sigmoid(-beta * (v + lam)))


def _shrink_grads(v: np.ndarray, lam: float, beta: float):
    """(dp/dv, dp/dlam) of the smooth shrinkage, elementwise."""
    a = _sigmoid(beta * (v - lam))
    b = _sigmoid(-beta * (v + lam))
    da = beta * a * (1.0 - a)
    db = beta * b * (1.0 - b)
    dp_dv = (a + b) + v * (da - db)
    dp_dlam = -v * (da + db)
    return dp_dv, dp_dlam


def softplus(rho):
    return np.logaddexp(0.0, rho)


def softplus_inv(lam):
    return lam + np.log(-np.expm1(-lam))


def _dsoftplus(rho):
    return _sigmoid(rho)


# ---------------------------------------------------------------------------
# unfolded shrinkage network (1D)


@dataclass
class ListaParams:
    """Dense layers acting on stacked (re, im) channels, 3 unfoldings."""

    B: np.ndarray  # (3, 2n, 2n)
    C: np.ndarray  # (3, 2n, 2n)
    rho: np.ndarray  # (3,) thresholds via softplus
    n: int
    beta: float = DEFAULT_BETA

    @property
    def layers(self) -> int:
        return self.B.shape[0]


@dataclass
class ListaTape:
    params: ListaParams
    sel: object
    x: np.ndarray
    y: np.ndarray
    z2: np.ndarray
    states: list  # s^(k) pre-update, length layers
    pre: list  # pre-shrinkage activations u^(k)


def dft_matrix(n: int) -> np.ndarray:
    """Dense unitary DFT matrix (init-time only)."""
    jk = np.outer(np.arange(n), np.arange(n))
    return np.exp(-2j * np.pi * jk / n) / np.sqrt(n)


def _stack_real(w: np.ndarray) -> np.ndarray:
    """Complex matrix -> real operator on stacked (re, im) vectors."""
    return np.block([[w.real, -w.imag], [w.imag, w.real]])


def lista_init(
    n: int,
    pattern_indices: np.ndarray,
    rng: RngHandle,
    layers: int = 3,
    alpha: float = 0.5,
    lam0: float = 0.1,
    perturb: float = 0.01,
) -> ListaParams:
    """Model-based init: B = I - alpha F^H P F, C = alpha F^H (stacked-real),
    where P masks the given pattern, plus small Gaussian perturbation.
    """
    f = dft_matrix(n)
    mask = np.zeros(n)
    mask[np.asarray(pattern_indices, dtype=np.int64)] = 1.0
    proj = f.conj().T @ (mask[:, None] * f)
    b1 = _stack_real(np.eye(n) - alpha * proj)
    c1 = _stack_real(alpha * f.conj().T)
    B = np.stack([b1 + rng.normal((2 * n, 2 * n), perturb) for _ in range(layers)])
    C = np.stack([c1 + rng.normal((2 * n, 2 * n), perturb) for _ in range(layers)])
    rho = np.full(layers, softplus_inv(lam0))
    return ListaParams(B, C, rho, n)


def lista_forward(params: ListaParams, sel, x: np.ndarray):
    """x: (batch, n) complex spectra. Returns (shat (batch, n), tape)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    n = params.n
    if x.shape[1] != n or sel.n != n:
        raise ValueError("signal length does not match parameters")
    y = sel.measure(x)
    z = sel.adjoint(y)
    z2 = np.concatenate([z.real, z.imag], axis=1)
    s = np.zeros((x.shape[0], 2 * n))
    states, pre = [], []
    for k in range(params.layers):
        u = s @ params.B[k].T + z2 @ params.C[k].T
        states.append(s)
        pre.append(u)
        s = smooth_soft_threshold(u, float(softplus(params.rho[k])), params.beta)
    shat = s[:, :n]
    return shat, ListaTape(params, sel, x, y, z2, states, pre)


def lista_backward(tape: ListaTape, upstream: np.ndarray, need_selection: bool = True):
    """Returns ({'B','C','rho'} gradients, dL/dA rows (batch, M, N)).

    Pass ``need_selection=False`` when the pattern is fixed; the dense
    selection-row gradient is skipped and ``None`` returned in its place.
    """
    p = tape.params
    n = p.n
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    ds = np.zeros((up.shape[0], 2 * n))
    ds[:, :n] = up
    dB = np.zeros_like(p.B)
    dC = np.zeros_like(p.C)
    drho = np.zeros_like(p.rho)
    dz2 = np.zeros_like(tape.z2)
    for k in reversed(range(p.layers)):
        lam = float(softplus(p.rho[k]))
        dp_dv, dp_dlam = _shrink_grads(tape.pre[k], lam, p.beta)
        du = ds * dp_dv
        drho[k] = float((ds * dp_dlam).sum()) * _dsoftplus(p.rho[k])
        dB[k] = du.T @ tape.states[k]
        dC[k] = du.T @ tape.z2
        dz2 += du @ p.C[k]
        ds = du @ p.B[k]
    grads = {"B": dB, "C": dC, "rho": drho}
    if not need_selection:
        return grads, None
    g = dz2[:, :n] + 1j * dz2[:, n:]
    # z = A^T y with y = A x: both paths contribute to dL/dA
    dA = np.zeros((g.shape[0], tape.sel.m, tape.sel.n))
    _rows_grad_adjoint(dA, g, tape.y)
    dy = tape.sel.measure(g)
    _rows_grad_measure(dA, dy, tape.x)
    return grads, dA


# ---------------------------------------------------------------------------
# unrolled proximal gradient (2D)


@dataclass
class PgParams2D:
    """Per-step scalar stepsizes and thresholds, 3 unfoldings."""

    alpha: np.ndarray  # (3,)
    rho: np.ndarray  # (3,)
    shape: tuple  # (h, w)
    beta: float = DEFAULT_BETA

    @property
    def layers(self) -> int:
        return self.alpha.shape[0]


@dataclass
class PgTape:
    params: PgParams2D
    sel: object
    x: np.ndarray
    yx: np.ndarray
    states: list  # s^(k), length layers (pre-update)
    spectra: list  # t^(k) = F s^(k)
    residuals: list  # r^(k)
    dc_grads: list  # g^(k) = F^H A^T r^(k)
    pre: list  # v^(k) pre-shrinkage


def pg2d_init(shape, layers: int = 3, alpha0: float = 1.0, lam0: float = 0.01) -> PgParams2D:
    return PgParams2D(np.full(layers, alpha0), np.full(layers, softplus_inv(lam0)), tuple(shape))


def _fft2_flat(arr: np.ndarray, shape, inverse: bool) -> np.ndarray:
    h, w = shape
    grids = arr.reshape(-1, h, w)
    out = dft2_inverse(grids) if inverse else dft2_forward(grids)
    return out.reshape(arr.shape[0], h * w)


def pg2d_forward(params: PgParams2D, sel, x: np.ndarray):
    """x: (batch, h*w) complex flattened spectra. Returns (shat, tape).

    Starts from the zero-filled reconstruction real(F^H A^T A x), then runs
    three data-consistency gradient steps, each followed by the smooth
    shrinkage.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    h, w = params.shape
    if x.shape[1] != h * w or sel.n != h * w:
        raise ValueError("grid size does not match parameters")
    yx = sel.measure(x)
    s = _fft2_flat(sel.adjoint(yx), params.shape, inverse=True).real
    states, spectra, residuals, dc_grads, pre = [], [], [], [], []
    for k in range(params.layers):
        t = _fft2_flat(s.astype(np.complex128), params.shape, inverse=False)
        r = sel.measure(t - x)
        g = _fft2_flat(sel.adjoint(r), params.shape, inverse=True)
        v = s - params.alpha[k] * g.real
        states.append(s)
        spectra.append(t)
        residuals.append(r)
        dc_grads.append(g)
        pre.append(v)
        s = smooth_soft_threshold(v, float(softplus(params.rho[k])), params.beta)
    return s, PgTape(params, sel, x, yx, states, spectra, residuals, dc_grads, pre)


def pg2d_backward(tape: PgTape, upstream: np.ndarray, need_selection: bool = True):
    """Returns ({'alpha','rho'} gradients, dL/dA rows (batch, M, N)).

    The selection influences every iterate through both the measurement
    A x and the projector A^T A, and the zero-filled initialization; all
    paths are accumulated.  Pass ``need_selection=False`` when the pattern
    is fixed; the dense selection-row gradient is skipped and ``None``
    returned in its place.
    """
    p = tape.params
    sel = tape.sel
    ds = np.atleast_2d(np.asarray(upstream, dtype=np.float64)).copy()
    dalpha = np.zeros_like(p.alpha)
    drho = np.zeros_like(p.rho)
    dA = np.zeros((ds.shape[0], sel.m, sel.n)) if need_selection else None
    for k in reversed(range(p.layers)):
        lam = float(softplus(p.rho[k]))
        dp_dv, dp_dlam = _shrink_grads(tape.pre[k], lam, p.beta)
        dv = ds * dp_dv
        drho[k] = float((ds * dp_dlam).sum()) * _dsoftplus(p.rho[k])
        dalpha[k] = -float((dv * tape.dc_grads[k].real).sum())
        ds = dv.copy()
        # v = s - alpha * Re(F^H b), b = A^T r  =>  db = F(-alpha dv)
        db = _fft2_flat((-p.alpha[k] * dv).astype(np.complex128), p.shape, inverse=False)
        if need_selection:
            _rows_grad_adjoint(dA, db, tape.residuals[k])
        dr = sel.measure(db)
        if need_selection:
            _rows_grad_measure(dA, dr, tape.spectra[k] - tape.x)
        dt = sel.adjoint(dr)
        ds += _fft2_flat(dt, p.shape, inverse=True).real
    if need_selection:
        # init path: s0 = Re(F^H b0), b0 = A^T yx, yx = A x
        db0 = _fft2_flat(ds.astype(np.complex128), p.shape, inverse=False)
        _rows_grad_adjoint(dA, db0, tape.yx)
        dyx = sel.measure(db0)
        _rows_grad_measure(dA, dyx, tape.x)
    return {"alpha": dalpha, "rho": drho}, dA


# ---------------------------------------------------------------------------
# fully-connected baseline


@dataclass
class FcParams:
    """Leaky-ReLU MLP on the stacked (re, im) measurement vector."""

    weights: list  # len hidden+1
    biases: list
    slope: float
    out_dim: int


@dataclass
class FcTape:
    params: FcParams
    sel: object
    x: np.ndarray
    activations: list  # inputs to each linear layer
    pre: list  # hidden pre-activations


def fc_init(
    in_dim: int,
    rng: RngHandle,
    widths=(256, 512, 256, 128, 128),
    out_dim: int = 128,
    slope: float = 0.2,
) -> FcParams:
    dims = [in_dim, *widths, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal((fan_out, fan_in), np.sqrt(2.0 / fan_in)))
        biases.append(np.zeros(fan_out))
    return FcParams(weights, biases, slope, out_dim)


def fc_forward(params: FcParams, sel, x: np.ndarray):
    """x: (batch, n) complex spectra; input is stacked y = A x (2M reals)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    y = sel.measure(x)
    a = np.concatenate([y.real, y.imag], axis=1)
    if a.shape[1] != params.weights[0].shape[1]:
        raise ValueError("measurement size does not match parameters")
    activations, pre = [], []
    for wgt, bias in zip(params.weights[:-1], params.biases[:-1]):
        activations.append(a)
        z = a @ wgt.T + bias
        pre.append(z)
        a = np.where(z >= 0, z, params.slope * z)
    activations.append(a)
    out = a @ params.weights[-1].T + params.biases[-1]
    return out, FcTape(params, sel, x, activations, pre)


def fc_backward(tape: FcTape, upstream: np.ndarray, need_selection: bool = True):
    """Returns ({'weights','biases'} gradient lists, dL/dA rows).

    Pass ``need_selection=False`` when the pattern is fixed; the dense
    selection-row gradient is skipped and ``None`` returned in its place.
    """
    p = tape.params
    da = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    dw = [None] * len(p.weights)
    db = [None] * len(p.biases)
    dw[-1] = da.T @ tape.activations[-1]
    db[-1] = da.sum(axis=0)
    da = da @ p.weights[-1]
    for k in reversed(range(len(p.weights) - 1)):
        dz = da * np.where(tape.pre[k] >= 0, 1.0, p.slope)
        dw[k] = dz.T @ tape.activations[k]
        db[k] = dz.sum(axis=0)
        da = dz @ p.weights[k]
    grads = {"weights": dw, "biases": db}
    if not need_selection:
        return grads, None
    dy = da[:, : tape.sel.m] + 1j * da[:, tape.sel.m :]
    dA = np.zeros((dy.shape[0], tape.sel.m, tape.sel.n))
    _rows_grad_measure(dA, dy, tape.x)
    return grads, dA


def backward(tape, upstream: np.ndarray, need_selection: bool = True):
    """Dispatch to the backward pass matching the forward that made ``tape``."""
    if isinstance(tape, ListaTape):
        return lista_backward(tape, upstream, need_selection)
    if isinstance(tape, PgTape):
        return pg2d_backward(tape, upstream, need_selection)
    if isinstance(tape, FcTape):
        return fc_backward(tape, upstream, need_selection)
    raise TypeError(f"unknown tape type {type(tape)!r}")
