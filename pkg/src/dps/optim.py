"""ADAM optimizer (bias-corrected) and the temperature schedule."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard ADAM over a dict of named parameter arrays.

    Update: m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
    theta -= lr * mhat / (sqrt(vhat) + eps) with bias-corrected moments.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            theta = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            theta -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict:
        out = {"t": np.array(self.t)}
        for name in self.m:
            out[f"m::{name}"] = self.m[name]
            out[f"v::{name}"] = self.v[name]
        return out


def temperature(epoch: int, tau_start: float, tau_end: float, horizon: int, constant: bool = False) -> float:
    """Exponential interpolation from tau_start to tau_end over ``horizon``
    epochs, clamped at tau_end; or a constant tau_start."""
    if constant or tau_start == tau_end:
        return tau_start
    frac = min(max(epoch, 0) / max(horizon, 1), 1.0)
    return float(tau_start * (tau_end / tau_start) ** frac)
