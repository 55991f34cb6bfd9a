"""Training: losses, dual-rate ADAM, temperature annealing, validation
with early stopping, CSV metrics logging and checkpointing."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import recon, sampler
from .data import Dataset, gen_sparse_1d
from .optim import Adam, temperature
from .rng import RngHandle

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    experiment: str = "1d"  # "1d" | "2d"
    sampler: str = "dps-top1"  # dps-top1 | dps-topm | random | lowpass
    recon: str = "mb"  # mb | fc
    n: int = 128  # signal length (1D) or grid side (2D)
    m: int = 32
    k: int = 5  # non-zeros (1D) or scatterers (2D)
    batch_size: int = 16
    batches_per_epoch: int = 100  # one epoch of on-the-fly 1D data
    epochs: int = 10000
    patience: int = 200
    min_improvement: float = 1e-6
    lr_sampler: float = 8e-2
    lr_recon: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    mu_entropy: float = 1e-8
    tau_start: float = 5.0
    tau_end: float = 0.5
    tau_constant: bool = False
    tau_horizon: int = 0  # 0 -> use `epochs`
    seed: int = 0
    val_size: int = 128
    val_draws: int = 8

    def __post_init__(self):
        if self.lr_sampler < 0 or self.lr_recon < 0:
            raise ValueError("learning rates must be non-negative")
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if self.sampler == "dps-topm" and self.mu_entropy:
            # the entropy penalty is defined for per-sample logits only
            self.mu_entropy = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


def mse_loss(shat: np.ndarray, s: np.ndarray):
    """Mean squared error over all elements, with its gradient."""
    diff = np.asarray(shat, float) - np.asarray(s, float)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def total_loss(mse: float, entropy: float, mu: float) -> float:
    return mse + mu * entropy


@dataclass
class Model:
    cfg: TrainConfig
    recon_kind: str  # lista | pg2d | fc
    params: object
    bank: sampler.LogitBank = None
    fixed_indices: np.ndarray = None

    @property
    def trainable_sampler(self) -> bool:
        return self.bank is not None

    def grid_shape(self):
        return (self.cfg.n, self.cfg.n)

    def signal_n(self) -> int:
        return self.cfg.n * self.cfg.n if self.cfg.experiment == "2d" else self.cfg.n

    def draw_patterns(self, rng: RngHandle, tau: float, batch: int):
        """(indices (batch, M), tape-or-None) for one mini-batch."""
        if self.bank is None:
            return np.tile(self.fixed_indices, (batch, 1)), None
        if self.bank.mode == sampler.PER_SAMPLE:
            return sampler.sample_hard_per_sample(self.bank, rng, tau, batch)
        return sampler.sample_hard_topM(self.bank, rng, tau, self.cfg.m, batch)

    def forward(self, indices: np.ndarray, x: np.ndarray):
        sel = recon.HardSelector(indices, self.signal_n())
        if self.recon_kind == "lista":
            return recon.lista_forward(self.params, sel, x)
        if self.recon_kind == "pg2d":
            return recon.pg2d_forward(self.params, sel, x)
        return recon.fc_forward(self.params, sel, x)

    def recon_param_dict(self) -> dict:
        p = self.params
        if self.recon_kind == "lista":
            return {"B": p.B, "C": p.C, "rho": p.rho}
        if self.recon_kind == "pg2d":
            return {"alpha": p.alpha, "rho": p.rho}
        out = {}
        for i, (w, b) in enumerate(zip(p.weights, p.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def recon_grad_dict(self, grads: dict) -> dict:
        if self.recon_kind == "fc":
            out = {}
            for i, (dw, db) in enumerate(zip(grads["weights"], grads["biases"])):
                out[f"w{i}"] = dw
                out[f"b{i}"] = db
            return out
        return grads


def build_model(cfg: TrainConfig, rng: RngHandle) -> Model:
    n_total = cfg.n * cfg.n if cfg.experiment == "2d" else cfg.n
    shape = (cfg.n, cfg.n) if cfg.experiment == "2d" else n_total
    bank = None
    fixed = None
    if cfg.sampler == "dps-top1":
        bank = sampler.init_logit_bank(sampler.PER_SAMPLE, cfg.m, n_total, rng.substream("logits"))
    elif cfg.sampler == "dps-topm":
        bank = sampler.init_logit_bank(sampler.TOP_M, cfg.m, n_total, rng.substream("logits"))
    elif cfg.sampler == "random":
        fixed = sampler.fixed_pattern("uniform-random", shape, cfg.m, rng.substream("pattern")).indices
    elif cfg.sampler == "lowpass":
        fixed = sampler.fixed_pattern("low-pass", shape, cfg.m).indices
    else:
        raise ValueError(f"unknown sampler {cfg.sampler!r}")

    if cfg.experiment == "2d":
        if cfg.recon != "mb":
            raise ValueError("the 2D experiment uses the model-based network only")
        params = recon.pg2d_init((cfg.n, cfg.n))
        kind = "pg2d"
    elif cfg.recon == "mb":
        if fixed is not None:
            init_idx = fixed
        else:
            init_idx, _ = Model(cfg, "", None, bank=bank, fixed_indices=None).draw_patterns(
                rng.substream("init-pattern"), cfg.tau_start, 1
            )
            init_idx = init_idx[0]
        params = recon.lista_init(cfg.n, init_idx, rng.substream("recon"))
        kind = "lista"
    elif cfg.recon == "fc":
        params = recon.fc_init(2 * cfg.m, rng.substream("recon"), out_dim=cfg.n)
        kind = "fc"
    else:
        raise ValueError(f"unknown recon {cfg.recon!r}")
    return Model(cfg, kind, params, bank=bank, fixed_indices=fixed)


def bank_entropy(model: Model) -> float:
    if model.bank is None:
        return 0.0
    if model.bank.mode == sampler.PER_SAMPLE:
        return sampler.entropy_penalty(model.bank)[0]
    p = sampler.normalize_probs(model.bank.values)
    return float(-(p * np.log(np.maximum(p, 1e-300))).sum())


def validation_loss(model: Model, signals: np.ndarray, spectra: np.ndarray, epoch: int) -> float:
    """Hard-sampling validation, averaged over val_draws noise draws.

    The noise substream is keyed by (seed, epoch) so a stored checkpoint's
    logged value can be reproduced exactly by re-evaluation.
    """
    cfg = model.cfg
    flat = spectra.reshape(spectra.shape[0], -1)
    tgt = signals.reshape(signals.shape[0], -1)
    draws = cfg.val_draws if model.trainable_sampler else 1
    rng = RngHandle(cfg.seed).substream("val-noise", epoch)
    total = 0.0
    for _ in range(draws):
        idx, _tape = model.draw_patterns(rng, cfg.tau_end, flat.shape[0])
        shat, _ = model.forward(idx, flat)
        total += mse_loss(shat.reshape(tgt.shape), tgt)[0]
    return total / draws


def _param_norm_report(model: Model) -> str:
    parts = [f"{k}:{float(np.linalg.norm(v)):.3e}" for k, v in model.recon_param_dict().items()]
    if model.bank is not None:
        parts.append(f"logits:{float(np.linalg.norm(model.bank.values)):.3e}")
    return " ".join(parts)


def train(cfg: TrainConfig, out_dir, dataset: Dataset = None, log_every: int = 1) -> dict:
    """Run one training experiment; writes metrics.csv and checkpoint.npz
    into out_dir and returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    rng = RngHandle(cfg.seed)
    model = build_model(cfg, rng)

    if cfg.experiment == "2d":
        if dataset is None:
            raise ValueError("the 2D experiment needs a dataset")
        train_sig = dataset.signals["train"]
        train_spec = dataset.spectra("train").reshape(train_sig.shape[0], -1)
        val_sig = dataset.signals["val"][: cfg.val_size]
        val_spec = dataset.spectra("val")[: cfg.val_size]
    else:
        val_sig, val_spec = gen_sparse_1d(cfg.n, cfg.k, rng.substream("val-data"), batch=cfg.val_size)

    opt_recon = Adam(cfg.lr_recon, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt_sampler = Adam(cfg.lr_sampler, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    data_rng = rng.substream("train-data")
    noise_rng = rng.substream("gumbel")
    horizon = cfg.tau_horizon or cfg.epochs

    metrics_path = os.path.join(out_dir, "metrics.csv")
    best_val = np.inf
    best_epoch = 0
    stale = 0
    final_epoch = 0
    with open(metrics_path, "w") as log:
        log.write("epoch,train_loss,val_loss,tau,entropy\n")
        for epoch in range(cfg.epochs):
            tau = temperature(epoch, cfg.tau_start, cfg.tau_end, horizon, cfg.tau_constant)
            if cfg.experiment == "2d":
                order = np.arange(train_sig.shape[0])
                rng.substream("shuffle", epoch).shuffle(order)
                batches = [
                    order[i : i + cfg.batch_size]
                    for i in range(0, len(order), cfg.batch_size)
                ]
            else:
                batches = range(cfg.batches_per_epoch)

            epoch_loss = 0.0
            for bi, batch in enumerate(batches):
                if cfg.experiment == "2d":
                    s = train_sig[batch].reshape(len(batch), -1)
                    x = train_spec[batch]
                else:
                    s, x = gen_sparse_1d(cfg.n, cfg.k, data_rng, batch=cfg.batch_size)
                idx, tape = model.draw_patterns(noise_rng, tau, x.shape[0])
                shat, rtape = model.forward(idx, x)
                loss, dshat = mse_loss(shat, s)
                ent = 0.0
                if model.trainable_sampler and cfg.mu_entropy:
                    ent, dent = sampler.entropy_penalty(model.bank)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {bi}; "
                        f"params {_param_norm_report(model)}"
                    )
                grads, dA = recon.backward(rtape, dshat, need_selection=model.trainable_sampler)
                opt_recon.step(model.recon_param_dict(), model.recon_grad_dict(grads))
                if model.trainable_sampler:
                    gphi = sampler.backward_logits(tape, dA)
                    if cfg.mu_entropy:
                        gphi = gphi + cfg.mu_entropy * dent
                    opt_sampler.step({"logits": model.bank.values}, {"logits": gphi})
                epoch_loss += total_loss(loss, ent, cfg.mu_entropy)
            epoch_loss /= max(len(batches), 1)

            val = validation_loss(model, val_sig, val_spec, epoch)
            final_epoch = epoch
            if epoch % log_every == 0 or epoch == cfg.epochs - 1:
                log.write(
                    f"{epoch},{epoch_loss:.17g},{val:.17g},{tau:.17g},"
                    f"{bank_entropy(model):.17g}\n"
                )
            if val < best_val - cfg.min_improvement:
                best_val = val
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    summary = {
        "final_epoch": final_epoch,
        "final_val_loss": val,
        "best_val_loss": float(best_val),
        "best_epoch": best_epoch,
        "final_train_loss": epoch_loss,
    }
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model, summary)
    return summary


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, summary: dict = None) -> None:
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "config": np.frombuffer(model.cfg.to_json().encode(), dtype=np.uint8),
        "recon_kind": np.frombuffer(model.recon_kind.encode(), dtype=np.uint8),
    }
    for k, v in model.recon_param_dict().items():
        arrays[f"recon::{k}"] = v
    if model.bank is not None:
        arrays["sampler_mode"] = np.frombuffer(model.bank.mode.encode(), dtype=np.uint8)
        arrays["logits"] = model.bank.values
    if model.fixed_indices is not None:
        arrays["fixed_indices"] = model.fixed_indices
    if summary:
        arrays["summary"] = np.frombuffer(json.dumps(summary, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (model, summary dict or None)."""
    with np.load(path) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
        cfg = TrainConfig.from_json(bytes(z["config"]).decode())
        kind = bytes(z["recon_kind"]).decode()
        rng = RngHandle(cfg.seed)
        model = build_model(cfg, rng)
        assert model.recon_kind == kind
        for k, v in model.recon_param_dict().items():
            v[...] = z[f"recon::{k}"]
        if "logits" in z:
            model.bank.values[...] = z["logits"]
        if "fixed_indices" in z:
            model.fixed_indices = z["fixed_indices"]
        summary = json.loads(bytes(z["summary"]).decode()) if "summary" in z else None
    return model, summary
