"""Command-line entry point: experiment runner, evaluation, exports.

Subcommands: train1d, train2d, eval, export. Every run directory receives
a manifest.json (effective config, seed, source hash, output paths) from
which the run is reproducible. DPS_WORKERS controls evaluation-time
parallelism (metric computation only; training is single-worker).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data, engine, kernels, metrics, recon, sampler
from .engine import TrainConfig
from .rng import RngHandle


class UsageError(SystemExit):
    def __init__(self, message):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def _source_hash() -> str:
    pkg_dir = os.path.dirname(__file__)
    h = hashlib.sha256()
    for name in sorted(os.listdir(pkg_dir)):
        if name.endswith(".py"):
            with open(os.path.join(pkg_dir, name), "rb") as f:
                h.update(name.encode())
                h.update(f.read())
    return h.hexdigest()


def _workers() -> int:
    return max(1, int(os.environ.get("DPS_WORKERS", "1")))


def _load_config_file(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _effective_config(args, overrides: dict) -> TrainConfig:
    """defaults < config file < command-line flags."""
    cfg_dict = dataclasses.asdict(TrainConfig())
    cfg_dict.update(overrides)
    if args.config:
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(cfg_dict)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg_dict.update(file_cfg)
    for key in cfg_dict:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg_dict[key] = flag
    return TrainConfig(**cfg_dict)


def _write_manifest(out_dir, cfg: TrainConfig, command: str, outputs: list, extra: dict = None):
    manifest = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "source_hash": _source_hash(),
        "backend": "numba" if kernels.using_numba() else "numpy",
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def greedy_pattern(model: engine.Model) -> sampler.SamplingPattern:
    """Noise-free maximum-probability pattern of a trained model."""
    n = model.signal_n()
    if model.bank is None:
        return sampler.SamplingPattern(model.fixed_indices, n)
    values = model.bank.values
    if model.bank.mode == sampler.TOP_M:
        idx = np.argsort(-values, kind="stable")[: model.cfg.m]
        return sampler.SamplingPattern(idx, n)
    taken = np.zeros(n, dtype=bool)
    idx = []
    for row in values:
        masked = np.where(taken, -np.inf, row)
        pick = int(np.argmax(masked))
        idx.append(pick)
        taken[pick] = True
    return sampler.SamplingPattern(np.array(idx), n)


def _export_run_artifacts(out_dir, model: engine.Model):
    pattern = greedy_pattern(model)
    mode = model.bank.mode if model.bank is not None else "fixed"
    sampler.save_pattern(os.path.join(out_dir, "pattern.txt"), pattern, mode)
    if model.bank is not None:
        sampler.save_logits_csv(os.path.join(out_dir, "logits.csv"), model.bank)


def cmd_train1d(args) -> str:
    if args.sampler not in (None, "dps-top1", "dps-topm", "random"):
        raise UsageError(f"train1d sampler must be dps-top1|dps-topm|random, got {args.sampler}")
    overrides = {"experiment": "1d"}
    cfg = _effective_config(args, overrides)
    if cfg.sampler == "lowpass":
        raise UsageError("train1d does not support the lowpass sampler")
    if cfg.sampler == "dps-topm" and args.mu_entropy:
        raise UsageError("the entropy penalty cannot be combined with top-M sampling")
    if cfg.m > cfg.n:
        raise UsageError("m cannot exceed n")
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    summary = engine.train(cfg, out_dir, log_every=args.log_every)
    model, _ = engine.load_checkpoint(os.path.join(out_dir, "checkpoint.npz"))
    _export_run_artifacts(out_dir, model)
    outputs = ["metrics.csv", "checkpoint.npz", "pattern.txt"]
    if model.bank is not None:
        outputs.append("logits.csv")
    _write_manifest(out_dir, cfg, "train1d", outputs, {"summary": summary})
    print(json.dumps(summary))
    return out_dir


def cmd_train2d(args) -> str:
    if args.sampler not in (None, "dps-topm", "random", "lowpass"):
        raise UsageError(f"train2d sampler must be dps-topm|random|lowpass, got {args.sampler}")
    # defaults calibrated for the desk-scale problem (64x64, factor 16);
    # at larger scales a smaller sampler step and constant tau work too
    overrides = {
        "experiment": "2d",
        "sampler": "dps-topm",
        "n": 64,
        "k": 30,
        "batch_size": 8,
        "epochs": 300,
        "lr_sampler": 0.1,
        "lr_recon": 1e-3,
        "tau_constant": False,
        "tau_end": 0.5,
        "mu_entropy": 0.0,
        "recon": "mb",
    }
    cfg = _effective_config(args, overrides)
    n_total = cfg.n * cfg.n
    factor = args.factor if args.factor is not None else 16
    if factor > n_total:
        raise UsageError(f"undersampling factor {factor} exceeds the number of coefficients {n_total}")
    if args.m is None:
        cfg = dataclasses.replace(cfg, m=max(1, n_total // factor))
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    ds = data.make_2d_dataset(
        cfg.n, cfg.n, cfg.k, cfg.seed,
        n_train=args.train_size, n_val=args.val_size_split, n_test=args.test_size,
    )
    data.save_dataset(os.path.join(out_dir, "dataset.bin"), ds)
    summary = engine.train(cfg, out_dir, dataset=ds, log_every=args.log_every)
    model, _ = engine.load_checkpoint(os.path.join(out_dir, "checkpoint.npz"))
    _export_run_artifacts(out_dir, model)
    outputs = ["metrics.csv", "checkpoint.npz", "pattern.txt", "dataset.bin"]
    if model.bank is not None:
        outputs.append("logits.csv")
    # the large-scale reference configuration this desk-scale run stands
    # in for, recorded for comparison
    extra = {"summary": summary, "undersampling_factor": factor,
             "reference_scale": {"grid": [208, 208], "factor": 80}}
    _write_manifest(out_dir, cfg, "train2d", outputs, extra)
    print(json.dumps(summary))
    return out_dir


def evaluate_checkpoint(model: engine.Model, signals: np.ndarray, spectra: np.ndarray,
                        epoch: int, with_ssim: bool):
    """Per-example metric rows using the validation sampling scheme."""
    cfg = model.cfg
    flat = spectra.reshape(spectra.shape[0], -1)
    rng = RngHandle(cfg.seed).substream("val-noise", epoch)
    idx, _ = model.draw_patterns(rng, cfg.tau_end, flat.shape[0])
    shat, _ = model.forward(idx, flat)
    shat = shat.reshape(signals.shape)

    def one(i):
        row = {
            "index": i,
            "mse": metrics.mse(shat[i], signals[i]),
            "psnr": metrics.psnr(shat[i], signals[i], peak=1.0),
        }
        if with_ssim:
            row["ssim"] = metrics.ssim(shat[i], signals[i], peak=1.0)
        return row

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(signals.shape[0])))
    else:
        rows = [one(i) for i in range(signals.shape[0])]
    return rows


def cmd_eval(args) -> str:
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    model, summary = engine.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    final_epoch = summary["final_epoch"] if summary else 0
    if cfg.experiment == "2d":
        if not args.dataset:
            raise UsageError("eval of a 2D checkpoint needs --dataset")
        ds = data.load_dataset(args.dataset)
        split = args.split
        signals = ds.signals[split]
        spectra = ds.spectra(split)
        if split == "val":
            signals = signals[: cfg.val_size]
            spectra = spectra[: cfg.val_size]
        with_ssim = True
    else:
        signals, spectra = data.gen_sparse_1d(
            cfg.n, cfg.k, RngHandle(cfg.seed).substream("val-data"), batch=cfg.val_size
        )
        with_ssim = False
    val = engine.validation_loss(model, signals, spectra, final_epoch)
    rows = evaluate_checkpoint(model, signals, spectra, final_epoch, with_ssim)
    out_path = args.out or "report.csv"
    metrics.write_report(out_path, rows, peak=1.0)
    result = {"val_loss": val, "mean_psnr": float(np.mean([r["psnr"] for r in rows if math.isfinite(r["psnr"])]))}
    if summary:
        result["logged_final_val_loss"] = summary["final_val_loss"]
    print(json.dumps(result))
    return out_path


def cmd_export(args) -> None:
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    model, summary = engine.load_checkpoint(args.checkpoint)
    what = args.what
    if what == "pattern":
        pattern = greedy_pattern(model)
        mode = model.bank.mode if model.bank is not None else "fixed"
        sampler.save_pattern(args.out, pattern, mode)
    elif what == "logits":
        if model.bank is None:
            raise UsageError("checkpoint has no trainable logits")
        sampler.save_logits_csv(args.out, model.bank)
    elif what == "reconstructions":
        if model.cfg.experiment != "2d" or not args.dataset:
            raise UsageError("reconstruction export needs a 2D checkpoint and --dataset")
        ds = data.load_dataset(args.dataset)
        count = min(args.count, ds.signals["test"].shape[0])
        signals = ds.signals["test"][:count]
        spectra = ds.spectra("test")[:count].reshape(count, -1)
        rng = RngHandle(model.cfg.seed).substream("export-noise")
        idx, _ = model.draw_patterns(rng, model.cfg.tau_end, count)
        shat, _ = model.forward(idx, spectra)
        h = w = model.cfg.n
        out_ds = data.Dataset(
            {"kind": "sparse2d", "shape": [h, w], "k": model.cfg.k, "blur": True,
             "amplitude": "reconstruction", "seed": model.cfg.seed,
             "splits": {"recon": count}},
            {"recon": shat.reshape(count, h, w)},
        )
        data.save_dataset(args.out, out_ds)
    else:
        raise UsageError(f"unknown export target {what!r}")
    print(args.out)


def _add_common_train_flags(p):
    p.add_argument("--sampler", default=None)
    p.add_argument("--recon", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int, default=None)
    p.add_argument("--lr-sampler", dest="lr_sampler", type=float, default=None)
    p.add_argument("--lr-recon", dest="lr_recon", type=float, default=None)
    p.add_argument("--mu-entropy", dest="mu_entropy", type=float, default=None)
    p.add_argument("--val-size", dest="val_size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--log-every", dest="log_every", type=int, default=1)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dps")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p1 = sub.add_parser("train1d", help="sparse-vector experiment")
    _add_common_train_flags(p1)
    p1.set_defaults(fn=cmd_train1d)

    p2 = sub.add_parser("train2d", help="2D grid experiment (desk scale)")
    _add_common_train_flags(p2)
    p2.add_argument("--factor", type=int, default=None, help="undersampling factor (default 16)")
    p2.add_argument("--train-size", dest="train_size", type=int, default=800)
    p2.add_argument("--val-size-split", dest="val_size_split", type=int, default=200)
    p2.add_argument("--test-size", dest="test_size", type=int, default=300)
    p2.set_defaults(fn=cmd_train2d)

    pe = sub.add_parser("eval", help="evaluate a checkpoint")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--dataset", default=None)
    pe.add_argument("--split", default="test", choices=["train", "val", "test"])
    pe.add_argument("--out", default=None)
    pe.set_defaults(fn=cmd_eval)

    px = sub.add_parser("export", help="export pattern/logits/reconstructions")
    px.add_argument("--checkpoint", required=True)
    px.add_argument("--what", required=True, choices=["pattern", "logits", "reconstructions"])
    px.add_argument("--dataset", default=None)
    px.add_argument("--count", type=int, default=8)
    px.add_argument("--out", required=True)
    px.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
