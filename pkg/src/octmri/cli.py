"""Command-line interface.

Subcommands::

    octmri simulate  --out-dir runs/data [--config cfg.json] [overrides]
    octmri train     --data runs/data --out-dir runs/train [...]
    octmri eval      --data runs/data --ckpt runs/train/checkpoint_final [...]
    octmri ablate    --param alpha --values 0,0.125,0.25 --out-dir runs/ablate
    octmri flops     [--alpha 0.125 --channels 64 ...]

Configuration is a flat JSON object validated fail-closed: unknown keys are
rejected, types must match. Command-line flags override file values. Exit
codes: 0 success, 2 configuration/shape errors, 3 numerical failure.

All CSV outputs are deterministic given the config (timestamps and wall times
go to ``run_meta.json`` instead, so reruns stay byte-identical).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import metrics as M
from . import tensor as T
from .cascade import (BlockConfig, CascadeConfig, cascade_flops, load_model,
                      num_parameters)
from .errors import ConfigError, NumericsError, ShapeError
from .simulate import load_dataset, make_dataset, save_dataset
from .training import TrainConfig, fit, init_model

__all__ = ["main", "run_config", "DEFAULT_CONFIG"]

# key -> (type, default). This is the complete configuration surface.
_SCHEMA: dict[str, tuple[type, object]] = {
    "phantom": (str, "shepp_logan"),
    "h": (int, 64),
    "w": (int, 64),
    "coils": (int, 4),
    "pattern": (str, "uniform1d"),
    "R": (int, 3),
    "center_fraction": (float, 0.0),
    "alpha": (float, 0.125),
    "T": (int, 10),
    "K": (int, 4),
    "channels": (int, 64),
    "kernel": (int, 3),
    "lr": (float, 1e-3),
    "decay": (float, 0.95),
    "batch": (int, 4),
    "iters": (int, 500),
    "seed": (int, 0),
    "precision": (str, "float32"),
    "out_dir": (str, "runs/out"),
    "num_samples": (int, 20),
    "dense": (bool, True),
    "decay_mode": (str, "lr_decay"),
}

DEFAULT_CONFIG = {k: v for k, (_, v) in _SCHEMA.items()}


def run_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve the run configuration: defaults <- JSON file <- overrides."""
    cfg = dict(DEFAULT_CONFIG)
    for source, name in ((_load_json(path), str(path)) if path else ({}, ""),
                         (overrides or {}, "command line")):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r} (from {name})")
            typ = _SCHEMA[key][0]
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if typ in (int, float) and isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be {typ.__name__}, got a boolean")
            if not isinstance(value, typ):
                raise ConfigError(f"config key {key!r} must be {typ.__name__}, "
                                  f"got {type(value).__name__} ({value!r})")
            cfg[key] = value
    if cfg["precision"] not in ("float32", "float64"):
        raise ConfigError(f"precision must be float32 or float64, got {cfg['precision']!r}")
    if cfg["seed"] < 0:
        raise ConfigError(f"seed must be non-negative, got {cfg['seed']}")
    return cfg


def _load_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def _model_config(cfg: dict) -> CascadeConfig:
    return CascadeConfig(coils=cfg["coils"], num_blocks=cfg["T"],
                         block=BlockConfig(num_layers=cfg["K"], channels=cfg["channels"],
                                           alpha=cfg["alpha"], kernel_size=cfg["kernel"],
                                           dense=cfg["dense"]))


def _write_meta(out_dir: Path, command: str, cfg: dict, started: float, extra=None) -> None:
    meta = {"command": command, "config": cfg,
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - started, 3)}
    if extra:
        meta.update(extra)
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def _dataset_for(cfg: dict) -> dict:
    return make_dataset(cfg["phantom"], cfg["h"], cfg["w"], cfg["coils"], cfg["pattern"],
                        cfg["R"], cfg["center_fraction"], cfg["num_samples"], cfg["seed"])


def cmd_simulate(cfg: dict) -> int:
    started = time.time()
    out = Path(cfg["out_dir"])
    data = _dataset_for(cfg)
    save_dataset(out, data)
    _write_meta(out, "simulate", cfg, started)
    frac = float(data["mask"].mean())
    print(f"wrote {cfg['num_samples']} samples to {out} "
          f"({cfg['pattern']} R={cfg['R']}, sampled fraction {frac:.3f})")
    return 0


def _check_data_matches(cfg: dict, meta: dict) -> None:
    for ck, dk in (("coils", "coils"), ("h", "height"), ("w", "width")):
        if cfg[ck] != meta[dk]:
            raise ConfigError(f"config {ck}={cfg[ck]} does not match dataset "
                              f"{dk}={meta[dk]}; pass matching values")


def cmd_train(cfg: dict, data_dir: str, resume=None) -> int:
    started = time.time()
    out = Path(cfg["out_dir"])
    ds = load_dataset(data_dir)
    _check_data_matches(cfg, ds["meta"])
    T.set_default_dtype(cfg["precision"])
    model = init_model(_model_config(cfg), seed=cfg["seed"], dtype=cfg["precision"])
    spe = -(-cfg["num_samples"] // cfg["batch"])
    epochs = -(-cfg["iters"] // spe)
    tc = TrainConfig(lr=cfg["lr"], decay=cfg["decay"], decay_mode=cfg["decay_mode"],
                     batch_size=cfg["batch"], iters=cfg["iters"], seed=cfg["seed"],
                     val_every=max(1, epochs // 10))
    report = fit(model, ds, tc, out, resume_from=resume)
    _write_meta(out, "train", cfg, started,
                extra={"steps": report.steps, "best_val_psnr": report.best_val_psnr,
                       "parameters": num_parameters(model.cfg)})
    print(f"trained {report.steps} steps in {report.train_seconds:.1f}s; "
          f"best val PSNR {report.best_val_psnr:.2f} dB; log at {report.log_path}")
    return 0


def cmd_eval(cfg: dict, data_dir: str, ckpt=None) -> int:
    started = time.time()
    out = Path(cfg["out_dir"])
    ckpt = ckpt or (out / "checkpoint_final")
    model, _ = load_model(ckpt)
    ds = load_dataset(data_dir)
    if model.cfg.coils != ds["meta"]["coils"]:
        raise ConfigError(f"checkpoint expects {model.cfg.coils} coils, dataset has "
                          f"{ds['meta']['coils']}")
    recon = np.stack([model.forward(ds["kspace"][i][None], ds["mask"][i][None])[0]
                      for i in range(ds["kspace"].shape[0])])
    zf = T.ifft2c(ds["kspace"])
    result = M.evaluate(recon, ds["target"], zero_filled=zf)
    out.mkdir(parents=True, exist_ok=True)
    M.write_report_csv(out / "report.csv", result)
    M.save_error_grid(out / "error_grid.png", recon, ds["target"], zero_filled=zf)
    _write_meta(out, "eval", cfg, started, extra={"checkpoint": str(ckpt), "mean": result["mean"]})
    m = result["mean"]
    print(f"PSNR {m['psnr']:.2f} dB (zero-filled {m['zf_psnr']:.2f}), "
          f"SSIM {m['ssim']:.4f} (zero-filled {m['zf_ssim']:.4f}); report at {out / 'report.csv'}")
    return 0


def cmd_ablate(cfg: dict, param: str, values: list) -> int:
    started = time.time()
    if param not in _SCHEMA:
        raise ConfigError(f"cannot ablate unknown config key {param!r}")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub = run_config(overrides={**cfg, param: value,
                                    "out_dir": str(out / f"{param}_{value}")})
        print(f"[ablate] {param}={value}")
        data = _dataset_for(sub)
        save_dataset(sub["out_dir"], data)
        cmd_train(sub, sub["out_dir"])
        cmd_eval(sub, sub["out_dir"], ckpt=Path(sub["out_dir"]) / "checkpoint_final")
        report = json.loads((Path(sub["out_dir"]) / "run_meta.json").read_text())
        flops = cascade_flops(_model_config(sub), sub["h"], sub["w"])
        rows.append((value, flops, report["mean"]["psnr"], report["mean"]["ssim"]))
    with (out / "ablate.csv").open("w") as fh:
        fh.write("value,flops,psnr,ssim\n")
        for value, flops, p, s in rows:
            fh.write(f"{value},{flops},{p:.6f},{s:.6f}\n")
    _write_meta(out, "ablate", cfg, started, extra={"param": param, "values": values})
    print(f"ablation table at {out / 'ablate.csv'}")
    return 0


def cmd_flops(cfg: dict) -> int:
    mc = _model_config(cfg)
    total, layers = cascade_flops(mc, cfg["h"], cfg["w"], per_layer=True)
    print(f"alpha={cfg['alpha']} channels={cfg['channels']} kernel={cfg['kernel']} "
          f"T={cfg['T']} K={cfg['K']} at {cfg['h']}x{cfg['w']}")
    for name, rep in layers[: cfg["K"] + 1]:
        print(f"  {name:<18} {rep.total_mul_adds:>15,} mul-adds")
    if cfg["T"] > 1:
        print(f"  ... ({cfg['T']} identical blocks)")
    print(f"total {total:,} mul-adds over {num_parameters(mc):,} parameters")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="octmri",
                                 description="Parallel-MRI reconstruction with "
                                             "complex dual-resolution convolutions")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "generate a synthetic dataset directory"),
                           ("train", "train the cascade on a dataset"),
                           ("eval", "score a checkpoint on a dataset"),
                           ("ablate", "sweep one config key; write value/flops/psnr/ssim"),
                           ("flops", "print the mul-add budget of the configured model")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file (flat object, strict keys)")
        p.add_argument("--threads", type=int, default=None,
                       help="accepted for interface compatibility; single-threaded either way")
        p.add_argument("--deterministic", action="store_true",
                       help="accepted for interface compatibility; runs are always "
                            "seeded and deterministic")
        for key, (typ, _) in _SCHEMA.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                               default=None)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None)
        if name in ("train", "eval"):
            p.add_argument("--data", required=True, help="dataset directory")
        if name == "train":
            p.add_argument("--resume", help="checkpoint directory to continue from")
        if name == "eval":
            p.add_argument("--ckpt", help="checkpoint directory (default: OUT_DIR/checkpoint_final)")
        if name == "ablate":
            p.add_argument("--param", required=True, help="config key to sweep")
            p.add_argument("--values", required=True,
                           help="comma-separated values, e.g. 0,0.125,0.25")
    return ap


def _parse_values(param: str, raw: str) -> list:
    typ = _SCHEMA[param][0] if param in _SCHEMA else str
    vals = []
    for tok in raw.split(","):
        tok = tok.strip()
        try:
            vals.append(typ(tok) if typ is not bool else tok.lower() in ("1", "true", "yes"))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {tok!r} as {typ.__name__} for {param!r}") from exc
    if not vals:
        raise ConfigError("--values must name at least one value")
    return vals


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {k: getattr(args, k) for k in _SCHEMA if getattr(args, k, None) is not None}
        cfg = run_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.data, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, args.data, ckpt=args.ckpt)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.param, _parse_values(args.param, args.values))
        return cmd_flops(cfg)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
