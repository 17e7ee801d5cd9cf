"""Seeded initialization and first-order training for the cascade.

Reproducibility contract: every stochastic choice is derived from explicit
seeds (parameter init from ``seed``, the epoch-``e`` shuffle from
``(seed, e)``), so a run can be resumed mid-epoch from a checkpoint and
produce bit-identical parameters to an uninterrupted run.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from . import tensor as T
from .autodiff import backward
from .cascade import (CascadeConfig, CascadeModel, buffer_spec, l1_loss_vars,
                      model_meta, parameter_spec, save_checkpoint, load_checkpoint)
from .errors import ConfigError, NumericsError, ShapeError

__all__ = [
    "TrainConfig",
    "AdamState",
    "FitReport",
    "init_complex_kernel",
    "init_model",
    "adam_step",
    "learning_rate",
    "fit",
]

_BETA1, _BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


def init_complex_kernel(shape: tuple, fan_in: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw one complex kernel as (real, imag) parts.

    Magnitudes are Rayleigh with scale ``1/sqrt(fan_in)``, phases uniform on
    ``[-pi, pi)``; the real and imaginary banks returned here come from the
    *same* magnitude/phase draw, so they must be assigned to the paired
    real/imag parameters of one convolution, never to two different ones.
    """
    if fan_in < 1:
        fan_in = 1  # zero-width path: arrays are empty anyway
    rho = rng.rayleigh(scale=1.0 / np.sqrt(fan_in), size=shape)
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    return rho * np.cos(theta), rho * np.sin(theta)


def init_model(cfg: CascadeConfig, seed: int = 0, dtype=None) -> CascadeModel:
    """Build a model with seeded parameters.

    Convolution banks get the Rayleigh/uniform complex init, pointwise fusion
    weights are scaled Gaussians (std ``1/sqrt(fan_in)``), biases and BN betas
    start at zero, BN gammas at one, running stats at (0, 1).
    """
    dt = np.dtype(dtype) if dtype is not None else T.default_dtype()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    params: dict[str, np.ndarray] = {}
    pending: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for s in parameter_spec(cfg):
        if s.kind == "bank_r":
            kr, ki = init_complex_kernel(s.shape, s.fan_in, rng)
            pending[s.pair] = (kr, ki)
            arr = kr
        elif s.kind == "bank_i":
            arr = pending.pop(s.pair)[1]
        elif s.kind == "weight":
            arr = rng.standard_normal(s.shape) / np.sqrt(max(s.fan_in, 1))
        elif s.kind in ("bias", "bn_beta"):
            arr = np.zeros(s.shape)
        elif s.kind == "bn_gamma":
            arr = np.ones(s.shape)
        else:  # pragma: no cover - spec kinds are closed
            raise ConfigError(f"unknown parameter kind {s.kind!r}")
        params[s.name] = np.ascontiguousarray(arr, dtype=dt)
    buffers = {}
    for name, shape in buffer_spec(cfg):
        fill = 1.0 if name.endswith(".var") else 0.0
        buffers[name] = np.full(shape, fill, dtype=dt)
    return CascadeModel(cfg, params, buffers)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 0.95
    decay_mode: str = "lr_decay"  # lr_decay | weight_decay
    batch_size: int = 4
    iters: int = 500
    seed: int = 0
    val_every: int = 1  # epochs between validation sweeps

    def __post_init__(self):
        if self.decay_mode not in ("lr_decay", "weight_decay"):
            raise ConfigError(f"decay_mode must be lr_decay or weight_decay, got {self.decay_mode!r}")
        if self.lr <= 0 or not (0.0 < self.decay <= 1.0):
            raise ConfigError(f"need lr > 0 and decay in (0, 1], got lr={self.lr}, decay={self.decay}")
        if self.batch_size < 1 or self.iters < 1 or self.val_every < 1:
            raise ConfigError("batch_size, iters and val_every must all be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied transactionally.

    All moments and parameter values are computed first and committed only if
    every result is finite; a non-finite gradient or update raises
    NumericsError and leaves parameters and optimizer state untouched.
    """
    t = state.step + 1
    staged = []
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if g.size and not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in {name} at step {t}")
        m = _BETA1 * state.m[name] + (1.0 - _BETA1) * g
        v = _BETA2 * state.v[name] + (1.0 - _BETA2) * g * g
        mhat = m / (1.0 - _BETA1 ** t)
        vhat = v / (1.0 - _BETA2 ** t)
        new_p = p - lr * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        if new_p.size and not np.isfinite(new_p).all():
            raise NumericsError(f"non-finite parameter update in {name} at step {t}")
        staged.append((name, m, v, new_p))
    for name, m, v, new_p in staged:
        state.m[name] = m
        state.v[name] = v
        params[name][...] = new_p
    state.step = t


def learning_rate(base_lr: float, decay: float, step: int, steps_per_epoch: int) -> float:
    """Staircase schedule: ``lr * decay ** (completed epochs)``."""
    return base_lr * decay ** (step // steps_per_epoch)


@dataclass
class FitReport:
    steps: int
    epochs: int
    log_path: str
    final_path: str
    best_path: str | None
    best_val_psnr: float | None
    best_val_ssim: float | None
    train_seconds: float
    aborted: bool = False


def _as_batch_arrays(data: dict, what: str):
    try:
        ks, mask, target = data["kspace"], data["mask"], data["target"]
    except KeyError as exc:
        raise ConfigError(f"{what} data must provide kspace/mask/target, missing {exc}") from exc
    ks = np.asarray(ks)
    mask = np.asarray(mask)
    target = np.asarray(target)
    if ks.ndim != 4 or target.shape != ks.shape:
        raise ShapeError(f"{what} kspace/target must both be (n, coils, h, w), got {ks.shape} / {target.shape}")
    if mask.shape != (ks.shape[0],) + ks.shape[2:]:
        raise ShapeError(f"{what} mask must be (n, h, w), got {mask.shape}")
    return ks, mask, target


def _validate_sweep(model: CascadeModel, ks, mask, target) -> tuple[float, float]:
    psnrs, ssims = [], []
    for i in range(ks.shape[0]):
        rec = model.forward(ks[i][None], mask[i][None], bn_mode="eval")[0]
        ref = M.coil_combine(target[i])
        img = M.coil_combine(rec)
        psnrs.append(M.psnr(img, ref))
        ssims.append(M.ssim(img, ref))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _log_row(step, epoch, lr, loss, vp=None, vs=None) -> str:
    v1 = "" if vp is None else f"{vp:.6f}"
    v2 = "" if vs is None else f"{vs:.6f}"
    return f"{step},{epoch},{lr:.8e},{loss:.8e},{v1},{v2}\n"


def fit(model: CascadeModel, train: dict, cfg: TrainConfig, out_dir,
        val: dict | None = None, resume_from=None) -> FitReport:
    """Train the cascade with Adam on the half-L1 reconstruction loss.

    Writes ``train_log.csv`` (one row per iteration; validation columns are
    filled only on epoch-end rows) plus ``checkpoint_final`` and, whenever the
    validation PSNR improves, ``checkpoint_best``. A non-finite gradient
    aborts the run with NumericsError after saving the last good parameters.

    Args:
        train: dict with ``kspace`` (n, coils, h, w) complex, ``mask``
            (n, h, w), ``target`` like ``kspace`` (e.g. a loaded dataset).
        val: held-out samples for the epoch-end sweeps; defaults to ``train``.
        resume_from: checkpoint directory to continue from; the schedule,
            shuffles and remaining iteration count all follow the stored step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ks, mask, target = _as_batch_arrays(train, "train")
    vks, vmask, vtarget = _as_batch_arrays(val, "val") if val is not None else (ks, mask, target)
    n = ks.shape[0]
    spe = -(-n // cfg.batch_size)  # steps per epoch

    state = AdamState.for_params(model.params)
    best_psnr: float | None = None
    best_ssim: float | None = None
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if set(ck["params"]) != set(model.params):
            raise ConfigError("resume checkpoint does not match the model's parameter spec")
        for name in model.params:
            model.params[name][...] = ck["params"][name]
        for name in model.buffers:
            model.buffers[name][...] = ck["buffers"][name]
        for name in model.params:
            state.m[name][...] = ck["opt"][f"m.{name}"]
            state.v[name][...] = ck["opt"][f"v.{name}"]
        trainer = ck["meta"].get("trainer", {})
        state.step = int(trainer.get("step", 0))
        best_psnr = trainer.get("best_val_psnr")
        best_ssim = trainer.get("best_val_ssim")

    def checkpoint(path: Path) -> None:
        opt = {f"m.{k}": v for k, v in state.m.items()}
        opt.update({f"v.{k}": v for k, v in state.v.items()})
        meta = {"model": model_meta(model.cfg, model.dtype),
                "trainer": {"step": state.step, "best_val_psnr": best_psnr,
                            "best_val_ssim": best_ssim, "train_config": asdict(cfg)}}
        save_checkpoint(path, model.params, model.buffers, opt=opt, meta=meta)

    rows: list[str] = ["step,epoch,lr,loss,val_psnr,val_ssim\n"]
    log_path = out_dir / "train_log.csv"
    best_path = out_dir / "checkpoint_best"
    final_path = out_dir / "checkpoint_final"
    t0 = time.monotonic()
    aborted = False
    try:
        while state.step < cfg.iters:
            epoch = state.step // spe
            perm = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
            start = (state.step % spe) * cfg.batch_size  # mid-epoch resume lands here
            for lo in range(start, n, cfg.batch_size):
                idx = perm[lo: lo + cfg.batch_size]
                lr = learning_rate(cfg.lr, cfg.decay, state.step, spe) \
                    if cfg.decay_mode == "lr_decay" else cfg.lr
                pv = model.param_vars()
                re, im = model.forward_vars(ks[idx], mask[idx], bn_mode="train", pv=pv)
                loss = l1_loss_vars(re, im, target[idx])
                backward(loss)
                grads = {name: (v.grad if v.grad is not None else np.zeros_like(v.data))
                         for name, v in pv.items()}
                adam_step(model.params, grads, state, lr)
                epoch_end = state.step % spe == 0 or state.step >= cfg.iters
                vp = vs = None
                if epoch_end and ((epoch + 1) % cfg.val_every == 0 or state.step >= cfg.iters):
                    vp, vs = _validate_sweep(model, vks, vmask, vtarget)
                    if best_psnr is None or vp > best_psnr:
                        best_psnr, best_ssim = vp, vs
                        checkpoint(best_path)
                rows.append(_log_row(state.step, epoch, lr, float(loss.data), vp, vs))
                if state.step >= cfg.iters:
                    break
            if cfg.decay_mode == "weight_decay" and state.step % spe == 0:
                for p in model.params.values():
                    p *= model.dtype.type(cfg.decay)
    except NumericsError:
        aborted = True
        raise
    finally:
        # params are never mutated by a failing step, so this is last-good
        checkpoint(final_path)
        log_path.write_text("".join(rows))
    return FitReport(steps=state.step, epochs=-(-state.step // spe), log_path=str(log_path),
                     final_path=str(final_path),
                     best_path=str(best_path) if best_path.is_dir() else None,
                     best_val_psnr=best_psnr, best_val_ssim=best_ssim,
                     train_seconds=time.monotonic() - t0, aborted=aborted)
