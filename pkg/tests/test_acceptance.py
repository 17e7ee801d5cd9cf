"""Acceptance suite: one test per shipped guarantee, each printing a single
PASS line with its measured numbers and asserting the stated tolerance and
runtime budget.

The two training-based tests share one pipeline (same dataset recipe, model
and optimizer settings); the reproducibility test reruns it from scratch and
compares training logs byte for byte.
"""

import time

import numpy as np
import pytest

from octmri import tensor as T
from octmri import cascade as cs
from octmri import metrics as M
from octmri import simulate as sim
from octmri.autodiff import backward
from octmri.octconv import (DualOctKernel, complex_conv2d, count_flops,
                            dual_octconv_forward, merge_frequency,
                            split_frequency)
from octmri.training import TrainConfig, fit, init_model

# toy-reconstruction pipeline settings shared by the gain and reproducibility
# tests; dataset and model shapes are fixed, the optimizer settings are the
# tuned operating point
TOY_DATA = dict(phantom="shepp_logan", h=32, w=32, coils=4, pattern="uniform1d",
                R=3, center_fraction=0.09, num_samples=20, seed=1)
TOY_MODEL = dict(num_blocks=2, num_layers=2, channels=16, alpha=0.125)
TOY_OPT = dict(lr=1e-2, decay=1.0, batch=20, iters=500, seed=0)


def _line(name: str, detail: str) -> None:
    print(f"{name}: PASS ({detail})")


# ---------------------------------------------------------------------------


def test_alpha_zero_reduction_matches_complex_conv():
    t0 = time.monotonic()
    worst = {"float32": 0.0, "float64": 0.0}
    rng = np.random.default_rng(20260816)
    for trial in range(100):
        cin = int(rng.integers(1, 7))
        cout = int(rng.integers(1, 7))
        h, w = 2 * int(rng.integers(2, 9)), 2 * int(rng.integers(2, 9))
        k = int(rng.choice([1, 3, 5]))
        x64 = rng.standard_normal((cin, h, w)) + 1j * rng.standard_normal((cin, h, w))
        kr = rng.standard_normal((cout, cin, k, k))
        ki = rng.standard_normal((cout, cin, k, k))
        for dtype, ctype in (("float32", np.complex64), ("float64", np.complex128)):
            x = x64.astype(ctype)
            bank = DualOctKernel.zeros(0, cin, 0, cout, k, dtype=dtype)
            bank.r_hh[:] = kr
            bank.i_hh[:] = ki
            routed = merge_frequency(dual_octconv_forward(split_frequency(x, 0.0), bank))
            plain = complex_conv2d(x, bank.r_hh, bank.i_hh)
            diff = np.abs((routed[:cout] + 1j * routed[cout:]) - plain).max()
            worst[dtype] = max(worst[dtype], float(diff))
    dt = time.monotonic() - t0
    assert worst["float32"] <= 1e-6
    assert worst["float64"] <= 1e-12
    assert dt < 60.0
    _line("alpha-zero reduction",
          f"100 pairs, max |diff| f32 {worst['float32']:.1e} <= 1e-6, "
          f"f64 {worst['float64']:.1e} <= 1e-12, {dt:.1f}s < 60s")


def test_analytic_gradients_match_finite_differences():
    t0 = time.monotonic()
    T.set_default_dtype("float64")
    cfg = cs.CascadeConfig(coils=2, num_blocks=1,
                           block=cs.BlockConfig(num_layers=1, channels=4, alpha=0.25))
    model = init_model(cfg, seed=3, dtype="float64")
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 2, 8, 8)) + 1j * rng.standard_normal((1, 2, 8, 8))
    mask = (rng.random((8, 8)) < 0.5).astype(np.float64)
    mask[4, 4] = 1.0
    y = T.fft2c(x) * mask
    target = rng.standard_normal((1, 2, 8, 8)) + 1j * rng.standard_normal((1, 2, 8, 8))

    def block_loss(sub):
        m = cs.CascadeModel(cfg, {**model.params, **sub}, dict(model.buffers))
        pv = m.param_vars()
        from octmri.autodiff import Var
        x0 = T.ifft2c(y)
        re, im = m.block_vars(0, Var(np.ascontiguousarray(x0.real)),
                              Var(np.ascontiguousarray(x0.imag)), pv, "eval")
        return float(cs.l1_loss_vars(re, im, target).data)

    def full_loss(sub):
        m = cs.CascadeModel(cfg, {**model.params, **sub}, dict(model.buffers))
        re, im = m.forward_vars(y, mask, bn_mode="eval")
        return float(cs.l1_loss_vars(re, im, target).data)

    # analytic gradients from one taped backward per objective
    from octmri.autodiff import Var
    pv = model.param_vars()
    x0 = T.ifft2c(y)
    re, im = model.block_vars(0, Var(np.ascontiguousarray(x0.real)),
                              Var(np.ascontiguousarray(x0.imag)), pv, "eval")
    backward(cs.l1_loss_vars(re, im, target))
    an_block = {n: pv[n].grad.copy() for n in model.params}

    pv2 = model.param_vars()
    re, im = model.forward_vars(y, mask, bn_mode="eval", pv=pv2)
    backward(cs.l1_loss_vars(re, im, target))
    an_full = {n: pv2[n].grad.copy() for n in model.params}

    rep_block = T.finite_diff_grad(block_loss, dict(model.params), an_block, eps=1e-6)
    rep_full = T.finite_diff_grad(full_loss, dict(model.params), an_full, eps=1e-6)
    dt = time.monotonic() - t0
    n = sum(p.size for p in model.params.values())
    assert rep_block.max_rel_error <= 1e-4, rep_block.worst()
    assert rep_full.max_rel_error <= 1e-3, rep_full.worst()
    assert dt < 300.0
    _line("gradient correctness",
          f"{n} parameters, block objective max rel err "
          f"{rep_block.max_rel_error:.2e} <= 1e-4, through fidelity "
          f"{rep_full.max_rel_error:.2e} <= 1e-3, {dt:.1f}s < 300s")


def test_data_consistency_contract():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    worst = dict(sampled=0.0, unsampled=0.0, idem=0.0)
    for trial in range(50):
        coils = int(rng.choice([1, 2, 4]))
        h, w = int(rng.choice([8, 16])), int(rng.choice([8, 16]))
        shape = (coils, h, w)
        x_hat = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        y = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        m = (rng.random((h, w)) < 0.4).astype(np.float64)
        out = cs.data_fidelity(x_hat, y, m)
        k = T.fft2c(out)
        mb = m.astype(bool)
        worst["sampled"] = max(worst["sampled"],
                               float(np.abs((k - y)[:, mb]).max(initial=0.0)))
        worst["unsampled"] = max(worst["unsampled"],
                                 float(np.abs((k - T.fft2c(x_hat))[:, ~mb]).max(initial=0.0)))
        twice = cs.data_fidelity(out, y, m)
        worst["idem"] = max(worst["idem"], float(np.abs(twice - out).max()))
    dt = time.monotonic() - t0
    assert worst["sampled"] <= 1e-6
    assert worst["unsampled"] <= 1e-6
    assert worst["idem"] <= 1e-6
    assert dt < 60.0
    _line("data-consistency contract",
          f"50 triples, sampled {worst['sampled']:.1e}, unsampled "
          f"{worst['unsampled']:.1e}, idempotence {worst['idem']:.1e}, "
          f"all <= 1e-6, {dt:.1f}s < 60s")


# ---------------------------------------------------------------------------


def _toy_pipeline(out_dir):
    """Dataset -> init -> fit -> per-sample metrics; everything seeded."""
    T.set_default_dtype("float32")
    ds = sim.make_dataset(**TOY_DATA)
    cfg = cs.CascadeConfig(coils=TOY_DATA["coils"], num_blocks=TOY_MODEL["num_blocks"],
                           block=cs.BlockConfig(num_layers=TOY_MODEL["num_layers"],
                                                channels=TOY_MODEL["channels"],
                                                alpha=TOY_MODEL["alpha"]))
    model = init_model(cfg, seed=TOY_OPT["seed"])
    tc = TrainConfig(lr=TOY_OPT["lr"], decay=TOY_OPT["decay"], decay_mode="lr_decay",
                     batch_size=TOY_OPT["batch"], iters=TOY_OPT["iters"],
                     seed=TOY_OPT["seed"], val_every=10 ** 9)
    fit(model, ds, tc, out_dir)
    rec_p, rec_s, zf_p, zf_s = [], [], [], []
    for i in range(ds["kspace"].shape[0]):
        y, mk = ds["kspace"][i], ds["mask"][i]
        ref = M.coil_combine(ds["target"][i])
        rec = M.coil_combine(cs.reconstruct(model, y, mk))
        zf = M.coil_combine(T.ifft2c(y[None])[0])
        rec_p.append(M.psnr(rec, ref))
        rec_s.append(M.ssim(rec, ref))
        zf_p.append(M.psnr(zf, ref))
        zf_s.append(M.ssim(zf, ref))
    log = (out_dir / "train_log.csv").read_bytes()
    return {"psnr_gain": float(np.mean(rec_p) - np.mean(zf_p)),
            "ssim_gain": float(np.mean(rec_s) - np.mean(zf_s)),
            "psnr": float(np.mean(rec_p)), "zf_psnr": float(np.mean(zf_p)),
            "log": log}


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    t0 = time.monotonic()
    out = tmp_path_factory.mktemp("toy") / "run_a"
    result = _toy_pipeline(out)
    result["seconds"] = time.monotonic() - t0
    return result


def test_toy_training_beats_zero_filled(toy_run):
    assert toy_run["psnr_gain"] >= 3.0
    assert toy_run["ssim_gain"] >= 0.05
    assert toy_run["seconds"] < 600.0
    _line("toy reconstruction gain",
          f"PSNR {toy_run['zf_psnr']:.2f} -> {toy_run['psnr']:.2f} dB "
          f"(+{toy_run['psnr_gain']:.2f} >= 3), SSIM +{toy_run['ssim_gain']:.4f} "
          f">= 0.05, {toy_run['seconds']:.0f}s < 600s")


def test_training_log_reproducibility(toy_run, tmp_path):
    rerun = _toy_pipeline(tmp_path / "run_b")
    assert rerun["log"] == toy_run["log"]
    rows = len(toy_run["log"].splitlines()) - 1
    _line("deterministic training",
          f"rerun training log byte-identical ({rows} rows)")


# ---------------------------------------------------------------------------


def test_flops_strictly_decrease_with_split_ratio():
    t0 = time.monotonic()
    grid = (0.0, 0.125, 0.25, 0.5, 0.75)
    counts = [count_flops(64, 64, 32, 32, alpha=a, kernel_size=3).total_mul_adds
              for a in grid]
    assert all(a > b for a, b in zip(counts, counts[1:]))
    closed_form = 2 * 64 * 64 * 9 * 32 * 32
    assert counts[0] == closed_form == 75_497_472
    dt = time.monotonic() - t0
    _line("flops monotonicity",
          f"{' > '.join(f'{c:,}' for c in counts)}; alpha=0 equals closed form "
          f"{closed_form:,}, {dt:.2f}s < 1s")
    assert dt < 1.0


def test_mask_sampling_statistics():
    t0 = time.monotonic()
    checked = []
    for pattern in ("uniform1d", "cartesian1d", "random2d", "radial2d"):
        for R in ((4, 6) if pattern == "radial2d" else (3, 5)):
            m = sim.make_mask(pattern, R, 64, 64, seed=1)
            frac = m.fraction
            assert abs(frac - 1.0 / R) <= 0.2 / R, (pattern, R, frac)
            if pattern.endswith("1d"):
                cols = m.mask[0]
                assert np.array_equal(m.mask, np.tile(cols, (64, 1)))
            if pattern == "radial2d":
                assert m.mask[32, 32] == 1.0
            checked.append(f"{pattern}@R{R}={frac:.3f}")
    dt = time.monotonic() - t0
    assert dt < 1.0
    _line("mask statistics", "; ".join(checked) + f"; all within 20% of 1/R, "
          f"1D column-constant, radial keeps DC, {dt:.2f}s < 1s")


def test_metric_fixed_points():
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    x = rng.random((32, 32))
    assert M.ssim(x, x) == 1.0
    assert M.psnr(x, x) == M.PSNR_SENTINEL
    ramp = np.linspace(0.0, 1.0, 64 * 64).reshape(64, 64)
    val = M.psnr(ramp + 0.1, ramp)
    assert abs(val - 20.0) <= 0.01
    dt = time.monotonic() - t0
    assert dt < 1.0
    _line("metric sanity",
          f"ssim(x,x)=1, psnr(x,x)={M.PSNR_SENTINEL} dB sentinel, uniform-0.1 "
          f"error = {val:.4f} dB (20 +/- 0.01), {dt:.2f}s < 1s")
