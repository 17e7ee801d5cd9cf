"""Quality metrics: pinned PSNR values, the windowed SSIM against a slow
per-window oracle, and the report writers."""

import numpy as np
import pytest

from octmri import metrics as M
from octmri.errors import ConfigError, ShapeError


def _slow_ssim(img, ref):
    # direct per-window evaluation of the definition, one window at a time
    img = img.astype(np.float64)
    ref = ref.astype(np.float64)
    r = np.arange(11.0) - 5.0
    g = np.exp(-(r * r) / (2 * 1.5 * 1.5))
    k = np.outer(g, g)
    k /= k.sum()
    L = ref.max() - ref.min()
    if L <= 0:
        L = 1.0
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h, w = img.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            x = img[i:i + 11, j:j + 11]
            y = ref[i:i + 11, j:j + 11]
            mx, my = (k * x).sum(), (k * y).sum()
            vx = (k * x * x).sum() - mx * mx
            vy = (k * y * y).sum() - my * my
            cov = (k * x * y).sum() - mx * my
            vals.append((2 * mx * my + c1) * (2 * cov + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_coil_combine_rss(rng):
    x = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
    out = M.coil_combine(x)
    assert out.shape == (8, 8)
    assert np.allclose(out, np.sqrt((np.abs(x) ** 2).sum(axis=0)))
    with pytest.raises(ShapeError):
        M.coil_combine(x[0])


def test_psnr_pinned_value():
    # |error| = 0.1 everywhere on a unit-peak image: 20*log10(1/0.1) = 20 dB
    ref = np.ones((16, 16))
    img = ref + 0.1
    assert M.psnr(img, ref) == pytest.approx(20.0, abs=0.01)
    assert M.psnr(ref - 0.01, ref) == pytest.approx(40.0, abs=0.01)


def test_psnr_sentinel_and_peak():
    ref = np.full((8, 8), 2.0)
    assert M.psnr(ref.copy(), ref) == M.PSNR_SENTINEL == 99.0
    # peak comes from the reference: doubling both scales mse by 4 and peak^2 by 4
    rng = np.random.default_rng(0)
    a = rng.random((8, 8)) + 0.5
    b = rng.random((8, 8)) + 0.5
    assert M.psnr(2 * a, 2 * b) == pytest.approx(M.psnr(a, b), rel=1e-12)
    with pytest.raises(ShapeError):
        M.psnr(a, b[:4])


def test_ssim_self_is_one(rng):
    x = rng.random((16, 20))
    assert M.ssim(x, x) == 1.0


def test_ssim_matches_slow_oracle(rng):
    ref = rng.random((16, 16))
    img = ref + 0.1 * rng.standard_normal((16, 16))
    assert M.ssim(img, ref) == pytest.approx(_slow_ssim(img, ref), abs=1e-12)


def test_ssim_monotone_under_noise(rng):
    ref = rng.random((24, 24))
    small = M.ssim(ref + 0.02 * rng.standard_normal(ref.shape), ref)
    large = M.ssim(ref + 0.3 * rng.standard_normal(ref.shape), ref)
    assert 1.0 > small > large


def test_ssim_validation(rng):
    with pytest.raises(ConfigError):
        M.ssim(np.zeros((10, 16)), np.zeros((10, 16)))  # below the window size
    with pytest.raises(ShapeError):
        M.ssim(np.zeros((16, 16)), np.zeros((16, 17)))
    # flat reference: dynamic range falls back to 1 instead of dividing by 0
    assert np.isfinite(M.ssim(np.zeros((16, 16)), np.zeros((16, 16))))


def test_ssim_terms_factorization(rng):
    ref = rng.random((16, 16))
    img = ref + 0.05 * rng.standard_normal((16, 16))
    terms = M.ssim_terms(img, ref)
    assert terms["ssim"] == pytest.approx(M.ssim(img, ref), rel=1e-12)
    for key in ("luminance", "contrast", "structure"):
        assert 0.0 < terms[key] <= 1.0 + 1e-9
    # pure offset: structure stays essentially perfect, luminance drops
    off = M.ssim_terms(ref + 0.2, ref)
    assert off["structure"] == pytest.approx(1.0, abs=1e-6)
    assert off["luminance"] < 0.99


def test_evaluate_rows_and_aggregates(rng):
    target = rng.random((3, 2, 16, 16)) + 1j * rng.random((3, 2, 16, 16))
    recon = target + 0.05 * rng.standard_normal(target.shape)
    zf = target + 0.2 * rng.standard_normal(target.shape)
    res = M.evaluate(recon, target, zero_filled=zf)
    assert [r["index"] for r in res["rows"]] == [0, 1, 2]
    assert res["mean"]["psnr"] > res["mean"]["zf_psnr"]
    assert set(res["mean"]) == {"psnr", "ssim", "zf_psnr", "zf_ssim"}
    assert res["std"]["ssim"] >= 0.0
    plain = M.evaluate(recon, target)
    assert set(plain["mean"]) == {"psnr", "ssim"}
    with pytest.raises(ShapeError):
        M.evaluate(recon[:, :, :8], target)


def test_write_report_csv(tmp_path, rng):
    target = rng.random((2, 1, 16, 16)) + 0j
    recon = target + 0.1 * rng.standard_normal(target.shape)
    res = M.evaluate(recon, target)
    out = tmp_path / "report.csv"
    M.write_report_csv(out, res)
    lines = out.read_text().splitlines()
    assert lines[0] == "index,psnr,ssim"
    assert len(lines) == 4
    assert lines[-1].startswith("aggregate,")
    assert "+/-" in lines[-1]
    # six-decimal fixed-point cells
    assert all(len(cell.split(".")[1]) == 6 for cell in lines[1].split(",")[1:])


def test_save_error_grid_writes_png(tmp_path, rng):
    target = rng.random((2, 2, 16, 16)) + 0j
    recon = target + 0.1 * rng.standard_normal(target.shape)
    out = tmp_path / "grid.png"
    M.save_error_grid(out, recon, target, zero_filled=recon)
    data = out.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000
