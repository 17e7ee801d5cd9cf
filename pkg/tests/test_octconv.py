"""Routed complex convolution: channel splitting, the four-path forward against
a brute-force oracle, exact adjoints, and the mul-add counter."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octmri import autodiff as ad
from octmri import octconv as oc
from octmri import tensor as T
from octmri.errors import ConfigError, ShapeError


def _rand_complex(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _rand_kernel(rng, in_low, in_high, out_low, out_high, ksize=3):
    k = oc.DualOctKernel.zeros(in_low, in_high, out_low, out_high, ksize, dtype=np.float64)
    return k.map(lambda a: rng.standard_normal(a.shape))


def _feat_dot(a: oc.OctComplexFeature, b: oc.OctComplexFeature) -> float:
    return float(sum((getattr(a, f) * getattr(b, f)).sum()
                     for f in ("r_h", "i_h", "r_l", "i_l")))


def _kern_dot(a: oc.DualOctKernel, b: oc.DualOctKernel) -> float:
    return float(sum((arr * getattr(b, name)).sum() for name, arr in a.banks()))


# ---------------------------------------------------------------------------
# splitting / merging

def test_split_channel_allocation(rng):
    x = _rand_complex(rng, (1, 64, 8, 8))
    f = oc.split_frequency(x, 0.125)
    assert f.low_channels == 8 and f.high_channels == 56
    # FIRST channels feed the low band, and they are average-pooled
    assert np.allclose(f.r_l, T.avg_pool2(np.ascontiguousarray(x[:, :8].real)))
    assert np.allclose(f.i_h, x[:, 8:].imag)
    assert f.r_l.shape[-2:] == (4, 4)


def test_split_rounds_half_up(rng):
    # alpha=0.25 of 6 channels -> 1.5 -> 2 low (banker's rounding would give 1)
    f = oc.split_frequency(_rand_complex(rng, (6, 4, 4)), 0.25)
    assert f.low_channels == 2


def test_split_alpha_edges(rng):
    x = _rand_complex(rng, (2, 4, 4, 4))
    f0 = oc.split_frequency(x, 0.0)
    assert f0.low_channels == 0 and f0.high_channels == 4
    f1 = oc.split_frequency(x, 1.0)
    assert f1.low_channels == 4 and f1.high_channels == 0
    with pytest.raises(ConfigError):
        oc.split_frequency(x, 1.5)
    with pytest.raises(ShapeError):
        oc.split_frequency(x.real, 0.5)  # not complex


def test_merge_combines_bands(rng):
    x = _rand_complex(rng, (1, 4, 6, 6))
    f = oc.split_frequency(x, 0.5)
    m = oc.merge_frequency(f)
    want = (T.upsample_nearest2(np.concatenate([f.r_l, f.i_l], axis=1))
            + np.concatenate([f.r_h, f.i_h], axis=1))
    assert np.allclose(m, want)
    assert m.shape == (1, 4, 6, 6)


def test_merge_single_band_cases(rng):
    x = _rand_complex(rng, (1, 4, 6, 6))
    lo = oc.split_frequency(x, 1.0)
    assert oc.merge_frequency(lo).shape == (1, 8, 6, 6)
    hi = oc.split_frequency(x, 0.0)
    assert np.allclose(oc.merge_frequency(hi),
                       np.concatenate([x.real, x.imag], axis=1))
    f = oc.split_frequency(_rand_complex(rng, (1, 3, 6, 6)), 1 / 3)
    with pytest.raises(ShapeError):
        oc.merge_frequency(f)  # 1 low vs 2 high cannot sum


# ---------------------------------------------------------------------------
# complex convolution

def test_complex_conv2d_matches_complex_arithmetic(rng):
    x = _rand_complex(rng, (2, 3, 6, 6))
    kr = rng.standard_normal((4, 3, 3, 3))
    ki = rng.standard_normal((4, 3, 3, 3))
    y = oc.complex_conv2d(x, kr, ki)
    # oracle: run the real conv on stacked parts and combine by hand
    want_re = T.conv2d(x.real.copy(), kr) - T.conv2d(x.imag.copy(), ki)
    want_im = T.conv2d(x.real.copy(), ki) + T.conv2d(x.imag.copy(), kr)
    assert np.allclose(y.real, want_re) and np.allclose(y.imag, want_im)
    assert y.dtype == np.complex128


def test_complex_conv2d_multiplication_structure(rng):
    # a purely scalar 1x1 kernel acts as complex multiplication per channel
    x = _rand_complex(rng, (1, 1, 4, 4))
    kr = np.array([[[[2.0]]]])
    ki = np.array([[[[-3.0]]]])
    assert np.allclose(oc.complex_conv2d(x, kr, ki), (2 - 3j) * x)


# ---------------------------------------------------------------------------
# routed forward

def test_dual_octconv_alpha0_reduces_to_complex_conv(rng):
    x = _rand_complex(rng, (2, 4, 8, 8))
    k = _rand_kernel(rng, 0, 4, 0, 5)
    out = oc.dual_octconv_forward(oc.split_frequency(x, 0.0), k)
    ref = oc.complex_conv2d(x, k.r_hh, k.i_hh)
    assert np.array_equal(out.r_h, ref.real)   # identical op sequence: bit-exact
    assert np.array_equal(out.i_h, ref.imag)
    assert out.low_channels == 0


def test_dual_octconv_matches_bruteforce_paths(rng):
    # alpha=0.5 exercises all four routes; rebuild each by hand
    x = _rand_complex(rng, (2, 4, 8, 8))
    f = oc.split_frequency(x, 0.5)
    k = _rand_kernel(rng, 2, 2, 3, 3)
    out = oc.dual_octconv_forward(f, k)

    high = np.empty(f.r_h.shape, np.complex128); high.real, high.imag = f.r_h, f.i_h
    low = np.empty(f.r_l.shape, np.complex128); low.real, low.imag = f.r_l, f.i_l
    pooled = T.avg_pool2(f.r_h) + 1j * T.avg_pool2(f.i_h)
    want_h = (oc.complex_conv2d(high, k.r_hh, k.i_hh)
              + T.upsample_nearest2(oc.complex_conv2d(low, k.r_lh, k.i_lh).copy()))
    want_l = (oc.complex_conv2d(low, k.r_ll, k.i_ll)
              + oc.complex_conv2d(pooled, k.r_hl, k.i_hl))
    assert np.allclose(out.r_h, want_h.real, atol=1e-12)
    assert np.allclose(out.i_h, want_h.imag, atol=1e-12)
    assert np.allclose(out.r_l, want_l.real, atol=1e-12)
    assert np.allclose(out.i_l, want_l.imag, atol=1e-12)


def test_dual_octconv_rank3_roundtrip(rng):
    x = _rand_complex(rng, (4, 8, 8))
    k = _rand_kernel(rng, 1, 3, 1, 3)
    out3 = oc.dual_octconv_forward(oc.split_frequency(x, 0.25), k)
    out4 = oc.dual_octconv_forward(oc.split_frequency(x[None], 0.25), k)
    assert out3.r_h.ndim == 3
    assert np.array_equal(out3.r_h, out4.r_h[0])


def test_feature_kernel_mismatch(rng):
    f = oc.split_frequency(_rand_complex(rng, (1, 4, 8, 8)), 0.5)
    with pytest.raises(ShapeError):
        oc.dual_octconv_forward(f, _rand_kernel(rng, 1, 3, 2, 2))
    with pytest.raises(ConfigError):
        oc.DualOctKernel.zeros(1, 1, 1, 1, 4)  # even kernel


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_dual_octconv_linear_in_input(seed):
    r = np.random.default_rng(seed)
    k = _rand_kernel(r, 2, 2, 2, 2)
    xa = r.standard_normal((1, 4, 4, 4)) + 1j * r.standard_normal((1, 4, 4, 4))
    xb = r.standard_normal((1, 4, 4, 4)) + 1j * r.standard_normal((1, 4, 4, 4))
    s = float(r.standard_normal())
    ya = oc.dual_octconv_forward(oc.split_frequency(xa, 0.5), k)
    yb = oc.dual_octconv_forward(oc.split_frequency(xb, 0.5), k)
    yab = oc.dual_octconv_forward(oc.split_frequency(xa + s * xb, 0.5), k)
    for fld in ("r_h", "i_h", "r_l", "i_l"):
        assert np.allclose(getattr(yab, fld),
                           getattr(ya, fld) + s * getattr(yb, fld), atol=1e-10)


# ---------------------------------------------------------------------------
# adjoints

@pytest.mark.parametrize("alpha,out_low,out_high", [
    (0.5, 3, 3), (0.25, 1, 5), (0.0, 2, 2), (1.0, 2, 2), (0.5, 0, 4), (0.5, 4, 0),
])
def test_backward_is_exact_adjoint(rng, alpha, out_low, out_high):
    x = oc.split_frequency(_rand_complex(rng, (2, 4, 8, 8)), alpha)
    k = _rand_kernel(rng, x.low_channels, x.high_channels, out_low, out_high)
    y = oc.dual_octconv_forward(x, k)
    g = oc.OctComplexFeature(*(rng.standard_normal(getattr(y, f).shape)
                               for f in ("r_h", "i_h", "r_l", "i_l")))
    gx, gk = oc.dual_octconv_backward(g, x, k)
    lhs = _feat_dot(y, g)
    assert lhs == pytest.approx(_feat_dot(x, gx), rel=1e-10, abs=1e-10)
    assert lhs == pytest.approx(_kern_dot(k, gk), rel=1e-10, abs=1e-10)


def test_vars_wrapper_matches_backward(rng):
    x = oc.split_frequency(_rand_complex(rng, (1, 4, 8, 8)), 0.5)
    k = _rand_kernel(rng, 2, 2, 2, 2)
    kvars = {name: ad.Var(arr) for name, arr in k.banks()}
    xvars = tuple(ad.Var(getattr(x, f)) for f in ("r_h", "i_h", "r_l", "i_l"))
    outs = oc.dual_octconv_vars(*xvars, kvars)
    ws = [rng.standard_normal(o.data.shape) for o in outs]
    pieces = [ad.Var(np.asarray((o.data * w).sum()), (o,),
                     (lambda wc: (lambda g: (float(g) * wc,)))(w))
              for o, w in zip(outs, ws)]
    total = pieces[0]
    for p in pieces[1:]:
        total = ad.add(total, p)
    ad.backward(total)

    g = oc.OctComplexFeature(*ws)
    gx, gk = oc.dual_octconv_backward(g, x, k)
    for node, fld in zip(xvars, ("r_h", "i_h", "r_l", "i_l")):
        assert np.allclose(node.grad, getattr(gx, fld), atol=1e-12)
    for name in oc.BANK_NAMES:
        assert np.allclose(kvars[name].grad, getattr(gk, name), atol=1e-12)


# ---------------------------------------------------------------------------
# mul-add counting

def test_count_flops_alpha0_closed_form():
    rep = oc.count_flops(64, 64, 32, 32, 0.0, 3)
    assert rep.total_mul_adds == 2 * 64 * 64 * 9 * 32 * 32 == 75_497_472
    # only the hh pair carries work
    assert rep.per_path["r_hl"] == rep.per_path["i_lh"] == rep.per_path["r_ll"] == 0


def test_count_flops_strictly_decreasing():
    grid = [0.0, 0.125, 0.25, 0.5, 0.75]
    totals = [oc.count_flops(64, 64, 32, 32, a, 3).total_mul_adds for a in grid]
    assert all(a > b for a, b in zip(totals, totals[1:])), totals


def test_count_flops_matches_bank_shapes(rng):
    k = _rand_kernel(rng, 2, 6, 3, 5)
    rep = oc.count_flops_banks(k, 16, 16)
    assert rep.per_path["r_hh"] == 5 * 6 * 9 * 256
    assert rep.per_path["i_ll"] == 3 * 2 * 9 * 64
    assert rep.total_mul_adds == sum(rep.per_path.values())


def test_count_flops_alpha_out_override():
    # splitting only the input must not change the output allocation
    rep = oc.count_flops(8, 8, 8, 8, 0.5, 3, alpha_out=0.0)
    k_low = T.round_half_up(0.5 * 8)
    assert rep.per_path["r_hl"] == 0 and rep.per_path["r_lh"] > 0
    assert rep.per_path["r_hh"] == 8 * (8 - k_low) * 9 * 64
