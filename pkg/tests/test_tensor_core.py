"""Tensor substrate: convolution against an independent oracle, pool/upsample
algebra, FFT conventions, and the finite-difference harness itself."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from octmri import tensor as T
from octmri.errors import NumericsError, ShapeError


def _conv_oracle(x, k):
    # scipy correlate per (out, in) pair; constant (zero) boundary = SAME padding
    n, c, h, w = x.shape
    out = k.shape[0]
    y = np.zeros((n, out, h, w), dtype=np.float64)
    for b in range(n):
        for o in range(out):
            for i in range(c):
                y[b, o] += ndimage.correlate(x[b, i], k[o, i], mode="constant", cval=0.0)
    return y


@pytest.mark.parametrize("shape,kshape", [
    ((2, 3, 6, 7), (4, 3, 3, 3)),
    ((1, 1, 5, 5), (1, 1, 1, 1)),
    ((3, 2, 8, 4), (2, 2, 5, 3)),
])
def test_conv2d_matches_scipy(rng, shape, kshape):
    x = rng.standard_normal(shape)
    k = rng.standard_normal(kshape)
    assert np.allclose(T.conv2d(x, k), _conv_oracle(x, k), atol=1e-10)


def test_conv2d_rank3_roundtrip(rng):
    x = rng.standard_normal((3, 6, 6))
    k = rng.standard_normal((2, 3, 3, 3))
    assert np.allclose(T.conv2d(x, k), T.conv2d(x[None], k)[0])


def test_conv2d_rejects_even_kernel(rng):
    with pytest.raises(ShapeError):
        T.conv2d(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 2, 2, 2)))
    with pytest.raises(ShapeError):
        T.conv2d(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 3, 3, 3)))


def test_conv2d_adjoint_identities(rng):
    # <conv(x,k), g> == <x, input_grad(g,k)> == <k, kernel_grad(x,g)>
    x = rng.standard_normal((2, 3, 6, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    g = rng.standard_normal((2, 4, 6, 6))
    lhs = float((T.conv2d(x, k) * g).sum())
    via_x = float((x * T.conv2d_input_grad(g, k)).sum())
    via_k = float((k * T.conv2d_kernel_grad(x, g, 3, 3)).sum())
    assert lhs == pytest.approx(via_x, rel=1e-12)
    assert lhs == pytest.approx(via_k, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_conv2d_is_linear(seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 1, 2, 4, 4))
    k = r.standard_normal((2, 2, 3, 3))
    a, b = r.standard_normal(2)
    assert np.allclose(T.conv2d(a * x + b * y, k),
                       a * T.conv2d(x, k) + b * T.conv2d(y, k), atol=1e-10)


def test_avg_pool2_and_upsample(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    p = T.avg_pool2(x)
    assert p.shape == (2, 3, 3, 4)
    assert np.allclose(p[0, 0, 0, 0], x[0, 0, :2, :2].mean())
    u = T.upsample_nearest2(p)
    assert u.shape == x.shape
    # pooling a nearest-upsampled map recovers it bit-exactly (mean of 4 equal values)
    assert np.array_equal(T.avg_pool2(T.upsample_nearest2(x)), x)
    with pytest.raises(ShapeError):
        T.avg_pool2(rng.standard_normal((1, 1, 5, 4)))


def test_pool_upsample_adjoints(rng):
    x = rng.standard_normal((2, 2, 6, 6))
    g = rng.standard_normal((2, 2, 3, 3))
    assert float((T.avg_pool2(x) * g).sum()) == pytest.approx(
        float((x * T.avg_pool2_adjoint(g)).sum()), rel=1e-12)
    s = rng.standard_normal((2, 2, 3, 3))
    gg = rng.standard_normal((2, 2, 6, 6))
    assert float((T.upsample_nearest2(s) * gg).sum()) == pytest.approx(
        float((s * T.upsample_nearest2_adjoint(gg)).sum()), rel=1e-12)


def test_fft2_delta_is_flat():
    # unit impulse at (0,0) on a 4x4 grid -> constant 1/4 spectrum
    d = np.zeros((1, 1, 4, 4), dtype=np.complex128)
    d[0, 0, 0, 0] = 1.0
    K = T.fft2(d)
    assert np.allclose(K, 0.25)
    assert np.allclose(T.ifft2(K), d, atol=1e-14)


def test_fft2c_centering_and_unitarity(rng):
    const = np.ones((1, 1, 8, 8), dtype=np.complex128)
    K = T.fft2c(const)
    assert abs(K[0, 0, 4, 4]) == pytest.approx(8.0)
    off = K.copy()
    off[0, 0, 4, 4] = 0.0
    assert np.abs(off).max() < 1e-12

    x = rng.standard_normal((2, 3, 8, 8)) + 1j * rng.standard_normal((2, 3, 8, 8))
    assert np.linalg.norm(T.fft2c(x)) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    assert np.allclose(T.ifft2c(T.fft2c(x)), x, atol=1e-12)


def test_round_half_up_vs_bankers():
    assert [T.round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4, 0.0)] == [1, 2, 3, 2, 0]
    assert round(2.5) == 2  # builtin banker's rounding would mis-allocate channels


def test_concat_channels(rng):
    a = rng.standard_normal((2, 1, 4, 4))
    b = rng.standard_normal((2, 3, 4, 4))
    assert T.concat_channels(a, b).shape == (2, 4, 4, 4)
    empty = np.zeros((2, 0, 4, 4))
    assert np.array_equal(T.concat_channels(empty, b), b)
    with pytest.raises(ShapeError):
        T.concat_channels(a, rng.standard_normal((2, 3, 5, 4)))


def test_constructors_and_checked_mode():
    x = T.real_tensor(np.zeros((2, 4, 4)))
    assert x.dtype == np.float32
    with pytest.raises(ShapeError):
        T.real_tensor(np.zeros((4, 4)))
    bad = np.full((1, 2, 2), np.nan)
    with pytest.raises(NumericsError):
        T.real_tensor(bad, dtype=np.float64)
    with T.checked_mode(False):
        T.real_tensor(bad, dtype=np.float64)  # validation off
    assert T.is_checked()
    z = T.complex_tensor(np.zeros((1, 2, 2), np.float32), np.ones((1, 2, 2), np.float32))
    assert z.dtype == np.complex64 and np.all(z.imag == 1)
    with pytest.raises(ShapeError):
        T.complex_tensor(np.zeros((1, 2, 2)), np.ones((1, 2, 3)))


def test_default_dtype_switch():
    T.set_default_dtype("float64")
    x = T.real_tensor(np.zeros((1, 2, 2)))
    assert x.dtype == np.float64
    assert T.complex_dtype_for(np.float64) == np.complex128
    with pytest.raises(ShapeError):
        T.set_default_dtype(np.int32)


def test_finite_diff_grad_on_quadratic(rng):
    # f(p) = sum(a * p^2) has gradient 2*a*p
    a = rng.standard_normal((3, 2))
    p = {"p": rng.standard_normal((3, 2))}
    analytic = {"p": 2.0 * a * p["p"]}
    rep = T.finite_diff_grad(lambda q: float((a * q["p"] ** 2).sum()), p, analytic)
    assert rep.max_rel_error < 1e-7
    assert rep.worst()[0] == "p"
    with pytest.raises(ShapeError):
        T.finite_diff_grad(lambda q: 0.0, p, {"other": analytic["p"]})
