"""Frequency-split complex convolution.

A feature map is carried as four groups: real/imaginary components, each split
into a high-frequency band at full resolution and a low-frequency band at half
resolution. A layer owns eight kernel banks — a (real, imaginary) pair for each
of the four routing paths H→H, H→L, L→H, L→L — and combines them with the
complex product sign structure:

    re_out = conv(x_re, K_r) - conv(x_im, K_i)
    im_out = conv(x_re, K_i) + conv(x_im, K_r)

applied per path, with 2x2 average pooling ahead of H→L and nearest-neighbour
upsampling after L→H. With no low-band channels the layer reduces exactly to a
standard complex convolution. All paths are bias-free and linear; the backward
pass is the exact adjoint of this routing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .autodiff import Var
from .errors import ConfigError, ShapeError

__all__ = [
    "OctComplexFeature",
    "DualOctKernel",
    "FlopsReport",
    "split_frequency",
    "merge_frequency",
    "complex_conv2d",
    "dual_octconv_forward",
    "dual_octconv_backward",
    "dual_octconv_vars",
    "count_flops",
    "count_flops_banks",
]

BANK_NAMES = ("r_hh", "i_hh", "r_hl", "i_hl", "r_lh", "i_lh", "r_ll", "i_ll")


@dataclass
class OctComplexFeature:
    """Four-group feature: (real, imag) x (high at (h, w), low at (h/2, w/2)).

    Empty bands are zero-channel arrays, never ``None``. Arrays are rank 3
    ``(c, h, w)`` or rank 4 ``(n, c, h, w)``, consistently across groups.
    """

    r_h: np.ndarray
    i_h: np.ndarray
    r_l: np.ndarray
    i_l: np.ndarray

    def validate(self) -> "OctComplexFeature":
        ranks = {a.ndim for a in (self.r_h, self.i_h, self.r_l, self.i_l)}
        if len(ranks) != 1 or ranks.pop() not in (3, 4):
            raise ShapeError("all four groups must share rank 3 or 4")
        if self.r_h.shape != self.i_h.shape:
            raise ShapeError(f"high-band re/im mismatch: {self.r_h.shape} vs {self.i_h.shape}")
        if self.r_l.shape != self.i_l.shape:
            raise ShapeError(f"low-band re/im mismatch: {self.r_l.shape} vs {self.i_l.shape}")
        if self.high_channels and self.low_channels:
            if (self.r_h.shape[-2] != 2 * self.r_l.shape[-2]
                    or self.r_h.shape[-1] != 2 * self.r_l.shape[-1]):
                raise ShapeError(
                    f"low band must sit at half resolution: high {self.r_h.shape[-2:]}, "
                    f"low {self.r_l.shape[-2:]}")
        return self

    @property
    def high_channels(self) -> int:
        return self.r_h.shape[-3]

    @property
    def low_channels(self) -> int:
        return self.r_l.shape[-3]

    def batched(self) -> tuple["OctComplexFeature", bool]:
        if self.r_h.ndim == 4:
            return self, False
        return OctComplexFeature(self.r_h[None], self.i_h[None], self.r_l[None], self.i_l[None]), True

    def squeezed(self) -> "OctComplexFeature":
        return OctComplexFeature(self.r_h[0], self.i_h[0], self.r_l[0], self.i_l[0])


@dataclass
class DualOctKernel:
    """Eight bias-free banks: (r, i) pairs for the four routing paths.

    Shapes: ``*_hh (out_high, in_high, k, k)``, ``*_hl (out_low, in_high, k, k)``,
    ``*_lh (out_high, in_low, k, k)``, ``*_ll (out_low, in_low, k, k)``.
    """

    r_hh: np.ndarray
    i_hh: np.ndarray
    r_hl: np.ndarray
    i_hl: np.ndarray
    r_lh: np.ndarray
    i_lh: np.ndarray
    r_ll: np.ndarray
    i_ll: np.ndarray

    @staticmethod
    def zeros(in_low: int, in_high: int, out_low: int, out_high: int,
              ksize: int, dtype=np.float32) -> "DualOctKernel":
        if ksize % 2 == 0 or ksize < 1:
            raise ConfigError(f"kernel size must be odd and positive, got {ksize}")
        z = lambda o, i: np.zeros((o, i, ksize, ksize), dtype=dtype)
        return DualOctKernel(
            r_hh=z(out_high, in_high), i_hh=z(out_high, in_high),
            r_hl=z(out_low, in_high), i_hl=z(out_low, in_high),
            r_lh=z(out_high, in_low), i_lh=z(out_high, in_low),
            r_ll=z(out_low, in_low), i_ll=z(out_low, in_low),
        )

    @property
    def ksize(self) -> int:
        return self.r_hh.shape[-1]

    @property
    def in_high(self) -> int:
        return self.r_hh.shape[1]

    @property
    def in_low(self) -> int:
        return self.r_ll.shape[1]

    @property
    def out_high(self) -> int:
        return self.r_hh.shape[0]

    @property
    def out_low(self) -> int:
        return self.r_ll.shape[0]

    def banks(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in BANK_NAMES]

    def map(self, fn) -> "DualOctKernel":
        return DualOctKernel(**{name: fn(arr) for name, arr in self.banks()})


def split_frequency(x: np.ndarray, alpha: float) -> OctComplexFeature:
    """Split a complex feature into octave groups.

    The first ``round_half_up(alpha * c)`` channels are average-pooled to the
    half-resolution low band; the remainder stays at full resolution.

    Args:
        x: complex array ``(c, h, w)`` or ``(n, c, h, w)`` with even ``h, w``
            whenever the low band is non-empty.
        alpha: low-frequency channel ratio in [0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not np.iscomplexobj(x) or x.ndim not in (3, 4):
        raise ShapeError(f"split_frequency expects a complex (c,h,w) or (n,c,h,w) array, got {x.dtype} {x.shape}")
    c = x.shape[-3]
    c_low = T.round_half_up(alpha * c)
    low = x[..., :c_low, :, :]
    high = x[..., c_low:, :, :]
    re_h = np.ascontiguousarray(high.real)
    im_h = np.ascontiguousarray(high.imag)
    if c_low:
        re_l = T.avg_pool2(np.ascontiguousarray(low.real))
        im_l = T.avg_pool2(np.ascontiguousarray(low.imag))
    else:
        re_l = np.zeros(low.shape[:-2] + (x.shape[-2] // 2, x.shape[-1] // 2), dtype=re_h.dtype)
        im_l = re_l.copy()
    return OctComplexFeature(re_h, im_h, re_l, im_l).validate()


def merge_frequency(x: OctComplexFeature) -> np.ndarray:
    """Recombine octave groups into a single full-resolution real tensor.

    Output is ``upsample(concat(r_l, i_l)) + concat(r_h, i_h)`` with channel
    layout [real half | imaginary half]; the sum requires equal low/high
    channel counts. An empty band degenerates to the other band alone.
    """
    x.validate()
    cl, ch = x.low_channels, x.high_channels
    if cl == 0 and ch == 0:
        raise ShapeError("merge_frequency on an entirely empty feature")
    if cl == 0:
        return T.concat_channels(x.r_h, x.i_h)
    if ch == 0:
        return T.upsample_nearest2(T.concat_channels(x.r_l, x.i_l))
    if cl != ch:
        raise ShapeError(f"merge needs equal low/high channel counts, got low={cl} high={ch}")
    return T.upsample_nearest2(T.concat_channels(x.r_l, x.i_l)) + T.concat_channels(x.r_h, x.i_h)


def complex_conv2d(x: np.ndarray, k_r: np.ndarray, k_i: np.ndarray) -> np.ndarray:
    """Complex 2-D convolution via four real cross-correlations.

    ``y = (conv(x_re, k_r) - conv(x_im, k_i)) + i (conv(x_re, k_i) + conv(x_im, k_r))``
    """
    if not np.iscomplexobj(x):
        raise ShapeError("complex_conv2d expects a complex input")
    if k_r.shape != k_i.shape:
        raise ShapeError(f"kernel pair shape mismatch: {k_r.shape} vs {k_i.shape}")
    xr = np.ascontiguousarray(x.real)
    xi = np.ascontiguousarray(x.imag)
    re = T.conv2d(xr, k_r) - T.conv2d(xi, k_i)
    im = T.conv2d(xr, k_i) + T.conv2d(xi, k_r)
    out = np.empty(re.shape, dtype=T.complex_dtype_for(re.dtype))
    out.real = re
    out.imag = im
    return out


def _check_feature_kernel(x: OctComplexFeature, k: DualOctKernel) -> None:
    if x.high_channels != k.in_high or x.low_channels != k.in_low:
        raise ShapeError(
            f"feature has (low={x.low_channels}, high={x.high_channels}) channels, "
            f"kernel expects (low={k.in_low}, high={k.in_high})")


def _forward_arrays(x: OctComplexFeature, k: DualOctKernel):
    """Batched-array core of the forward routing; also returns the pooled highs."""
    n = x.r_h.shape[0]
    dt = x.r_h.dtype
    in_h, in_l = x.high_channels, x.low_channels
    out_h, out_l = k.out_high, k.out_low
    if in_h:
        hh, hw = x.r_h.shape[-2], x.r_h.shape[-1]
    else:
        hh, hw = 2 * x.r_l.shape[-2], 2 * x.r_l.shape[-1]
    lh, lw = hh // 2, hw // 2

    prh = pih = None
    if in_h and out_l:
        if hh % 2 or hw % 2:
            raise ShapeError(f"H→L pooling needs even high-band dims, got {(hh, hw)}")
        prh = T.avg_pool2(x.r_h)
        pih = T.avg_pool2(x.i_h)

    yrh = yih = None
    if out_h:
        if in_h:
            yrh = T.conv2d(x.r_h, k.r_hh) - T.conv2d(x.i_h, k.i_hh)
            yih = T.conv2d(x.r_h, k.i_hh) + T.conv2d(x.i_h, k.r_hh)
        if in_l:
            ex_r = T.upsample_nearest2(T.conv2d(x.r_l, k.r_lh) - T.conv2d(x.i_l, k.i_lh))
            ex_i = T.upsample_nearest2(T.conv2d(x.r_l, k.i_lh) + T.conv2d(x.i_l, k.r_lh))
            yrh = ex_r if yrh is None else yrh + ex_r
            yih = ex_i if yih is None else yih + ex_i
    if yrh is None:
        yrh = np.zeros((n, out_h, hh, hw), dtype=dt)
        yih = yrh.copy()

    yrl = yil = None
    if out_l:
        if in_l:
            yrl = T.conv2d(x.r_l, k.r_ll) - T.conv2d(x.i_l, k.i_ll)
            yil = T.conv2d(x.r_l, k.i_ll) + T.conv2d(x.i_l, k.r_ll)
        if in_h:
            ex_r = T.conv2d(prh, k.r_hl) - T.conv2d(pih, k.i_hl)
            ex_i = T.conv2d(prh, k.i_hl) + T.conv2d(pih, k.r_hl)
            yrl = ex_r if yrl is None else yrl + ex_r
            yil = ex_i if yil is None else yil + ex_i
    if yrl is None:
        yrl = np.zeros((n, out_l, lh, lw), dtype=dt)
        yil = yrl.copy()
    return yrh, yih, yrl, yil, prh, pih


def dual_octconv_forward(x: OctComplexFeature, k: DualOctKernel) -> OctComplexFeature:
    """Apply the eight-bank routed complex convolution."""
    x.validate()
    _check_feature_kernel(x, k)
    x4, squeeze = x.batched()
    yrh, yih, yrl, yil, _, _ = _forward_arrays(x4, k)
    out = OctComplexFeature(yrh, yih, yrl, yil)
    return out.squeezed() if squeeze else out


def _accumulate(acc: dict, key: str, value: np.ndarray) -> None:
    if key in acc:
        acc[key] = acc[key] + value
    else:
        acc[key] = value


def _output_adjoint(which: str, g: np.ndarray, x: OctComplexFeature, k: DualOctKernel,
                    prh, pih, acc: dict) -> None:
    """Accumulate one output group's exact adjoint contributions into ``acc``.

    Keys: xrh/xih/xrl/xil for the input groups plus the eight bank names. The
    sign pattern mirrors the forward complex product; upsample's adjoint is the
    2x2 block sum and avg-pool's adjoint the broadcast/4.
    """
    ks = k.ksize
    in_h, in_l = k.in_high, k.in_low
    cig, ckg = T.conv2d_input_grad, T.conv2d_kernel_grad
    if which == "yrh":
        if in_h:
            _accumulate(acc, "xrh", cig(g, k.r_hh))
            _accumulate(acc, "xih", -cig(g, k.i_hh))
            _accumulate(acc, "r_hh", ckg(x.r_h, g, ks, ks))
            _accumulate(acc, "i_hh", -ckg(x.i_h, g, ks, ks))
        if in_l:
            gl = T.upsample_nearest2_adjoint(g)
            _accumulate(acc, "xrl", cig(gl, k.r_lh))
            _accumulate(acc, "xil", -cig(gl, k.i_lh))
            _accumulate(acc, "r_lh", ckg(x.r_l, gl, ks, ks))
            _accumulate(acc, "i_lh", -ckg(x.i_l, gl, ks, ks))
    elif which == "yih":
        if in_h:
            _accumulate(acc, "xrh", cig(g, k.i_hh))
            _accumulate(acc, "xih", cig(g, k.r_hh))
            _accumulate(acc, "i_hh", ckg(x.r_h, g, ks, ks))
            _accumulate(acc, "r_hh", ckg(x.i_h, g, ks, ks))
        if in_l:
            gl = T.upsample_nearest2_adjoint(g)
            _accumulate(acc, "xrl", cig(gl, k.i_lh))
            _accumulate(acc, "xil", cig(gl, k.r_lh))
            _accumulate(acc, "i_lh", ckg(x.r_l, gl, ks, ks))
            _accumulate(acc, "r_lh", ckg(x.i_l, gl, ks, ks))
    elif which == "yrl":
        if in_l:
            _accumulate(acc, "xrl", cig(g, k.r_ll))
            _accumulate(acc, "xil", -cig(g, k.i_ll))
            _accumulate(acc, "r_ll", ckg(x.r_l, g, ks, ks))
            _accumulate(acc, "i_ll", -ckg(x.i_l, g, ks, ks))
        if in_h:
            _accumulate(acc, "xrh", T.avg_pool2_adjoint(cig(g, k.r_hl)))
            _accumulate(acc, "xih", -T.avg_pool2_adjoint(cig(g, k.i_hl)))
            _accumulate(acc, "r_hl", ckg(prh, g, ks, ks))
            _accumulate(acc, "i_hl", -ckg(pih, g, ks, ks))
    elif which == "yil":
        if in_l:
            _accumulate(acc, "xrl", cig(g, k.i_ll))
            _accumulate(acc, "xil", cig(g, k.r_ll))
            _accumulate(acc, "i_ll", ckg(x.r_l, g, ks, ks))
            _accumulate(acc, "r_ll", ckg(x.i_l, g, ks, ks))
        if in_h:
            _accumulate(acc, "xrh", T.avg_pool2_adjoint(cig(g, k.i_hl)))
            _accumulate(acc, "xih", T.avg_pool2_adjoint(cig(g, k.r_hl)))
            _accumulate(acc, "i_hl", ckg(prh, g, ks, ks))
            _accumulate(acc, "r_hl", ckg(pih, g, ks, ks))
    else:  # pragma: no cover
        raise ShapeError(f"unknown output group {which!r}")


def dual_octconv_backward(grad_out: OctComplexFeature, saved_input: OctComplexFeature,
                          k: DualOctKernel) -> tuple[OctComplexFeature, DualOctKernel]:
    """Exact adjoint of :func:`dual_octconv_forward`.

    Args:
        grad_out: cotangent with the layer's output group shapes.
        saved_input: the forward input feature.
        k: the layer's kernel banks.

    Returns:
        ``(grad_input, grad_kernel)`` matching the input feature and bank shapes.
    """
    saved_input.validate()
    _check_feature_kernel(saved_input, k)
    x4, squeeze = saved_input.batched()
    g4, gsq = grad_out.batched()
    if gsq != squeeze:
        raise ShapeError("grad_out and saved_input must share rank")
    prh = T.avg_pool2(x4.r_h) if (k.in_high and k.out_low) else None
    pih = T.avg_pool2(x4.i_h) if (k.in_high and k.out_low) else None
    acc: dict = {}
    for which, g in (("yrh", g4.r_h), ("yih", g4.i_h), ("yrl", g4.r_l), ("yil", g4.i_l)):
        if g.shape[1]:
            _output_adjoint(which, g, x4, k, prh, pih, acc)
    def take(key, like):
        return acc.get(key, np.zeros_like(like))
    gx = OctComplexFeature(
        take("xrh", x4.r_h), take("xih", x4.i_h), take("xrl", x4.r_l), take("xil", x4.i_l))
    gk = DualOctKernel(**{name: acc.get(name, np.zeros_like(arr)) for name, arr in k.banks()})
    return (gx.squeezed() if squeeze else gx), gk


def dual_octconv_vars(xrh: Var, xih: Var, xrl: Var, xil: Var,
                      kvars: dict[str, Var]) -> tuple[Var, Var, Var, Var]:
    """Tape wrapper: the routed convolution as four output nodes.

    ``kvars`` maps the eight bank names to parameter nodes. Each output node's
    vjp replays its slice of the exact adjoint; cross-output accumulation
    happens in the tape.
    """
    k = DualOctKernel(**{name: kvars[name].data for name in BANK_NAMES})
    x = OctComplexFeature(xrh.data, xih.data, xrl.data, xil.data).validate()
    _check_feature_kernel(x, k)
    yrh, yih, yrl, yil, prh, pih = _forward_arrays(x, k)
    parents = (xrh, xih, xrl, xil) + tuple(kvars[name] for name in BANK_NAMES)
    slot = {"xrh": 0, "xih": 1, "xrl": 2, "xil": 3,
            **{name: 4 + i for i, name in enumerate(BANK_NAMES)}}

    def make_vjp(which):
        def vjp(g):
            if g.shape[1] == 0:
                return (None,) * len(parents)
            acc: dict = {}
            _output_adjoint(which, g, x, k, prh, pih, acc)
            out = [None] * len(parents)
            for key, val in acc.items():
                out[slot[key]] = val
            return tuple(out)
        return vjp

    return (Var(yrh, parents, make_vjp("yrh")),
            Var(yih, parents, make_vjp("yih")),
            Var(yrl, parents, make_vjp("yrl")),
            Var(yil, parents, make_vjp("yil")))


@dataclass
class FlopsReport:
    """Multiply-add count of one layer, split by routing path."""

    total_mul_adds: int
    per_path: dict[str, int] = field(default_factory=dict)
    alpha: float = 0.0


def count_flops_banks(k: DualOctKernel, height: int, width: int,
                      alpha: float = float("nan")) -> FlopsReport:
    """Count mul-adds from actual bank shapes.

    Each bank is ``out * in * k^2 * area`` at the resolution where its
    convolution executes: H→H at ``h*w``; H→L, L→H and L→L at ``(h/2)*(w/2)``.
    """
    full = height * width
    quarter = (height // 2) * (width // 2)
    per_path: dict[str, int] = {}
    for name, arr in k.banks():
        area = full if name.endswith("hh") else quarter
        o, i, kh, kw = arr.shape
        per_path[name] = int(o) * int(i) * int(kh) * int(kw) * int(area)
    return FlopsReport(total_mul_adds=sum(per_path.values()), per_path=per_path, alpha=alpha)


def count_flops(in_channels: int, out_channels: int, height: int, width: int,
                alpha: float, kernel_size: int, alpha_out: float | None = None) -> FlopsReport:
    """Mul-add count of one routed layer at the given shape and split ratio.

    ``alpha_out`` defaults to ``alpha``; both splits use round-half-up channel
    allocation. At ``alpha == 0`` the total collapses to the plain complex-conv
    count ``2 * out * in * k^2 * h * w``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    ao = alpha if alpha_out is None else alpha_out
    in_low = T.round_half_up(alpha * in_channels)
    out_low = T.round_half_up(ao * out_channels)
    k = DualOctKernel.zeros(in_low, in_channels - in_low, out_low,
                            out_channels - out_low, kernel_size)
    return count_flops_banks(k, height, width, alpha=alpha)
