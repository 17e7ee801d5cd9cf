"""Dense-array substrate for the reconstruction stack.

Real tensors are plain ``np.ndarray`` of float32/float64 laid out row-major as
``(c, h, w)`` or batched ``(n, c, h, w)``; complex tensors are numpy complex
arrays, i.e. an interleaved (re, im) pair per element. Every operator here is
deterministic and single-threaded apart from BLAS inside the im2col matmul.

Two Fourier conventions are exposed, both orthonormal (scale 1/sqrt(h*w) each
way):

* ``fft2`` / ``ifft2``  — plain transforms, DC at index (0, 0);
* ``fft2c`` / ``ifft2c`` — centered transforms, DC at (h//2, w//2), used for
  sampling masks and measured k-space.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeError

__all__ = [
    "set_default_dtype",
    "default_dtype",
    "complex_dtype_for",
    "checked_mode",
    "set_checked",
    "is_checked",
    "real_tensor",
    "complex_tensor",
    "check_finite",
    "round_half_up",
    "conv2d",
    "conv2d_input_grad",
    "conv2d_kernel_grad",
    "avg_pool2",
    "avg_pool2_adjoint",
    "upsample_nearest2",
    "upsample_nearest2_adjoint",
    "concat_channels",
    "fft2",
    "ifft2",
    "fft2c",
    "ifft2c",
    "GradCheckReport",
    "finite_diff_grad",
]

_DEFAULT_DTYPE = np.float32
_CHECKED = True


def set_default_dtype(dtype) -> None:
    """Set the global working precision (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def complex_dtype_for(real_dtype):
    """Complex dtype matching a real working precision."""
    return np.complex64 if np.dtype(real_dtype) == np.dtype(np.float32) else np.complex128


def set_checked(enabled: bool) -> None:
    """Toggle finite-value validation in the tensor constructors."""
    global _CHECKED
    _CHECKED = bool(enabled)


def is_checked() -> bool:
    return _CHECKED


@contextmanager
def checked_mode(enabled: bool):
    """Temporarily switch construction-time NaN/Inf checking on or off."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = bool(enabled)
    try:
        yield
    finally:
        _CHECKED = prev


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{what} contains non-finite values")
    return x


def real_tensor(data, dtype=None) -> np.ndarray:
    """Validated real tensor constructor.

    Accepts rank-3 ``(c, h, w)`` or rank-4 ``(n, c, h, w)`` data; rejects
    non-finite entries when checked mode is on.
    """
    arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
    if arr.ndim not in (3, 4):
        raise ShapeError(f"real tensor must be (c,h,w) or (n,c,h,w), got shape {arr.shape}")
    if _CHECKED:
        check_finite(arr, "real tensor")
    return arr


def complex_tensor(re, im=None, dtype=None) -> np.ndarray:
    """Validated complex tensor from a complex array or an (re, im) pair."""
    if im is None:
        arr = np.asarray(re)
        if not np.iscomplexobj(arr):
            arr = arr.astype(complex_dtype_for(dtype or _DEFAULT_DTYPE))
    else:
        re = np.asarray(re)
        im = np.asarray(im)
        if re.shape != im.shape:
            raise ShapeError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
        arr = np.empty(re.shape, dtype=complex_dtype_for(dtype or re.dtype))
        arr.real = re
        arr.imag = im
    if arr.ndim not in (3, 4):
        raise ShapeError(f"complex tensor must be (c,h,w) or (n,c,h,w), got shape {arr.shape}")
    if _CHECKED:
        if not (np.all(np.isfinite(arr.real)) and np.all(np.isfinite(arr.imag))):
            raise NumericsError("complex tensor contains non-finite values")
    return arr


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero toward +inf (0.5 -> 1)."""
    return int(np.floor(x + 0.5))


def _as4d(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected rank 3 or 4, got shape {x.shape}")


def _restore(y: np.ndarray, squeeze: bool):
    return y[0] if squeeze else y


def _im2col(x4: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Unfold SAME-padded patches: (n,c,h,w) -> (n, h*w, c*kh*kw)."""
    n, c, h, w = x4.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x4, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # (n,c,h,w,kh,kw) -> (n,h,w,c,kh,kw) -> (n, h*w, c*kh*kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h * w, c * kh * kw)


def _check_kernel(k: np.ndarray):
    if k.ndim != 4:
        raise ShapeError(f"kernel must be (out,in,kh,kw), got shape {k.shape}")
    if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
        raise ShapeError(f"SAME padding requires odd kernel extents, got {k.shape[2:]}")


def conv2d(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """2-D cross-correlation, stride 1, SAME zero padding.

    Args:
        x: input, ``(c, h, w)`` or ``(n, c, h, w)``.
        k: kernels, ``(out, in, kh, kw)`` with odd kh/kw and in == c.

    Returns:
        Output with ``out`` channels at the input's spatial size and rank.
    """
    _check_kernel(k)
    x4, squeeze = _as4d(x)
    n, c, h, w = x4.shape
    out, cin, kh, kw = k.shape
    if cin != c:
        raise ShapeError(f"kernel expects {cin} input channels, input has {c}")
    cols = _im2col(x4, kh, kw)  # (n, h*w, c*kh*kw)
    y = cols @ k.reshape(out, -1).T  # (n, h*w, out)
    y = y.transpose(0, 2, 1).reshape(n, out, h, w)
    return _restore(y, squeeze)


def conv2d_input_grad(grad_out: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of ``conv2d`` in its input: correlate with the flipped, transposed kernel."""
    _check_kernel(k)
    kt = np.ascontiguousarray(k.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return conv2d(grad_out, kt)


def conv2d_kernel_grad(x: np.ndarray, grad_out: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Adjoint of ``conv2d`` in its kernel.

    Returns ``(out, in, kh, kw)`` with ``dk[o,i,p,q] = sum_n,y,x g[n,o,y,x] * xpad[n,i,y+p,x+q]``,
    accumulated over the batch in index order.
    """
    x4, _ = _as4d(x)
    g4, _ = _as4d(grad_out)
    if x4.shape[0] != g4.shape[0] or x4.shape[2:] != g4.shape[2:]:
        raise ShapeError(f"input/grad shapes disagree: {x4.shape} vs {g4.shape}")
    n, c, h, w = x4.shape
    out = g4.shape[1]
    cols = _im2col(x4, kh, kw)  # (n, h*w, c*kh*kw)
    gmat = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(out, n * h * w)
    dk = gmat @ cols.reshape(n * h * w, c * kh * kw)
    return dk.reshape(out, c, kh, kw)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pooling; spatial dims must be even."""
    x4, squeeze = _as4d(x)
    n, c, h, w = x4.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {(h, w)}")
    y = x4.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _restore(y, squeeze)


def avg_pool2_adjoint(grad_out: np.ndarray) -> np.ndarray:
    """Adjoint of ``avg_pool2``: broadcast each gradient entry over its 2x2 block / 4."""
    g4, squeeze = _as4d(grad_out)
    y = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * grad_out.dtype.type(0.25)
    return _restore(y, squeeze)


def upsample_nearest2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling."""
    x4, squeeze = _as4d(x)
    y = np.repeat(np.repeat(x4, 2, axis=2), 2, axis=3)
    return _restore(y, squeeze)


def upsample_nearest2_adjoint(grad_out: np.ndarray) -> np.ndarray:
    """Adjoint of ``upsample_nearest2``: sum each 2x2 block."""
    g4, squeeze = _as4d(grad_out)
    n, c, h, w = g4.shape
    if h % 2 or w % 2:
        raise ShapeError(f"upsample adjoint needs even spatial dims, got {(h, w)}")
    y = g4.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    return _restore(y, squeeze)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis; spatial/batch extents must match."""
    a4, sa = _as4d(a)
    b4, sb = _as4d(b)
    if sa != sb or a4.shape[0] != b4.shape[0] or a4.shape[2:] != b4.shape[2:]:
        raise ShapeError(f"concat_channels shape mismatch: {a.shape} vs {b.shape}")
    return _restore(np.concatenate([a4, b4], axis=1), sa)


def fft2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DFT over the trailing two axes, DC at (0, 0)."""
    return np.fft.fft2(x, axes=(-2, -1), norm="ortho")


def ifft2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D inverse DFT over the trailing two axes."""
    return np.fft.ifft2(x, axes=(-2, -1), norm="ortho")


def fft2c(x: np.ndarray) -> np.ndarray:
    """Orthonormal centered 2-D DFT: DC lands at (h//2, w//2)."""
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"), axes=axes)


def ifft2c(x: np.ndarray) -> np.ndarray:
    """Inverse of ``fft2c`` (also its adjoint: both maps are unitary)."""
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"), axes=axes)


@dataclass
class GradCheckReport:
    """Result of a finite-difference gradient check."""

    max_rel_error: float
    per_parameter_errors: list[tuple[str, float]]

    def worst(self) -> tuple[str, float]:
        return max(self.per_parameter_errors, key=lambda kv: kv[1])


def finite_diff_grad(fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
                     eps: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Args:
        fn: callable taking ``params`` and returning a scalar float. It must be
            pure in the entries of ``params`` (they are perturbed in place and
            restored).
        params: named parameter arrays (perturbed one scalar at a time).
        analytic: matching analytic gradients, same keys and shapes.
        eps: central-difference step (use float64 parameters; default 1e-4).

    Returns:
        GradCheckReport with the per-parameter max relative error, where the
        relative error of a scalar is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ShapeError("eps must be positive")
    if set(params) != set(analytic):
        raise ShapeError("params and analytic gradients must share keys")
    per_param: list[tuple[str, float]] = []
    for name in params:
        p = params[name]
        a = analytic[name]
        if a.shape != p.shape:
            raise ShapeError(f"analytic gradient for {name!r} has shape {a.shape}, expected {p.shape}")
        worst = 0.0
        flat = p.reshape(-1)
        aflat = np.asarray(a, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(params))
            flat[i] = orig - eps
            fm = float(fn(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericsError(f"objective returned non-finite value while perturbing {name!r}")
            num = (fp - fm) / (2.0 * eps)
            ana = aflat[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if rel > worst:
                worst = rel
        per_param.append((name, worst))
    max_rel = max((e for _, e in per_param), default=0.0)
    return GradCheckReport(max_rel_error=max_rel, per_parameter_errors=per_param)
