"""Minimal reverse-mode tape over numpy arrays.

Nodes hold ``(n, c, h, w)`` float arrays (loss nodes are 0-d). Each op builds a
``Var`` whose ``vjp`` closure returns one cotangent per parent; ``backward``
walks the tape in reverse topological order with deterministic, index-ordered
accumulation. Complex signals travel as (re, im) pairs of real nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError


class Var:
    __slots__ = ("data", "grad", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape


def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of ``root`` into every reachable node's ``.grad``."""
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=root.data.dtype)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        gs = node.vjp(node.grad)
        for p, g in zip(node.parents, gs):
            if g is None:
                continue
            if p.grad is None:
                p.grad = g
            else:
                p.grad = p.grad + g


def zero_grads(root: Var) -> None:
    stack = [root]
    seen = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        node.grad = None
        stack.extend(node.parents)


# ---------------------------------------------------------------------------
# elementwise / structural ops

def add(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Var(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Var(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Var) -> Var:
    return Var(-a.data, (a,), lambda g: (-g,))


def scale(a: Var, s: float) -> Var:
    return Var(a.data * s, (a,), lambda g: (g * s,))


def mul_arr(a: Var, c: np.ndarray) -> Var:
    # c is a constant, broadcastable against a without changing its shape
    out = a.data * c
    if out.shape != a.data.shape:
        raise ShapeError("mul_arr constant must broadcast without reshaping the input")
    return Var(out, (a,), lambda g: (g * c,))


def add_arr(a: Var, c: np.ndarray) -> Var:
    out = a.data + c
    if out.shape != a.data.shape:
        raise ShapeError("add_arr constant must broadcast without reshaping the input")
    return Var(out, (a,), lambda g: (g,))


def sub_arr(a: Var, c: np.ndarray) -> Var:
    return add_arr(a, -np.asarray(c))


def bias_add(x: Var, b: Var) -> Var:
    c = x.data.shape[1]
    if b.data.shape != (c,):
        raise ShapeError(f"bias must have shape ({c},), got {b.data.shape}")
    return Var(x.data + b.data.reshape(1, c, 1, 1), (x, b),
               lambda g: (g, g.sum(axis=(0, 2, 3))))


def relu(x: Var) -> Var:
    mask = x.data > 0
    return Var(np.where(mask, x.data, x.data.dtype.type(0)), (x,),
               lambda g: (g * mask,))


def concat(vars_: list[Var]) -> Var:
    if not vars_:
        raise ShapeError("concat of an empty list")
    widths = [v.data.shape[1] for v in vars_]
    out = np.concatenate([v.data for v in vars_], axis=1)
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(widths)))

    return Var(out, tuple(vars_), vjp)


def slice_channels(x: Var, lo: int, hi: int) -> Var:
    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, lo:hi] = g
        return (full,)

    return Var(np.ascontiguousarray(x.data[:, lo:hi]), (x,), vjp)


def mean_abs(x: Var) -> Var:
    inv = 1.0 / x.data.size
    return Var(np.asarray(np.abs(x.data).mean(), dtype=x.data.dtype), (x,),
               lambda g: (np.sign(x.data) * (float(g) * inv),))


# ---------------------------------------------------------------------------
# spatial ops

def conv2d(x: Var, k: Var) -> Var:
    kh, kw = k.data.shape[2], k.data.shape[3]
    return Var(
        T.conv2d(x.data, k.data), (x, k),
        lambda g: (T.conv2d_input_grad(g, k.data), T.conv2d_kernel_grad(x.data, g, kh, kw)),
    )


def avg_pool2(x: Var) -> Var:
    return Var(T.avg_pool2(x.data), (x,), lambda g: (T.avg_pool2_adjoint(g),))


def upsample_nearest2(x: Var) -> Var:
    return Var(T.upsample_nearest2(x.data), (x,), lambda g: (T.upsample_nearest2_adjoint(g),))


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class BNBuffers:
    """Running statistics, updated in place by train-mode forward passes."""

    mean: np.ndarray
    var: np.ndarray


BN_EPS = 1e-5


def batchnorm(x: Var, gamma: Var, beta: Var, buffers: BNBuffers, mode: str,
              momentum: float = 0.1) -> Var:
    """Per-channel batch normalization over the (n, h, w) axes.

    ``mode`` is one of ``train`` (batch statistics, running buffers updated),
    ``eval`` (running statistics), or ``identity`` (exact pass-through, used by
    algebraic unit tests).
    """
    if mode == "identity":
        return x
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batchnorm scale/shift must have shape ({c},)")
    dt = x.data.dtype
    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        buffers.mean[...] = (1.0 - momentum) * buffers.mean + momentum * mu
        buffers.var[...] = (1.0 - momentum) * buffers.var + momentum * var
        s = np.sqrt(var + dt.type(BN_EPS))
        xhat = (x.data - mu.reshape(1, c, 1, 1)) / s.reshape(1, c, 1, 1)
        out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

        def vjp(g):
            m = g.shape[0] * g.shape[2] * g.shape[3]
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            gm = dbeta / m
            gxm = dgamma / m
            dx = (gamma.data / s).reshape(1, c, 1, 1) * (
                g - gm.reshape(1, c, 1, 1) - xhat * gxm.reshape(1, c, 1, 1)
            )
            return (dx, dgamma, dbeta)

        return Var(out, (x, gamma, beta), vjp)
    if mode == "eval":
        s = np.sqrt(buffers.var + BN_EPS).astype(dt)
        mu = buffers.mean.astype(dt)
        xhat = (x.data - mu.reshape(1, c, 1, 1)) / s.reshape(1, c, 1, 1)
        out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

        def vjp(g):
            dx = g * (gamma.data / s).reshape(1, c, 1, 1)
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            return (dx, dgamma, dbeta)

        return Var(out, (x, gamma, beta), vjp)
    raise ShapeError(f"unknown batchnorm mode {mode!r}")


# ---------------------------------------------------------------------------
# centered Fourier pair ops

def _to_complex(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    z = np.empty(re.shape, dtype=T.complex_dtype_for(re.dtype))
    z.real = re
    z.imag = im
    return z


def fft2c(re: Var, im: Var) -> tuple[Var, Var]:
    """Centered orthonormal DFT on an (re, im) node pair."""
    z = T.fft2c(_to_complex(re.data, im.data))

    def vjp_re(g):
        c = T.ifft2c(_to_complex(g, np.zeros_like(g)))
        return (np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag))

    def vjp_im(g):
        c = T.ifft2c(_to_complex(np.zeros_like(g), g))
        return (np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag))

    out_re = Var(np.ascontiguousarray(z.real), (re, im), vjp_re)
    out_im = Var(np.ascontiguousarray(z.imag), (re, im), vjp_im)
    return out_re, out_im


def ifft2c(re: Var, im: Var) -> tuple[Var, Var]:
    """Centered orthonormal inverse DFT on an (re, im) node pair."""
    z = T.ifft2c(_to_complex(re.data, im.data))

    def vjp_re(g):
        c = T.fft2c(_to_complex(g, np.zeros_like(g)))
        return (np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag))

    def vjp_im(g):
        c = T.fft2c(_to_complex(np.zeros_like(g), g))
        return (np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag))

    out_re = Var(np.ascontiguousarray(z.real), (re, im), vjp_re)
    out_im = Var(np.ascontiguousarray(z.imag), (re, im), vjp_im)
    return out_re, out_im
