"""Differentiable operations on :class:`~edtkit.autodiff.tensor.Tensor`.

Only the operations the EDT network, its losses and its diagnostics need are
provided. Every op checks its output for NaN/Inf and raises
:class:`NonFiniteError` rather than propagating bad values.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import DTYPE, NonFiniteError, Tensor, as_tensor, current_graph

__all__ = [
    "add",
    "sub",
    "mul",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "roll",
    "take",
    "pad_reflect",
    "abs",
    "conv2d",
    "conv2d_transposed",
    "layernorm",
    "softmax",
    "gelu",
    "pixel_shuffle",
    "pixel_unshuffle",
    "l1_loss",
]


def _finish(op: str, inputs: Sequence[Tensor], data: np.ndarray, vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    g = current_graph()
    if g is not None and any(t.requires_grad or g.node_of(t) is not None for t in inputs):
        out.requires_grad = False
        g.record(op, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish("add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish("sub", (a, b), a.data - b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = float(b)
        return _finish("scale", (a,), a.data * c, lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _finish(
        "mul",
        (a, b),
        ad * bd,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    s = np.sign(x.data)
    return _finish("abs", (x,), np.abs(x.data), lambda g: (g * s,))


def gelu(x) -> Tensor:
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    c = math.sqrt(2.0 / math.pi)
    x2 = xd * xd
    inner = c * xd * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def vjp(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _finish("gelu", (x,), out, vjp)


# -- reductions and shape ------------------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", (x,), np.asarray(out, dtype=DTYPE), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = range(x.ndim) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _finish("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = tuple(np.argsort(axes))
    return _finish(
        "transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)), lambda g: (g.transpose(inv),)
    )


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _finish("getitem", (x,), np.array(x.data[index], dtype=DTYPE), vjp)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _finish(
        "concat",
        xs,
        np.concatenate([t.data for t in xs], axis=axis),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def roll(x, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Cyclic shift, as :func:`numpy.roll`."""
    x = as_tensor(x)
    shifts, axes = tuple(shifts), tuple(axes)
    neg = tuple(-s for s in shifts)
    return _finish("roll", (x,), np.roll(x.data, shifts, axes), lambda g: (np.roll(g, neg, axes),))


def take(x, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + index.ndim)), list(range(index.ndim)))
        np.add.at(moved, index, gm)
        return (full,)

    return _finish("take", (x,), np.take(x.data, index, axis=axis), vjp)


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.arange(n), (before, after), mode="reflect") if n > 1 else np.zeros(n + before + after, dtype=np.intp)


def pad_reflect(x, pad_h: tuple[int, int], pad_w: tuple[int, int]) -> Tensor:
    """Reflect-pad the last two axes (edge sample not repeated)."""
    x = as_tensor(x)
    if pad_h == (0, 0) and pad_w == (0, 0):
        return x
    H, W = x.shape[-2:]
    ih = _reflect_index(H, *pad_h)
    iw = _reflect_index(W, *pad_w)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        tmp = np.zeros(shape[:-1] + (g.shape[-1],), dtype=DTYPE)
        np.add.at(np.moveaxis(tmp, -2, 0), ih, np.moveaxis(g, -2, 0))
        np.add.at(np.moveaxis(full, -1, 0), iw, np.moveaxis(tmp, -1, 0))
        return (full,)

    data = x.data[..., ih, :][..., iw]
    return _finish("pad_reflect", (x,), data, vjp)


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return _finish("matmul", (a, b), ad @ bd, vjp)


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x, w, bias=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``(B, C, H, W)`` and ``w`` is ``(O, C // groups, kh, kw)``.
    Output extents are ``floor((H + 2p - kh) / stride) + 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    B, C, H, W = x.shape
    O, cg, kh, kw = w.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    if groups < 1 or C % groups or O % groups:
        raise ValueError(f"channels {C}->{O} not divisible by groups={groups}")
    if cg != C // groups:
        raise ValueError(f"weight expects {cg * groups} input channels, got {C}")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d output would be empty")
    og = O // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if cg == 1 and og == 1:
        y = _depthwise(x, w, xp, (sh, sw), (ph, pw), (Ho, Wo))
        return add(y, reshape(bias, (1, O, 1, 1))) if bias is not None else y
    # (g, og, cg, kh, kw)
    wg = w.data.reshape(groups, og, cg, kh, kw)
    out = np.zeros((B, groups, og, Ho * Wo), dtype=DTYPE)
    patches = []
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw]
            patch = patch.reshape(B, groups, cg, Ho * Wo)
            patches.append(patch)
            out += wg[:, :, :, i, j] @ patch
    out = out.reshape(B, O, Ho, Wo)

    def vjp(g):
        gg = g.reshape(B, groups, og, Ho * Wo)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wg)
        k = 0
        for i in range(kh):
            for j in range(kw):
                wij = wg[:, :, :, i, j]
                gp = np.swapaxes(wij, -1, -2) @ gg
                gxp[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw] += gp.reshape(B, C, Ho, Wo)
                gw[:, :, :, i, j] = (gg @ np.swapaxes(patches[k], -1, -2)).sum(axis=0)
                k += 1
        gx = gxp[:, :, ph : ph + H, pw : pw + W]
        return (gx, gw.reshape(w.shape))

    y = _finish("conv2d", (x, w), out, vjp)
    if bias is not None:
        y = add(y, reshape(bias, (1, O, 1, 1)))
    return y


def _depthwise(x, w, xp, stride, padding, out_hw) -> Tensor:
    """One filter per channel: broadcasted multiply-adds instead of matmuls."""
    B, C, H, W = x.shape
    kh, kw = w.shape[-2:]
    (sh, sw), (ph, pw), (Ho, Wo) = stride, padding, out_hw
    wd = w.data[:, 0]
    out = np.zeros((B, C, Ho, Wo), dtype=DTYPE)

    def window(i, j):
        return (slice(None), slice(None), slice(i, i + sh * (Ho - 1) + 1, sh), slice(j, j + sw * (Wo - 1) + 1, sw))

    for i in range(kh):
        for j in range(kw):
            out += wd[None, :, i, j, None, None] * xp[window(i, j)]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty((C, kh, kw), dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                sl = window(i, j)
                gxp[sl] += wd[None, :, i, j, None, None] * g
                gw[:, i, j] = np.einsum("bchw,bchw->c", g, xp[sl])
        return (gxp[:, :, ph : ph + H, pw : pw + W], gw.reshape(w.shape))

    return _finish("conv2d", (x, w), out, vjp)


def conv2d_transposed(x, w, bias=None, stride=1, padding=0, output_padding=0) -> Tensor:
    """Transposed convolution (the input-gradient of :func:`conv2d`).

    ``w`` is ``(C_in, C_out, kh, kw)``. Output extents are
    ``(H - 1) * stride - 2 * padding + kh + output_padding``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d_transposed expects 4-D input and weight")
    B, C, H, W = x.shape
    Ci, O, kh, kw = w.shape
    if Ci != C:
        raise ValueError(f"weight expects {Ci} input channels, got {C}")
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    Hf = (H - 1) * sh + kh + oph
    Wf = (W - 1) * sw + kw + opw
    Ho, Wo = Hf - 2 * ph, Wf - 2 * pw
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d_transposed output would be empty")
    xd = x.data.reshape(B, C, H * W)
    wd = w.data
    buf = np.zeros((B, O, Hf, Wf), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            contrib = wd[:, :, i, j].T @ xd
            buf[:, :, i : i + sh * (H - 1) + 1 : sh, j : j + sw * (W - 1) + 1 : sw] += contrib.reshape(B, O, H, W)
    out = buf[:, :, ph : ph + Ho, pw : pw + Wo].copy()

    def vjp(g):
        gbuf = np.zeros((B, O, Hf, Wf), dtype=DTYPE)
        gbuf[:, :, ph : ph + Ho, pw : pw + Wo] = g
        gx = np.zeros((B, C, H * W), dtype=DTYPE)
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gs = gbuf[:, :, i : i + sh * (H - 1) + 1 : sh, j : j + sw * (W - 1) + 1 : sw].reshape(B, O, H * W)
                gx += wd[:, :, i, j] @ gs
                gw[:, :, i, j] = (xd @ np.swapaxes(gs, -1, -2)).sum(axis=0)
        return (gx.reshape(B, C, H, W), gw)

    y = _finish("conv2d_transposed", (x, w), out, vjp)
    if bias is not None:
        y = add(y, reshape(bias, (1, O, 1, 1)))
    return y


# -- normalisation ------------------------------------------------------------


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("eps must be positive")
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layernorm affine parameters must have shape ({C},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data
    lead = tuple(range(xd.ndim - 1))

    def vjp(g):
        gxhat = g * gd
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return _finish("layernorm", (x, gamma, beta), out, vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", (x,), s, vjp)


# -- rearrangements -----------------------------------------------------------


def pixel_shuffle(x, s: int) -> Tensor:
    """Depth-to-space: ``(B, C*s*s, H, W) -> (B, C, H*s, W*s)``.

    Input channel ``c*s*s + i*s + j`` lands at output offset ``(i, j)`` of
    channel ``c``.
    """
    x = as_tensor(x)
    B, Cs, H, W = x.shape
    if Cs % (s * s):
        raise ValueError(f"channels {Cs} not divisible by {s}^2")
    C = Cs // (s * s)
    y = reshape(x, (B, C, s, s, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (B, C, H * s, W * s))


def pixel_unshuffle(x, s: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    x = as_tensor(x)
    B, C, Hs, Ws = x.shape
    if Hs % s or Ws % s:
        raise ValueError(f"spatial extents {Hs}x{Ws} not divisible by {s}")
    H, W = Hs // s, Ws // s
    y = reshape(x, (B, C, H, s, W, s))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (B, C * s * s, H, W))


# -- losses -----------------------------------------------------------------------


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error; the subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    return mean(abs(sub(pred, target)))
