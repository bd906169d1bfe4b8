"""Differentiable operations.

Sequence tensors are laid out ``(batch, channels, time)``; a 2-D input
``(channels, time)`` is treated as a batch of one and returned 2-D.
Convolutions are cross-correlations (no kernel flip).
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_result

__all__ = [
    "add", "sub", "mul", "sum", "mean", "log", "log10", "relu", "prelu", "sigmoid",
    "clip", "square", "getitem", "concat", "pad", "reshape",
    "conv1d", "conv_transpose1d", "depthwise_conv1d", "global_layer_norm",
]


def _val(x):
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, (int, float)):
        return x
    return np.asarray(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    shape = np.shape(shape) if not isinstance(shape, tuple) else shape
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return make_result("add", av + bv, (a, b),
                       lambda g: (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv))))


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return make_result("sub", av - bv, (a, b),
                       lambda g: (_unbroadcast(g, np.shape(av)), -_unbroadcast(g, np.shape(bv))))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)

    def bw(g):
        ga = _unbroadcast(g * bv, np.shape(av)) if isinstance(a, Tensor) and a.requires_grad else None
        gb = _unbroadcast(g * av, np.shape(bv)) if isinstance(b, Tensor) and b.requires_grad else None
        return ga, gb

    return make_result("mul", av * bv, (a, b), bw, saved=(av, bv))


def square(x: Tensor) -> Tensor:
    xv = _val(x)
    return make_result("square", xv * xv, (x,), lambda g: (2.0 * g * xv,), saved=(xv,))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    xv = _val(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return make_result("sum", np.sum(xv, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    xv = _val(x)
    n = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def log(x: Tensor) -> Tensor:
    xv = _val(x)
    return make_result("log", np.log(xv), (x,), lambda g: (g / xv,), saved=(xv,))


def log10(x: Tensor) -> Tensor:
    xv = _val(x)
    k = 1.0 / np.log(10.0)
    return make_result("log10", np.log10(xv), (x,), lambda g: (g * k / xv,), saved=(xv,))


def relu(x: Tensor) -> Tensor:
    xv = _val(x)
    pos = xv > 0
    return make_result("relu", np.where(pos, xv, 0).astype(xv.dtype), (x,),
                       lambda g: (np.where(pos, g, 0).astype(g.dtype),), saved=(pos,))


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with a single learnable slope (shape ``(1,)``)."""
    xv, av = _val(x), _val(alpha)
    neg = np.minimum(xv, 0)
    out = xv + (av - 1) * neg
    slope = np.where(xv > 0, 1, av).astype(xv.dtype)

    def bw(g):
        gx = g * slope
        ga = np.array([np.vdot(g, neg)], dtype=av.dtype).reshape(av.shape)
        return gx, ga

    return make_result("prelu", out, (x, alpha), bw, saved=(neg, slope))


def sigmoid(x: Tensor) -> Tensor:
    xv = _val(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),), saved=(out,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    xv = _val(x)
    inside = (xv >= lo) & (xv <= hi)
    return make_result("clip", np.clip(xv, lo, hi), (x,),
                       lambda g: (np.where(inside, g, 0).astype(g.dtype),), saved=(inside,))


# ---------------------------------------------------------------- structural

def getitem(x: Tensor, idx) -> Tensor:
    xv = _val(x)

    def bw(g):
        full = np.zeros_like(xv)
        full[idx] = g
        return (full,)

    return make_result("getitem", xv[idx], (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    xv = _val(x)
    return make_result("reshape", xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def concat(xs, axis: int = -1) -> Tensor:
    vals = [_val(x) for x in xs]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", np.concatenate(vals, axis=axis), tuple(xs), bw)


def pad(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    xv = _val(x)
    widths = [(0, 0)] * (xv.ndim - 1) + [(left, right)]
    n = xv.shape[-1]
    return make_result("pad", np.pad(xv, widths), (x,), lambda g: (g[..., left:left + n],))


# ---------------------------------------------------------------- convolutions

def _batched(x):
    v = _val(x)
    return (v[None], True) if v.ndim == 2 else (v, False)


def conv1d(x, w, bias=None, stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    """Valid cross-correlation ``(B, Cin, T) x (Cout, Cin, K) -> (B, Cout, T')``.

    ``padding`` zero-pads both ends symmetrically before the correlation.
    """
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    xv, squeeze = _batched(x)
    wv = _val(w)
    if wv.ndim != 3 or wv.shape[1] != xv.shape[1]:
        raise ValueError(f"weight shape {wv.shape} does not match input channels {xv.shape[1]}")
    cout, cin, k = wv.shape
    span = (k - 1) * dilation + 1
    if padding:
        xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding)))
    tp = xv.shape[-1]
    if tp < span:
        raise ValueError("input too short")
    t_out = (tp - span) // stride + 1
    bv = None if bias is None else _val(bias)

    if k == 1 and stride == 1:
        cols = xv[:, :, :t_out]
        out = np.matmul(wv[:, :, 0], cols)
    else:
        idx = (np.arange(k) * dilation)[:, None] + stride * np.arange(t_out)[None, :]
        cols = xv[:, :, idx].reshape(xv.shape[0], cin * k, t_out)
        out = np.matmul(wv.reshape(cout, cin * k), cols)
    if bv is not None:
        out = out + bv[:, None]
    b = xv.shape[0]

    def bw(g):
        g = g[None] if squeeze else g
        gx = gw = gb = None
        if isinstance(w, Tensor) and w.requires_grad:
            gw = np.einsum("bot,bit->oi", g, cols, optimize=True).reshape(wv.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if isinstance(x, Tensor) and x.requires_grad:
            gcols = np.matmul(wv.reshape(cout, cin * k).T, g)
            gxp = np.zeros((b, cin, tp), dtype=g.dtype)
            if k == 1 and stride == 1:
                gxp[:, :, :t_out] = gcols
            else:
                gcols = gcols.reshape(b, cin, k, t_out)
                stop = stride * (t_out - 1) + 1
                for j in range(k):
                    gxp[:, :, j * dilation:j * dilation + stop:stride] += gcols[:, :, j]
            if padding:
                gxp = gxp[:, :, padding:tp - padding]
            gx = gxp[0] if squeeze else gxp
        return gx, gw, gb

    res = make_result("conv1d", out[0] if squeeze else out, (x, w, bias), bw, saved=(cols,))
    return res


def conv_transpose1d(x, w, stride: int = 1) -> Tensor:
    """Transposed convolution ``(B, Cin, T) x (Cin, Cout, K) -> (B, Cout, (T-1)*stride + K)``.

    This is the adjoint of :func:`conv1d` with the same weight array.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xv, squeeze = _batched(x)
    wv = _val(w)
    if wv.ndim != 3 or wv.shape[0] != xv.shape[1]:
        raise ValueError(f"weight shape {wv.shape} does not match input channels {xv.shape[1]}")
    cin, cout, k = wv.shape
    b, _, t = xv.shape
    t_out = (t - 1) * stride + k
    stop = stride * (t - 1) + 1
    # (Cout*K, Cin) @ (B, Cin, T) -> (B, Cout, K, T), then overlap-add over taps
    taps = np.matmul(wv.reshape(cin, cout * k).T, xv).reshape(b, cout, k, t)
    out = np.zeros((b, cout, t_out), dtype=taps.dtype)
    for j in range(k):
        out[:, :, j:j + stop:stride] += taps[:, :, j]

    def bw(g):
        g = g[None] if squeeze else g
        idx = np.arange(k)[:, None] + stride * np.arange(t)[None, :]
        gcols = g[:, :, idx]  # (B, Cout, K, T)
        gcols = gcols.reshape(b, cout * k, t)
        gx = gw = None
        if isinstance(x, Tensor) and x.requires_grad:
            gx = np.matmul(wv.reshape(cin, cout * k), gcols)
            gx = gx[0] if squeeze else gx
        if isinstance(w, Tensor) and w.requires_grad:
            gw = np.einsum("bit,bjt->ij", xv, gcols, optimize=True).reshape(wv.shape)
        return gx, gw

    return make_result("conv_transpose1d", out[0] if squeeze else out, (x, w), bw, saved=(xv,))


def depthwise_conv1d(x, w, bias=None, dilation: int = 1, padding: int = 0) -> Tensor:
    """Per-channel dilated correlation ``(B, C, T) x (C, K) -> (B, C, T')``."""
    xv, squeeze = _batched(x)
    wv = _val(w)
    c, k = wv.shape
    if xv.shape[1] != c:
        raise ValueError(f"depthwise weight has {c} channels, input has {xv.shape[1]}")
    if padding:
        xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding)))
    tp = xv.shape[-1]
    span = (k - 1) * dilation + 1
    if tp < span:
        raise ValueError("input too short")
    t_out = tp - span + 1
    out = np.zeros((xv.shape[0], c, t_out), dtype=np.result_type(xv, wv))
    for j in range(k):
        out += wv[:, j, None] * xv[:, :, j * dilation:j * dilation + t_out]
    if bias is not None:
        out += _val(bias)[:, None]

    def bw(g):
        g = g[None] if squeeze else g
        gx = gw = gb = None
        if isinstance(w, Tensor) and w.requires_grad:
            gw = np.stack([np.einsum("bct,bct->c", g, xv[:, :, j * dilation:j * dilation + t_out])
                           for j in range(k)], axis=1)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if isinstance(x, Tensor) and x.requires_grad:
            gxp = np.zeros_like(xv, dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j * dilation:j * dilation + t_out] += wv[:, j, None] * g
            if padding:
                gxp = gxp[:, :, padding:tp - padding]
            gx = gxp[0] if squeeze else gxp
        return gx, gw, gb

    return make_result("depthwise_conv1d", out[0] if squeeze else out, (x, w, bias), bw,
                       saved=(xv,))


def global_layer_norm(x, gain, bias, eps: float = 1e-8) -> Tensor:
    """Normalize each batch item over all channels and frames, then per-channel affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xv, squeeze = _batched(x)
    gv, bv = _val(gain), _val(bias)
    n = xv.shape[1] * xv.shape[2]
    flat = xv.reshape(xv.shape[0], -1)
    mu = flat.mean(axis=1, dtype=np.float64).astype(xv.dtype)
    xhat = xv - mu[:, None, None]
    flat = xhat.reshape(xv.shape[0], -1)
    var = np.einsum("bi,bi->b", flat, flat) / n
    inv = (1.0 / np.sqrt(var + eps)).astype(xv.dtype)[:, None, None]
    xhat *= inv
    out = gv[:, None] * xhat + bv[:, None]

    def bw(g):
        g = g[None] if squeeze else g
        gx = None
        if isinstance(x, Tensor) and x.requires_grad:
            gh = g * gv[:, None]
            b = gh.shape[0]
            m1 = gh.reshape(b, -1).mean(axis=1)[:, None, None]
            m2 = (np.einsum("bi,bi->b", gh.reshape(b, -1), xhat.reshape(b, -1)) / n)[:, None, None]
            gx = inv * (gh - m1 - xhat * m2.astype(gh.dtype))
            gx = gx[0] if squeeze else gx
        ggain = np.einsum("bct,bct->c", g, xhat) if gain.requires_grad else None
        gbias = g.sum(axis=(0, 2)) if bias.requires_grad else None
        return gx, ggain, gbias

    return make_result("global_layer_norm", out[0] if squeeze else out, (x, gain, bias), bw,
                       saved=(xhat,))
