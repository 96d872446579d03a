"""Differentiable primitives.

Every op takes/returns :class:`Tensor`. Broadcasting follows numpy; the
backward pass sums gradients back down to each operand's shape.
"""

from __future__ import annotations

import builtins
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import ShapeError, Tensor, as_tensor, make_result

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("maximum", a, b)
    take_a = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return make_result(np.where(take_a, a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a, b)
    take_a = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return make_result(np.where(take_a, a.data, b.data), (a, b), backward, "minimum")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents differ ({a.shape[-1]} vs {b.shape[-2]}) for {a.shape} x {b.shape}"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


# -- elementwise unary -------------------------------------------------------

def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    if isinstance(exponent, Tensor):
        raise TypeError("power: exponent must be a Python scalar")
    out = x.data ** exponent

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return make_result(out, (x,), backward, "power")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(x.data * cdf, (x,), backward, "gelu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- normalisation -----------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def layernorm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an optional affine map."""
    x = as_tensor(x)
    parents = [x]
    if weight is not None:
        weight = as_tensor(weight)
        parents.append(weight)
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
    n = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and p.shape != (n,):
            raise ShapeError(f"layernorm: {name} shape {p.shape} does not match last extent {n}")

    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * weight.data if weight is not None else xhat
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = []
        gx_hat = g * weight.data if weight is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads.append(gx)
        if weight is not None:
            grads.append((g * xhat).reshape(-1, n).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, n).sum(axis=0))
        return grads

    return make_result(out, parents, backward, "layernorm")


# -- reductions --------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(out, (x,), backward, "mean")


def max(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, idx, gg, axis=axis)
        return (gx,)

    return make_result(out if keepdims else np.squeeze(out, axis), (x,), backward, "max")


# -- shape manipulation ------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = np.argsort([a % x.ndim for a in axes])
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "permute")


def transpose_last2(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2: need at least 2 axes, got {x.shape}")
    return make_result(np.swapaxes(x.data, -1, -2), (x,),
                       lambda g: (np.swapaxes(g, -1, -2),), "transpose_last2")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: extents {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))]

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def concat_firstdim(tensors) -> Tensor:
    return concat(tensors, axis=0)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result(np.array(out, copy=True), (x,), backward, "getitem")


def slice_firstdim(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_firstdim: range [{start}, {stop}) outside extent {x.shape[0]}")
    return getitem(x, builtins.slice(start, stop))


def pad2d(x, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    x = as_tensor(x)
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(x.data, widths)
    return make_result(out, (x,), lambda g: (g[..., pad:-pad, pad:-pad],), "pad2d")


# -- convolution -------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over NCHW input with an (O, C, kh, kw) kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW input and OCkk weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cw}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
        parents.append(bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        grads = []
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
            grads.append(gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp)
        else:
            grads.append(None)
        grads.append(np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None)
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, parents, backward, "conv2d")


# -- dispatch ----------------------------------------------------------------

_KINDS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "softmax_lastdim": lambda x: softmax(x, axis=-1),
    "layernorm_lastdim": layernorm,
    "reshape": reshape,
    "permute": permute,
    "concat_firstdim": concat_firstdim,
    "slice_firstdim": slice_firstdim,
    "conv2d": conv2d,
    "sum": sum,
    "mean": mean,
    "max": max,
    "transpose_last2": transpose_last2,
    "exp": exp,
    "log": log,
    "abs": abs,
    "maximum": maximum,
    "minimum": minimum,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Apply the primitive named ``kind``."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)
