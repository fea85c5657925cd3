"""Differentiable operations on tensors.

Every operation computes its forward value with numpy and, when any input
requires gradients and a tape is active, records a closure that maps output
gradients to input gradients. Compute precision follows the inputs (float32
by default) and is promoted to float64 inside :func:`force_float64` blocks.

Shape rules are strict: elementwise ops demand identical dims, and the only
broadcasting is the explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import (
    GradTape,
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    active_tape,
    debug_checks_enabled,
    force_float64_enabled,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(dims, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(dims, dtype=dtype), requires_grad=requires_grad)


def ones(dims, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(dims, dtype=dtype), requires_grad=requires_grad)


def _prep(*tensors: Tensor) -> tuple[np.ndarray, ...]:
    """Input payloads, promoted to float64 in gradcheck mode."""
    if force_float64_enabled():
        return tuple(t.data.astype(np.float64, copy=False) for t in tensors)
    return tuple(t.data for t in tensors)


def _check_finite(name: str, arrays) -> None:
    if not debug_checks_enabled():
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"{name} produced non-finite values")


def apply_op(name, inputs, out_arrays, backward):
    """Build output tensors for an executed op and register it on the active
    tape. ``backward`` maps a tuple of output-gradient arrays to a tuple of
    input-gradient arrays (None for inputs that need none). Returns the
    output tensors (a single Tensor when there is exactly one)."""
    _check_finite(name, out_arrays)
    requires = any(t.requires_grad for t in inputs)
    outputs = tuple(Tensor(a, requires_grad=requires) for a in out_arrays)
    tape = active_tape()
    if requires and tape is not None:
        tape.record(name, inputs, outputs, backward)
    return outputs if len(outputs) != 1 else outputs[0]


def _same_dims(name: str, a: Tensor, b: Tensor) -> None:
    if a.dims != b.dims:
        raise ShapeMismatchError(f"{name}: dims {a.dims} vs {b.dims}")


# ---------------------------------------------------------------------------
# elementwise and scalar arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("add", a, b)
    ada, bda = _prep(a, b)
    return apply_op("add", (a, b), (ada + bda,), lambda gs: (gs[0], gs[0]))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("sub", a, b)
    ada, bda = _prep(a, b)
    return apply_op("sub", (a, b), (ada - bda,), lambda gs: (gs[0], -gs[0]))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("mul", a, b)
    ada, bda = _prep(a, b)
    return apply_op(
        "mul", (a, b), (ada * bda,), lambda gs: (gs[0] * bda, gs[0] * ada)
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("div", a, b)
    ada, bda = _prep(a, b)
    return apply_op(
        "div",
        (a, b),
        (ada / bda,),
        lambda gs: (gs[0] / bda, -gs[0] * ada / (bda * bda)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    return apply_op("neg", (a,), (-ada,), lambda gs: (-gs[0],))


def add_scalar(a, s: float) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    return apply_op("add_scalar", (a,), (ada + s,), lambda gs: (gs[0],))


def mul_scalar(a, s: float) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    return apply_op("mul_scalar", (a,), (ada * s,), lambda gs: (gs[0] * s,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    out = np.exp(ada)
    return apply_op("exp", (a,), (out,), lambda gs: (gs[0] * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    return apply_op("log", (a,), (np.log(ada),), lambda gs: (gs[0] / ada,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    out = np.sqrt(ada)
    return apply_op("sqrt", (a,), (out,), lambda gs: (gs[0] / (2.0 * out),))


def gelu(a) -> Tensor:
    """Gaussian-error-linear unit, exact erf form."""
    a = as_tensor(a)
    (ada,) = _prep(a)
    cdf = 0.5 * (1.0 + erf(ada * _INV_SQRT2))
    out = ada * cdf

    def backward(gs):
        pdf = np.exp(-0.5 * ada * ada) * _INV_SQRT2PI
        return (gs[0] * (cdf + ada * pdf),)

    return apply_op("gelu", (a,), (out,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, dims) -> Tensor:
    a = as_tensor(a)
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != a.size:
        raise ShapeMismatchError(f"reshape: dims {a.dims} -> {dims}")
    (ada,) = _prep(a)
    src = ada.shape
    return apply_op(
        "reshape", (a,), (ada.reshape(dims),), lambda gs: (gs[0].reshape(src),)
    )


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    (ada,) = _prep(a)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return apply_op(
        "transpose",
        (a,),
        (np.ascontiguousarray(ada.transpose(axes)),),
        lambda gs: (gs[0].transpose(inverse),),
    )


def broadcast_to(a, dims) -> Tensor:
    a = as_tensor(a)
    dims = tuple(int(d) for d in dims)
    (ada,) = _prep(a)
    try:
        out = np.broadcast_to(ada, dims).copy()
    except ValueError as e:
        raise ShapeMismatchError(f"broadcast_to: dims {a.dims} -> {dims}") from e
    src_shape = ada.shape

    def backward(gs):
        g = gs[0]
        extra = g.ndim - len(src_shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(
            i for i, (ds, dg) in enumerate(zip(src_shape, g.shape)) if ds == 1 and dg > 1
        )
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return apply_op("broadcast_to", (a,), (out,), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= start and start + length <= a.dims[axis]):
        raise ShapeMismatchError(
            f"narrow: [{start}, {start + length}) outside axis {axis} of dims {a.dims}"
        )
    (ada,) = _prep(a)
    index = [slice(None)] * ada.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(gs):
        g = np.zeros_like(ada)
        g[index] = gs[0]
        return (g,)

    return apply_op("narrow", (a,), (np.ascontiguousarray(ada[index]),), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatchError("concat: empty input list")
    base = list(tensors[0].dims)
    for t in tensors[1:]:
        other = list(t.dims)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatchError(
                f"concat: dims {tensors[0].dims} vs {t.dims} along axis {axis}"
            )
    arrays = _prep(*tensors)
    sizes = [a.shape[axis] for a in arrays]
    splits = np.cumsum(sizes)[:-1]

    def backward(gs):
        return tuple(np.ascontiguousarray(p) for p in np.split(gs[0], splits, axis=axis))

    return apply_op("concat", tuple(tensors), (np.concatenate(arrays, axis=axis),), backward)


def take_rows(a, indices) -> Tensor:
    """Gather rows of a (n, ...) tensor; duplicate indices accumulate in the
    gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatchError(f"take_rows: indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.dims[0]):
        raise ShapeMismatchError(
            f"take_rows: index out of range for leading dim {a.dims[0]}"
        )
    (ada,) = _prep(a)

    def backward(gs):
        g = np.zeros_like(ada)
        np.add.at(g, idx, gs[0])
        return (g,)

    return apply_op("take_rows", (a,), (ada[idx],), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    (ada,) = _prep(a)
    src_shape = ada.shape

    def backward(gs):
        g = gs[0]
        if not keepdims:
            if axis is None:
                g = g.reshape((1,) * len(src_shape))
            else:
                g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)

    return apply_op("sum", (a,), (ada.sum(axis=axis, keepdims=keepdims),), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(a.dims[i] for i in axes)
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l2_norm(a) -> Tensor:
    """Euclidean norm of the flattened tensor, as a scalar tensor."""
    return sqrt(sum_(mul(a, a)))


# ---------------------------------------------------------------------------
# linear algebra and neural layers


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise ShapeMismatchError(f"matmul: dims {a.dims} vs {b.dims}")
    if a.dims[-1] != b.dims[-2] or a.dims[:-2] != b.dims[:-2]:
        raise ShapeMismatchError(f"matmul: dims {a.dims} vs {b.dims}")
    ada, bda = _prep(a, b)

    def backward(gs):
        g = gs[0]
        return (g @ bda.swapaxes(-1, -2), ada.swapaxes(-1, -2) @ g)

    return apply_op("matmul", (a, b), (ada @ bda,), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Channel-wise affine map along the last axis: ``x @ weight + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 2 or x.dims[-1] != weight.dims[0]:
        raise ShapeMismatchError(f"linear: dims {x.dims} vs weight {weight.dims}")
    d_out = weight.dims[1]
    lead = x.dims[:-1]
    n = math.prod(lead) if lead else 1
    out = matmul(reshape(x, (n, x.dims[-1])), weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.dims != (d_out,):
            raise ShapeMismatchError(f"linear: bias dims {bias.dims} != ({d_out},)")
        out = add(out, broadcast_to(reshape(bias, (1, d_out)), (n, d_out)))
    return reshape(out, lead + (d_out,))


def conv2d(x, weight, bias=None) -> Tensor:
    """2D convolution with same padding on a (h, w, c_in) map.

    ``weight`` is (k, k, c_in, c_out) with odd k; output is (h, w, c_out).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d: dims {x.dims}, weight {weight.dims}")
    k = weight.dims[0]
    if weight.dims[1] != k or k % 2 == 0:
        raise ShapeMismatchError(f"conv2d: kernel must be odd square, got {weight.dims}")
    if weight.dims[2] != x.dims[2]:
        raise ShapeMismatchError(
            f"conv2d: input channels {x.dims} vs weight {weight.dims}"
        )
    h, w, c_in = x.dims
    c_out = weight.dims[3]
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.dims != (c_out,):
            raise ShapeMismatchError(f"conv2d: bias dims {bias.dims} != ({c_out},)")
        inputs = (x, weight, bias)
        xa, wa, ba = _prep(x, weight, bias)
    else:
        xa, wa = _prep(x, weight)
        ba = None

    p = k // 2
    xp = np.pad(xa, ((p, p), (p, p), (0, 0)))
    acc = np.zeros((h * w, c_out), dtype=xa.dtype)
    for i in range(k):
        for j in range(k):
            acc += xp[i : i + h, j : j + w].reshape(h * w, c_in) @ wa[i, j]
    out = acc.reshape(h, w, c_out)
    if ba is not None:
        out = out + ba

    def backward(gs):
        g = gs[0]
        g2 = g.reshape(h * w, c_out)
        gw = np.empty_like(wa)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                patch = xp[i : i + h, j : j + w].reshape(h * w, c_in)
                gw[i, j] = patch.T @ g2
                gxp[i : i + h, j : j + w] += (g2 @ wa[i, j].T).reshape(h, w, c_in)
        gx = np.ascontiguousarray(gxp[p : p + h, p : p + w])
        if ba is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(0, 1)))

    return apply_op("conv2d", inputs, (out,), backward)


def conv_transpose2d(x, weight, bias=None) -> Tensor:
    """Transposed convolution with a 2x2 kernel and stride 2: the exact x2
    convolutional-upsampling primitive. (h, w, c_in) -> (2h, 2w, c_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.dims[:2] != (2, 2) or weight.dims[2] != x.dims[2]:
        raise ShapeMismatchError(
            f"conv_transpose2d: dims {x.dims}, weight {weight.dims}"
        )
    h, w, c_in = x.dims
    c_out = weight.dims[3]
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.dims != (c_out,):
            raise ShapeMismatchError(
                f"conv_transpose2d: bias dims {bias.dims} != ({c_out},)"
            )
        inputs = (x, weight, bias)
        xa, wa, ba = _prep(x, weight, bias)
    else:
        xa, wa = _prep(x, weight)
        ba = None

    w2 = wa.transpose(2, 0, 1, 3).reshape(c_in, 4 * c_out)
    t = (xa.reshape(h * w, c_in) @ w2).reshape(h, w, 2, 2, c_out)
    out = np.ascontiguousarray(t.transpose(0, 2, 1, 3, 4)).reshape(2 * h, 2 * w, c_out)
    if ba is not None:
        out = out + ba

    def backward(gs):
        g5 = gs[0].reshape(h, 2, w, 2, c_out).transpose(0, 2, 1, 3, 4)
        gflat = np.ascontiguousarray(g5).reshape(h * w, 4 * c_out)
        gx = (gflat @ w2.T).reshape(h, w, c_in)
        gw = (xa.reshape(h * w, c_in).T @ gflat).reshape(c_in, 2, 2, c_out)
        gw = np.ascontiguousarray(gw.transpose(1, 2, 0, 3))
        if ba is None:
            return (gx, gw)
        return (gx, gw, gs[0].sum(axis=(0, 1)))

    return apply_op("conv_transpose2d", inputs, (out,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.dims[-1]
    if gain.dims != (c,) or bias.dims != (c,):
        raise ShapeMismatchError(
            f"layer_norm: gain {gain.dims} / bias {bias.dims} vs channels {c}"
        )
    mu = broadcast_to(mean(x, axis=-1, keepdims=True), x.dims)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    scale = broadcast_to(sqrt(add_scalar(var, eps)), x.dims)
    normed = div(centered, scale)
    shape = (1,) * (len(x.dims) - 1) + (c,)
    out = mul(normed, broadcast_to(reshape(gain, shape), x.dims))
    return add(out, broadcast_to(reshape(bias, shape), x.dims))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    (xa,) = _prep(x)
    shifted = xa - xa.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(gs):
        g = gs[0]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", (x,), (y,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    (xa,) = _prep(x)
    shifted = xa - xa.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(gs):
        g = gs[0]
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return apply_op("log_softmax", (x,), (out,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax."""
    logits = as_tensor(logits)
    if logits.data.ndim == 1:
        logits = reshape(logits, (1, logits.dims[0]))
        labels = [int(np.asarray(labels).reshape(()))]
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.dims
    if labels.shape != (n,):
        raise ShapeMismatchError(
            f"cross_entropy: labels shape {labels.shape} vs logits {logits.dims}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeMismatchError(f"cross_entropy: label out of range [0, {c})")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    picked = sum_(mul(log_softmax(logits, axis=-1), Tensor(onehot)))
    return mul_scalar(picked, -1.0 / n)


def smooth_l1(pred, target) -> Tensor:
    """Elementwise smooth-L1: quadratic inside the unit residual, linear
    outside. Reduce with :func:`sum_` or :func:`mean` as needed."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_dims("smooth_l1", pred, target)
    pa, ta = _prep(pred, target)
    d = pa - ta
    absd = np.abs(d)
    inside = absd < 1.0
    out = np.where(inside, 0.5 * d * d, absd - 0.5)

    def backward(gs):
        gd = gs[0] * np.where(inside, d, np.sign(d))
        return (gd, -gd)

    return apply_op("smooth_l1", (pred, target), (out,), backward)


def nearest_resize(x, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbor spatial resize of a (h, w, c) map."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"nearest_resize: dims {x.dims}")
    if out_h <= 0 or out_w <= 0:
        raise ShapeMismatchError(f"nearest_resize: target ({out_h}, {out_w})")
    h, w, _ = x.dims
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    (xa,) = _prep(x)

    def backward(gs):
        g = np.zeros_like(xa)
        np.add.at(g, (rows[:, None], cols[None, :]), gs[0])
        return (g,)

    return apply_op("nearest_resize", (x,), (xa[rows][:, cols],), backward)


# ---------------------------------------------------------------------------
# operator sugar on Tensor


def _coerce(op, scalar_op):
    def method(self, other):
        if isinstance(other, (int, float)):
            return scalar_op(self, float(other))
        return op(self, other)

    return method


Tensor.__add__ = _coerce(add, add_scalar)
Tensor.__radd__ = _coerce(add, add_scalar)
Tensor.__sub__ = _coerce(sub, lambda t, s: add_scalar(t, -s))
Tensor.__rsub__ = lambda self, other: add_scalar(neg(self), float(other))
Tensor.__mul__ = _coerce(mul, mul_scalar)
Tensor.__rmul__ = _coerce(mul, mul_scalar)
Tensor.__truediv__ = _coerce(div, lambda t, s: mul_scalar(t, 1.0 / s))
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
