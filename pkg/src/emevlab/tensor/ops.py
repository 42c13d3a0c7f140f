"""Differentiable operations.

All ops accept a leading batch axis wherever it makes sense.  Shape
violations raise :class:`~emevlab.errors.DimensionError` naming the operand.
"""

import math

import numpy as np

from .. import kernels
from ..errors import ConfigurationError, DimensionError
from .autograd import Tensor, as_tensor, make_node

LEAKY_SLOPE = 0.01

ACTIVATIONS = ("linear", "relu", "leaky_relu", "tanh")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _coerce(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype if not isinstance(b, Tensor) else None)
    return a, b


def add(a, b):
    a, b = _coerce(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _coerce(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_node(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _coerce(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, left {a.shape} right {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dims differ, left {a.shape} vs right {b.shape}")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), a.shape[:0] + _drop_row(b))
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), back)


def _drop_row(b):
    # result shape of (1, k) @ b with the unit row removed
    return b.shape[:-2] + b.shape[-1:]


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    inverse = None if axes is None else np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def sum(x, axis=None):
    x = as_tensor(x)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_node(np.sum(x.data, axis=axis), (x,), back)


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return make_node(np.mean(x.data, axis=axis), (x,), back)


# activations ---------------------------------------------------------------

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = as_tensor(x)
    factor = np.where(x.data >= 0, 1.0, slope).astype(x.dtype)
    return make_node(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),))


def activate(x, activation):
    if activation == "linear":
        return x
    if activation == "relu":
        return relu(x)
    if activation == "leaky_relu":
        return leaky_relu(x)
    if activation == "tanh":
        return tanh(x)
    raise ConfigurationError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), back)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(y, (x,), back)


# layers ---------------------------------------------------------------------

def dense(x, weights, bias, activation="linear"):
    """``act(x @ W + b)`` over the last axis of ``x``."""
    x = as_tensor(x)
    if weights.ndim != 2:
        raise DimensionError(f"dense: weights must be 2-D, got {weights.shape}")
    if x.shape[-1] != weights.shape[0]:
        raise DimensionError(
            f"dense: input length {x.shape[-1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias shape {bias.shape} != ({weights.shape[1]},)")
    return activate(add(matmul(x, weights), bias), activation)


def _conv(x, filters, bias, spatial):
    x = as_tensor(x)
    kshape = filters.shape[:spatial]
    if any(k % 2 == 0 for k in kshape):
        raise ConfigurationError(f"conv: kernel size must be odd for same padding, got {kshape}")
    if x.ndim not in (spatial + 1, spatial + 2):
        raise DimensionError(f"conv: input rank {x.ndim} invalid for {spatial}-D convolution")
    if x.shape[-1] != filters.shape[spatial]:
        raise DimensionError(
            f"conv: input has {x.shape[-1]} channels, filters expect {filters.shape[spatial]}")
    if bias.shape != (filters.shape[-1],):
        raise DimensionError(f"conv: bias shape {bias.shape} != ({filters.shape[-1]},)")
    unbatched = x.ndim == spatial + 1
    xd = x.data[None] if unbatched else x.data
    # lift to 3 spatial axes with unit depth
    x5 = np.ascontiguousarray(xd.reshape(xd.shape[:1] + (1,) * (3 - spatial) + xd.shape[1:]))
    w5 = np.ascontiguousarray(filters.data.reshape((1,) * (3 - spatial) + filters.shape),
                              dtype=x5.dtype)
    b = np.ascontiguousarray(bias.data, dtype=x5.dtype)
    out5 = kernels.conv_forward(x5, w5, b)
    out = out5.reshape(xd.shape[:-1] + (filters.shape[-1],))
    if unbatched:
        out = out[0]

    def back(g):
        g5 = np.ascontiguousarray(g.reshape(out5.shape), dtype=x5.dtype)
        gx, gw, gb = kernels.conv_backward(x5, w5, g5)
        return gx.reshape(x.shape), gw.reshape(filters.shape), gb

    return make_node(out, (x, filters, bias), back)


def conv2d(x, filters, bias, activation="linear"):
    """Same-padded 2-D convolution; ``x`` is (N,) H x W x C_in, filters K x K x C_in x C_out."""
    if filters.ndim != 4:
        raise DimensionError(f"conv2d: filters must be 4-D, got {filters.shape}")
    return activate(_conv(x, filters, bias, 2), activation)


def conv3d(x, filters, bias, activation="linear"):
    """Same-padded 3-D convolution; ``x`` is (N,) D x H x W x C_in."""
    if filters.ndim != 5:
        raise DimensionError(f"conv3d: filters must be 5-D, got {filters.shape}")
    return activate(_conv(x, filters, bias, 3), activation)


def multi_head_attention(query, key, value, heads, key_dim, params, return_weights=False):
    """Scaled dot-product multi-head attention.

    ``params`` maps ``wq, bq, wk, bk, wv, bv`` (d_model -> heads*key_dim)
    and ``wo, bo`` (heads*key_dim -> d_model) to tensors.
    Inputs are (..., L, d_model); output has the query's shape.
    """
    if heads <= 0 or key_dim <= 0:
        raise ConfigurationError(f"attention needs heads > 0 and key_dim > 0, got {heads}, {key_dim}")
    query, key, value = as_tensor(query), as_tensor(key), as_tensor(value)
    if key.shape[-2] != value.shape[-2]:
        raise DimensionError(f"attention: key length {key.shape[-2]} != value length {value.shape[-2]}")
    width = heads * key_dim
    for name in ("wq", "wk", "wv"):
        if params[name].shape[1] != width:
            raise DimensionError(f"attention: {name} has {params[name].shape[1]} columns, expected {width}")

    def split(t, w, b):
        proj = add(matmul(t, w), b)
        lead = proj.shape[:-2]
        proj = reshape(proj, lead + (proj.shape[-2], heads, key_dim))
        nd = proj.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return transpose(proj, axes)  # (..., heads, L, key_dim)

    q = split(query, params["wq"], params["bq"])
    k = split(key, params["wk"], params["bk"])
    v = split(value, params["wv"], params["bv"])
    nd = k.ndim
    kt = transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(key_dim))
    weights = softmax(scores, axis=-1)
    z = matmul(weights, v)  # (..., heads, Lq, key_dim)
    z = transpose(z, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    z = reshape(z, z.shape[:-2] + (width,))
    out = add(matmul(z, params["wo"]), params["bo"])
    if return_weights:
        return out, weights
    return out


# losses ---------------------------------------------------------------------

def mse(pred, target):
    """Mean squared error, accumulated in float64."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data.astype(np.float64) - target
    value = np.mean(diff * diff)

    def back(g):
        return ((g * 2.0 / diff.size * diff).astype(pred.dtype),)

    return make_node(np.asarray(value), (pred,), back)


def mse_joint_loss(v, v_hat, s, s_hat, w_v=0.5, w_s=0.5):
    """Weighted average of the per-element MSEs of V and S."""
    if w_v < 0 or w_s < 0 or abs(w_v + w_s - 1.0) > 1e-9:
        raise ConfigurationError(f"loss weights must be non-negative and sum to 1, got {w_v}, {w_s}")
    shape_v = getattr(v, "shape", np.shape(v))
    shape_s = getattr(s, "shape", np.shape(s))
    if tuple(shape_v) != tuple(as_tensor(v_hat).shape):
        raise DimensionError(f"joint loss: V {tuple(shape_v)} vs V_hat {as_tensor(v_hat).shape}")
    if tuple(shape_s) != tuple(as_tensor(s_hat).shape):
        raise DimensionError(f"joint loss: S {tuple(shape_s)} vs S_hat {as_tensor(s_hat).shape}")
    return add(mul(mse(v_hat, v), w_v), mul(mse(s_hat, s), w_s))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=np.float64)
    onehot[np.arange(labels.size), labels] = -1.0 / labels.size
    picked = mul(logp, onehot.astype(logits.dtype))
    return sum(picked)
