"""Parameterised layers built on the functional ops."""

import math

import numpy as np

from ..errors import ConfigurationError
from . import ops
from .autograd import DEFAULT_DTYPE, Parameter


def uniform_fan_in(rng, shape, fan_in, dtype=DEFAULT_DTYPE):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container that discovers parameters and sub-modules by attribute."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def assign_names(self):
        for name, p in self.named_parameters():
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = self.parameters()
        if strict and set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ConfigurationError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if name not in params:
                continue
            p = params[name]
            if value.shape != p.shape:
                raise ConfigurationError(f"{name}: stored shape {value.shape} != {p.shape}")
            p.data = np.array(value, dtype=p.dtype, order="C")
            p.zero_grad()

    def num_parameters(self):
        return sum(p.size for p in self.parameters().values())


class Dense(Module):
    def __init__(self, n_in, n_out, activation="linear", rng=None, dtype=DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Parameter(uniform_fan_in(rng, (n_in, n_out), n_in, dtype))
        self.b = Parameter(np.zeros(n_out, dtype=dtype))
        self._activation = activation

    def __call__(self, x):
        return ops.dense(x, self.w, self.b, self._activation)


class Conv(Module):
    """Same-padded convolution over 2 or 3 spatial axes (channels last)."""

    def __init__(self, spatial, c_in, c_out, kernel=3, activation="linear", rng=None,
                 dtype=DEFAULT_DTYPE):
        if spatial not in (2, 3):
            raise ConfigurationError(f"only 2-D and 3-D convolutions exist, got {spatial}")
        if kernel % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (kernel,) * spatial + (c_in, c_out)
        self.w = Parameter(uniform_fan_in(rng, shape, kernel ** spatial * c_in, dtype))
        self.b = Parameter(np.zeros(c_out, dtype=dtype))
        self._spatial = spatial
        self._activation = activation

    def __call__(self, x):
        fn = ops.conv3d if self._spatial == 3 else ops.conv2d
        return fn(x, self.w, self.b, self._activation)


class MultiHeadAttention(Module):
    def __init__(self, d_model, heads, key_dim, rng=None, dtype=DEFAULT_DTYPE):
        if heads <= 0 or key_dim <= 0:
            raise ConfigurationError(f"heads and key_dim must be positive, got {heads}, {key_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        width = heads * key_dim
        self.wq = Parameter(uniform_fan_in(rng, (d_model, width), d_model, dtype))
        self.bq = Parameter(np.zeros(width, dtype=dtype))
        self.wk = Parameter(uniform_fan_in(rng, (d_model, width), d_model, dtype))
        self.bk = Parameter(np.zeros(width, dtype=dtype))
        self.wv = Parameter(uniform_fan_in(rng, (d_model, width), d_model, dtype))
        self.bv = Parameter(np.zeros(width, dtype=dtype))
        self.wo = Parameter(uniform_fan_in(rng, (width, d_model), width, dtype))
        self.bo = Parameter(np.zeros(d_model, dtype=dtype))
        self._heads = heads
        self._key_dim = key_dim

    def __call__(self, query, key, value, return_weights=False):
        return ops.multi_head_attention(query, key, value, self._heads, self._key_dim,
                                        vars(self), return_weights=return_weights)


class AttentionResidualBlock(Module):
    """``X + MHA(q=X, k=X_key, v=X_key)``; self-attention when X_key is X."""

    def __init__(self, d_model, heads, key_dim, rng=None, dtype=DEFAULT_DTYPE):
        self.mha = MultiHeadAttention(d_model, heads, key_dim, rng, dtype)

    def __call__(self, x, x_key=None):
        x_key = x if x_key is None else x_key
        return ops.add(x, self.mha(x, x_key, x_key))


class ConvResidualBlock(Module):
    """Stacked convolutions with leaky ReLU between them and an identity skip.

    ``widths`` lists the output channels of each conv; the last one must
    equal the input channel count so the skip addition is shape-preserving.
    """

    def __init__(self, spatial, channels, widths, kernel=3, rng=None, dtype=DEFAULT_DTYPE):
        if widths[-1] != channels:
            raise ConfigurationError(
                f"residual block must return {channels} channels, widths end in {widths[-1]}")
        convs = []
        c_in = channels
        for i, c_out in enumerate(widths):
            act = "linear" if i == len(widths) - 1 else "leaky_relu"
            convs.append(Conv(spatial, c_in, c_out, kernel, act, rng, dtype))
            c_in = c_out
        self.convs = convs

    def __call__(self, x):
        h = x
        for conv in self.convs:
            h = conv(h)
        return ops.add(x, h)
