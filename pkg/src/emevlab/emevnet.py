"""Dual-input attention autoencoder for (V, S) feedback and a full-CSI baseline.

Encoder: 3-D convs over V and 2-D convs over S, each flattened into a
dense feature vector; the V features attend to the S features (one
cross-attention residual block) and then to themselves (``depth - 1``
self blocks) before a linear projection to the codeword.  Decoder: two
dense branches each followed by convolutional residual blocks; the V
branch ends in tanh, the S branch is linear and rescaled by ``s_scale``.
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import ops
from .tensor.autograd import Tensor, no_grad
from .tensor.layers import AttentionResidualBlock, Conv, ConvResidualBlock, Dense, Module

KERNEL = 3


# overhead arithmetic ---------------------------------------------------------

def h_element_count(n_rb, n_t, n_r):
    """Real entries in a full channel tensor."""
    return 2 * n_rb * n_r * n_t


def codeword_length(beta_h, n_rb, n_t, n_r, return_flag=False):
    """Payload length ``floor(2 n_rb n_r n_t / beta_h)``.

    The channel-type id travels out of band so it is not counted.  With
    ``return_flag`` the result is ``(length, floored)`` where ``floored``
    tells whether the division was inexact.
    """
    if not beta_h > 0:
        raise ConfigurationError(f"compression ratio must be positive, got {beta_h}")
    total = h_element_count(n_rb, n_t, n_r)
    exact = total / beta_h
    length = math.floor(exact + 1e-9)
    if length < 1:
        raise ConfigurationError(f"beta_h={beta_h} leaves no payload for {total} entries")
    floored = abs(exact - length) > 1e-9
    return (length, floored) if return_flag else length


def emev_ratio(beta_h, n_rb, n_t, n_r):
    """Compression ratio relative to the (V, S) payload for the same codeword."""
    return n_rb * (2 * n_t ** 2 + n_r) / h_element_count(n_rb, n_t, n_r) * beta_h


def beta_from_length(l_eps, n_rb, n_t, n_r):
    return h_element_count(n_rb, n_t, n_r) / l_eps


# configuration ---------------------------------------------------------------

@dataclass
class EmevConfig:
    n_rb: int = 4
    n_t: int = 8
    n_r: int = 2
    l_xi_v: int = 128
    l_xi_s: int = 16
    l_eps: int = 16
    heads: int = 2
    key_dim: int = 3
    depth: int = 5
    d_model: int = 8
    res_blocks: int = 3
    enc_widths: tuple = (2, 8)
    res_widths_v: tuple = (2, 8, 2)
    res_widths_s: tuple = (2, 8, 1)
    s_scale: float = 1.0
    beta_h: float = 0.0
    w_v: float = 0.5
    w_s: float = 0.5

    def __post_init__(self):
        self.enc_widths = tuple(int(w) for w in self.enc_widths)
        self.res_widths_v = tuple(int(w) for w in self.res_widths_v)
        self.res_widths_s = tuple(int(w) for w in self.res_widths_s)
        self.validate()

    def validate(self):
        for name in ("n_rb", "n_t", "n_r", "l_xi_v", "l_xi_s", "l_eps", "heads", "key_dim",
                     "depth", "d_model"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.res_blocks < 0:
            raise ConfigurationError("res_blocks must be >= 0")
        if self.n_r > self.n_t:
            raise ConfigurationError(f"n_r={self.n_r} exceeds n_t={self.n_t}")
        if self.l_eps > self.l_xi_v:
            raise ConfigurationError(f"l_eps={self.l_eps} exceeds l_xi_v={self.l_xi_v}")
        for name in ("l_xi_v", "l_xi_s"):
            if getattr(self, name) % self.d_model:
                raise ConfigurationError(f"{name}={getattr(self, name)} is not a multiple of d_model={self.d_model}")
        if len(self.enc_widths) != 2:
            raise ConfigurationError(f"enc_widths needs two entries, got {self.enc_widths}")
        if self.res_widths_v[-1] != 2 or self.res_widths_s[-1] != 1:
            raise ConfigurationError("residual widths must end in 2 (V) and 1 (S) channels")
        if not self.s_scale > 0:
            raise ConfigurationError(f"s_scale must be positive, got {self.s_scale}")

    @property
    def dims(self):
        return self.n_rb, self.n_t, self.n_r

    def to_mapping(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = ",".join(str(x) for x in v) if isinstance(v, tuple) else repr(v)
        return out

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        """Build from string values (config file or checkpoint); unknown keys are ignored."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = str(mapping[f.name]).strip()
            try:
                if f.type is tuple or f.type == "tuple":
                    kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
                elif f.type is int or f.type == "int":
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
            except ValueError as exc:
                raise ConfigurationError(f"config key {f.name}: cannot parse {raw!r}") from exc
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def toy(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides):
        base = dict(n_rb=13, n_t=64, n_r=4, l_xi_v=512, l_xi_s=64, l_eps=416, beta_h=16.0)
        base.update(overrides)
        return cls(**base)


# network ----------------------------------------------------------------------

def _batch(x, single_ndim):
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
    if x.ndim == single_ndim:
        return x[None], True
    if x.ndim == single_ndim + 1:
        return x, False
    raise DimensionError(f"expected rank {single_ndim} or {single_ndim + 1}, got shape {x.shape}")


class EmevEncoder(Module):
    def __init__(self, cfg, rng):
        c1, c2 = cfg.enc_widths
        n_rb, n_t, n_r = cfg.dims
        self.conv3d_1 = Conv(3, 2, c1, KERNEL, "leaky_relu", rng)
        self.conv3d_2 = Conv(3, c1, c2, KERNEL, "leaky_relu", rng)
        self.fc1_v = Dense(n_rb * n_t * n_t * c2, cfg.l_xi_v, "relu", rng)
        self.conv2d_1 = Conv(2, 1, c1, KERNEL, "leaky_relu", rng)
        self.conv2d_2 = Conv(2, c1, c2, KERNEL, "leaky_relu", rng)
        self.fc1_s = Dense(n_rb * n_r * c2, cfg.l_xi_s, "relu", rng)
        self.attention = [AttentionResidualBlock(cfg.d_model, cfg.heads, cfg.key_dim, rng)
                          for _ in range(cfg.depth)]
        self.fc_codewords = Dense(cfg.l_xi_v, cfg.l_eps, "linear", rng)
        self._cfg = cfg
        self._trace = []

    def feature_extract(self, v, s):
        """v (B, n_rb, n_t, n_t, 2), s (B, n_rb, n_r) normalised -> (xi_v, xi_s)."""
        cfg = self._cfg
        b = v.shape[0]
        x = self.conv3d_2(self.conv3d_1(v))
        xi_v = self.fc1_v(ops.reshape(x, (b, -1)))
        y = ops.reshape(s, (b, cfg.n_rb, cfg.n_r, 1))
        y = self.conv2d_2(self.conv2d_1(y))
        xi_s = self.fc1_s(ops.reshape(y, (b, -1)))
        return xi_v, xi_s

    def transcode(self, xi_v, xi_s):
        cfg = self._cfg
        b = xi_v.shape[0]
        x = ops.reshape(xi_v, (b, cfg.l_xi_v // cfg.d_model, cfg.d_model))
        key = ops.reshape(xi_s, (b, cfg.l_xi_s // cfg.d_model, cfg.d_model))
        self._trace = []
        for i, block in enumerate(self.attention):
            if i == 0:
                x = block(x, key)
                self._trace.append("cross")
            else:
                x = block(x)
                self._trace.append("self")
        return self.fc_codewords(ops.reshape(x, (b, cfg.l_xi_v)))

    def __call__(self, v, s):
        return self.transcode(*self.feature_extract(v, s))


class EmevDecoder(Module):
    def __init__(self, cfg, rng):
        n_rb, n_t, n_r = cfg.dims
        self.fc2_v = Dense(cfg.l_eps, n_rb * n_t * n_t * 2, "linear", rng)
        self.res_v = [ConvResidualBlock(3, 2, cfg.res_widths_v, KERNEL, rng)
                      for _ in range(cfg.res_blocks)]
        self.conv3d_3 = Conv(3, 2, 2, KERNEL, "tanh", rng)
        self.fc2_s = Dense(cfg.l_eps, n_rb * n_r, "linear", rng)
        self.res_s = [ConvResidualBlock(2, 1, cfg.res_widths_s, KERNEL, rng)
                      for _ in range(cfg.res_blocks)]
        self.conv2d_3 = Conv(2, 1, 1, KERNEL, "linear", rng)
        self._cfg = cfg

    def __call__(self, eps):
        """eps (B, l_eps) -> (V_hat (B, n_rb, n_t, n_t, 2), S_hat normalised (B, n_rb, n_r))."""
        n_rb, n_t, n_r = self._cfg.dims
        b = eps.shape[0]
        x = ops.reshape(self.fc2_v(eps), (b, n_rb, n_t, n_t, 2))
        for block in self.res_v:
            x = block(x)
        v_hat = self.conv3d_3(x)
        y = ops.reshape(self.fc2_s(eps), (b, n_rb, n_r, 1))
        for block in self.res_s:
            y = block(y)
        s_hat = ops.reshape(self.conv2d_3(y), (b, n_rb, n_r))
        return v_hat, s_hat


class EmevNet(Module):
    """Encoder/decoder pair; parameter names are prefixed ``encoder.`` / ``decoder.``."""

    kind = "emev"

    def __init__(self, config, seed=0):
        config.validate()
        rng = np.random.default_rng(seed)
        self.encoder = EmevEncoder(config, rng)
        self.decoder = EmevDecoder(config, rng)
        self._config = config
        self.assign_names()

    @property
    def config(self):
        return self._config

    @property
    def block_trace(self):
        """Kinds of attention blocks run by the most recent encoder pass."""
        return list(self.encoder._trace)

    def forward(self, v, s_norm):
        return self.decoder(self.encoder(v, s_norm))

    def loss(self, v, s_norm):
        v_hat, s_hat = self.forward(Tensor(v), Tensor(s_norm))
        return ops.mse_joint_loss(v, v_hat, s_norm, s_hat, self._config.w_v, self._config.w_s)

    # numpy-facing inference -------------------------------------------------

    def _check_inputs(self, v, s):
        n_rb, n_t, n_r = self._config.dims
        if v.shape[1:] != (n_rb, n_t, n_t, 2):
            raise DimensionError(f"V has shape {v.shape[1:]}, model expects {(n_rb, n_t, n_t, 2)}")
        if s.shape[1:] != (n_rb, n_r):
            raise DimensionError(f"S has shape {s.shape[1:]}, model expects {(n_rb, n_r)}")

    def encode(self, v, s):
        """Codeword payloads for V (real-stacked) and de-normalised S."""
        v, single = _batch(v, 4)
        s, _ = _batch(s, 2)
        self._check_inputs(v, s)
        with no_grad():
            eps = self.encoder(Tensor(v), Tensor(s / np.float32(self._config.s_scale))).data
        return eps[0] if single else eps

    def decode(self, eps):
        """(V_hat real-stacked, S_hat de-normalised) from payloads."""
        eps, single = _batch(eps, 1)
        if eps.shape[1] != self._config.l_eps:
            raise DimensionError(f"payload length {eps.shape[1]} != l_eps {self._config.l_eps}")
        with no_grad():
            v_hat, s_hat = self.decoder(Tensor(eps))
        v_hat = v_hat.data
        s_hat = s_hat.data * np.float32(self._config.s_scale)
        return (v_hat[0], s_hat[0]) if single else (v_hat, s_hat)

    def reconstruct(self, v, s, h=None):
        return self.decode(self.encode(v, s))


class BaselineCodec(Module):
    """Full-CSI autoencoder: normalised H -> codeword -> H_hat.

    H is divided by ``h_scale`` (largest magnitude over the training split)
    so the tanh output head can cover it.
    """

    kind = "baseline"

    def __init__(self, config, seed=0, h_scale=1.0):
        config.validate()
        if not h_scale > 0:
            raise ConfigurationError(f"h_scale must be positive, got {h_scale}")
        rng = np.random.default_rng(seed)
        self.encoder = _BaselineEncoder(config, rng)
        self.decoder = _BaselineDecoder(config, rng)
        self._config = config
        self._h_scale = float(h_scale)
        self.assign_names()

    @property
    def config(self):
        return self._config

    @property
    def h_scale(self):
        return self._h_scale

    def forward(self, h_norm):
        return self.decoder(self.encoder(h_norm))

    def loss(self, h_norm):
        return ops.mse(self.forward(Tensor(h_norm)), h_norm)

    def encode(self, h):
        h, single = _batch(h, 4)
        n_rb, n_t, n_r = self._config.dims
        if h.shape[1:] != (n_rb, n_r, n_t, 2):
            raise DimensionError(f"H has shape {h.shape[1:]}, codec expects {(n_rb, n_r, n_t, 2)}")
        with no_grad():
            eps = self.encoder(Tensor(h / np.float32(self._h_scale))).data
        return eps[0] if single else eps

    def decode(self, eps):
        eps, single = _batch(eps, 1)
        if eps.shape[1] != self._config.l_eps:
            raise DimensionError(f"payload length {eps.shape[1]} != l_eps {self._config.l_eps}")
        with no_grad():
            h_hat = self.decoder(Tensor(eps)).data * np.float32(self._h_scale)
        return h_hat[0] if single else h_hat

    def reconstruct(self, v, s, h):
        from .svd import as_real, svd_transform
        d = svd_transform(self.decode(self.encode(h)))
        return as_real(d.v), d.s.astype(np.float32)


class _BaselineEncoder(Module):
    def __init__(self, cfg, rng):
        n_rb, n_t, n_r = cfg.dims
        c1 = cfg.enc_widths[0]
        self.conv = Conv(3, 2, c1, KERNEL, "leaky_relu", rng)
        self.fc = Dense(n_rb * n_r * n_t * c1, cfg.l_eps, "linear", rng)

    def __call__(self, h):
        b = h.shape[0]
        return self.fc(ops.reshape(self.conv(h), (b, -1)))


class _BaselineDecoder(Module):
    def __init__(self, cfg, rng):
        n_rb, n_t, n_r = cfg.dims
        self.fc = Dense(cfg.l_eps, n_rb * n_r * n_t * 2, "linear", rng)
        self.res = [ConvResidualBlock(3, 2, cfg.res_widths_v, KERNEL, rng)
                    for _ in range(cfg.res_blocks)]
        self.conv = Conv(3, 2, 2, KERNEL, "tanh", rng)
        self._shape = (n_rb, n_r, n_t, 2)

    def __call__(self, eps):
        x = ops.reshape(self.fc(eps), (eps.shape[0],) + self._shape)
        for block in self.res:
            x = block(x)
        return self.conv(x)


# complexity -------------------------------------------------------------------

class ComplexityRow(NamedTuple):
    layer: str
    params: int
    flops: int


def complexity_report(config, layers=None):
    """Per-layer parameter and FLOP counts from the closed-form table formulas.

    One row per executed layer instance: ``depth - 1`` self-attention rows
    and ``res_blocks`` residual rows per branch.  The formulas are taken as
    written, including the ones that do not match the implemented layer,
    such as 3^2 kernels for 3-D convs or an L_eps x L_eps codeword layer.  ``layers`` restricts the output to the
    given base layer names; an empty sequence gives an empty table.
    """
    n_rb, n_t, n_r = config.n_rb, config.n_t, config.n_r
    lv, ls, le = config.l_xi_v, config.l_xi_s, config.l_eps
    k2 = KERNEL ** 2
    vol_v = n_rb * n_t * n_t
    area_s = n_rb * n_r
    rows = [
        ("Conv3D_1", 2 * 2 * k2, (vol_v * 2) * (2 * k2)),
        ("Conv2D_1", 2 * 2 * k2, (area_s * 2) * (2 * k2)),
        ("Conv3D_2", 8 * 2 * k2, (vol_v * 8) * (2 * k2)),
        ("Conv2D_2", 8 * 2 * k2, (area_s * 8) * (2 * k2)),
        ("FCLayer_1(V)", vol_v * 8 * lv, 2 * vol_v * 8 * lv),
        ("FCLayer_1(S)", area_s * 8 * ls, 2 * area_s * 8 * ls),
        ("Attention_res(V,S)", 2 * (lv ** 2 + ls ** 2), 8 * (lv ** 2 + ls ** 2)),
    ]
    rows += [("Attention_res(V,V)", 2 * (lv ** 2 + lv ** 2), 8 * (lv ** 2 + lv ** 2))] * (config.depth - 1)
    rows += [
        ("FCLayer_codewords", le * le, 2 * le * le),
        ("FCLayer_2(V)", le * vol_v * 2, 2 * le * vol_v * 2),
        ("FCLayer_2(S)", le * area_s, 2 * le * n_rb * n_t),
    ]
    rows += [("Conv3D_res", (2 + 8 + 2) * 2 * k2, (vol_v * 12) * (12 * k2))] * config.res_blocks
    rows += [("Conv2D_res", (1 + 8 + 2) * 2 * k2, (area_s * 11) * (11 * k2))] * config.res_blocks
    rows += [
        ("Conv3D_3", 2 * 2 * k2, (vol_v * 2) * (2 * k2)),
        ("Conv2D_3", 1 * 2 * k2, (area_s * 1) * (2 * k2)),
    ]
    if config.depth < 1:
        rows = [r for r in rows if not r[0].startswith("Attention")]
    if layers is not None:
        wanted = set(layers)
        unknown = wanted - {r[0] for r in rows}
        if unknown:
            raise ConfigurationError(f"unknown layer names: {sorted(unknown)}")
        rows = [r for r in rows if r[0] in wanted]
    return [ComplexityRow(*r) for r in rows]


def complexity_totals(rows):
    return sum(r.params for r in rows), sum(r.flops for r in rows)
