"""Channel-type classifier over (|U|, S) and the codec switch it drives."""

import logging

import numpy as np

from .channel import PROFILE_NAMES
from .errors import ConfigurationError, DimensionError
from .tensor import ops
from .tensor.autograd import Tensor, no_grad
from .tensor.layers import Conv, Dense, Module

log = logging.getLogger(__name__)

UNKNOWN = -1
N_CLASSES = len(PROFILE_NAMES)


def classifier_features(u, s):
    """Stack |U| columns and max-normalised S into (..., n_rb, n_r, n_r + 1) maps.

    Magnitudes are used because the phase of U depends on the decomposition
    convention.  Slices whose S is all zero keep zero features.
    """
    u = np.asarray(u)
    s = np.asarray(s, dtype=np.float64)
    if u.shape[-1] != u.shape[-2] or s.shape != u.shape[:-1]:
        raise DimensionError(f"classifier inputs: U {u.shape} and S {s.shape} disagree")
    peak = s.reshape(s.shape[:-2] + (-1,)).max(axis=-1) if s.ndim >= 2 else s.max()
    peak = np.asarray(peak)[..., None, None]
    s_norm = np.where(peak > 0, s / np.where(peak > 0, peak, 1.0), 0.0)
    return np.concatenate([np.abs(u), s_norm[..., None]], axis=-1).astype(np.float32)


class ChannelClassifier(Module):
    """Two 2-D convs, global average pooling and a dense softmax layer."""

    kind = "classifier"

    def __init__(self, n_r, width=8, seed=0, n_rb=None):
        rng = np.random.default_rng(seed)
        self.conv1 = Conv(2, n_r + 1, width, 3, "leaky_relu", rng)
        self.conv2 = Conv(2, width, width, 3, "leaky_relu", rng)
        self.head = Dense(width, N_CLASSES, "linear", rng)
        self._n_r = n_r
        self._n_rb = n_rb
        self._width = width
        self.assign_names()

    @property
    def config(self):
        return {"n_r": self._n_r, "width": self._width, "n_rb": self._n_rb}

    def logits(self, feats):
        x = self.conv2(self.conv1(feats))
        return self.head(ops.mean(x, axis=(1, 2)))

    def loss(self, feats, labels):
        return ops.cross_entropy(self.logits(Tensor(feats)), labels)

    def probabilities(self, feats):
        feats = np.asarray(feats, dtype=np.float32)
        if feats.shape[-1] != self._n_r + 1 or feats.shape[-2] != self._n_r:
            raise DimensionError(f"classifier expects (..., n_rb, {self._n_r}, {self._n_r + 1}), got {feats.shape}")
        with no_grad():
            return ops.softmax(self.logits(Tensor(feats)), axis=-1).data.astype(np.float64)

    def classify(self, u, s):
        """Return ``(channel_id, probabilities)`` for one sample (U (n_rb, n_r, n_r), S (n_rb, n_r)).

        An all-zero input yields ``UNKNOWN`` with a uniform probability vector.
        """
        u, s = np.asarray(u), np.asarray(s)
        if u.ndim != 3 or s.ndim != 2:
            raise DimensionError(f"classify takes one sample, got U {u.shape}, S {s.shape}")
        if not np.any(s):
            return UNKNOWN, np.full(N_CLASSES, 1.0 / N_CLASSES)
        probs = self.probabilities(classifier_features(u, s)[None])[0]
        return int(np.argmax(probs)), probs

    def classify_batch(self, u, s):
        feats = classifier_features(u, s)
        probs = self.probabilities(feats)
        ids = np.argmax(probs, axis=-1)
        empty = ~np.any(np.asarray(s).reshape(len(ids), -1), axis=-1)
        ids[empty] = UNKNOWN
        probs[empty] = 1.0 / N_CLASSES
        return ids, probs


def _profile_key(channel_id):
    if isinstance(channel_id, str):
        return channel_id
    if 0 <= channel_id < N_CLASSES:
        return PROFILE_NAMES[channel_id]
    return None


class CodecRegistry:
    """Immutable map from profile name to a trained codec, with a mixed fallback."""

    def __init__(self, entries, fallback):
        if fallback is None:
            raise ConfigurationError("codec registry needs a fallback codec")
        self._entries = dict(entries)
        self._fallback = fallback
        lengths = {name: c.config.l_eps for name, c in self._entries.items()}
        lengths["fallback"] = fallback.config.l_eps
        if len(set(lengths.values())) != 1:
            raise ConfigurationError(f"registered codecs disagree on payload length: {lengths}")
        dims = {c.config.dims for c in self._entries.values()} | {fallback.config.dims}
        if len(dims) != 1:
            raise ConfigurationError(f"registered codecs disagree on dims: {sorted(dims)}")
        unknown = set(self._entries) - set(PROFILE_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown profile names in registry: {sorted(unknown)}")

    @property
    def l_eps(self):
        return self._fallback.config.l_eps

    @property
    def fallback(self):
        return self._fallback

    def names(self):
        return sorted(self._entries)

    def lookup(self, channel_id):
        key = _profile_key(channel_id)
        return self._entries.get(key, self._fallback), key in self._entries


def select_codec(channel_id, registry):
    """``(encode, decode)`` for the channel type, or the fallback pair when unregistered."""
    if registry is None:
        raise ConfigurationError("no codec registry configured")
    codec, hit = registry.lookup(channel_id)
    log.info("channel id %s -> %s codec", channel_id, "specialized" if hit else "fallback")
    return codec.encode, codec.decode


class RoutedCodec:
    """Per-sample classify-then-switch wrapper with the codec interface used by evaluation."""

    kind = "routed"

    def __init__(self, classifier, registry):
        self.classifier = classifier
        self.registry = registry
        self.config = registry.fallback.config

    def route(self, u, s):
        ids, _ = self.classifier.classify_batch(u, s)
        return ids

    def reconstruct(self, v, s, h, u=None):
        if u is None:
            raise ConfigurationError("routed reconstruction needs U for classification")
        ids = self.route(u, s)
        v_out = np.empty_like(np.asarray(v, dtype=np.float32))
        s_out = np.empty(np.shape(s), dtype=np.float32)
        for cid in np.unique(ids):
            idx = np.flatnonzero(ids == cid)
            encode, decode = select_codec(int(cid), self.registry)
            v_hat, s_hat = decode(encode(v[idx], s[idx]))
            v_out[idx], s_out[idx] = v_hat, s_hat
        return v_out, s_out
