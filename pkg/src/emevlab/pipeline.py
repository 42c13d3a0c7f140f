"""Training entry points shared by the CLI and the acceptance suite."""

import logging

import numpy as np

from .bundle import ModelBundle
from .channel_id import ChannelClassifier, classifier_features
from .emevnet import BaselineCodec, EmevConfig, EmevNet, codeword_length
from .errors import ConfigurationError, DimensionError
from .training import TrainConfig, train

log = logging.getLogger(__name__)


def emev_arrays(ds, idx, s_scale):
    v, s = ds.features()
    return v[idx], (s[idx] / s_scale).astype(np.float32)


def baseline_arrays(ds, idx, h_scale):
    return ((ds.h[idx] / np.float32(h_scale)).astype(np.float32),)


def classifier_arrays(ds, idx):
    _, s = ds.features()
    feats = classifier_features(ds.left_vectors()[idx], s[idx])
    return feats, ds.labels[idx].astype(np.int64)


def resolve_l_eps(config, beta_h=None, l_eps=None):
    """Return ``config`` with its payload length fixed by ``beta_h`` or ``l_eps``."""
    if beta_h is not None and l_eps is not None:
        raise ConfigurationError("give either beta_h or l_eps, not both")
    if beta_h is not None:
        length = codeword_length(beta_h, *config.dims)
        return EmevConfig(**{**vars(config), "l_eps": length, "beta_h": float(beta_h)})
    if l_eps is not None:
        return EmevConfig(**{**vars(config), "l_eps": int(l_eps), "beta_h": 0.0})
    return config


def _check_dims(ds, config):
    if ds.dims != config.dims:
        raise DimensionError(f"dataset dims {ds.dims} (n_rb, n_t, n_r) differ from config {config.dims}")


def _metadata(ds, seed, state):
    last = state.history[-1]
    return {
        "profile": ds.profile, "seed": seed, "epochs": state.epoch,
        "best_epoch": state.best_epoch, "final_train_loss": repr(last.train_loss),
        "final_val_loss": repr(last.val_loss), "best_val_loss": repr(state.best_val),
    }


def _resume_into(model, resume):
    if resume is None:
        return None
    if resume.state is None:
        raise ConfigurationError("checkpoint carries no training state to resume from")
    model.load_state_dict(resume.state.live_params)
    return resume.state


def train_emev(ds, config, seed, hyper=None, curve_path=None, resume=None, history=None):
    """Train EMEVNet on the dataset's train split with validation-based selection."""
    hyper = hyper or TrainConfig()
    if resume is not None:
        config = resume.config
    _check_dims(ds, config)
    if not ds.s_scale:
        ds.compute_s_scale()
    if resume is None:
        config = EmevConfig(**{**vars(config), "s_scale": float(ds.s_scale)})
    model = EmevNet(config, seed)
    state = _resume_into(model, resume)
    if state is not None and history:
        state.history = list(history)
    splits = ds.splits()
    state = train(model, emev_arrays(ds, splits["train"], config.s_scale),
                  emev_arrays(ds, splits["val"], config.s_scale), hyper, seed, state, curve_path)
    return ModelBundle(model, "emev", _metadata(ds, seed, state), hyper, state)


def h_scale_of(ds):
    train_idx = ds.splits()["train"]
    return float(np.abs(ds.h[train_idx]).max())


def train_baseline(ds, config, seed, hyper=None, curve_path=None, resume=None, history=None):
    """Train the full-CSI codec at the same payload length as ``config``."""
    hyper = hyper or TrainConfig()
    if resume is not None:
        config = resume.config
    _check_dims(ds, config)
    h_scale = (resume.model.h_scale if resume is not None else h_scale_of(ds))
    model = BaselineCodec(config, seed, h_scale=h_scale)
    state = _resume_into(model, resume)
    if state is not None and history:
        state.history = list(history)
    splits = ds.splits()
    state = train(model, baseline_arrays(ds, splits["train"], h_scale),
                  baseline_arrays(ds, splits["val"], h_scale), hyper, seed, state, curve_path)
    return ModelBundle(model, "baseline", _metadata(ds, seed, state), hyper, state)


def train_classifier(ds, seed, hyper=None, curve_path=None, resume=None, history=None, width=8):
    """Train the channel-type classifier on the dataset's labels."""
    hyper = hyper or TrainConfig()
    n_rb, _, n_r = ds.dims
    model = ChannelClassifier(n_r, width, seed, n_rb=n_rb)
    state = _resume_into(model, resume)
    if state is not None and history:
        state.history = list(history)
    splits = ds.splits()
    state = train(model, classifier_arrays(ds, splits["train"]),
                  classifier_arrays(ds, splits["val"]), hyper, seed, state, curve_path)
    return ModelBundle(model, "classifier", _metadata(ds, seed, state), hyper, state)


def classifier_accuracy(classifier, ds, idx):
    _, s = ds.features()
    ids, _ = classifier.classify_batch(ds.left_vectors()[idx], s[idx])
    return float(np.mean(ids == ds.labels[idx]))
