"""Trained models packaged with their config, metadata and optimizer state."""

from dataclasses import dataclass, field

import numpy as np

from .channel_id import ChannelClassifier
from .emevnet import BaselineCodec, EmevConfig, EmevNet
from .errors import ConfigurationError, FormatError
from .formats import Checkpoint, read_checkpoint, write_checkpoint
from .tensor.optim import AdamState
from .training import TrainConfig, TrainState

KINDS = ("emev", "baseline", "classifier")


@dataclass
class ModelBundle:
    """A model plus the provenance needed to reload or resume it.

    ``metadata`` holds free-form strings (profile label or "mix", seed,
    epochs run, final losses); ``state`` is present only after training.
    """

    model: object
    kind: str
    metadata: dict = field(default_factory=dict)
    hyper: TrainConfig = None
    state: TrainState = None

    @property
    def config(self):
        return self.model.config

    def to_checkpoint(self):
        if self.kind == "classifier":
            cfg = {k: str(v) for k, v in self.model.config.items() if v is not None}
        else:
            cfg = self.model.config.to_mapping()
        if self.kind == "baseline":
            cfg["h_scale"] = repr(self.model.h_scale)
        config = {"model": self.kind, **cfg}
        config.update({f"meta.{k}": str(v) for k, v in self.metadata.items()})
        optimizer = {}
        if self.hyper is not None:
            config.update(self.hyper.to_mapping())
        if self.state is not None and self.state.adam is not None:
            config.update(self.state.to_mapping())
            for name in sorted(self.state.adam.m):
                optimizer[f"adam.m/{name}"] = self.state.adam.m[name]
                optimizer[f"adam.v/{name}"] = self.state.adam.v[name]
            live = self.state.live_params or self.model.state_dict()
            for name in sorted(live):
                optimizer[f"live/{name}"] = live[name]
        params = {name: p.data for name, p in self.model.named_parameters()}
        return Checkpoint(config, params, optimizer)

    def save(self, path):
        write_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, ckpt):
        cfg = ckpt.config
        kind = cfg.get("model")
        if kind not in KINDS:
            raise FormatError(f"checkpoint names unknown model kind {kind!r}")
        if kind == "classifier":
            n_rb = cfg.get("n_rb")
            model = ChannelClassifier(int(cfg["n_r"]), int(cfg.get("width", 8)),
                                      n_rb=int(n_rb) if n_rb not in (None, "None") else None)
        else:
            config = EmevConfig.from_mapping(cfg)
            if kind == "emev":
                model = EmevNet(config)
            else:
                model = BaselineCodec(config, h_scale=float(cfg["h_scale"]))
        try:
            model.load_state_dict(ckpt.params)
        except ConfigurationError as exc:
            raise FormatError(f"checkpoint parameters do not fit the model: {exc}") from exc
        metadata = {k[5:]: v for k, v in cfg.items() if k.startswith("meta.")}
        hyper = TrainConfig.from_mapping(cfg) if any(k.startswith("train.") for k in cfg) else None
        state = None
        if "state.epoch" in cfg:
            state = TrainState.from_mapping(cfg)
            names = [n for n, _ in model.named_parameters()]
            adam = AdamState(lr=state.lr, step=int(cfg["state.adam_step"]))
            try:
                for n in names:
                    adam.m[n] = ckpt.optimizer[f"adam.m/{n}"].copy()
                    adam.v[n] = ckpt.optimizer[f"adam.v/{n}"].copy()
                state.live_params = {n: ckpt.optimizer[f"live/{n}"].copy() for n in names}
            except KeyError as exc:
                raise FormatError(f"checkpoint optimizer section lacks {exc.args[0]}") from exc
            state.adam = adam
            state.best_params = {n: np.array(a, copy=True) for n, a in ckpt.params.items()}
        return cls(model, kind, metadata, hyper, state)

    @classmethod
    def load(cls, path):
        return cls.from_checkpoint(read_checkpoint(path))
