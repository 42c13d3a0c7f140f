"""Mini-batch Adam training with plateau LR decay and early stopping."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .tensor.autograd import no_grad
from .tensor.optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 500
    patience: int = 50
    lr_patience: int = 20
    lr_decay: float = 0.7
    batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError(f"invalid training hyper-parameters {self}")
        if self.patience < 1 or self.lr_patience < 1 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError(f"invalid schedule settings {self}")

    def to_mapping(self):
        return {f"train.{k}": repr(v) for k, v in vars(self).items()}

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        kwargs = {}
        for key, typ in (("lr", float), ("max_epochs", int), ("patience", int),
                         ("lr_patience", int), ("lr_decay", float), ("batch_size", int)):
            for name in (key, f"train.{key}"):
                if name in mapping:
                    kwargs[key] = typ(mapping[name])
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    epoch: int = 0
    lr: float = 1e-3
    best_val: float = math.inf
    best_epoch: int = 0
    since_best: int = 0
    stagnant: int = 0
    stopped_early: bool = False
    adam: AdamState = None
    best_params: dict = None
    live_params: dict = None
    history: list = field(default_factory=list)

    def to_mapping(self):
        return {
            "state.epoch": str(self.epoch), "state.lr": repr(self.lr),
            "state.best_val": repr(self.best_val), "state.best_epoch": str(self.best_epoch),
            "state.since_best": str(self.since_best), "state.stagnant": str(self.stagnant),
            "state.stopped_early": str(int(self.stopped_early)),
            "state.adam_step": str(self.adam.step if self.adam else 0),
        }

    @classmethod
    def from_mapping(cls, mapping):
        return cls(
            epoch=int(mapping["state.epoch"]), lr=float(mapping["state.lr"]),
            best_val=float(mapping["state.best_val"]), best_epoch=int(mapping["state.best_epoch"]),
            since_best=int(mapping["state.since_best"]), stagnant=int(mapping["state.stagnant"]),
            stopped_early=bool(int(mapping["state.stopped_early"])),
        )


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate_loss(model, arrays, batch_size):
    """Sample-weighted mean loss without recording a graph."""
    n = arrays[0].shape[0]
    total = 0.0
    with no_grad():
        for idx in _batches(n, batch_size, np.arange(n)):
            total += float(model.loss(*(a[idx] for a in arrays)).item()) * idx.size
    return total / n


def train(model, train_arrays, val_arrays, hyper, seed, state=None, curve_path=None,
          on_epoch=None):
    """Fit ``model`` and leave it holding the best-validation parameters.

    Parameters
    ----------
    model : Module with ``loss(*arrays) -> Tensor``
    train_arrays, val_arrays : tuple of arrays sharing the leading sample axis
    hyper : TrainConfig
    seed : int
        Drives the per-epoch shuffles.
    state : TrainState, optional
        Resume point; the model must already hold the live parameters.
    curve_path : path, optional
        CSV with one row per epoch (epoch 0 is the untrained evaluation).

    Returns
    -------
    TrainState
        Final schedule state; ``history`` lists every epoch.  The live
        (last-step) parameters are in ``state.live_params`` for resuming.
    """
    params = model.parameters()
    n_train = train_arrays[0].shape[0]
    if n_train == 0 or val_arrays[0].shape[0] == 0:
        raise ConfigurationError("training and validation splits must be non-empty")

    if state is None:
        state = TrainState(lr=hyper.lr)
        state.adam = AdamState.for_parameters(params, lr=hyper.lr)
        train0 = evaluate_loss(model, train_arrays, hyper.batch_size)
        val0 = evaluate_loss(model, val_arrays, hyper.batch_size)
        state.best_val, state.best_epoch = val0, 0
        state.best_params = model.state_dict()
        state.history.append(EpochRecord(0, train0, val0, state.lr))
    elif state.adam is None or state.best_params is None:
        raise ConfigurationError("resume state lacks optimizer moments or best parameters")

    while state.epoch < hyper.max_epochs and not state.stopped_early:
        epoch = state.epoch + 1
        state.adam.lr = state.lr
        order = np.random.default_rng([int(seed), epoch]).permutation(n_train)
        total = 0.0
        for idx in _batches(n_train, hyper.batch_size, order):
            loss = model.loss(*(a[idx] for a in train_arrays))
            value = float(loss.item())
            if not math.isfinite(value):
                raise NumericalError(f"training diverged at epoch {epoch}", where=epoch)
            loss.backward()
            adam_step(params, state.adam)
            total += value * idx.size
        train_loss = total / n_train
        val_loss = evaluate_loss(model, val_arrays, hyper.batch_size)
        if not math.isfinite(val_loss):
            raise NumericalError(f"validation loss diverged at epoch {epoch}", where=epoch)
        state.history.append(EpochRecord(epoch, train_loss, val_loss, state.lr))
        state.epoch = epoch

        if val_loss < state.best_val:
            state.best_val, state.best_epoch = val_loss, epoch
            state.best_params = model.state_dict()
            state.since_best = 0
            state.stagnant = 0
        else:
            state.since_best += 1
            state.stagnant += 1
            if state.stagnant >= hyper.lr_patience:
                state.lr *= hyper.lr_decay
                state.stagnant = 0
                log.info("epoch %d: learning rate decayed to %g", epoch, state.lr)
            if state.since_best >= hyper.patience:
                state.stopped_early = True
                log.info("epoch %d: early stop, best epoch %d", epoch, state.best_epoch)
        log.debug("epoch %d train %.6g val %.6g lr %g", epoch, train_loss, val_loss, state.lr)
        if on_epoch is not None:
            on_epoch(state)

    state.live_params = model.state_dict()
    model.load_state_dict(state.best_params)
    if curve_path is not None:
        write_curve(curve_path, state.history)
    return state


def write_curve(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.lr)])


def read_curve(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                            float(r["lr"])) for r in reader]
