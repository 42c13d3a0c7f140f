"""In-memory channel datasets, deterministic splits and mixing."""

import os
from dataclasses import dataclass, field

import numpy as np

from .channel import PROFILE_NAMES, generate_channel
from .errors import ConfigurationError, DimensionError
from .svd import as_complex, as_real, svd_transform

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
MIX_NAME = "mix"


def split_indices(n, seed):
    """70/15/15 train/val/test index arrays from a seeded permutation."""
    if n < 1:
        raise ConfigurationError("cannot split an empty dataset")
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(n)
    n_train = int(round(n * SPLIT_FRACTIONS[0]))
    n_val = int(round(n * SPLIT_FRACTIONS[1]))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def thread_count():
    """Worker count from ``EMEVLAB_NUM_THREADS`` (default 1)."""
    raw = os.environ.get("EMEVLAB_NUM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"EMEVLAB_NUM_THREADS must be an integer, got {raw!r}")


@dataclass
class Dataset:
    """Channel samples stored as float32 (count, n_rb, n_r, n_t, 2) plus labels.

    ``s_scale`` is the largest singular value over the training split; 0
    means it has not been computed yet.
    """

    h: np.ndarray
    labels: np.ndarray
    profile: str
    seed: int
    s_scale: float = 0.0
    _features: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.h = np.ascontiguousarray(self.h, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.h.ndim != 5 or self.h.shape[-1] != 2:
            raise DimensionError(f"dataset tensor must be (count, n_rb, n_r, n_t, 2), got {self.h.shape}")
        if self.labels.shape != (self.h.shape[0],):
            raise DimensionError(f"{self.labels.shape[0]} labels for {self.h.shape[0]} samples")

    def __len__(self):
        return self.h.shape[0]

    @property
    def dims(self):
        _, n_rb, n_r, n_t, _ = self.h.shape
        return n_rb, n_t, n_r

    def complex(self):
        return as_complex(self.h)

    def splits(self):
        return split_indices(len(self), self.seed)

    def _decompose(self):
        if self._features is None:
            d = svd_transform(self.complex())
            self._features = (as_real(d.v), d.s, d.u)
        return self._features

    def features(self):
        """Cached (V real (count, n_rb, n_t, n_t, 2) float32, S (count, n_rb, n_r) float64)."""
        return self._decompose()[:2]

    def left_vectors(self):
        """Cached U (count, n_rb, n_r, n_r) complex."""
        return self._decompose()[2]

    def compute_s_scale(self):
        _, s = self.features()
        train = self.splits()["train"]
        self.s_scale = float(np.float32(s[train].max()))
        return self.s_scale

    def subset(self, idx):
        sub = Dataset(self.h[idx], self.labels[idx], self.profile, self.seed, self.s_scale)
        if self._features is not None:
            sub._features = tuple(f[idx] for f in self._features)
        return sub


def sample_seed(master, index):
    return [int(master), int(index)]


def make_dataset(profile, count, seed, path=None):
    """Generate ``count`` samples of ``profile`` and optionally write them to ``path``."""
    if count < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {count}")
    h = np.empty((count, profile.n_rb, profile.n_r, profile.n_t, 2), dtype=np.float32)
    for i in range(count):
        h[i] = as_real(generate_channel(profile, sample_seed(seed, i)))
    label = profile.label if profile.label >= 0 else 255
    ds = Dataset(h, np.full(count, label, dtype=np.uint8), profile.name, seed)
    ds.compute_s_scale()
    if path is not None:
        from .formats import write_dataset
        write_dataset(path, ds)
    return ds


def mix_datasets(datasets, seed):
    """Concatenate datasets keeping per-sample labels; the split uses ``seed``."""
    if not datasets:
        raise ConfigurationError("nothing to mix")
    dims = {d.h.shape[1:] for d in datasets}
    if len(dims) != 1:
        raise DimensionError(f"cannot mix datasets of different dims: {sorted(dims)}")
    ds = Dataset(np.concatenate([d.h for d in datasets]),
                 np.concatenate([d.labels for d in datasets]), MIX_NAME, seed)
    ds.compute_s_scale()
    return ds


def label_name(label):
    return PROFILE_NAMES[label] if 0 <= label < len(PROFILE_NAMES) else "unknown"
