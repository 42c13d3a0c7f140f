"""Binary dataset/checkpoint files and flat key=value configuration text.

All integers are little-endian u32 except the dataset seed (u64); arrays
are little-endian float32.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import FormatError

DATASET_MAGIC = b"EMEVDS01"
CHECKPOINT_MAGIC = b"EMEVCK01"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def dump_config(mapping):
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self):
        return struct.unpack("<f", self.take(4))[0]

    def text(self):
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: invalid UTF-8 at byte {self.pos}") from exc

    def array(self, count, dtype=_F32):
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).copy()

    def at_end(self):
        return self.pos == len(self.buf)


def _text(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc


def _write_bytes(path, data):
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


# datasets -------------------------------------------------------------------

def encode_dataset(ds):
    n, n_rb, n_r, n_t, _ = ds.h.shape
    head = DATASET_MAGIC + struct.pack("<5I", FORMAT_VERSION, n, n_rb, n_r, n_t)
    head += _text(ds.profile) + struct.pack("<Qf", ds.seed, ds.s_scale)
    return head + ds.h.astype(_F32).tobytes() + ds.labels.astype(np.uint8).tobytes()


def decode_dataset(buf, path="<bytes>"):
    r = _Reader(buf, path)
    if r.take(8) != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    n, n_rb, n_r, n_t = (r.u32() for _ in range(4))
    profile = r.text()
    seed = r.u64()
    s_scale = r.f32()
    body = n * n_rb * n_r * n_t * 2
    if len(buf) - r.pos != body * 4 + n:
        raise FormatError(f"{path}: payload is {len(buf) - r.pos} bytes, header implies {body * 4 + n}")
    h = r.array(body).reshape(n, n_rb, n_r, n_t, 2)
    labels = r.array(n, np.dtype(np.uint8))
    return Dataset(h, labels, profile, seed, s_scale)


def write_dataset(path, ds):
    data = encode_dataset(ds)
    _write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def read_dataset(path):
    return decode_dataset(_read_bytes(path), path)


# checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    """Config mapping, named float32 parameters and optional optimizer tensors."""

    config: dict
    params: dict
    optimizer: dict = field(default_factory=dict)


def _tensor_block(tensors):
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_F32)
        parts.append(_text(name))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _read_tensor_block(r):
    out = {}
    for _ in range(r.u32()):
        name = r.text()
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        out[name] = r.array(int(np.prod(dims, dtype=np.int64))).reshape(dims)
    return out


def encode_checkpoint(ckpt):
    head = CHECKPOINT_MAGIC + struct.pack("<I", FORMAT_VERSION) + _text(dump_config(ckpt.config))
    return head + _tensor_block(ckpt.params) + _tensor_block(ckpt.optimizer)


def decode_checkpoint(buf, path="<bytes>"):
    r = _Reader(buf, path)
    if r.take(8) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    config = parse_config(r.text())
    params = _read_tensor_block(r)
    optimizer = {} if r.at_end() else _read_tensor_block(r)
    if not r.at_end():
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return Checkpoint(config, params, optimizer)


def write_checkpoint(path, ckpt):
    _write_bytes(path, encode_checkpoint(ckpt))


def read_checkpoint(path):
    return decode_checkpoint(_read_bytes(path), path)
