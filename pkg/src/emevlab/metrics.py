"""Reconstruction metrics and evaluation report rows."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .emevnet import beta_from_length, emev_ratio
from .errors import ConfigurationError, DimensionError, OverheadMismatchError, UsageError
from .svd import as_complex

PERFECT = "-inf"

REPORT_COLUMNS = ("profile", "model_kind", "l_eps", "beta_h", "beta_emev", "nmse_v_db",
                  "nmse_s_db", "rho_v", "rho_s", "count", "perfect_v", "perfect_s")


class UndefinedReferenceError(DimensionError):
    """The reference tensor has zero energy so a normalised error is undefined."""


def nmse_db(x, x_hat, per_sample=True):
    """``10 log10 E[||x - x_hat||^2 / ||x||^2]``.

    With ``per_sample`` the leading axis indexes samples and the ratio is
    averaged over them; otherwise the whole array is one sample.  Complex
    inputs are measured through their modulus, which equals the stacked
    real/imag norm.  Exact reconstruction returns ``-inf``.
    """
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"nmse: shapes differ, {x.shape} vs {x_hat.shape}")
    if not per_sample or x.ndim == 0:
        x, x_hat = x.reshape(1, -1), x_hat.reshape(1, -1)
    axes = tuple(range(1, x.ndim))
    ref = np.sum(np.abs(x.astype(np.complex128 if np.iscomplexobj(x) else np.float64)) ** 2, axis=axes)
    if np.any(ref == 0):
        raise UndefinedReferenceError("nmse: reference sample with zero norm")
    err = np.sum(np.abs(x - x_hat) ** 2, axis=axes, dtype=np.float64)
    ratio = float(np.mean(err / ref))
    return -math.inf if ratio == 0 else 10.0 * math.log10(ratio)


def cosine_similarity(x, x_hat, axis=-1, return_skipped=False):
    """Mean over vectors of ``|<x, x_hat>| / (||x|| ||x_hat||)``.

    Vectors run along ``axis``; for eigenmatrices pass ``axis=-2`` so each
    column is one vector.  Vectors where either side is zero are skipped
    and counted.  The modulus makes the value phase-invariant and in [0, 1].
    """
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"cosine similarity: shapes differ, {x.shape} vs {x_hat.shape}")
    x = np.moveaxis(x, axis, -1).astype(np.complex128)
    x_hat = np.moveaxis(x_hat, axis, -1).astype(np.complex128)
    inner = np.abs(np.sum(np.conj(x) * x_hat, axis=-1))
    norms = np.linalg.norm(x, axis=-1) * np.linalg.norm(x_hat, axis=-1)
    valid = norms > 0
    skipped = int(np.count_nonzero(~valid))
    if not np.any(valid):
        raise UndefinedReferenceError("cosine similarity: every vector pair has a zero side")
    rho = float(np.mean(np.minimum(inner[valid] / norms[valid], 1.0)))
    return (rho, skipped) if return_skipped else rho


@dataclass
class EvalRow:
    profile: str
    model_kind: str
    l_eps: int
    beta_h: float
    beta_emev: float
    nmse_v_db: float
    nmse_s_db: float
    rho_v: float
    rho_s: float
    count: int

    @property
    def perfect_v(self):
        return self.nmse_v_db == -math.inf

    @property
    def perfect_s(self):
        return self.nmse_s_db == -math.inf

    def as_record(self):
        rec = asdict(self)
        rec["perfect_v"] = self.perfect_v
        rec["perfect_s"] = self.perfect_s
        return rec


class IdentityCodec:
    """Debug codec returning its inputs unchanged."""

    kind = "identity"

    def __init__(self, n_rb, n_t, n_r):
        self.dims = (n_rb, n_t, n_r)

    def reconstruct(self, v, s, h=None, u=None):
        return np.array(v, copy=True), np.array(s, copy=True)


def _model_dims(codec):
    return codec.dims if isinstance(codec, IdentityCodec) else codec.config.dims


def evaluate(codec, dataset, indices=None, model_kind=None, profile=None, batch_size=256):
    """Metrics of ``codec`` on ``dataset`` samples ``indices`` (default: test split)."""
    if dataset.dims != _model_dims(codec):
        raise DimensionError(f"dataset dims {dataset.dims} differ from model dims {_model_dims(codec)}")
    if indices is None:
        indices = dataset.splits()["test"]
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ConfigurationError("nothing to evaluate: empty sample set")
    v_all, s_all = dataset.features()
    need_u = getattr(codec, "kind", None) == "routed"
    u_all = None
    if need_u:
        from .svd import svd_transform
        u_all = svd_transform(dataset.complex()[indices]).u
    v_hat = np.empty((indices.size,) + v_all.shape[1:], dtype=np.float32)
    s_hat = np.empty((indices.size,) + s_all.shape[1:], dtype=np.float32)
    for start in range(0, indices.size, batch_size):
        sl = slice(start, start + batch_size)
        idx = indices[sl]
        kwargs = {"u": u_all[sl]} if need_u else {}
        vh, sh = codec.reconstruct(v_all[idx], s_all[idx].astype(np.float32), dataset.h[idx], **kwargs)
        v_hat[sl], s_hat[sl] = vh, sh

    v = as_complex(v_all[indices])
    v_rec = as_complex(v_hat)
    s = s_all[indices].astype(np.float32).astype(np.float64)
    s_rec = s_hat.astype(np.float64)
    n_rb, n_t, n_r = dataset.dims
    if isinstance(codec, IdentityCodec):
        l_eps, beta_h = 0, 1.0
    else:
        l_eps = codec.config.l_eps
        beta_h = codec.config.beta_h or beta_from_length(l_eps, n_rb, n_t, n_r)
    return EvalRow(
        profile=profile or dataset.profile,
        model_kind=model_kind or getattr(codec, "kind", "model"),
        l_eps=int(l_eps),
        beta_h=float(beta_h),
        beta_emev=float(emev_ratio(beta_h, n_rb, n_t, n_r)),
        nmse_v_db=nmse_db(v, v_rec),
        nmse_s_db=nmse_db(s, s_rec),
        rho_v=cosine_similarity(v, v_rec, axis=-2),
        rho_s=cosine_similarity(s, s_rec, axis=-1),
        count=int(indices.size),
    )


# report files -----------------------------------------------------------------

def manifest_line(command, args, seeds=()):
    parts = [f"emevlab {__version__}", f"cmd={command}"]
    parts += [f"{k}={v}" for k, v in args]
    if seeds:
        parts.append("seeds=" + ",".join(str(s) for s in seeds))
    return "# " + " ".join(parts)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if value == -math.inf:
            return PERFECT
        return repr(value)
    return str(value)


def rows_to_csv(rows, manifest, columns=REPORT_COLUMNS):
    buf = io.StringIO()
    buf.write(manifest + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        rec = row.as_record() if hasattr(row, "as_record") else row
        writer.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


def rows_to_json(rows, manifest, columns=REPORT_COLUMNS):
    records = []
    for row in rows:
        rec = row.as_record() if hasattr(row, "as_record") else row
        records.append({c: (PERFECT if rec[c] == -math.inf else rec[c]) if isinstance(rec[c], float)
                        else rec[c] for c in columns})
    return json.dumps({"manifest": manifest.lstrip("# "), "rows": records}, indent=2) + "\n"


def write_report(path, rows, manifest, columns=REPORT_COLUMNS, json_mirror=True):
    """Write the CSV report and, unless disabled, a JSON mirror next to it."""
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, manifest, columns))
    if json_mirror:
        stem = str(path)[:-4] if str(path).endswith(".csv") else str(path)
        with open(stem + ".json", "w") as fh:
            fh.write(rows_to_json(rows, manifest, columns))


def read_report(path):
    """Parse a CSV report back into dicts of strings (manifest line skipped)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise UsageError(f"{path}: missing manifest line")
        return list(csv.DictReader(fh))


# comparison ---------------------------------------------------------------------

COMPARE_METRICS = ("nmse_v_db", "nmse_s_db", "rho_v", "rho_s")


def compare_rows(specialized, mixed=(), baseline=()):
    """Side-by-side rows per (profile, l_eps) with N_sp - N_mix and N_sp - N_csi deltas.

    Every specialized row needs counterparts with the same payload length;
    otherwise the comparison would not be at equal feedback overhead.
    """
    def index(rows):
        out = {}
        for r in rows:
            out.setdefault(r.profile, {})[r.l_eps] = r
        return out

    mix_idx = index(mixed)
    base_idx = index(baseline)
    mixed_lengths = {r.l_eps for r in mixed}
    base_lengths = {r.l_eps for r in baseline}
    out = []
    for sp in specialized:
        if mixed and sp.l_eps not in mixed_lengths:
            raise OverheadMismatchError(
                f"no mixed model at l_eps={sp.l_eps} (have {sorted(mixed_lengths)})")
        if baseline and sp.l_eps not in base_lengths:
            raise OverheadMismatchError(
                f"no baseline model at l_eps={sp.l_eps} (have {sorted(base_lengths)})")
        rec = {"profile": sp.profile, "l_eps": sp.l_eps, "beta_h": sp.beta_h,
               "beta_emev": sp.beta_emev, "count": sp.count}
        for m in COMPARE_METRICS:
            rec[f"sp_{m}"] = getattr(sp, m)
        for tag, idx in (("mix", mix_idx), ("csi", base_idx)):
            other = idx.get(sp.profile, {}).get(sp.l_eps)
            for m in COMPARE_METRICS:
                val = getattr(other, m) if other is not None else math.nan
                rec[f"{tag}_{m}"] = val
                rec[f"delta_{tag}_{m}"] = getattr(sp, m) - val if other is not None else math.nan
        out.append(rec)
    if (mixed or baseline) and not specialized:
        raise ConfigurationError("comparison needs at least one specialized model")
    return out


def compare_columns():
    cols = ["profile", "l_eps", "beta_h", "beta_emev", "count"]
    for tag in ("sp", "mix", "csi"):
        cols += [f"{tag}_{m}" for m in COMPARE_METRICS]
    for tag in ("mix", "csi"):
        cols += [f"delta_{tag}_{m}" for m in COMPARE_METRICS]
    return tuple(cols)
