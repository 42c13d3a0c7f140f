"""Per-RB SVD of channel tensors with a fixed phase convention.

The decomposition runs one-sided complex Jacobi on ``H^H``: rotating the
n_r columns of ``H^H`` until they are mutually orthogonal yields
``H^H U = V Sigma``, so the accumulated rotation is ``U`` and the
normalised columns are the range part of ``V``.  The remaining
``n_t - n_r`` columns of ``V`` are a Gram-Schmidt completion seeded from
the canonical basis.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, NumericalError

JACOBI_TOL = 1e-10
MAX_SWEEPS = 60
NULL_RTOL = 1e-12


@dataclass
class EigenDecomposition:
    """Per-RB triplet with ``H = U diag(S) V^H``.

    Attributes
    ----------
    u : complex array (..., n_r, n_r)
    s : real array (..., n_r), descending
    v : complex array (..., n_t, n_t)
    degenerate : bool array (...,), True where the slice was all zeros
    sweeps : int array (...,), Jacobi sweeps used per slice
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    degenerate: np.ndarray
    sweeps: np.ndarray

    def reconstruct(self):
        n_r = self.s.shape[-1]
        return (self.u * self.s[..., None, :]) @ np.conj(np.swapaxes(self.v[..., :, :n_r], -1, -2))


def as_complex(h):
    """Accept complex arrays or real arrays with a trailing (re, im) axis."""
    h = np.asarray(h)
    if np.iscomplexobj(h):
        return h.astype(np.complex128, copy=False)
    if h.shape[-1:] != (2,):
        raise DimensionError(f"real channel tensor needs a trailing re/im axis, got {h.shape}")
    return h[..., 0].astype(np.float64) + 1j * h[..., 1].astype(np.float64)


def as_real(h, dtype=np.float32):
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=-1).astype(dtype)


def svd_transform(h):
    """Decompose every trailing (n_r, n_t) slice of ``h``.

    Parameters
    ----------
    h : array_like
        Complex (..., n_r, n_t) or real (..., n_r, n_t, 2).

    Returns
    -------
    EigenDecomposition

    Raises
    ------
    NumericalError
        If a slice does not converge within the sweep cap; ``where`` holds
        its index in the flattened leading axes (the RB index for a single
        channel tensor).
    """
    h = as_complex(h)
    if h.ndim < 2:
        raise DimensionError(f"svd_transform needs at least a matrix, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericalError("svd_transform: non-finite channel entries")
    lead = h.shape[:-2]
    n_r, n_t = h.shape[-2:]
    if n_r > n_t:
        raise DimensionError(f"svd_transform expects n_r <= n_t, got {n_r} x {n_t}")
    mats = h.reshape(-1, n_r, n_t)
    b = mats.shape[0]

    at = np.ascontiguousarray(np.conj(mats))
    jt = np.tile(np.eye(n_r, dtype=np.complex128), (b, 1, 1))
    sweeps = kernels.jacobi_rotate(at, jt, JACOBI_TOL, MAX_SWEEPS)
    failed = np.flatnonzero(sweeps < 0)
    if failed.size:
        raise NumericalError(
            f"Jacobi SVD did not converge within {MAX_SWEEPS} sweeps at slice {failed[0]}",
            where=int(failed[0]))

    sigma = np.linalg.norm(at, axis=-1)
    order = np.argsort(-sigma, axis=-1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=-1)
    at = np.take_along_axis(at, order[..., None], axis=1)
    jt = np.take_along_axis(jt, order[..., None], axis=1)

    smax = sigma[:, :1]
    live = (sigma > NULL_RTOL * smax) & (smax > 0)
    rank = live.sum(axis=-1).astype(np.int64)

    u = np.swapaxes(jt, -1, -2).copy()
    # rows of vt are columns of V; live columns are ordered first since sigma is sorted
    vt = np.zeros((b, n_t, n_t), dtype=np.complex128)
    safe = np.where(live, sigma, 1.0)
    vt[:, :n_r, :] = np.where(live[..., None], at / safe[..., None], 0.0)

    # phase convention: largest-magnitude entry of each U column real and >= 0
    idx = np.argmax(np.abs(u), axis=-2)
    pivot = np.take_along_axis(u, idx[:, None, :], axis=-2)[:, 0, :]
    mag = np.abs(pivot)
    phase = np.where(mag > 0, np.conj(pivot) / np.where(mag > 0, mag, 1.0), 1.0)
    u *= phase[:, None, :]
    vt[:, :n_r, :] *= phase[..., None]

    vt = np.ascontiguousarray(vt)
    kernels.complete_basis(vt, rank)
    v = np.swapaxes(vt, -1, -2)
    sigma = np.where(live, sigma, 0.0)
    return EigenDecomposition(
        u=u.reshape(lead + (n_r, n_r)),
        s=sigma.reshape(lead + (n_r,)),
        v=np.ascontiguousarray(v).reshape(lead + (n_t, n_t)),
        degenerate=(smax[:, 0] == 0).reshape(lead),
        sweeps=sweeps.reshape(lead),
    )


def reconstruction_residual(d, h):
    """Relative Frobenius residual per slice; 0 for all-zero slices (see ``d.degenerate``)."""
    h = as_complex(h)
    if h.shape[:-2] != d.s.shape[:-1] or h.shape[-2] != d.u.shape[-1] or h.shape[-1] != d.v.shape[-1]:
        raise DimensionError(f"decomposition shapes do not match channel {h.shape}")
    err = np.linalg.norm(h - d.reconstruct(), axis=(-2, -1))
    ref = np.linalg.norm(h, axis=(-2, -1))
    return np.where(ref > 0, err / np.where(ref > 0, ref, 1.0), 0.0)


def unitarity_residual(m):
    """max |M^H M - I| per matrix."""
    m = np.asarray(m)
    eye = np.eye(m.shape[-1])
    return np.abs(np.conj(np.swapaxes(m, -1, -2)) @ m - eye).max(axis=(-2, -1))


def precode(v, x):
    """Transmit precoding ``x_t = V x`` for one RB."""
    v, x = np.asarray(v), np.asarray(x)
    if v.ndim != 2 or v.shape[0] != v.shape[1] or x.shape[-1:] != (v.shape[1],):
        raise DimensionError(f"precode: V {v.shape} incompatible with x {x.shape}")
    return v @ x


def combine(u, y):
    """Receiver combining ``U^H y`` for one RB."""
    u, y = np.asarray(u), np.asarray(y)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or y.shape[-1:] != (u.shape[0],):
        raise DimensionError(f"combine: U {u.shape} incompatible with y {y.shape}")
    return np.conj(u).T @ y
