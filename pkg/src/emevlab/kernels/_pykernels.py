"""Pure numpy implementations of the compiled kernels.

Signatures and in-place semantics mirror ``_ckernels.pyx``.  Results agree
with the compiled versions to rounding, not bit for bit.
"""

import math

import numpy as np


def _taps(w):
    kd, kh, kw = w.shape[:3]
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                yield a, b, c


def _pad(x, w):
    pd, ph, pw = (k // 2 for k in w.shape[:3])
    return np.pad(x, ((0, 0), (pd, pd), (ph, ph), (pw, pw), (0, 0)))


def conv_forward(x, w, b):
    n, d, h, wd, _ = x.shape
    xp = _pad(x, w)
    out = np.empty((n, d, h, wd, w.shape[4]), dtype=x.dtype)
    out[...] = b
    for a, bb, c in _taps(w):
        out += xp[:, a:a + d, bb:bb + h, c:c + wd, :] @ w[a, bb, c]
    return out


def conv_backward(x, w, gout):
    n, d, h, wd, ci = x.shape
    co = w.shape[4]
    xp = _pad(x, w)
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    g2 = gout.reshape(-1, co)
    for a, bb, c in _taps(w):
        patch = xp[:, a:a + d, bb:bb + h, c:c + wd, :]
        gw[a, bb, c] = patch.reshape(-1, ci).T @ g2
        gxp[:, a:a + d, bb:bb + h, c:c + wd, :] += gout @ w[a, bb, c].T
    pd, ph, pw = (k // 2 for k in w.shape[:3])
    gx = np.ascontiguousarray(gxp[:, pd:pd + d, ph:ph + h, pw:pw + wd, :])
    gb = gout.sum(axis=(0, 1, 2, 3))
    return gx, gw, gb


def jacobi_rotate(at, jt, tol, max_sweeps):
    sweeps = np.full(at.shape[0], -1, dtype=np.int64)
    k = at.shape[1]
    for bi in range(at.shape[0]):
        a = at[bi]
        j = jt[bi]
        for sweep in range(1, max_sweeps + 1):
            rotated = False
            for p in range(k - 1):
                for q in range(p + 1, k):
                    alpha = float(np.vdot(a[p], a[p]).real)
                    beta = float(np.vdot(a[q], a[q]).real)
                    if alpha == 0.0 or beta == 0.0:
                        continue
                    gamma = complex(np.vdot(a[p], a[q]))
                    gabs = abs(gamma)
                    if gabs <= tol * math.sqrt(alpha * beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gabs)
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = c * t
                    e = gamma / gabs
                    for m in (a, j):
                        mp = m[p].copy()
                        m[p] = c * mp - s * e.conjugate() * m[q]
                        m[q] = s * e * mp + c * m[q]
            if not rotated:
                sweeps[bi] = sweep
                break
    return sweeps


def complete_basis(qt, rank):
    n = qt.shape[1]
    thr = 0.5 / math.sqrt(n)
    for bi in range(qt.shape[0]):
        q = qt[bi]
        k = int(rank[bi])
        cand = 0
        while k < n and cand < n:
            v = np.zeros(n, dtype=np.complex128)
            v[cand] = 1.0
            for _ in range(2):
                for row in range(k):
                    v -= np.vdot(q[row], v) * q[row]
            nrm = np.linalg.norm(v)
            if nrm > thr:
                q[k] = v / nrm
                k += 1
            cand += 1
    return None
