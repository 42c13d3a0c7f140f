# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: same-padded convolution and complex one-sided Jacobi.

Every routine here has a numpy twin in ``_pykernels`` with the same
signature; ``emevlab.kernels`` picks one at import time.
"""

import numpy as np
from cython cimport floating
from libc.math cimport sqrt, fabs, copysign


cdef inline void _tap_range(Py_ssize_t o, Py_ssize_t k, Py_ssize_t size,
                            Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # taps t with 0 <= o + t - k//2 < size
    cdef Py_ssize_t p = k // 2
    lo[0] = p - o if p - o > 0 else 0
    hi[0] = size - o + p if size - o + p < k else k


def conv_forward(floating[:, :, :, :, ::1] x, floating[:, :, :, :, ::1] w,
                 floating[::1] b):
    """Same-padded cross-correlation, channels-last, 3 spatial axes."""
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ci = x.shape[4]
    cdef Py_ssize_t KD = w.shape[0], KH = w.shape[1], KW = w.shape[2], Co = w.shape[4]
    cdef Py_ssize_t pd = KD // 2, ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t n, d, h, ww, kd, kh, kw, ci, co
    cdef Py_ssize_t d0, d1, h0, h1, w0, w1
    cdef Py_ssize_t sxw = Ci, sxh = W * Ci, sxd = H * W * Ci, sxn = D * H * W * Ci
    cdef Py_ssize_t sww = Ci * Co, swh = KW * Ci * Co, swd = KH * KW * Ci * Co
    cdef floating* xb
    cdef floating* wb
    cdef floating* op
    cdef double xv
    if floating is float:
        out = np.empty((N, D, H, W, Co), dtype=np.float32)
    else:
        out = np.empty((N, D, H, W, Co), dtype=np.float64)
    cdef floating[:, :, :, :, ::1] o = out
    acc_arr = np.empty(Co, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    if N * D * H * W == 0:
        return out
    cdef floating* X = &x[0, 0, 0, 0, 0]
    cdef floating* Wt = &w[0, 0, 0, 0, 0]
    cdef floating* O = &o[0, 0, 0, 0, 0]
    with nogil:
        for n in range(N):
            for d in range(D):
                _tap_range(d, KD, D, &d0, &d1)
                for h in range(H):
                    _tap_range(h, KH, H, &h0, &h1)
                    for ww in range(W):
                        _tap_range(ww, KW, W, &w0, &w1)
                        for co in range(Co):
                            acc[co] = b[co]
                        for kd in range(d0, d1):
                            for kh in range(h0, h1):
                                for kw in range(w0, w1):
                                    xb = X + n * sxn + (d + kd - pd) * sxd + (h + kh - ph) * sxh + (ww + kw - pw) * sxw
                                    wb = Wt + kd * swd + kh * swh + kw * sww
                                    for ci in range(Ci):
                                        xv = xb[ci]
                                        for co in range(Co):
                                            acc[co] += xv * wb[ci * Co + co]
                        op = O + (((n * D + d) * H + h) * W + ww) * Co
                        for co in range(Co):
                            op[co] = <floating>acc[co]
    return out


def conv_backward(floating[:, :, :, :, ::1] x, floating[:, :, :, :, ::1] w,
                  floating[:, :, :, :, ::1] gout):
    """Gradients of :func:`conv_forward` w.r.t. input, filters and bias."""
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ci = x.shape[4]
    cdef Py_ssize_t KD = w.shape[0], KH = w.shape[1], KW = w.shape[2], Co = w.shape[4]
    cdef Py_ssize_t pd = KD // 2, ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t n, d, h, ww, kd, kh, kw, ci, co, xoff, woff
    cdef Py_ssize_t d0, d1, h0, h1, w0, w1
    cdef Py_ssize_t sxw = Ci, sxh = W * Ci, sxd = H * W * Ci, sxn = D * H * W * Ci
    cdef Py_ssize_t sww = Ci * Co, swh = KW * Ci * Co, swd = KH * KW * Ci * Co
    cdef double xv, s
    cdef floating* gp
    gx_arr = np.zeros((N, D, H, W, Ci), dtype=np.float64)
    gw_arr = np.zeros((KD, KH, KW, Ci, Co), dtype=np.float64)
    gb_arr = np.zeros(Co, dtype=np.float64)
    dt = np.float32 if floating is float else np.float64
    if N * D * H * W == 0:
        return gx_arr.astype(dt), gw_arr.astype(dt), gb_arr.astype(dt)
    cdef double[::1] gx = gx_arr.reshape(-1)
    cdef double[::1] gw = gw_arr.reshape(-1)
    cdef double[::1] gb = gb_arr
    cdef floating* X = &x[0, 0, 0, 0, 0]
    cdef floating* Wt = &w[0, 0, 0, 0, 0]
    cdef floating* G = &gout[0, 0, 0, 0, 0]
    cdef double* GX = &gx[0]
    cdef double* GW = &gw[0]
    with nogil:
        for n in range(N):
            for d in range(D):
                _tap_range(d, KD, D, &d0, &d1)
                for h in range(H):
                    _tap_range(h, KH, H, &h0, &h1)
                    for ww in range(W):
                        _tap_range(ww, KW, W, &w0, &w1)
                        gp = G + (((n * D + d) * H + h) * W + ww) * Co
                        for co in range(Co):
                            gb[co] += gp[co]
                        for kd in range(d0, d1):
                            for kh in range(h0, h1):
                                for kw in range(w0, w1):
                                    xoff = n * sxn + (d + kd - pd) * sxd + (h + kh - ph) * sxh + (ww + kw - pw) * sxw
                                    woff = kd * swd + kh * swh + kw * sww
                                    for ci in range(Ci):
                                        xv = X[xoff + ci]
                                        s = 0.0
                                        for co in range(Co):
                                            s += gp[co] * Wt[woff + ci * Co + co]
                                            GW[woff + ci * Co + co] += xv * gp[co]
                                        GX[xoff + ci] += s
    return gx_arr.astype(dt), gw_arr.astype(dt), gb_arr.astype(dt)


def jacobi_rotate(double complex[:, :, ::1] at, double complex[:, :, ::1] jt,
                  double tol, int max_sweeps):
    """Orthogonalise the rows of each ``at[b]`` by complex Jacobi rotations.

    ``at[b, p, :]`` is column p of the matrix being orthogonalised and
    ``jt[b, p, :]`` column p of the accumulated unitary.  Both are updated
    in place.  Returns the sweep count per matrix, or -1 if ``max_sweeps``
    passed without convergence.
    """
    cdef Py_ssize_t B = at.shape[0], K = at.shape[1], M = at.shape[2]
    cdef Py_ssize_t KJ = jt.shape[2]
    cdef Py_ssize_t bi, p, q, i
    cdef int sweep
    cdef bint rotated
    cdef double alpha, beta, gabs, zeta, t, c, s, re, im
    cdef double complex gamma, e, ap, aq
    sweeps_arr = np.full(B, -1, dtype=np.int64)
    cdef long long[::1] sweeps = sweeps_arr
    with nogil:
        for bi in range(B):
            for sweep in range(1, max_sweeps + 1):
                rotated = False
                for p in range(K - 1):
                    for q in range(p + 1, K):
                        alpha = 0.0
                        beta = 0.0
                        re = 0.0
                        im = 0.0
                        for i in range(M):
                            ap = at[bi, p, i]
                            aq = at[bi, q, i]
                            alpha += ap.real * ap.real + ap.imag * ap.imag
                            beta += aq.real * aq.real + aq.imag * aq.imag
                            # conj(ap) * aq
                            re += ap.real * aq.real + ap.imag * aq.imag
                            im += ap.real * aq.imag - ap.imag * aq.real
                        if alpha == 0.0 or beta == 0.0:
                            continue
                        gabs = sqrt(re * re + im * im)
                        if gabs <= tol * sqrt(alpha * beta):
                            continue
                        rotated = True
                        zeta = (beta - alpha) / (2.0 * gabs)
                        t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                        c = 1.0 / sqrt(1.0 + t * t)
                        s = c * t
                        e = re / gabs + 1j * (im / gabs)
                        for i in range(M):
                            ap = at[bi, p, i]
                            aq = at[bi, q, i]
                            at[bi, p, i] = c * ap - s * e.conjugate() * aq
                            at[bi, q, i] = s * e * ap + c * aq
                        for i in range(KJ):
                            ap = jt[bi, p, i]
                            aq = jt[bi, q, i]
                            jt[bi, p, i] = c * ap - s * e.conjugate() * aq
                            jt[bi, q, i] = s * e * ap + c * aq
                if not rotated:
                    sweeps[bi] = sweep
                    break
    return sweeps_arr


def complete_basis(double complex[:, :, ::1] qt, long long[::1] rank):
    """Fill rows ``rank[b]:`` of each ``qt[b]`` with an orthonormal completion.

    Rows ``:rank[b]`` must already be orthonormal.  Candidates are the
    canonical basis vectors in index order, orthogonalised twice by
    modified Gram-Schmidt; a candidate is kept when its residual norm
    exceeds ``0.5 / sqrt(n)``, which guarantees the sweep never runs dry.
    """
    cdef Py_ssize_t B = qt.shape[0], n = qt.shape[1]
    cdef Py_ssize_t bi, k, cand, j, i, rep
    cdef double thr = 0.5 / sqrt(<double>n), nrm
    cdef double complex coef
    work_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] v = work_arr
    with nogil:
        for bi in range(B):
            k = rank[bi]
            cand = 0
            while k < n and cand < n:
                for i in range(n):
                    v[i] = 0.0
                v[cand] = 1.0
                for rep in range(2):
                    for j in range(k):
                        coef = 0.0
                        for i in range(n):
                            coef = coef + qt[bi, j, i].conjugate() * v[i]
                        for i in range(n):
                            v[i] = v[i] - coef * qt[bi, j, i]
                nrm = 0.0
                for i in range(n):
                    nrm += v[i].real * v[i].real + v[i].imag * v[i].imag
                nrm = sqrt(nrm)
                if nrm > thr:
                    for i in range(n):
                        qt[bi, k, i] = v[i] / nrm
                    k += 1
                cand += 1
    return None
