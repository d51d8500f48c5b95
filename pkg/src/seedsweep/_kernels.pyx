# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; one-for-one mirror of ``_kernels_py`` (contracts there).

The coordinate-descent loops are plain C; the Cholesky goes through LAPACK's
``dpotrf`` via SciPy's exported symbols.  Symmetric buffers follow the
lower-triangle-valid convention: a C-ordered lower triangle is what LAPACK
sees as a Fortran-ordered upper triangle, hence the ``uplo='U'`` calls.
"""

import numpy as np

from libc.math cimport exp, fabs, log, sqrt
from libc.stdint cimport int64_t, uint8_t
from scipy.linalg.cython_lapack cimport dpotrf

BACKEND_NAME = "compiled"


cdef inline double _soft(double z, double gamma) noexcept nogil:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def soft_threshold(double z, double gamma):
    return _soft(z, gamma)


def lasso_cd(double[:, ::1] gram, double[::1] xty, double[::1] beta,
             const uint8_t[::1] penalized, double lam, double tol, int max_sweeps):
    cdef Py_ssize_t k = gram.shape[0]
    q_arr = np.asarray(gram) @ np.asarray(beta)
    cdef double[::1] q = q_arr
    cdef Py_ssize_t i, j, sweep
    cdef double gjj, bj, zj, new, delta, ad, max_delta
    cdef int done = 0
    cdef int sweeps = 0
    cdef bint converged = 0
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            max_delta = 0.0
            for j in range(k):
                gjj = gram[j, j]
                bj = beta[j]
                zj = xty[j] - q[j] + gjj * bj
                if penalized[j]:
                    new = _soft(zj, lam) / gjj
                else:
                    new = zj / gjj
                delta = new - bj
                if delta != 0.0:
                    beta[j] = new
                    for i in range(k):
                        q[i] += gram[j, i] * delta
                ad = fabs(delta)
                if ad > max_delta:
                    max_delta = ad
            sweeps = sweep
            if max_delta < tol:
                converged = 1
                break
    return sweeps, bool(converged)


cdef double _block_norm_root(double* ut, double* d, Py_ssize_t pg,
                             double thr, double tol) noexcept nogil:
    """Root of phi(t) = ||beta(t)|| - t; see the fallback for the math."""
    cdef double unorm = 0.0, dmax = 0.0
    cdef Py_ssize_t i
    for i in range(pg):
        unorm += ut[i] * ut[i]
        if d[i] > dmax:
            dmax = d[i]
    unorm = sqrt(unorm)
    cdef double t
    if dmax > 0.0:
        t = (unorm - thr) / dmax
    else:
        t = unorm / thr
    if t <= 0.0:
        t = unorm / (thr if thr > 1e-300 else 1e-300)
    cdef double lo = 0.0, hi = -1.0  # hi < 0 means "unset"
    cdef double den, s, phi1, f, dphi1, fp, step, t_new, acc
    cdef int it
    for it in range(200):
        phi1 = 0.0
        acc = 0.0
        for i in range(pg):
            den = d[i] * t + thr
            s = ut[i] * t / den
            phi1 += s * s
            acc += ut[i] * ut[i] * t / (den * den * den)
        phi1 = sqrt(phi1)
        f = phi1 - t
        if fabs(f) < tol:
            return t
        if f > 0.0:
            lo = t
        else:
            hi = t
        if phi1 > 0.0:
            dphi1 = thr / phi1 * acc
        else:
            dphi1 = 0.0
        fp = dphi1 - 1.0
        if fp != 0.0:
            step = f / fp
        else:
            step = -f
        t_new = t - step
        if t_new <= lo or (hi >= 0.0 and t_new >= hi):
            if hi >= 0.0:
                t_new = 0.5 * (lo + hi)
            else:
                t_new = 2.0 * t + 1.0
        t = t_new
    return t


def group_cd(double[:, ::1] gram, double[::1] xty, double[::1] beta,
             const int64_t[::1] free_idx,
             const int64_t[::1] grp_ptr, const int64_t[::1] grp_idx,
             const double[::1] grp_weight,
             const double[::1] eig_val, const double[::1] eig_vec,
             double lam, double tol, int max_sweeps, double newton_tol=1e-9):
    cdef Py_ssize_t k = gram.shape[0]
    cdef Py_ssize_t n_groups = grp_ptr.shape[0] - 1
    cdef Py_ssize_t n_free = free_idx.shape[0]
    q_arr = np.asarray(gram) @ np.asarray(beta)
    cdef double[::1] q = q_arr

    cdef Py_ssize_t max_pg = 0, g
    for g in range(n_groups):
        if grp_ptr[g + 1] - grp_ptr[g] > max_pg:
            max_pg = grp_ptr[g + 1] - grp_ptr[g]
    scratch = np.zeros(4 * max_pg if max_pg else 1, dtype=np.float64)
    cdef double[::1] work = scratch
    vec_off_arr = np.zeros(n_groups if n_groups else 1, dtype=np.int64)
    cdef int64_t[::1] vec_off = vec_off_arr
    cdef Py_ssize_t off = 0
    for g in range(n_groups):
        vec_off[g] = off
        off += (grp_ptr[g + 1] - grp_ptr[g]) ** 2

    cdef Py_ssize_t i, j, a, b, sweep, start, pg
    cdef double gjj, bj, new, delta, ad, max_delta, thr, unorm, t, acc
    cdef double* u
    cdef double* ut
    cdef double* dvals
    cdef double* bnew
    cdef int sweeps = 0
    cdef bint converged = 0
    with nogil:
        u = &work[0]
        for sweep in range(1, max_sweeps + 1):
            max_delta = 0.0
            for a in range(n_free):
                j = free_idx[a]
                gjj = gram[j, j]
                bj = beta[j]
                new = (xty[j] - q[j] + gjj * bj) / gjj
                delta = new - bj
                if delta != 0.0:
                    beta[j] = new
                    for i in range(k):
                        q[i] += gram[j, i] * delta
                ad = fabs(delta)
                if ad > max_delta:
                    max_delta = ad
            for g in range(n_groups):
                start = grp_ptr[g]
                pg = grp_ptr[g + 1] - start
                thr = lam * grp_weight[g]
                ut = u + max_pg
                dvals = u + 2 * max_pg
                bnew = u + 3 * max_pg
                # u = xty_g - q_g + A_g b_g
                for a in range(pg):
                    acc = xty[grp_idx[start + a]] - q[grp_idx[start + a]]
                    for b in range(pg):
                        acc += gram[grp_idx[start + a], grp_idx[start + b]] * beta[grp_idx[start + b]]
                    u[a] = acc
                unorm = 0.0
                for a in range(pg):
                    unorm += u[a] * u[a]
                unorm = sqrt(unorm)
                if unorm <= thr:
                    for a in range(pg):
                        bnew[a] = 0.0
                else:
                    for a in range(pg):
                        dvals[a] = eig_val[start + a]
                        acc = 0.0
                        for b in range(pg):
                            # eigenvector matrix is row-major pg x pg; column a is eigvec a
                            acc += eig_vec[vec_off[g] + b * pg + a] * u[b]
                        ut[a] = acc
                    t = _block_norm_root(ut, dvals, pg, thr, newton_tol)
                    for a in range(pg):
                        ut[a] = ut[a] * t / (dvals[a] * t + thr)
                    for a in range(pg):
                        acc = 0.0
                        for b in range(pg):
                            acc += eig_vec[vec_off[g] + a * pg + b] * ut[b]
                        bnew[a] = acc
                ad = 0.0
                for a in range(pg):
                    delta = bnew[a] - beta[grp_idx[start + a]]
                    dvals[a] = delta  # reuse as delta buffer
                    if fabs(delta) > ad:
                        ad = fabs(delta)
                if ad > 0.0:
                    for a in range(pg):
                        j = grp_idx[start + a]
                        beta[j] = bnew[a]
                        delta = dvals[a]
                        if delta != 0.0:
                            for i in range(k):
                                q[i] += gram[j, i] * delta
                if ad > max_delta:
                    max_delta = ad
            sweeps = sweep
            if max_delta < tol:
                converged = 1
                break
    return sweeps, bool(converged)


def exp_neg_axpy_lower(const double[:, ::1] S, const double[:, ::1] D,
                       double delta, double[:, ::1] out):
    cdef Py_ssize_t n = S.shape[0]
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(i + 1):
                out[i, j] = exp(-(S[i, j] + delta * D[i, j]))


def shift_chol_logdet_lower(const double[:, ::1] K, double lam, double[:, ::1] V,
                            double boost=0.0):
    cdef int n = K.shape[0]
    cdef int info = 0
    cdef int lda = n
    cdef Py_ssize_t i, j
    cdef double logdet = 0.0
    with nogil:
        for i in range(n):
            for j in range(i):
                V[i, j] = lam * K[i, j]
            V[i, i] = 1.0 + boost + lam * K[i, i]
        # C-ordered lower triangle == Fortran-ordered upper triangle
        dpotrf("U", &n, &V[0, 0], &lda, &info)
    if info != 0:
        return int(info), 0.0
    with nogil:
        for i in range(n):
            logdet += log(V[i, i])
    return 0, 2.0 * logdet
