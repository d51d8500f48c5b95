"""Pure-NumPy implementations of the hot kernels.

This is the fallback backend selected when the compiled extension is not
available (or when ``SEEDSWEEP_BACKEND=python`` forces it).  The compiled
module in ``_kernels.pyx`` mirrors these routines one for one; both sides
must implement identical arithmetic so results agree to rounding error.

Array contracts shared by both backends:

* coordinate descent works on the Gram formulation ``G = D'D/n``,
  ``c = D'y/n`` of the standardized design, with ``beta`` updated in place;
* the BKMR helpers treat symmetric matrices as *lower-triangle valid*: only
  ``M[i, j]`` with ``j <= i`` is guaranteed meaningful.  The fallback happens
  to fill both triangles, the compiled backend does not.
"""

import numpy as np
from scipy.linalg import get_lapack_funcs

_dpotrf = get_lapack_funcs("potrf", dtype=np.float64)

BACKEND_NAME = "python"


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lasso_cd(gram, xty, beta, penalized, lam, tol, max_sweeps):
    """Cyclic coordinate descent for the partially penalized lasso.

    Minimizes ``0.5 b'Gb - c'b + lam * sum_j penalized_j |b_j|``.  Returns
    ``(sweeps, converged)``; ``beta`` is updated in place.  Convergence is
    max absolute coefficient change per sweep below ``tol``.
    """
    k = gram.shape[0]
    q = gram @ beta  # running G @ beta
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(k):
            gjj = gram[j, j]
            bj = beta[j]
            zj = xty[j] - q[j] + gjj * bj
            if penalized[j]:
                new = soft_threshold(zj, lam) / gjj
            else:
                new = zj / gjj
            delta = new - bj
            if delta != 0.0:
                beta[j] = new
                q += gram[j] * delta  # gram is symmetric: row j == column j
            if abs(delta) > max_delta:
                max_delta = abs(delta)
        if max_delta < tol:
            return sweeps, True
    return sweeps, False


def _block_norm_root(ut, d, thr, tol):
    """Solve t = ||beta(t)|| for the group-lasso block subproblem.

    ``beta(t)_i = ut_i * t / (d_i * t + thr)`` in the block eigenbasis.  The
    root of phi(t) = ||beta(t)|| - t is unique and positive whenever
    ``||ut|| > thr``.  Safeguarded Newton; ``tol`` is the residual target.
    """
    unorm = float(np.sqrt((ut * ut).sum()))
    dmax = float(d.max())
    t = (unorm - thr) / dmax if dmax > 0.0 else unorm / thr
    if t <= 0.0:
        t = unorm / max(thr, 1e-300)
    lo, hi = 0.0, np.inf
    for _ in range(200):
        den = d * t + thr
        s = ut * t / den
        phi1 = float(np.sqrt((s * s).sum()))
        f = phi1 - t
        if abs(f) < tol:
            return t
        if f > 0.0:
            lo = t
        else:
            hi = t
        dphi1 = (thr / phi1) * float((ut * ut * t / den**3).sum()) if phi1 > 0 else 0.0
        fp = dphi1 - 1.0
        step = f / fp if fp != 0.0 else -f
        t_new = t - step
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + (hi if np.isfinite(hi) else 2.0 * t + 1.0))
        t = t_new
    return t


def group_cd(
    gram,
    xty,
    beta,
    free_idx,
    grp_ptr,
    grp_idx,
    grp_weight,
    eig_val,
    eig_vec,
    lam,
    tol,
    max_sweeps,
    newton_tol=1e-9,
):
    """Block coordinate descent for the partially penalized group lasso.

    Free (unpenalized) coordinates get exact single-coordinate solves; each
    penalized group gets the exact block solve through its precomputed
    eigendecomposition (``eig_val`` / ``eig_vec`` hold the concatenated
    per-group eigenvalues and row-major eigenvector matrices).  Returns
    ``(sweeps, converged)``; ``beta`` updated in place, zero blocks exact.
    """
    n_groups = len(grp_ptr) - 1
    q = gram @ beta
    vec_off = np.zeros(n_groups, dtype=np.int64)
    off = 0
    for g in range(n_groups):
        pg = grp_ptr[g + 1] - grp_ptr[g]
        vec_off[g] = off
        off += pg * pg
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in free_idx:
            gjj = gram[j, j]
            bj = beta[j]
            new = (xty[j] - q[j] + gjj * bj) / gjj
            delta = new - bj
            if delta != 0.0:
                beta[j] = new
                q += gram[j] * delta
            if abs(delta) > max_delta:
                max_delta = abs(delta)
        for g in range(n_groups):
            idx = grp_idx[grp_ptr[g] : grp_ptr[g + 1]]
            pg = idx.size
            thr = lam * grp_weight[g]
            A = gram[np.ix_(idx, idx)]
            bg = beta[idx]
            u = xty[idx] - q[idx] + A @ bg
            unorm = float(np.sqrt((u * u).sum()))
            if unorm <= thr:
                new = np.zeros(pg)
            else:
                d = eig_val[grp_ptr[g] : grp_ptr[g + 1]]
                V = eig_vec[vec_off[g] : vec_off[g] + pg * pg].reshape(pg, pg)
                ut = V.T @ u
                t = _block_norm_root(ut, d, thr, newton_tol)
                new = V @ (ut * t / (d * t + thr))
            delta = new - bg
            ad = float(np.max(np.abs(delta))) if pg else 0.0
            if ad > 0.0:
                beta[idx] = new
                q += gram[:, idx] @ delta
            if ad > max_delta:
                max_delta = ad
        if max_delta < tol:
            return sweeps, True
    return sweeps, False


def exp_neg_axpy_lower(S, D, delta, out):
    """out = exp(-(S + delta * D)), at least on the lower triangle."""
    np.multiply(D, -delta, out=out)
    out -= S
    np.exp(out, out=out)


def shift_chol_logdet_lower(K, lam, V, boost=0.0):
    """V = chol((1 + boost) I + lam * K) in the lower triangle.

    Returns ``(info, logdet)``; ``info != 0`` signals a failed factorization
    (not positive definite) and the caller decides on jitter/retry policy,
    passing the escalating jitter through ``boost``.
    """
    n = V.shape[0]
    np.multiply(K, lam, out=V)
    V.flat[:: n + 1] += 1.0 + boost
    # dpotrf copies C-ordered input to Fortran order, so write the factor back
    factor, info = _dpotrf(V, lower=1, overwrite_a=False, clean=0)
    if info != 0:
        return int(info), 0.0
    V[:] = factor
    logdet = 2.0 * float(np.log(np.diagonal(V)).sum())
    return 0, logdet
