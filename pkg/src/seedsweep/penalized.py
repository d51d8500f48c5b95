"""Lasso and group lasso with partial penalization and seed-controlled CV.

Both solvers run cyclic (block) coordinate descent on the Gram formulation
of the standardized problem

    (1/2n) ||y - D b||^2 + lam * P(b),

where ``P`` is the L1 norm over penalized coordinates (lasso) or the
weighted sum of group Euclidean norms sqrt(p_g) * ||b_g|| (group lasso).
Penalized columns are always standardized (population sd) so the penalty is
scale consistent; covariates can optionally be standardized too, the
intercept never is.  Coefficients are reported on the original scale.

The unpenalized block (intercept plus covariates) is profiled out exactly:
descent runs on the penalized columns projected off the unpenalized ones,
and the unpenalized coefficients are recovered from their normal equations
afterwards.  This keeps two contracts sharp: penalized coefficients are
*exactly* zero at and above lambda_max, and the unpenalized-block gradient
vanishes at the solution up to solve precision.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import backend
from .data import Dataset, kfold_assign, standardize
from .errors import DataError, ModelError
from .rng import SeedStream

DEFAULT_TOL = 1e-7
DEFAULT_MAX_SWEEPS = 100_000


def soft_threshold(z: float, gamma: float) -> float:
    """Scalar soft-thresholding: sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise ValueError("soft_threshold needs gamma >= 0")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


@dataclass(frozen=True)
class LambdaGrid:
    """Decreasing candidate penalty values, log-spaced from lambda_max down."""

    values: np.ndarray
    lambda_max: float
    ratio: float
    count: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.size != self.count or v.size == 0:
            raise ValueError("grid count does not match values")
        if v.size > 1 and not np.all(np.diff(v) < 0):
            raise ValueError("grid values must be strictly decreasing")
        if np.any(v <= 0):
            raise ValueError("grid values must be positive")

    @classmethod
    def log_spaced(cls, lambda_max: float, count: int = 100, ratio: float = 1e-4) -> "LambdaGrid":
        if lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if count < 1:
            raise ValueError("count must be >= 1")
        if count == 1:
            values = np.array([lambda_max])
        else:
            values = lambda_max * ratio ** (np.arange(count) / (count - 1))
        return cls(values=values, lambda_max=lambda_max, ratio=ratio, count=count)


@dataclass(frozen=True)
class LassoFit:
    beta: np.ndarray  # p + c, original scale, exposures first
    intercept: float
    lam: float
    n_iterations: int
    converged: bool
    beta_standardized: np.ndarray


@dataclass(frozen=True)
class GroupLassoFit:
    beta: np.ndarray
    intercept: float
    lam: float
    group_norms: np.ndarray
    n_iterations: int
    converged: bool
    beta_standardized: np.ndarray


@dataclass(frozen=True)
class CvCurve:
    grid: LambdaGrid
    mean_error: np.ndarray  # per-lambda mean of fold MSEs
    se_error: np.ndarray  # per-lambda standard error across folds
    chosen_lambda: float
    fold_labels: np.ndarray


class _Problem:
    """Standardized design with the unpenalized block profiled out.

    ``gram``/``xty`` describe the reduced problem over the penalized columns
    projected off the unpenalized ones.  ``assemble`` maps a penalized
    coefficient vector back to the full standardized vector, solving the
    unpenalized normal equations exactly.
    """

    def __init__(self, dataset: Dataset, standardize_covariates: bool):
        self.dataset = dataset
        design = dataset.design()
        p, c = dataset.p, dataset.c
        self.k = p + c
        self.n = dataset.n
        scale_cols = dataset.penalty_mask.copy()
        if standardize_covariates:
            for j in range(c):
                if j != dataset.intercept_index:
                    scale_cols[p + j] = True
        design_std, self.means, self.sds = standardize(design, skip=~scale_cols)
        self.pen_idx = np.flatnonzero(dataset.penalty_mask)
        self.free_idx = np.flatnonzero(~dataset.penalty_mask)
        self.intercept_pos = p + dataset.intercept_index

        y = dataset.y
        P = design_std[:, self.pen_idx]
        if self.free_idx.size:
            U = design_std[:, self.free_idx]
            gram_u = U.T @ U
            try:
                chol = cho_factor(gram_u)
                solve_u = lambda rhs: cho_solve(chol, rhs)
            except np.linalg.LinAlgError:
                raise DataError("unpenalized design block is singular") from None
            self._free_base = solve_u(U.T @ y)  # OLS of y on the free block
            self._free_slope = solve_u(U.T @ P)  # (u, kp): free response to each pen column
            y_res = y - U @ self._free_base
            P_res = P - U @ self._free_slope
        else:
            self._free_base = np.zeros(0)
            self._free_slope = np.zeros((0, self.pen_idx.size))
            y_res = y.copy()
            P_res = P
        self.residual_y = y_res
        self.kp = self.pen_idx.size
        self.gram = np.ascontiguousarray(P_res.T @ P_res / self.n)
        self.xty = np.ascontiguousarray(P_res.T @ y_res / self.n)
        bad = np.flatnonzero(np.diagonal(self.gram) <= 0.0) if self.kp else np.array([])
        if bad.size:
            col = int(self.pen_idx[int(bad[0])])
            raise DataError(
                f"penalized column {col} is collinear with the unpenalized block"
            )

    def assemble(self, beta_pen: np.ndarray) -> np.ndarray:
        """Full standardized coefficient vector from penalized coefficients."""
        beta = np.zeros(self.k)
        beta[self.pen_idx] = beta_pen
        if self.free_idx.size:
            beta[self.free_idx] = self._free_base - self._free_slope @ beta_pen
        return beta

    def to_original(self, beta_std: np.ndarray) -> np.ndarray:
        beta = beta_std / self.sds
        beta[self.intercept_pos] -= float(np.sum(beta_std * self.means / self.sds))
        return beta

    def to_standardized(self, beta_orig: np.ndarray) -> np.ndarray:
        beta = beta_orig * self.sds
        beta[self.intercept_pos] = beta_orig[self.intercept_pos] + float(
            np.sum(beta_orig * self.means)
        )
        return beta


def lambda_max(dataset: Dataset, standardize_covariates: bool = False) -> float:
    """Smallest penalty at which every penalized lasso coefficient is zero.

    Computed as ``max_j |z_j' r| / n`` over penalized standardized columns,
    with ``r`` the residual of y on the unpenalized columns alone.
    """
    problem = _Problem(dataset, standardize_covariates)
    if problem.kp == 0:
        return 0.0
    return float(np.max(np.abs(problem.xty)))


def group_lambda_max(dataset: Dataset, standardize_covariates: bool = False) -> float:
    """Group-lasso analogue: smallest penalty zeroing every penalized group."""
    problem = _Problem(dataset, standardize_covariates)
    best = 0.0
    for pos, weight in _penalized_blocks(problem):
        best = max(best, float(np.linalg.norm(problem.xty[pos]) / weight))
    return best


def _penalized_blocks(problem: _Problem) -> list[tuple[np.ndarray, float]]:
    """(positions within the reduced vector, sqrt-size weight) per block.

    Exposure groups keep their declared grouping restricted to penalized
    members; a penalized covariate (unusual, but legal) becomes a singleton
    block with weight 1, matching the lasso on that column.
    """
    dataset = problem.dataset
    position = {int(col): i for i, col in enumerate(problem.pen_idx)}
    mask = dataset.penalty_mask
    out = []
    for g in range(dataset.groups.n_groups):
        members = dataset.groups.members(g)
        members = members[mask[members]]
        if members.size:
            pos = np.array([position[int(m)] for m in members], dtype=np.int64)
            out.append((pos, math.sqrt(members.size)))
    for j in range(dataset.c):
        col = dataset.p + j
        if mask[col]:
            out.append((np.array([position[col]], dtype=np.int64), 1.0))
    return out


def _run_lasso(problem: _Problem, lam: float, beta0: np.ndarray, tol: float, max_sweeps: int):
    if problem.kp == 0:
        return np.zeros(0), 1, True
    beta = np.ascontiguousarray(beta0, dtype=np.float64)
    all_pen = np.ones(problem.kp, dtype=np.uint8)
    sweeps, converged = backend.lasso_cd(
        problem.gram, problem.xty, beta, all_pen, float(lam), float(tol), int(max_sweeps)
    )
    return beta, sweeps, converged


class _GroupStructure:
    """Flattened block layout plus per-block eigendecompositions."""

    def __init__(self, problem: _Problem):
        blocks = _penalized_blocks(problem)
        grouped = (
            np.concatenate([pos for pos, _ in blocks])
            if blocks
            else np.array([], dtype=np.int64)
        )
        self.free_pos = np.ascontiguousarray(
            np.setdiff1d(np.arange(problem.kp), grouped), dtype=np.int64
        )
        ptr = [0]
        weights = []
        eig_val = []
        eig_vec = []
        for pos, weight in blocks:
            ptr.append(ptr[-1] + pos.size)
            weights.append(weight)
            A = problem.gram[np.ix_(pos, pos)]
            vals, vecs = np.linalg.eigh(A)
            vals = np.clip(vals, 0.0, None)  # Gram blocks are PSD up to rounding
            eig_val.append(vals)
            eig_vec.append(np.ascontiguousarray(vecs).ravel())
        self.grp_ptr = np.ascontiguousarray(ptr, dtype=np.int64)
        self.grp_idx = (
            np.ascontiguousarray(np.concatenate([pos for pos, _ in blocks]), dtype=np.int64)
            if blocks
            else np.array([], dtype=np.int64)
        )
        self.grp_weight = np.ascontiguousarray(weights, dtype=np.float64)
        self.eig_val = (
            np.ascontiguousarray(np.concatenate(eig_val)) if eig_val else np.zeros(0)
        )
        self.eig_vec = (
            np.ascontiguousarray(np.concatenate(eig_vec)) if eig_vec else np.zeros(0)
        )


def _run_group(problem, structure, lam, beta0, tol, max_sweeps):
    if problem.kp == 0:
        return np.zeros(0), 1, True
    beta = np.ascontiguousarray(beta0, dtype=np.float64)
    sweeps, converged = backend.group_cd(
        problem.gram,
        problem.xty,
        beta,
        structure.free_pos,
        structure.grp_ptr,
        structure.grp_idx,
        structure.grp_weight,
        structure.eig_val,
        structure.eig_vec,
        float(lam),
        float(tol),
        int(max_sweeps),
    )
    return beta, sweeps, converged


def _finish(problem: _Problem, beta_pen: np.ndarray, sweeps, converged, lam):
    beta_std = problem.assemble(beta_pen)
    beta = problem.to_original(beta_std.copy())
    return beta, beta_std


def lasso_fit(
    dataset: Dataset,
    lam: float,
    warm_start: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    standardize_covariates: bool = False,
) -> LassoFit:
    """Partially penalized lasso fit at a single penalty value.

    ``warm_start`` takes original-scale coefficients (e.g. from a previous
    fit); it can only change the iteration count, not the solution.  A fit
    hitting the sweep cap is returned with ``converged=False`` alongside a
    warning.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    problem = _Problem(dataset, standardize_covariates)
    if warm_start is None:
        beta0 = np.zeros(problem.kp)
    else:
        full = problem.to_standardized(np.asarray(warm_start, dtype=np.float64).copy())
        beta0 = full[problem.pen_idx]
    beta_pen, sweeps, converged = _run_lasso(problem, lam, beta0, tol, max_sweeps)
    if not converged:
        warnings.warn(
            f"lasso did not converge in {max_sweeps} sweeps (lambda={lam:g})",
            RuntimeWarning,
            stacklevel=2,
        )
    beta, beta_std = _finish(problem, beta_pen, sweeps, converged, lam)
    return LassoFit(
        beta=beta,
        intercept=float(beta[problem.intercept_pos]),
        lam=float(lam),
        n_iterations=sweeps,
        converged=converged,
        beta_standardized=beta_std,
    )


def group_lasso_fit(
    dataset: Dataset,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    standardize_covariates: bool = False,
) -> GroupLassoFit:
    """Group lasso fit with sqrt(group size) weights; zero blocks are exact."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    problem = _Problem(dataset, standardize_covariates)
    structure = _GroupStructure(problem)
    beta_pen, sweeps, converged = _run_group(
        problem, structure, lam, np.zeros(problem.kp), tol, max_sweeps
    )
    if not converged:
        warnings.warn(
            f"group lasso did not converge in {max_sweeps} sweeps (lambda={lam:g})",
            RuntimeWarning,
            stacklevel=2,
        )
    beta, beta_std = _finish(problem, beta_pen, sweeps, converged, lam)
    norms = np.zeros(dataset.groups.n_groups)
    for g in range(dataset.groups.n_groups):
        members = dataset.groups.members(g)
        norms[g] = float(np.linalg.norm(beta_std[members]))
    return GroupLassoFit(
        beta=beta,
        intercept=float(beta[problem.intercept_pos]),
        lam=float(lam),
        group_norms=norms,
        n_iterations=sweeps,
        converged=converged,
        beta_standardized=beta_std,
    )


def _lasso_path(dataset, grid, tol, max_sweeps, standardize_covariates):
    """Original-scale coefficients for every grid value, warm-started."""
    problem = _Problem(dataset, standardize_covariates)
    betas = np.empty((grid.count, problem.k))
    beta = np.zeros(problem.kp)
    for i, lam in enumerate(grid.values):
        beta, _, converged = _run_lasso(problem, lam, beta, tol, max_sweeps)
        if not converged:
            raise ModelError(f"lasso path did not converge at lambda={lam:g}")
        betas[i] = problem.to_original(problem.assemble(beta))
    return betas


def _group_path(dataset, grid, tol, max_sweeps, standardize_covariates):
    problem = _Problem(dataset, standardize_covariates)
    structure = _GroupStructure(problem)
    betas = np.empty((grid.count, problem.k))
    beta = np.zeros(problem.kp)
    for i, lam in enumerate(grid.values):
        beta, _, converged = _run_group(problem, structure, lam, beta, tol, max_sweeps)
        if not converged:
            raise ModelError(f"group lasso path did not converge at lambda={lam:g}")
        betas[i] = problem.to_original(problem.assemble(beta))
    return betas


def _cv_engine(
    dataset: Dataset,
    k: int,
    grid: LambdaGrid,
    stream: SeedStream,
    path_fn,
    one_se: bool,
) -> CvCurve:
    labels = kfold_assign(dataset.n, k, stream)
    counts = np.bincount(labels, minlength=k)
    if counts.min() < 2:
        raise DataError("cross-validation fold with fewer than 2 observations")
    design = dataset.design()
    fold_mse = np.empty((k, grid.count))
    for fold in range(k):
        test = labels == fold
        train_idx = np.flatnonzero(~test)
        betas = path_fn(dataset.subset(train_idx), grid)
        resid = design[test] @ betas.T - dataset.y[test][:, None]
        fold_mse[fold] = np.mean(resid * resid, axis=0)
    mean_error = fold_mse.mean(axis=0)
    se_error = fold_mse.std(axis=0, ddof=1) / math.sqrt(k)
    best = int(np.argmin(mean_error))  # grid descends, so first minimum = largest lambda
    if one_se:
        cutoff = mean_error[best] + se_error[best]
        best = int(np.flatnonzero(mean_error <= cutoff)[0])
    return CvCurve(
        grid=grid,
        mean_error=mean_error,
        se_error=se_error,
        chosen_lambda=float(grid.values[best]),
        fold_labels=labels,
    )


def cv_lasso(
    dataset: Dataset,
    k: int,
    grid: LambdaGrid,
    stream: SeedStream,
    one_se: bool = False,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    standardize_covariates: bool = False,
) -> CvCurve:
    """k-fold CV error curve for the lasso; ties go to the larger lambda.

    Each training split is standardized on its own; held-out error is the
    plain mean squared prediction error, averaged unweighted across folds.
    """
    return _cv_engine(
        dataset,
        k,
        grid,
        stream,
        lambda d, g: _lasso_path(d, g, tol, max_sweeps, standardize_covariates),
        one_se,
    )


def cv_group_lasso(
    dataset: Dataset,
    k: int,
    grid: LambdaGrid,
    stream: SeedStream,
    one_se: bool = False,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    standardize_covariates: bool = False,
) -> CvCurve:
    """k-fold CV error curve for the group lasso."""
    return _cv_engine(
        dataset,
        k,
        grid,
        stream,
        lambda d, g: _group_path(d, g, tol, max_sweeps, standardize_covariates),
        one_se,
    )


def default_grid(
    dataset: Dataset,
    count: int = 100,
    ratio: float = 1e-4,
    grouped: bool = False,
    standardize_covariates: bool = False,
) -> LambdaGrid:
    """100 log-spaced values from (group-)lambda_max down to ratio times it."""
    top = (
        group_lambda_max(dataset, standardize_covariates)
        if grouped
        else lambda_max(dataset, standardize_covariates)
    )
    if top <= 0:
        raise ModelError("lambda_max is zero: penalized columns are orthogonal to the outcome")
    return LambdaGrid.log_spaced(top, count=count, ratio=ratio)


def lasso_objective(
    dataset: Dataset,
    beta_std: np.ndarray,
    lam: float,
    standardize_covariates: bool = False,
) -> float:
    """Standardized-space objective value; used by tests and diagnostics."""
    problem = _Problem(dataset, standardize_covariates)
    design_std = (dataset.design() - problem.means) / problem.sds
    resid = dataset.y - design_std @ beta_std
    pen = float(np.sum(np.abs(beta_std[dataset.penalty_mask])))
    return float(resid @ resid / (2 * dataset.n) + lam * pen)
