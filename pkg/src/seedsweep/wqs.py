"""Weighted quantile sum regression with seed-controlled splitting.

Pipeline per seed: quantile-score the exposures on the full sample, split
rows into a training and a hold-out set, estimate simplex-constrained
weights on bootstrap resamples of the training rows, then regress the
outcome on the weighted index over the hold-out rows.  Weight estimation
maximizes the Gaussian likelihood of

    y ~ intercept + b1 * (sum_j w_j q_j) + covariates

over (b1, w) with w on the simplex via the softmax map
``w_j = exp(th_j) / sum_l exp(th_l)``; the linear coefficients are profiled
out (their optimum is ordinary least squares given w, so maximizing the
profiled likelihood solves the same problem), leaving a smooth
unconstrained objective in th that L-BFGS-B ascends from th = 0.

Across seeds the index coefficients are pooled with Rubin's rule, with the
Barnard-Rubin small-sample degrees of freedom.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import t as student_t

from .data import Dataset, quantile_scores
from .errors import DataError, ModelError
from .rng import SeedStream


@dataclass(frozen=True)
class WqsConfig:
    """Quantile count, split fraction, bootstrap count, direction and threshold.

    ``tau=None`` means the 1/p default, resolved against the dataset at run
    time.  ``direction`` screens bootstrap fits by the sign of the index
    coefficient before weights are averaged.
    """

    q: int = 4
    train_fraction: float = 0.4
    n_bootstrap: int = 100
    direction: str = "positive"
    tau: float | None = None

    def __post_init__(self):
        if self.q < 2:
            raise DataError("WQS quantile count must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie in (0, 1)")
        if self.n_bootstrap < 1:
            raise DataError("n_bootstrap must be >= 1")
        if self.direction not in ("positive", "negative"):
            raise DataError("direction must be 'positive' or 'negative'")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise DataError("tau must lie in (0, 1)")

    def resolve_tau(self, p: int) -> float:
        return self.tau if self.tau is not None else 1.0 / p


@dataclass(frozen=True)
class WqsFit:
    weights: np.ndarray
    index_beta: float
    index_se: float
    ci95: tuple[float, float]
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    flagged: bool  # True when no bootstrap matched the requested direction
    n_direction_matched: int
    residual_df: int  # hold-out rows minus regression parameters


@dataclass(frozen=True)
class PooledEstimate:
    estimate: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    ci95: tuple[float, float]
    m: int


def split_train_test(n: int, frac: float, stream: SeedStream) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint exhaustive split; first floor(frac*n) shuffled indices train."""
    if not 0.0 < frac < 1.0:
        raise DataError("train fraction must lie in (0, 1)")
    n_train = int(math.floor(frac * n))
    if n_train < 2 or n - n_train < 2:
        raise DataError(f"degenerate split: {n_train} train / {n - n_train} test rows")
    perm = stream.shuffle(range(n))
    train = np.sort(np.array(perm[:n_train], dtype=np.int64))
    test = np.sort(np.array(perm[n_train:], dtype=np.int64))
    return train, test


def wqs_index(weights: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise weighted sum of quantile scores."""
    weights = np.asarray(weights, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or weights.shape != (Q.shape[1],):
        raise DataError("weights length must equal the number of exposure columns")
    return Q @ weights


def important_components(weights: np.ndarray, tau: float) -> np.ndarray:
    """Indices with weight strictly above the threshold."""
    return np.flatnonzero(np.asarray(weights) > tau)


class _ProfiledObjective:
    """Negative profiled log-likelihood in theta, with analytic gradient.

    All data contractions are precomputed on the (resampled) rows, so one
    evaluation costs O(p^2 + c^3) regardless of n.  With design
    D(w) = [B | Qw] (B the intercept-plus-covariate block), the profiled
    negative log-likelihood is (n/2) log RSS(w); the gradient in w uses the
    envelope identity dRSS/dw_j = -2 b1 (Q' residual)_j at the inner OLS
    optimum, chained through the softmax Jacobian.
    """

    def __init__(self, y: np.ndarray, Q: np.ndarray, B: np.ndarray):
        self.n = y.shape[0]
        self.p = Q.shape[1]
        self.cb = B.shape[1]
        self.yty = float(y @ y)
        self.Bty = B.T @ y
        self.Qty = Q.T @ y
        self.BtB = B.T @ B
        self.BtQ = B.T @ Q
        self.QtQ = Q.T @ Q

    def _linear_solve(self, w):
        k = self.cb + 1
        G = np.empty((k, k))
        G[: self.cb, : self.cb] = self.BtB
        bq = self.BtQ @ w
        G[: self.cb, k - 1] = bq
        G[k - 1, : self.cb] = bq
        qtq_w = self.QtQ @ w
        G[k - 1, k - 1] = float(w @ qtq_w)
        rhs = np.concatenate([self.Bty, [float(self.Qty @ w)]])
        coef = np.linalg.solve(G, rhs)
        return coef, rhs, qtq_w

    def value_and_grad(self, theta):
        theta = theta - theta.max()  # softmax shift invariance, avoids overflow
        ex = np.exp(theta)
        w = ex / ex.sum()
        coef, rhs, qtq_w = self._linear_solve(w)
        rss = self.yty - float(rhs @ coef)
        rss = max(rss, 1e-300)
        b1 = coef[-1]
        # Q' residual = Q'y - Q'B gamma - Q'Q w b1
        qtr = self.Qty - self.BtQ.T @ coef[: self.cb] - qtq_w * b1
        d_rss_dw = -2.0 * b1 * qtr
        inner = float(d_rss_dw @ w)
        d_rss_dtheta = w * (d_rss_dw - inner)
        nll = 0.5 * self.n * math.log(rss)
        grad = 0.5 * self.n / rss * d_rss_dtheta
        return nll, grad, w, b1


def _fit_one_bootstrap(objective: _ProfiledObjective, p: int):
    theta0 = np.zeros(p)

    def fun(theta):
        nll, grad, _, _ = objective.value_and_grad(theta)
        return nll, grad

    res = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 500, "gtol": 1e-6, "ftol": 1e-14},
    )
    _, _, w, b1 = objective.value_and_grad(res.x)
    return w, b1


def estimate_weights(
    y: np.ndarray,
    Q: np.ndarray,
    X: np.ndarray,
    cfg: WqsConfig,
    stream: SeedStream,
) -> tuple[np.ndarray, int, int]:
    """Bootstrap-averaged simplex weights on training rows.

    Returns ``(weights, n_direction_matched, n_failed)``.  Resamples whose
    fitted index coefficient does not match ``cfg.direction`` are excluded
    from the average; when none match, the average runs over all successful
    resamples and the caller flags the fit.
    """
    y = np.asarray(y, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, p = Q.shape
    if n < p + X.shape[1] + 2:
        raise DataError(
            f"weight estimation needs at least {p + X.shape[1] + 2} training rows, got {n}"
        )
    want_positive = cfg.direction == "positive"
    matched: list[np.ndarray] = []
    unmatched: list[np.ndarray] = []
    failed = 0
    for _ in range(cfg.n_bootstrap):
        rows = np.array([stream.integer_below(n) for _ in range(n)], dtype=np.int64)
        try:
            objective = _ProfiledObjective(y[rows], Q[rows], X[rows])
            w, b1 = _fit_one_bootstrap(objective, p)
        except np.linalg.LinAlgError:
            failed += 1
            continue
        if not np.all(np.isfinite(w)):
            failed += 1
            continue
        if (b1 > 0) == want_positive and b1 != 0:
            matched.append(w)
        else:
            unmatched.append(w)
    if not matched and not unmatched:
        raise ModelError("all bootstrap resamples failed in WQS weight estimation")
    pool = matched if matched else unmatched  # fallback: mean over all successes
    weights = np.mean(pool, axis=0)
    weights = weights / weights.sum()  # guard rounding drift off the simplex
    return weights, len(matched), failed


def fit_index_regression(
    y: np.ndarray, index: np.ndarray, X: np.ndarray
) -> tuple[float, float, tuple[float, float]]:
    """OLS of y on [covariate block | index]; returns (beta, se, 95% CI)."""
    y = np.asarray(y, dtype=np.float64)
    index = np.asarray(index, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if y.shape[0] < X.shape[1] + 3:
        raise DataError("hold-out regression needs at least c + 3 rows")
    D = np.column_stack([X, index])
    G = D.T @ D
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        raise ModelError("singular design in hold-out index regression") from None
    coef = Ginv @ (D.T @ y)
    resid = y - D @ coef
    dof = y.shape[0] - D.shape[1]
    sigma2 = float(resid @ resid) / dof
    beta = float(coef[-1])
    se = float(math.sqrt(sigma2 * Ginv[-1, -1]))
    return beta, se, (beta - 1.96 * se, beta + 1.96 * se)


def rubins_pool(
    estimates, variances, complete_df: float | None = None
) -> PooledEstimate:
    """Rubin's rule across repeated analyses.

    ``estimate`` is the mean, ``within`` the mean of the per-run variances,
    ``between`` the sample variance of the estimates, and
    ``total = within + (1 + 1/m) * between``.  Degrees of freedom follow
    Barnard-Rubin when ``complete_df`` is given, else the classic
    large-sample formula.
    """
    est = np.asarray(estimates, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    if est.ndim != 1 or est.shape != var.shape:
        raise DataError("estimates and variances must be equal-length vectors")
    m = est.shape[0]
    if m < 2:
        raise DataError("pooling requires at least two seeds")
    if np.any(var < 0):
        raise DataError("variances must be non-negative")
    estimate = float(est.mean())
    within = float(var.mean())
    between = float(((est - estimate) ** 2).sum() / (m - 1))
    total = within + (1.0 + 1.0 / m) * between
    if total == 0.0:
        df = float("inf")
    elif between == 0.0:
        df = float("inf")
    else:
        rel_increase = (1.0 + 1.0 / m) * between / total
        df = (m - 1) / rel_increase**2
    if complete_df is not None and total > 0.0:
        lam = (1.0 + 1.0 / m) * between / total
        nu_obs = complete_df * (complete_df + 1.0) / (complete_df + 3.0) * (1.0 - lam)
        df = nu_obs if math.isinf(df) else df * nu_obs / (df + nu_obs)
    half = float(student_t.ppf(0.975, df)) * math.sqrt(total) if total > 0 else 0.0
    return PooledEstimate(
        estimate=estimate,
        within_var=within,
        between_var=between,
        total_var=total,
        df=float(df),
        ci95=(estimate - half, estimate + half),
        m=m,
    )


def wqs_run(dataset: Dataset, cfg: WqsConfig, seed: int) -> WqsFit:
    """Full single-seed WQS analysis driven by one stream.

    Stream consumption order: the train/test shuffle first, then the
    bootstrap row draws.  Quantile cut points come from the full sample so
    the index scale is comparable across seeds.
    """
    stream = SeedStream(seed)
    Q = quantile_scores(dataset.Z, cfg.q)
    train, test = split_train_test(dataset.n, cfg.train_fraction, stream)
    weights, n_matched, _ = estimate_weights(
        dataset.y[train], Q[train], dataset.X[train], cfg, stream
    )
    index_test = wqs_index(weights, Q[test])
    beta, se, ci = fit_index_regression(dataset.y[test], index_test, dataset.X[test])
    return WqsFit(
        weights=weights,
        index_beta=beta,
        index_se=se,
        ci95=ci,
        train_indices=train,
        test_indices=test,
        seed=int(seed),
        flagged=n_matched == 0,
        n_direction_matched=n_matched,
        residual_df=test.size - (dataset.c + 1),
    )
