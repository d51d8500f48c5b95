"""Bayesian kernel machine regression with hierarchical variable selection.

Model: ``y = X beta + h + eps`` with ``eps ~ N(0, sigma2 I)`` and a Gaussian
process ``h ~ GP(0, sigma2 * lam * K)``, where the kernel is

    K_ab = exp(-sum_m r_m (Z_am - Z_bm)^2).

``h`` is marginalized analytically, so the sampler state is
``(beta, sigma2, lam, r, delta_group, delta_within)``: conjugate Gibbs
updates for ``beta`` (flat prior) and ``sigma2`` (inverse gamma), and
Metropolis moves for everything touching the kernel.  Hierarchical
selection ties ``r_m > 0`` to ``delta_within[m] = 1``, which in turn
requires the exposure's group indicator to be on.

Each iteration performs the two Gibbs updates plus ONE randomly chosen
Metropolis move: a random walk on log(lam) (probability 1/2), or - with the
remaining mass split evenly - a random walk on one active log(r_m), a
within-group indicator toggle, or a group indicator toggle.  Toggle moves
propose activations from the slab prior, so their acceptance ratio reduces
to the marginal likelihood ratio.  A single move per iteration keeps the
per-iteration cost at roughly one Cholesky factorization, which is what
makes 100-seed sweeps tractable on one core.

Chains are independent: chain ``i`` owns the stream seeded with
``seed + i``.  Everything is deterministic given (data, config, seed).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import backend
from .data import Dataset, GroupSpec
from .errors import DataError, ModelError
from .rng import SeedStream

LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class BkmrConfig:
    """Sampler length, proposal scales, priors and posterior-query knobs.

    Desk-scale defaults (5000 iterations, 4 chains) keep multi-seed sweeps
    tractable; production analyses are expected to raise ``n_iter`` into
    the 1e5 range.  ``lam_fixed`` pins the GP-to-noise variance ratio
    (used by the conjugate closed-form check), and
    ``variable_selection=False`` freezes all indicators and kernel scales
    at zero.
    """

    n_iter: int = 5000
    burn_in: int | None = None  # None -> n_iter // 2
    n_chains: int = 4
    r_proposal_sd: float = 0.3
    lam_proposal_sd: float = 0.3
    sigma2_prior_shape: float = 0.001
    sigma2_prior_scale: float = 0.001
    log_lam_range: tuple[float, float] = (-10.0, 10.0)
    r_slab_shape: float = 1.0
    r_slab_rate: float = 1.0
    r_slab_max: float = 100.0
    group_prior: float = 0.5
    within_prior: float = 0.5
    grid_points: int = 50
    variable_selection: bool = True
    lam_fixed: float | None = None
    max_n: int = 2000
    jitter: float = 1e-8
    thin: int = 10

    def __post_init__(self):
        if self.n_iter < 2:
            raise DataError("n_iter must be >= 2")
        burn = self.resolved_burn_in()
        if not 0 <= burn < self.n_iter:
            raise DataError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.n_chains < 1:
            raise DataError("n_chains must be >= 1")
        if self.lam_fixed is not None and self.lam_fixed < 0:
            raise DataError("lam_fixed must be >= 0")
        if self.grid_points < 2:
            raise DataError("grid_points must be >= 2")

    def resolved_burn_in(self) -> int:
        return self.n_iter // 2 if self.burn_in is None else self.burn_in


@dataclass(frozen=True)
class McmcTrace:
    """Post-burn-in states of one chain, plus the log-posterior diagnostic."""

    beta: np.ndarray  # (T, c)
    sigma2: np.ndarray  # (T,)
    lam: np.ndarray  # (T,)
    r: np.ndarray  # (T, p)
    delta_group: np.ndarray  # (T, G) int8
    delta_within: np.ndarray  # (T, p) int8
    log_post: np.ndarray  # (T,)
    chain: int
    seed: int

    def __len__(self) -> int:
        return self.sigma2.shape[0]


@dataclass(frozen=True)
class PipTable:
    group_pips: np.ndarray
    conditional_pips: np.ndarray
    conditional_defined: np.ndarray  # False where the group never activated


@dataclass(frozen=True)
class ExposureResponse:
    exposure: int
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray  # 2.5% band
    upper: np.ndarray  # 97.5% band


@dataclass(frozen=True)
class OverallEffect:
    percentile: float
    mean: float
    lower: float
    upper: float


def gaussian_kernel(Z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Componentwise-scaled Gaussian kernel matrix; unit diagonal."""
    Z = np.asarray(Z, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (Z.shape[1],):
        raise DataError("r must have one entry per exposure")
    if np.any(r < 0):
        raise DataError("kernel scales r must be non-negative")
    S = np.zeros((Z.shape[0], Z.shape[0]))
    for m in np.flatnonzero(r > 0):
        diff = Z[:, m][:, None] - Z[:, m][None, :]
        S += r[m] * diff * diff
    return np.exp(-S)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor over >= 2 equal-length scalar chains.

    ``R = sqrt(((n-1)/n W + B/n) / W)`` with W the mean within-chain sample
    variance and B = n * var(chain means).  Degenerate case W = 0: defined
    as 1.0 when B = 0 too, an error otherwise.
    """
    arrs = [np.asarray(c, dtype=np.float64) for c in chains]
    if len(arrs) < 2:
        raise DataError("Gelman-Rubin needs at least two chains")
    n = arrs[0].shape[0]
    if n < 2 or any(a.shape != (n,) for a in arrs):
        raise DataError("chains must share one length >= 2")
    mat = np.stack(arrs)
    W = float(mat.var(axis=1, ddof=1).mean())
    B = n * float(mat.mean(axis=1).var(ddof=1))
    if W == 0.0:
        if B == 0.0:
            return 1.0
        raise ModelError("degenerate chains: zero within-chain variance")
    return math.sqrt(((n - 1) / n * W + B / n) / W)


class _Distances:
    """Per-exposure squared-distance matrices, precomputed when affordable."""

    _BUDGET = 2 * 10**7  # doubles; ~160 MB

    def __init__(self, Z: np.ndarray):
        self.Z = Z
        n, p = Z.shape
        self._stack = None
        if p * n * n <= self._BUDGET:
            stack = np.empty((p, n, n))
            for m in range(p):
                diff = Z[:, m][:, None] - Z[:, m][None, :]
                np.multiply(diff, diff, out=stack[m])
            self._stack = stack

    def get(self, m: int) -> np.ndarray:
        if self._stack is not None:
            return self._stack[m]
        diff = self.Z[:, m][:, None] - self.Z[:, m][None, :]
        return diff * diff

    def combination(self, members: np.ndarray, scales: np.ndarray) -> np.ndarray:
        out = np.zeros((self.Z.shape[0],) * 2)
        for m, s in zip(members, scales):
            if s != 0.0:
                out += s * self.get(int(m))
        return out


class _ChainState:
    """Mutable sampler state plus the factor caches."""

    __slots__ = (
        "beta", "sigma2", "lam", "r", "dg", "dw",
        "S", "K", "L", "logdet", "xy_til", "k_work", "v_work",
    )


def _slab_logpdf(r: float, cfg: BkmrConfig) -> float:
    # truncation constant omitted: it cancels in every ratio we form
    return (cfg.r_slab_shape - 1.0) * math.log(r) - cfg.r_slab_rate * r


def _slab_draw(stream: SeedStream, cfg: BkmrConfig) -> float:
    while True:
        val = stream.gamma(cfg.r_slab_shape, 1.0 / cfg.r_slab_rate)
        if 0.0 < val < cfg.r_slab_max:
            return val


def _chol_V(K, lam, V, cfg) -> float:
    """Factor I + lam K into V (lower); returns logdet or raises."""
    info, logdet = backend.shift_chol_logdet_lower(K, lam, V)
    if info == 0:
        return logdet
    boost = cfg.jitter
    for _ in range(3):
        info, logdet = backend.shift_chol_logdet_lower(K, lam, V, boost)
        if info == 0:
            return logdet
        boost *= 10.0
    raise ModelError("kernel matrix factorization failed after jitter retries")


def _run_chain(dataset: Dataset, cfg: BkmrConfig, seed: int, chain: int) -> McmcTrace:
    stream = SeedStream(seed + chain)
    y, X, Z = dataset.y, dataset.X, dataset.Z
    n, p, c = dataset.n, dataset.p, dataset.c
    groups = dataset.groups
    G = groups.n_groups
    member_lists = [groups.members(g) for g in range(G)]
    dist = _Distances(Z)
    xy = np.column_stack([X, y])

    # initialization: a seed-determined random start around the OLS solution
    gram_x = X.T @ X
    try:
        chol_x = cho_factor(gram_x)
    except np.linalg.LinAlgError:
        raise DataError("covariate block X is singular") from None
    ols = cho_solve(chol_x, X.T @ y)
    resid = y - X @ ols
    s2 = float(resid @ resid) / max(n - c, 1)
    z = stream.normals(c)
    beta = ols + math.sqrt(s2) * solve_triangular(
        np.linalg.cholesky(gram_x), z, lower=True, trans="T"
    )
    sigma2 = s2 * math.exp(0.5 * stream.normal())
    if cfg.lam_fixed is not None:
        lam = cfg.lam_fixed
    else:
        lam = math.exp(-2.0 + 4.0 * stream.uniform01())
    r = np.zeros(p)
    dg = np.zeros(G, dtype=np.int8)
    dw = np.zeros(p, dtype=np.int8)
    if cfg.variable_selection:
        for g in range(G):
            if stream.uniform01() < cfg.group_prior:
                dg[g] = 1
                for m in member_lists[g]:
                    if stream.uniform01() < cfg.within_prior:
                        dw[m] = 1
                        r[m] = _slab_draw(stream, cfg)

    S = dist.combination(np.flatnonzero(r > 0), r[r > 0])
    K = np.empty((n, n))
    backend.exp_neg_axpy_lower(S, S, 0.0, K)  # K = exp(-S)
    L = np.empty((n, n))
    logdet = _chol_V(K, lam, L, cfg)
    xy_til = solve_triangular(L, xy, lower=True, check_finite=False)
    k_work = np.empty((n, n))
    v_work = np.empty((n, n))

    a0, b0 = cfg.sigma2_prior_shape, cfg.sigma2_prior_scale
    lam_lo, lam_hi = cfg.log_lam_range
    burn = cfg.resolved_burn_in()
    T = cfg.n_iter - burn
    out_beta = np.empty((T, c))
    out_sigma2 = np.empty(T)
    out_lam = np.empty(T)
    out_r = np.empty((T, p))
    out_dg = np.empty((T, G), dtype=np.int8)
    out_dw = np.empty((T, p), dtype=np.int8)
    out_lp = np.empty(T)

    do_lam = cfg.lam_fixed is None
    do_sel = cfg.variable_selection

    def cur_quad():
        e_til = xy_til[:, c] - xy_til[:, :c] @ beta
        return float(e_til @ e_til)

    def prop_loglik(V_new, logdet_new):
        e = y - X @ beta
        e_til = solve_triangular(V_new, e, lower=True, check_finite=False)
        return -0.5 * (logdet_new + float(e_til @ e_til) / sigma2)

    def refresh_xy(L_new):
        return solve_triangular(L_new, xy, lower=True, check_finite=False)

    for it in range(cfg.n_iter):
        # --- Gibbs: beta | rest (flat prior) ---
        Xt = xy_til[:, :c]
        yt = xy_til[:, c]
        M = Xt.T @ Xt
        bvec = Xt.T @ yt
        Lm = np.linalg.cholesky(M)
        mean = cho_solve((Lm, True), bvec)
        z = stream.normals(c)
        beta = mean + math.sqrt(sigma2) * solve_triangular(Lm, z, lower=True, trans="T")

        # --- Gibbs: sigma2 | rest ---
        quad = cur_quad()
        sigma2 = (b0 + 0.5 * quad) / stream.gamma(a0 + 0.5 * n)

        # --- one Metropolis move ---
        u_move = stream.uniform01() if (do_lam and do_sel) else 0.0
        if do_lam and (not do_sel or u_move < 0.5):
            zstep = stream.normal()
            log_new = math.log(lam) + cfg.lam_proposal_sd * zstep
            if lam_lo <= log_new <= lam_hi:
                lam_new = math.exp(log_new)
                logdet_new = _chol_V(K, lam_new, v_work, cfg)
                cur = -0.5 * (logdet + cur_quad() / sigma2)
                new = prop_loglik(v_work, logdet_new)
                if math.log(stream.uniform01() + 1e-300) < new - cur:
                    lam = lam_new
                    L, v_work = v_work, L
                    logdet = logdet_new
                    xy_til = refresh_xy(L)
        elif do_sel:
            u_kind = stream.uniform01() * 3.0
            accept_update = None  # (dS, r_new, dw_new, dg_new) applied on accept
            if u_kind < 1.0:
                # random walk on one active log(r_m)
                active = np.flatnonzero(dw == 1)
                if active.size:
                    m = int(active[stream.integer_below(active.size)])
                    zstep = stream.normal()
                    r_new = r[m] * math.exp(cfg.r_proposal_sd * zstep)
                    if 0.0 < r_new < cfg.r_slab_max:
                        delta = r_new - r[m]
                        backend.exp_neg_axpy_lower(S, dist.get(m), delta, k_work)
                        logdet_new = _chol_V(k_work, lam, v_work, cfg)
                        cur = -0.5 * (logdet + cur_quad() / sigma2)
                        new = prop_loglik(v_work, logdet_new)
                        lnratio = (
                            new - cur
                            + _slab_logpdf(r_new, cfg) - _slab_logpdf(r[m], cfg)
                            + math.log(r_new) - math.log(r[m])  # log-scale walk Jacobian
                        )
                        if math.log(stream.uniform01() + 1e-300) < lnratio:
                            S += delta * dist.get(m)
                            r[m] = r_new
                            K, k_work = k_work, K
                            L, v_work = v_work, L
                            logdet = logdet_new
                            xy_til = refresh_xy(L)
            elif u_kind < 2.0:
                # toggle one within-group indicator (members of active groups)
                eligible = np.flatnonzero(dg[groups.assignments] == 1)
                if eligible.size:
                    m = int(eligible[stream.integer_below(eligible.size)])
                    if dw[m] == 1:
                        delta = -r[m]
                        r_prop, dw_prop = 0.0, 0
                        prior_odds = math.log(1.0 - cfg.within_prior) - math.log(cfg.within_prior)
                    else:
                        r_prop = _slab_draw(stream, cfg)
                        delta = r_prop
                        dw_prop = 1
                        prior_odds = math.log(cfg.within_prior) - math.log(1.0 - cfg.within_prior)
                    backend.exp_neg_axpy_lower(S, dist.get(m), delta, k_work)
                    logdet_new = _chol_V(k_work, lam, v_work, cfg)
                    cur = -0.5 * (logdet + cur_quad() / sigma2)
                    new = prop_loglik(v_work, logdet_new)
                    # slab density cancels against the activation proposal
                    if math.log(stream.uniform01() + 1e-300) < new - cur + prior_odds:
                        S += delta * dist.get(m)
                        r[m] = r_prop
                        dw[m] = dw_prop
                        K, k_work = k_work, K
                        L, v_work = v_work, L
                        logdet = logdet_new
                        xy_til = refresh_xy(L)
            else:
                # toggle one group indicator; activation re-draws members from the prior
                g = stream.integer_below(G)
                members = member_lists[g]
                if dg[g] == 1:
                    dS = dist.combination(members, -r[members])
                    r_prop = np.zeros(members.size)
                    dw_prop = np.zeros(members.size, dtype=np.int8)
                    dg_prop = 0
                    prior_odds = math.log(1.0 - cfg.group_prior) - math.log(cfg.group_prior)
                else:
                    r_prop = np.zeros(members.size)
                    dw_prop = np.zeros(members.size, dtype=np.int8)
                    for i, m in enumerate(members):
                        if stream.uniform01() < cfg.within_prior:
                            dw_prop[i] = 1
                            r_prop[i] = _slab_draw(stream, cfg)
                    dS = dist.combination(members, r_prop)
                    dg_prop = 1
                    prior_odds = math.log(cfg.group_prior) - math.log(1.0 - cfg.group_prior)
                backend.exp_neg_axpy_lower(S, dS, 1.0, k_work)
                logdet_new = _chol_V(k_work, lam, v_work, cfg)
                cur = -0.5 * (logdet + cur_quad() / sigma2)
                new = prop_loglik(v_work, logdet_new)
                # member (dw, r) proposal equals its conditional prior, so it cancels
                if math.log(stream.uniform01() + 1e-300) < new - cur + prior_odds:
                    S += dS
                    r[members] = r_prop
                    dw[members] = dw_prop
                    dg[g] = dg_prop
                    K, k_work = k_work, K
                    L, v_work = v_work, L
                    logdet = logdet_new
                    xy_til = refresh_xy(L)

        if it >= burn:
            t = it - burn
            out_beta[t] = beta
            out_sigma2[t] = sigma2
            out_lam[t] = lam
            out_r[t] = r
            out_dg[t] = dg
            out_dw[t] = dw
            loglik = (
                -0.5 * n * math.log(2.0 * math.pi * sigma2)
                - 0.5 * logdet
                - 0.5 * cur_quad() / sigma2
            )
            lp = loglik - (a0 + 1.0) * math.log(sigma2) - b0 / sigma2
            for m in np.flatnonzero(dw == 1):
                lp += _slab_logpdf(float(r[m]), cfg)
            n_inner = int(sum(member_lists[g].size for g in range(G) if dg[g] == 1))
            lp += LOG_HALF * (G + n_inner)
            out_lp[t] = lp

    return McmcTrace(
        beta=out_beta,
        sigma2=out_sigma2,
        lam=out_lam,
        r=out_r,
        delta_group=out_dg,
        delta_within=out_dw,
        log_post=out_lp,
        chain=chain,
        seed=int(seed),
    )


def mcmc_run(dataset: Dataset, cfg: BkmrConfig, seed: int) -> list[McmcTrace]:
    """Run ``cfg.n_chains`` independent chains; chain i is seeded with seed + i."""
    if dataset.n > cfg.max_n:
        raise ModelError(
            f"n={dataset.n} exceeds the dense-algebra cap ({cfg.max_n}); raise max_n deliberately"
        )
    return [_run_chain(dataset, cfg, seed, chain) for chain in range(cfg.n_chains)]


def _as_trace_list(traces) -> list[McmcTrace]:
    if isinstance(traces, McmcTrace):
        return [traces]
    traces = list(traces)
    if not traces:
        raise DataError("need at least one trace")
    return traces


def compute_pips(traces, groups: GroupSpec) -> PipTable:
    """Group PIPs and congener-conditional PIPs, pooled over chains.

    The conditional PIP of exposure m counts only iterations where its
    group is included; a group that never activates yields conditional
    PIPs of 0 flagged as undefined.
    """
    traces = _as_trace_list(traces)
    dg = np.concatenate([t.delta_group for t in traces], axis=0)
    dw = np.concatenate([t.delta_within for t in traces], axis=0)
    if dg.shape[0] == 0:
        raise DataError("traces contain no retained iterations")
    group_pips = dg.mean(axis=0)
    p = dw.shape[1]
    conditional = np.zeros(p)
    defined = np.zeros(p, dtype=bool)
    for m in range(p):
        g = int(groups.assignments[m])
        rows = dg[:, g] == 1
        count = int(rows.sum())
        if count:
            conditional[m] = float(dw[rows, m].mean())
            defined[m] = True
    return PipTable(
        group_pips=group_pips, conditional_pips=conditional, conditional_defined=defined
    )


def _thinned_states(traces: list[McmcTrace], thin: int):
    for trace in traces:
        for t in range(0, len(trace), thin):
            yield trace, t


class _StateSolver:
    """Conditional GP posterior of h at query points, for one retained state."""

    def __init__(self, dataset: Dataset, trace: McmcTrace, t: int):
        self.r = trace.r[t]
        self.lam = float(trace.lam[t])
        self.sigma2 = float(trace.sigma2[t])
        K = gaussian_kernel(dataset.Z, self.r)
        n = dataset.n
        V = self.lam * K
        V.flat[:: n + 1] += 1.0
        self.chol = cho_factor(V, lower=True, check_finite=False)
        e = dataset.y - dataset.X @ trace.beta[t]
        self.alpha = cho_solve(self.chol, e)
        self.Z = dataset.Z

    def cross(self, queries: np.ndarray) -> np.ndarray:
        acc = np.zeros((queries.shape[0], self.Z.shape[0]))
        for m in np.flatnonzero(self.r > 0):
            diff = queries[:, m][:, None] - self.Z[:, m][None, :]
            acc += self.r[m] * diff * diff
        return np.exp(-acc)

    def mean_and_whitened(self, queries: np.ndarray):
        """Posterior mean of h at each query plus L^-1 k* columns.

        The whitened cross-kernel gives conditional (co)variances:
        Cov(h(a), h(b) | state) = sigma2*lam*(k(a,b) - lam * w_a . w_b).
        """
        kc = self.cross(queries)
        mean = self.lam * (kc @ self.alpha)
        white = solve_triangular(self.chol[0], kc.T, lower=True, check_finite=False)
        return mean, white

    def point_sd(self, white: np.ndarray) -> np.ndarray:
        var = self.sigma2 * self.lam * (1.0 - self.lam * np.sum(white * white, axis=0))
        return np.sqrt(np.clip(var, 0.0, None))


def _band_stream(seed: int, salt: int) -> SeedStream:
    return SeedStream((int(seed) + 0x9E3779B97F4A7C15 * (salt + 1)) & 0xFFFFFFFFFFFFFFFF)


def univariate_hresponse(traces, dataset: Dataset, exposure: int, cfg: BkmrConfig) -> ExposureResponse:
    """Posterior exposure-response curve for one mixture member.

    Grid spans the exposure's 5th-95th sample percentiles; the other
    exposures sit at their medians.  For a thinned subset of states the GP
    posterior of h at each query is evaluated conditional on that state;
    the curve is the pointwise mean of the conditional means, and the band
    takes 2.5/97.5 percentiles across one conditional posterior draw per
    state (mean plus conditional sd times a seed-determined normal), so it
    reflects both hyperparameter spread and the GP's own uncertainty.
    (Covariates do not enter h; they matter only through y - X beta.)
    """
    traces = _as_trace_list(traces)
    if not 0 <= exposure < dataset.p:
        raise DataError("exposure index out of range")
    lo, hi = np.quantile(dataset.Z[:, exposure], [0.05, 0.95], method="linear")
    grid = np.linspace(lo, hi, cfg.grid_points)
    medians = np.median(dataset.Z, axis=0)
    queries = np.tile(medians, (cfg.grid_points, 1))
    queries[:, exposure] = grid
    stream = _band_stream(traces[0].seed, exposure)
    means = []
    draws = []
    for trace, t in _thinned_states(traces, cfg.thin):
        state = _StateSolver(dataset, trace, t)
        mean, white = state.mean_and_whitened(queries)
        sd = state.point_sd(white)
        means.append(mean)
        draws.append(mean + sd * stream.normals(cfg.grid_points))
    mean_mat = np.stack(means)
    draw_mat = np.stack(draws)
    return ExposureResponse(
        exposure=exposure,
        grid=grid,
        mean=mean_mat.mean(axis=0),
        lower=np.quantile(draw_mat, 0.025, axis=0, method="linear"),
        upper=np.quantile(draw_mat, 0.975, axis=0, method="linear"),
    )


def overall_mixture_effect(traces, dataset: Dataset, percentiles, cfg: BkmrConfig) -> list[OverallEffect]:
    """h(all exposures at percentile pi) - h(all exposures at their medians).

    Summarized like the univariate curve: the point estimate averages the
    state-conditional means; the interval takes percentiles across one
    conditional posterior draw of the contrast per thinned state.
    """
    traces = _as_trace_list(traces)
    percentiles = [float(q) for q in percentiles]
    if any(not 0.0 < q < 1.0 for q in percentiles):
        raise DataError("percentiles must lie strictly inside (0, 1)")
    ref = np.quantile(dataset.Z, 0.5, axis=0, method="linear")
    queries = np.stack(
        [np.quantile(dataset.Z, q, axis=0, method="linear") for q in percentiles] + [ref]
    )
    # a query identical to the reference has contrast 0 by definition; skip
    # the arithmetic so rounding cannot smear it
    same_as_ref = np.array([np.array_equal(queries[i], ref) for i in range(len(percentiles))])
    stream = _band_stream(traces[0].seed, 1 << 20)
    means = []
    draws = []
    for trace, t in _thinned_states(traces, cfg.thin):
        state = _StateSolver(dataset, trace, t)
        mean, white = state.mean_and_whitened(queries)
        contrast = mean[:-1] - mean[-1]
        contrast[same_as_ref] = 0.0
        # Var(h(a) - h(ref)) = s2*lam*(2 - 2k(a, ref)) - s2*lam^2*||w_a - w_ref||^2
        k_pair = np.exp(-((queries[:-1] - ref) ** 2 @ state.r))
        dw = white[:, :-1] - white[:, -1][:, None]
        var = state.sigma2 * state.lam * (2.0 - 2.0 * k_pair) - (
            state.sigma2 * state.lam**2 * np.sum(dw * dw, axis=0)
        )
        sd = np.sqrt(np.clip(var, 0.0, None))
        sd[same_as_ref] = 0.0
        draw = contrast + sd * stream.normals(len(percentiles))
        means.append(contrast)
        draws.append(draw)
    mean_mat = np.stack(means)
    draw_mat = np.stack(draws)
    out = []
    for i, q in enumerate(percentiles):
        out.append(
            OverallEffect(
                percentile=q,
                mean=float(mean_mat[:, i].mean()),
                lower=float(np.quantile(draw_mat[:, i], 0.025, method="linear")),
                upper=float(np.quantile(draw_mat[:, i], 0.975, method="linear")),
            )
        )
    return out
