"""BKMR tests: kernel algebra, sampler contracts, diagnostics, simulations.

The simulation checks use desk-scale chains (n ~ 120, ~1000 iterations);
they probe structure (coverage, monotonicity, signal ranking), not exact
posterior values.
"""

import math

import numpy as np
import pytest

from seedsweep.bkmr import (
    BkmrConfig,
    McmcTrace,
    compute_pips,
    gaussian_kernel,
    gelman_rubin,
    mcmc_run,
    overall_mixture_effect,
    univariate_hresponse,
)
from seedsweep.data import Dataset, GroupSpec
from seedsweep.errors import DataError, ModelError
from seedsweep.synth import SyntheticSpec, generate_synthetic


def small_dataset(seed=0, n=120, p=3, truth="null", beta=None, groups=3):
    return generate_synthetic(
        SyntheticSpec(
            n=n, p=p, n_groups=groups, rho=0.2, truth=truth, beta=beta,
            noise_sd=1.0, seed=seed,
        )
    )


def quick_config(**kw):
    defaults = dict(n_iter=1000, burn_in=500, n_chains=1, thin=10)
    defaults.update(kw)
    return BkmrConfig(**defaults)


class TestGaussianKernel:
    def test_zero_scales_give_all_ones(self):
        Z = np.random.default_rng(0).normal(size=(6, 3))
        assert np.all(gaussian_kernel(Z, np.zeros(3)) == 1.0)

    def test_unit_diagonal(self):
        Z = np.random.default_rng(1).normal(size=(8, 2))
        K = gaussian_kernel(Z, np.array([0.7, 1.3]))
        assert np.allclose(np.diag(K), 1.0)
        assert np.allclose(K, K.T)

    def test_two_point_formula(self):
        Z = np.array([[0.0, 1.0], [2.0, 1.0]])
        K = gaussian_kernel(Z, np.array([1.0, 0.0]))
        assert abs(K[0, 1] - math.exp(-4.0)) < 1e-15

    def test_negative_scale_rejected(self):
        with pytest.raises(DataError):
            gaussian_kernel(np.zeros((3, 2)), np.array([0.5, -0.1]))

    def test_positive_semidefinite_with_jitter(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            Z = rng.normal(size=(25, 4))
            r = rng.uniform(0, 2, size=4)
            K = gaussian_kernel(Z, r)
            eigmin = np.linalg.eigvalsh(K + 1e-8 * np.eye(25))[0]
            assert eigmin > 0


class TestGelmanRubin:
    def test_identical_chains_formula(self):
        chain = np.random.default_rng(3).normal(size=250)
        rhat = gelman_rubin([chain, chain.copy()])
        n = chain.size
        assert abs(rhat - math.sqrt((n - 1) / n)) < 1e-12

    def test_separated_chains_direct_formula(self):
        rng = np.random.default_rng(4)
        n = 100
        a = rng.normal(size=n)
        a = (a - a.mean()) / a.std(ddof=1)  # mean 0, unit sample variance
        b = a + 10.0  # mean 10, same within-variance
        rhat = gelman_rubin([a, b])
        W = 1.0
        B = n * np.var([a.mean(), b.mean()], ddof=1)
        expected = math.sqrt(((n - 1) / n * W + B / n) / W)
        assert abs(rhat - expected) < 1e-12
        assert rhat > 1.5

    def test_one_chain_rejected(self):
        with pytest.raises(DataError):
            gelman_rubin([np.arange(5.0)])

    def test_degenerate_cases(self):
        const = np.full(10, 2.0)
        assert gelman_rubin([const, const.copy()]) == 1.0
        with pytest.raises(ModelError, match="degenerate"):
            gelman_rubin([const, const + 1.0])


class TestMcmcContracts:
    def test_trace_length_and_shapes(self):
        d = small_dataset()
        cfg = quick_config(n_iter=300, burn_in=120)
        trace = mcmc_run(d, cfg, 1)[0]
        assert len(trace) == 180
        assert trace.beta.shape == (180, d.c)
        assert trace.r.shape == (180, d.p)
        assert trace.delta_group.shape == (180, d.groups.n_groups)

    def test_bit_identical_given_seed(self):
        d = small_dataset()
        cfg = quick_config(n_iter=250, burn_in=100, n_chains=2)
        a = mcmc_run(d, cfg, 5)
        b = mcmc_run(d, cfg, 5)
        for ta, tb in zip(a, b):
            for f in ("beta", "sigma2", "lam", "r", "delta_group", "delta_within", "log_post"):
                assert np.array_equal(getattr(ta, f), getattr(tb, f)), f

    def test_chains_differ(self):
        d = small_dataset()
        cfg = quick_config(n_iter=250, burn_in=100, n_chains=2)
        a, b = mcmc_run(d, cfg, 5)
        assert a.chain == 0 and b.chain == 1
        assert not np.array_equal(a.sigma2, b.sigma2)

    def test_hierarchy_invariant(self):
        d = small_dataset(truth="linear", beta=(0.8, 0.0, 0.0))
        cfg = quick_config()
        trace = mcmc_run(d, cfg, 9)[0]
        assert np.all((trace.r > 0) == (trace.delta_within == 1))
        for m in range(d.p):
            g = int(d.groups.assignments[m])
            assert not np.any(
                (trace.delta_within[:, m] == 1) & (trace.delta_group[:, g] == 0)
            )

    def test_n_cap_enforced(self):
        d = small_dataset(n=60)
        cfg = quick_config(max_n=50)
        with pytest.raises(ModelError, match="cap"):
            mcmc_run(d, cfg, 1)

    def test_selection_disabled_keeps_r_zero(self):
        d = small_dataset()
        cfg = quick_config(variable_selection=False, lam_fixed=0.4)
        trace = mcmc_run(d, cfg, 2)[0]
        assert np.all(trace.r == 0.0)
        assert np.all(trace.lam == 0.4)
        assert np.all(trace.delta_group == 0)

    def test_conjugate_closed_form(self):
        d = small_dataset(seed=31, n=150)
        lam = 0.5
        cfg = BkmrConfig(
            n_iter=4000, burn_in=1500, n_chains=2,
            variable_selection=False, lam_fixed=lam,
        )
        traces = mcmc_run(d, cfg, 17)
        betas = np.concatenate([t.beta for t in traces])
        V = np.eye(d.n) + lam * np.ones((d.n, d.n))
        Vi = np.linalg.inv(V)
        gls = np.linalg.solve(d.X.T @ Vi @ d.X, d.X.T @ Vi @ d.y)
        nb = 25
        usable = (betas.shape[0] // nb) * nb
        batches = betas[:usable].reshape(nb, -1, d.c).mean(axis=1)
        mcse = batches.std(axis=0, ddof=1) / math.sqrt(nb)
        assert np.all(np.abs(betas.mean(axis=0) - gls) <= 2.0 * mcse)


class TestPips:
    def _trace(self, dg, dw, seed=0):
        T = dg.shape[0]
        p = dw.shape[1]
        G = dg.shape[1]
        return McmcTrace(
            beta=np.zeros((T, 1)),
            sigma2=np.ones(T),
            lam=np.ones(T),
            r=dw.astype(float),
            delta_group=dg.astype(np.int8),
            delta_within=dw.astype(np.int8),
            log_post=np.zeros(T),
            chain=0,
            seed=seed,
        )

    def test_always_on_group(self):
        groups = GroupSpec(np.array([0, 0]), ("a",))
        dg = np.ones((40, 1), dtype=int)
        dw = np.zeros((40, 2), dtype=int)
        pips = compute_pips(self._trace(dg, dw), groups)
        assert pips.group_pips[0] == 1.0

    def test_constructed_conditional_fraction(self):
        # group on in 50 of 100 iterations; member on in 25 of those 50
        groups = GroupSpec(np.array([0]), ("a",))
        dg = np.zeros((100, 1), dtype=int)
        dg[:50, 0] = 1
        dw = np.zeros((100, 1), dtype=int)
        dw[:25, 0] = 1
        pips = compute_pips(self._trace(dg, dw), groups)
        assert pips.group_pips[0] == 0.5
        assert pips.conditional_pips[0] == 0.5
        assert pips.conditional_defined[0]

    def test_never_active_group_flagged(self):
        groups = GroupSpec(np.array([0, 1]), ("a", "b"))
        dg = np.zeros((30, 2), dtype=int)
        dg[:, 0] = 1
        dw = np.zeros((30, 2), dtype=int)
        pips = compute_pips(self._trace(dg, dw), groups)
        assert pips.conditional_pips[1] == 0.0
        assert not pips.conditional_defined[1]
        assert pips.conditional_defined[0]

    def test_pools_over_chains(self):
        groups = GroupSpec(np.array([0]), ("a",))
        on = self._trace(np.ones((10, 1), int), np.ones((10, 1), int))
        off = self._trace(np.zeros((10, 1), int), np.zeros((10, 1), int))
        pips = compute_pips([on, off], groups)
        assert pips.group_pips[0] == 0.5

    def test_exact_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        p, G, T = 5, 2, 60
        assignments = np.array([0, 1, 0, 1, 0])
        groups = GroupSpec(assignments, ("a", "b"))
        dg = rng.integers(0, 2, size=(T, G))
        dw = rng.integers(0, 2, size=(T, p)) & dg[:, assignments]
        base = compute_pips(self._trace(dg, dw), groups)
        perm = np.array([4, 2, 0, 1, 3])
        groups_perm = GroupSpec(assignments[perm], ("a", "b"))
        permuted = compute_pips(self._trace(dg, dw[:, perm]), groups_perm)
        assert np.array_equal(permuted.conditional_pips, base.conditional_pips[perm])
        assert np.array_equal(permuted.group_pips, base.group_pips)


class TestPosteriorQueries:
    def test_grid_contract(self):
        d = small_dataset()
        cfg = quick_config(n_iter=400, burn_in=200)
        traces = mcmc_run(d, cfg, 3)
        er = univariate_hresponse(traces, d, 1, cfg)
        assert er.grid.shape == (cfg.grid_points,)
        lo, hi = np.quantile(d.Z[:, 1], [0.05, 0.95], method="linear")
        assert er.grid[0] == lo and er.grid[-1] == hi
        assert np.all(er.lower <= er.mean) and np.all(er.mean <= er.upper)

    def test_null_truth_band_covers_zero(self):
        cfg = quick_config()
        total = 0
        n_seeds = 20
        for seed in range(1, n_seeds + 1):
            d = small_dataset(seed=seed, truth="null")
            traces = mcmc_run(d, cfg, seed)
            er = univariate_hresponse(traces, d, 0, cfg)
            total += int(np.sum((er.lower <= 0.0) & (0.0 <= er.upper)))
        assert total / n_seeds >= 45.0

    def test_linear_truth_monotone_curve(self):
        cfg = quick_config()
        good = 0
        n_seeds = 20
        for seed in range(1, n_seeds + 1):
            d = small_dataset(seed=seed, truth="linear", beta=(1.0, 0.0, 0.0))
            traces = mcmc_run(d, cfg, seed)
            er = univariate_hresponse(traces, d, 0, cfg)
            middle = er.mean[5:45]  # middle 80% of the 50-point grid
            if np.all(np.diff(middle) > -1e-9):
                good += 1
        assert good >= 18

    def test_overall_effect_contract(self):
        d = small_dataset()
        cfg = quick_config(n_iter=400, burn_in=200)
        traces = mcmc_run(d, cfg, 4)
        effects = overall_mixture_effect(traces, d, [0.25, 0.5, 0.75], cfg)
        assert len(effects) == 3
        mid = effects[1]
        assert mid.mean == 0.0 and mid.lower == 0.0 and mid.upper == 0.0
        with pytest.raises(DataError):
            overall_mixture_effect(traces, d, [0.0], cfg)

    def test_additive_truth_contrast_in_interval(self):
        cfg = quick_config(n_iter=1200, burn_in=600, n_chains=2, thin=5)
        hits = 0
        n_seeds = 20
        for seed in range(1, n_seeds + 1):
            d = small_dataset(seed=seed, truth="linear", beta=(1.0, 1.0, 1.0))
            truth = float(
                np.sum(
                    np.quantile(d.Z, 0.75, axis=0, method="linear")
                    - np.quantile(d.Z, 0.5, axis=0, method="linear")
                )
            )
            traces = mcmc_run(d, cfg, seed)
            (eff,) = overall_mixture_effect(traces, d, [0.75], cfg)
            if eff.lower <= truth <= eff.upper:
                hits += 1
        assert hits >= 18

    def test_signal_ranking_survives_permutation(self):
        # statistical exchangeability: the active exposure tops the
        # conditional PIPs whichever column it occupies
        cfg = quick_config(n_iter=800, burn_in=400)
        d = small_dataset(seed=2, n=150, p=4, groups=2, truth="linear",
                          beta=(1.0, 0.0, 0.0, 0.0))
        perm = np.array([2, 0, 3, 1])
        d_perm = Dataset.assemble(
            d.y, d.Z[:, perm],
            covariates=d.X[:, 1:],
            groups=GroupSpec(d.groups.assignments[perm], d.groups.group_names),
        )
        from seedsweep.bkmr import compute_pips as cp

        base = cp(mcmc_run(d, cfg, 11), d.groups)
        permuted = cp(mcmc_run(d_perm, cfg, 11), d_perm.groups)
        assert int(np.argmax(base.conditional_pips)) == 0
        assert int(np.argmax(permuted.conditional_pips)) == int(np.argmax(perm == 0))
