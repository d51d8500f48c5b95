"""Dataset validation, standardization, quantile scoring and fold assignment."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seedsweep.data import (
    Dataset,
    GroupSpec,
    kfold_assign,
    quantile_bin,
    quantile_scores,
    standardize,
)
from seedsweep.errors import DataError
from seedsweep.rng import SeedStream


def _dataset(n=30, p=4, c=2, seed=0):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, p))
    cov = rng.normal(size=(n, c))
    y = rng.normal(size=n)
    return Dataset.assemble(y, Z, cov)


class TestDataset:
    def test_assemble_defaults(self):
        d = _dataset()
        assert d.n == 30 and d.p == 4 and d.c == 3
        assert d.covariate_names[0] == "intercept"
        assert d.intercept_index == 0
        assert np.all(d.X[:, 0] == 1.0)
        assert d.penalty_mask.tolist() == [True] * 4 + [False] * 3
        assert d.groups.n_groups == 1

    def test_design_order_exposures_first(self):
        d = _dataset()
        D = d.design()
        assert np.array_equal(D[:, :4], d.Z)
        assert np.array_equal(D[:, 4:], d.X)

    def test_rejects_nan(self):
        Z = np.ones((5, 2))
        Z[2, 1] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            Dataset.assemble(np.zeros(5), Z)

    def test_rejects_single_row(self):
        with pytest.raises(DataError, match="at least two"):
            Dataset.assemble(np.zeros(1), np.ones((1, 2)))

    def test_requires_intercept_column(self):
        d = _dataset()
        with pytest.raises(DataError, match="intercept"):
            Dataset(
                y=d.y,
                Z=d.Z,
                X=d.X[:, 1:],  # drop the ones column
                exposure_names=d.exposure_names,
                covariate_names=d.covariate_names[1:],
                penalty_mask=d.penalty_mask[:-1],
                groups=d.groups,
            )

    def test_group_must_cover_every_exposure(self):
        with pytest.raises(DataError):
            GroupSpec(np.array([0, 0, 2]), ("a", "b", "c"))  # group 1 empty
        with pytest.raises(DataError):
            GroupSpec(np.array([0, 3]), ("a", "b"))  # index out of range

    def test_subset_preserves_metadata(self):
        d = _dataset()
        sub = d.subset(np.arange(10))
        assert sub.n == 10
        assert sub.exposure_names == d.exposure_names
        assert np.array_equal(sub.Z, d.Z[:10])


class TestStandardize:
    def test_basic_column(self):
        out, means, sds = standardize(np.array([[1.0], [2.0], [3.0]]), skip=np.array([False]))
        assert abs(out.mean()) < 1e-15
        assert abs(out.std() - 1.0) < 1e-15  # population sd
        assert means[0] == 2.0
        assert abs(sds[0] - np.sqrt(2.0 / 3.0)) < 1e-15

    def test_constant_column_errors_with_index(self):
        M = np.column_stack([np.arange(4.0), np.full(4, 7.0)])
        with pytest.raises(DataError, match="column at index 1"):
            standardize(M, skip=np.array([False, False]))

    def test_skip_leaves_column_untouched(self):
        M = np.column_stack([np.arange(4.0), np.full(4, 7.0)])
        out, means, sds = standardize(M, skip=np.array([False, True]))
        assert np.array_equal(out[:, 1], M[:, 1])
        assert means[1] == 0.0 and sds[1] == 1.0

    def test_back_transform_reproduces_unstandardized_predictions(self):
        # OLS on standardized design, coefficients mapped back, must predict
        # identically to OLS on the raw design
        rng = np.random.default_rng(3)
        D = np.column_stack([np.ones(25), rng.normal(size=(25, 3)) * [2.0, 0.5, 7.0]])
        y = rng.normal(size=25)
        skip = np.array([True, False, False, False])
        Ds, means, sds = standardize(D, skip)
        beta_std, *_ = np.linalg.lstsq(Ds, y, rcond=None)
        beta_raw, *_ = np.linalg.lstsq(D, y, rcond=None)
        back = beta_std / sds
        back[0] -= np.sum(beta_std * means / sds)
        assert np.max(np.abs(D @ back - D @ beta_raw)) < 1e-10


class TestQuantileBin:
    def test_even_split(self):
        x = np.arange(1.0, 9.0)
        assert quantile_bin(x, 4).tolist() == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_constant_vector_degenerate(self):
        with pytest.raises(DataError, match="degenerate"):
            quantile_bin(np.full(10, 3.0), 4)

    def test_q_below_two_rejected(self):
        with pytest.raises(DataError):
            quantile_bin(np.arange(10.0), 1)

    def test_needs_at_least_q_values(self):
        with pytest.raises(DataError):
            quantile_bin(np.arange(3.0), 4)

    def test_median_split_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=41)
            scores = quantile_bin(x, 2)
            median = np.quantile(x, 0.5, method="linear")
            expected = (x > median).astype(int)
            assert np.array_equal(scores, expected)

    def test_value_on_cut_point_goes_low(self):
        # quartile cuts of 1..8 are 2.75/4.5/6.25; a value equal to a cut stays low
        x = np.array([1.0, 2.0, 2.75, 4.0, 4.5, 6.0, 6.25, 8.0])
        cuts = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
        scores = quantile_bin(x, 4)
        for xi, si in zip(x, scores):
            assert si == int(np.sum(cuts < xi))

    def test_ties_share_a_bin(self):
        x = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 9.0])
        scores = quantile_bin(x, 4)
        for value in np.unique(x):
            assert len(set(scores[x == value])) == 1

    @given(st.lists(st.floats(-100, 100), min_size=6, max_size=60), st.integers(2, 5))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_value(self, values, q):
        x = np.array(values)
        try:
            scores = quantile_bin(x, q)
        except DataError:
            return  # degenerate draws are legal to reject
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(scores[order]) >= 0)

    def test_quantile_scores_names_bad_column(self):
        Z = np.column_stack([np.arange(8.0), np.full(8, 1.0)])
        with pytest.raises(DataError, match="column 1"):
            quantile_scores(Z, 4)


class TestKfold:
    def test_1003_by_10_sizes(self):
        labels = kfold_assign(1003, 10, SeedStream(1))
        sizes = sorted(np.bincount(labels).tolist())
        assert sizes == [100] * 7 + [101] * 3

    def test_n_equals_k(self):
        labels = kfold_assign(10, 10, SeedStream(2))
        assert sorted(np.bincount(labels).tolist()) == [1] * 10

    def test_deterministic(self):
        a = kfold_assign(57, 5, SeedStream(9))
        b = kfold_assign(57, 5, SeedStream(9))
        assert np.array_equal(a, b)

    def test_bad_k(self):
        with pytest.raises(DataError):
            kfold_assign(10, 1, SeedStream(0))
        with pytest.raises(DataError):
            kfold_assign(10, 11, SeedStream(0))

    @given(st.integers(4, 200), st.integers(2, 8), st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if k > n:
            return
        labels = kfold_assign(n, k, SeedStream(seed))
        assert labels.shape == (n,)
        sizes = np.bincount(labels, minlength=k)
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
