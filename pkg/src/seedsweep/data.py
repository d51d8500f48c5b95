"""Shared data model plus the deterministic preprocessing primitives.

A :class:`Dataset` bundles the outcome, the exposure mixture, the covariate
block (which always carries an intercept column) and the penalization /
grouping metadata every estimator needs.  The module also hosts
standardization, quantile scoring and fold assignment, which are used by
more than one model.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .rng import SeedStream


@dataclass(frozen=True)
class GroupSpec:
    """Partition of the exposures into named groups.

    ``assignments[j]`` is the group index of exposure ``j``; every group
    index in ``[0, n_groups)`` must occur at least once.
    """

    assignments: np.ndarray
    group_names: tuple[str, ...]

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "group_names", tuple(self.group_names))
        g = len(self.group_names)
        if a.ndim != 1:
            raise DataError("group assignments must be a vector")
        if a.size and (a.min() < 0 or a.max() >= g):
            raise DataError(f"group assignment outside [0, {g})")
        present = np.unique(a)
        if present.size != g:
            missing = sorted(set(range(g)) - set(present.tolist()))
            raise DataError(f"empty group indices: {missing}")

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def members(self, g: int) -> np.ndarray:
        """Exposure indices belonging to group ``g`` (ascending)."""
        return np.flatnonzero(self.assignments == g)


@dataclass(frozen=True)
class Dataset:
    """Outcome, exposures, covariates, penalization mask and grouping.

    Shapes: ``y`` is (n,), ``Z`` is (n, p), ``X`` is (n, c).  ``X`` must
    contain an all-ones intercept column.  ``penalty_mask`` has p + c
    entries in coefficient order (exposures first, then covariates);
    ``True`` marks a penalized coefficient.
    """

    y: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    exposure_names: tuple[str, ...]
    covariate_names: tuple[str, ...]
    penalty_mask: np.ndarray
    groups: GroupSpec
    intercept_index: int = field(init=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        Z = np.asarray(self.Z, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        mask = np.asarray(self.penalty_mask, dtype=bool)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "penalty_mask", mask)
        object.__setattr__(self, "exposure_names", tuple(self.exposure_names))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

        if y.ndim != 1 or Z.ndim != 2 or X.ndim != 2:
            raise DataError("y must be a vector; Z and X must be matrices")
        n = y.shape[0]
        if n < 2:
            raise DataError("need at least two observations")
        if Z.shape[0] != n or X.shape[0] != n:
            raise DataError("row counts of y, Z and X disagree")
        for name, arr in (("y", y), ("Z", Z), ("X", X)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if len(self.exposure_names) != Z.shape[1]:
            raise DataError("exposure_names length does not match Z")
        if len(self.covariate_names) != X.shape[1]:
            raise DataError("covariate_names length does not match X")
        if mask.shape != (Z.shape[1] + X.shape[1],):
            raise DataError("penalty_mask must have p + c entries")
        if self.groups.assignments.shape != (Z.shape[1],):
            raise DataError("group assignments must cover every exposure")

        ones = [j for j in range(X.shape[1]) if np.all(X[:, j] == 1.0)]
        if not ones:
            raise DataError("X must include an all-ones intercept column")
        object.__setattr__(self, "intercept_index", ones[0])

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def c(self) -> int:
        return self.X.shape[1]

    def design(self) -> np.ndarray:
        """Full design matrix in coefficient order: [Z | X]."""
        return np.hstack([self.Z, self.X])

    def coefficient_names(self) -> tuple[str, ...]:
        return self.exposure_names + self.covariate_names

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row-subset sharing names, mask and groups."""
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows],
            Z=self.Z[rows],
            X=self.X[rows],
            exposure_names=self.exposure_names,
            covariate_names=self.covariate_names,
            penalty_mask=self.penalty_mask,
            groups=self.groups,
        )

    @classmethod
    def assemble(
        cls,
        y,
        Z,
        covariates=None,
        exposure_names=None,
        covariate_names=None,
        groups: GroupSpec | None = None,
        penalty_mask=None,
    ) -> "Dataset":
        """Build a dataset, prepending the intercept column.

        Defaults mirror the usual setup: only exposures are penalized, and
        all exposures fall into a single group when none are given.
        """
        y = np.asarray(y, dtype=np.float64)
        Z = np.asarray(Z, dtype=np.float64)
        n, p = Z.shape
        if covariates is None:
            covariates = np.empty((n, 0))
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        X = np.hstack([np.ones((n, 1)), covariates])
        if exposure_names is None:
            exposure_names = tuple(f"z{j + 1}" for j in range(p))
        if covariate_names is None:
            covariate_names = tuple(
                ["intercept"] + [f"x{j + 1}" for j in range(covariates.shape[1])]
            )
        else:
            covariate_names = ("intercept",) + tuple(covariate_names)
        if groups is None:
            groups = GroupSpec(np.zeros(p, dtype=np.int64), ("all",))
        if penalty_mask is None:
            penalty_mask = np.concatenate(
                [np.ones(p, dtype=bool), np.zeros(X.shape[1], dtype=bool)]
            )
        return cls(
            y=y,
            Z=Z,
            X=X,
            exposure_names=exposure_names,
            covariate_names=covariate_names,
            penalty_mask=penalty_mask,
            groups=groups,
        )


def standardize(M: np.ndarray, skip: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center/scale columns of ``M`` to mean 0, sd 1 (population sd, denominator n).

    Columns flagged in ``skip`` are left untouched and get mean 0 / sd 1
    recorded so back-transformation is a no-op for them.  A zero-variance
    column that is not skipped is an error.
    """
    M = np.asarray(M, dtype=np.float64)
    skip = np.asarray(skip, dtype=bool)
    if skip.shape != (M.shape[1],):
        raise DataError("skip mask must have one entry per column")
    means = np.zeros(M.shape[1])
    sds = np.ones(M.shape[1])
    active = ~skip
    if active.any():
        mu = M[:, active].mean(axis=0)
        sd = M[:, active].std(axis=0)  # ddof=0: population sd
        bad = np.flatnonzero(active)[sd == 0.0]
        if bad.size:
            raise DataError(f"zero-variance column at index {int(bad[0])}")
        means[active] = mu
        sds[active] = sd
    out = M.copy()
    out[:, active] = (M[:, active] - means[active]) / sds[active]
    return out, means, sds


def quantile_bin(x: np.ndarray, q: int) -> np.ndarray:
    """Integer quantile scores in {0, ..., q-1}.

    Cut points are the j/q sample quantiles (type-7, linear interpolation);
    a value equal to a cut point stays in the lower bin, so tied values
    always share a bin.
    """
    x = np.asarray(x, dtype=np.float64)
    if q < 2:
        raise DataError("degenerate quantile binning: q must be >= 2")
    if x.ndim != 1 or x.size < q:
        raise DataError("quantile_bin needs a vector with at least q values")
    cuts = np.quantile(x, np.arange(1, q) / q, method="linear")
    scores = (x[:, None] > cuts[None, :]).sum(axis=1)
    if np.unique(scores).size < 2:
        raise DataError("degenerate quantile binning: fewer than 2 occupied bins")
    return scores.astype(np.int64)


def quantile_scores(Z: np.ndarray, q: int) -> np.ndarray:
    """Column-wise :func:`quantile_bin` of an exposure matrix."""
    Z = np.asarray(Z, dtype=np.float64)
    out = np.empty(Z.shape, dtype=np.float64)
    for j in range(Z.shape[1]):
        try:
            out[:, j] = quantile_bin(Z[:, j], q)
        except DataError as exc:
            raise DataError(f"exposure column {j}: {exc}") from exc
    return out


def kfold_assign(n: int, k: int, stream: SeedStream) -> np.ndarray:
    """Random fold labels in {0, ..., k-1}; sizes differ by at most one.

    A random permutation is dealt round-robin into the k folds, so the
    labels are deterministic given the stream state.
    """
    if k < 2 or k > n:
        raise DataError(f"k-fold split needs 2 <= k <= n, got k={k}, n={n}")
    perm = stream.shuffle(range(n))
    labels = np.empty(n, dtype=np.int64)
    for pos, idx in enumerate(perm):
        labels[idx] = pos % k
    return labels
