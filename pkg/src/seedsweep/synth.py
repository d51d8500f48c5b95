"""Synthetic datasets standing in for the non-redistributable survey data.

Exposures are drawn from a multivariate normal with either an exchangeable
correlation ``rho`` or an explicit correlation matrix.  The outcome is the
chosen exposure truth plus two fixed-coefficient covariates (one standard
normal, one fair binary) plus Gaussian noise.  Everything is a pure
function of ``spec.seed``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroupSpec
from .errors import DataError
from .rng import SeedStream

COVARIATE_COEFS = (0.5, -0.25)  # continuous, binary
TRUTHS = ("null", "linear", "quadratic-single")


@dataclass(frozen=True)
class SyntheticSpec:
    """Size, correlation, truth and noise of a generated dataset.

    ``truth`` selects the exposure contribution to the outcome: nothing
    (``null``), ``Z @ beta`` (``linear``; ``beta`` required), or the square
    of the first exposure (``quadratic-single``).
    """

    n: int
    p: int
    n_groups: int = 1
    rho: float = 0.0
    correlation: np.ndarray | None = None  # overrides rho when given
    truth: str = "null"
    beta: tuple[float, ...] | None = None
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise DataError("synthetic spec needs n >= 2 and p >= 1")
        if not 1 <= self.n_groups <= self.p:
            raise DataError("n_groups must lie in [1, p]")
        if self.truth not in TRUTHS:
            raise DataError(f"truth must be one of {TRUTHS}")
        if self.truth == "linear":
            if self.beta is None or len(self.beta) != self.p:
                raise DataError("linear truth needs a beta vector of length p")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be >= 0")
        if self.correlation is None and self.p > 1:
            if not (-1.0 / (self.p - 1) < self.rho < 1.0):
                raise DataError("exchangeable rho must lie in (-1/(p-1), 1)")


def _correlation_cholesky(spec: SyntheticSpec) -> np.ndarray:
    if spec.correlation is not None:
        C = np.asarray(spec.correlation, dtype=np.float64)
        if C.shape != (spec.p, spec.p) or not np.allclose(C, C.T):
            raise DataError("correlation matrix must be symmetric p x p")
        try:
            return np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise DataError("correlation matrix is not positive definite") from None
    C = np.full((spec.p, spec.p), spec.rho)
    np.fill_diagonal(C, 1.0)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise DataError("exchangeable correlation is not positive definite") from None


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic dataset from a spec; same spec, same bits.

    Draw order: the n*p exposure normals (row major), the continuous
    covariate, the binary covariate uniforms, then the noise normals.
    """
    stream = SeedStream(spec.seed)
    L = _correlation_cholesky(spec)
    E = stream.normals(spec.n * spec.p).reshape(spec.n, spec.p)
    Z = E @ L.T
    x1 = stream.normals(spec.n)
    x2 = np.array([1.0 if stream.uniform01() < 0.5 else 0.0 for _ in range(spec.n)])
    noise = stream.normals(spec.n)

    if spec.truth == "null":
        h = np.zeros(spec.n)
    elif spec.truth == "linear":
        h = Z @ np.asarray(spec.beta, dtype=np.float64)
    else:  # quadratic-single
        h = Z[:, 0] ** 2
    y = h + COVARIATE_COEFS[0] * x1 + COVARIATE_COEFS[1] * x2 + spec.noise_sd * noise

    assignments = np.concatenate(
        [np.full(len(chunk), g, dtype=np.int64)
         for g, chunk in enumerate(np.array_split(np.arange(spec.p), spec.n_groups))]
    )
    groups = GroupSpec(assignments, tuple(f"g{g + 1}" for g in range(spec.n_groups)))
    return Dataset.assemble(
        y,
        Z,
        covariates=np.column_stack([x1, x2]),
        exposure_names=tuple(f"z{j + 1}" for j in range(spec.p)),
        covariate_names=("x1", "x2"),
        groups=groups,
    )
