"""One-parameter exponential families with a bounded natural parameter.

Observations are modelled coordinatewise as

    f(y | theta_i) = h(y) exp(theta_i T(y) - A(theta_i)),   theta_i in [-M, M].

The base measure ``h`` is never represented: every statistic computed in this
package is a difference of log-likelihoods, in which it cancels.

Two families ship: ``bernoulli`` (log-odds parametrisation) and
``gaussian_unit_variance`` (mean parametrisation, unit variance). For the
Bernoulli family the box [-M, M] corresponds to success probabilities in
[sigmoid(-M), 1 - sigmoid(-M)].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    LambdaOutOfRange,
    NonsingularityViolated,
    ParameterOutOfBox,
)

BOX_TOL = 1e-12
DEFAULT_GRID = 1024


@dataclass(frozen=True)
class ExponentialFamily:
    """A nonsingular one-parameter exponential family restricted to [-M, M].

    Parameters
    ----------
    name : str
        ``"bernoulli"`` or ``"gaussian"``.
    M : float
        Half-width of the natural-parameter box.
    A, A1, A2 : callable
        Cumulant and its first two derivatives (vectorised over numpy arrays).
    T : callable
        Sufficient statistic, vectorised.
    sampler : callable
        ``sampler(theta, rng) -> y`` draws one observation per coordinate.
    """

    name: str
    M: float
    A: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    A1: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    A2: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    T: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        _check_family(self)

    def sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = self.check_box(theta)
        return self.sampler(theta, rng)

    def check_box(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.size and np.max(np.abs(theta)) > self.M + BOX_TOL:
            raise ParameterOutOfBox(
                f"parameter outside [-{self.M}, {self.M}]: max |theta| = {np.max(np.abs(theta))}"
            )
        return theta


def _check_family(family: ExponentialFamily, grid_size: int = 257) -> None:
    grid = np.linspace(-family.M, family.M, grid_size)
    a2 = family.A2(grid)
    if np.min(a2) <= 0:
        raise NonsingularityViolated(f"{family.name}: A'' not positive on [-M, M]")
    h = 1e-4
    a1_num = (family.A(grid + h) - family.A(grid - h)) / (2 * h)
    a2_num = (family.A1(grid + h) - family.A1(grid - h)) / (2 * h)
    a1 = family.A1(grid)
    if np.any(np.abs(a1_num - a1) > 1e-6 * np.maximum(1.0, np.abs(a1))):
        raise ValueError(f"{family.name}: A' does not match the derivative of A")
    if np.any(np.abs(a2_num - a2) > 1e-6 * np.maximum(1.0, np.abs(a2))):
        raise ValueError(f"{family.name}: A'' does not match the derivative of A'")


def _bernoulli_A(theta):
    return np.logaddexp(0.0, theta)


def _bernoulli_A2(theta):
    s = expit(theta)
    return s * (1.0 - s)


def _bernoulli_sample(theta, rng):
    return (rng.random(np.shape(theta)) < expit(theta)).astype(float)


def _identity(y):
    return np.asarray(y, dtype=float)


def _gaussian_A(theta):
    return 0.5 * np.square(theta)


def _gaussian_A2(theta):
    return np.ones_like(np.asarray(theta, dtype=float))


def _gaussian_sample(theta, rng):
    return theta + rng.standard_normal(np.shape(theta))


def bernoulli(M: float = 1.0) -> ExponentialFamily:
    """Bernoulli family in the log-odds parametrisation, A(t) = log(1 + e^t)."""
    return ExponentialFamily(
        name="bernoulli",
        M=float(M),
        A=_bernoulli_A,
        A1=expit,
        A2=_bernoulli_A2,
        T=_identity,
        sampler=_bernoulli_sample,
    )


def gaussian_unit_variance(M: float = 1.0) -> ExponentialFamily:
    """Unit-variance Gaussian with mean theta, A(t) = t^2 / 2."""
    return ExponentialFamily(
        name="gaussian",
        M=float(M),
        A=_gaussian_A,
        A1=_identity,
        A2=_gaussian_A2,
        T=_identity,
        sampler=_gaussian_sample,
    )


FAMILIES = {"bernoulli": bernoulli, "gaussian": gaussian_unit_variance}


def make_family(name: str, M: float) -> ExponentialFamily:
    try:
        return FAMILIES[name.lower()](M)
    except KeyError:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class FamilyConstants:
    """Curvature constants of a family over its parameter box.

    ``cM`` and ``CM`` sandwich the per-coordinate KL divergence between
    multiples of the squared distance; ``CprimeM`` bounds the centred log-MGF
    of T(Y); ``kappaM`` is the exponent used by the pairwise likelihood test.
    """

    cM: float
    CM: float
    CprimeM: float
    kappaM: float

    def as_dict(self) -> dict:
        return {"cM": self.cM, "CM": self.CM, "CprimeM": self.CprimeM, "kappaM": self.kappaM}


def default_kappa(CM: float, CprimeM: float) -> float:
    """Computable floor of the test exponent: min(1/(8 C'), 1/4) * C."""
    return min(1.0 / (8.0 * CprimeM), 0.25) * CM


def cumulant_constants(family: ExponentialFamily, grid_size: int = DEFAULT_GRID) -> FamilyConstants:
    """Evaluate min/max of A'' on an equispaced grid of [-M, M] (endpoints included)."""
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    grid = np.linspace(-family.M, family.M, grid_size)
    a2 = family.A2(grid)
    lo, hi = float(np.min(a2)), float(np.max(a2))
    if lo <= 0:
        raise NonsingularityViolated(f"{family.name}: min A'' = {lo} on the grid")
    CM = hi / 2.0
    CprimeM = 2.0 * CM
    return FamilyConstants(cM=lo / 2.0, CM=CM, CprimeM=CprimeM, kappaM=default_kappa(CM, CprimeM))


def _pair(family, theta, theta_prime):
    theta = family.check_box(np.atleast_1d(theta))
    theta_prime = family.check_box(np.atleast_1d(theta_prime))
    if theta.shape != theta_prime.shape:
        raise DimensionMismatch(f"shapes differ: {theta.shape} vs {theta_prime.shape}")
    return theta, theta_prime


def kl_divergence(family: ExponentialFamily, theta, theta_prime) -> float:
    """KL(P_theta || P_theta') summed over independent coordinates.

    Uses the exact identity KL_i = (t_i - t'_i) A'(t_i) + A(t'_i) - A(t_i).
    """
    theta, theta_prime = _pair(family, theta, theta_prime)
    terms = (theta - theta_prime) * family.A1(theta) + family.A(theta_prime) - family.A(theta)
    return float(np.sum(terms))


def log_likelihood(family: ExponentialFamily, theta, y) -> float:
    """sum_i theta_i T(y_i) - A(theta_i), i.e. the log-likelihood without log h(y)."""
    theta = family.check_box(np.atleast_1d(theta))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != theta.shape:
        raise DimensionMismatch(f"len(y)={y.shape} but len(theta)={theta.shape}")
    return float(np.sum(theta * family.T(y) - family.A(theta)))


@dataclass
class MGFReport:
    theta_i: float
    lambdas: np.ndarray
    empirical: np.ndarray
    std_error: np.ndarray
    bound: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def mgf_bound_check(
    family: ExponentialFamily,
    theta_i: float,
    lambda_grid,
    samples: int,
    seed: int,
    constants: FamilyConstants | None = None,
) -> MGFReport:
    """Monte Carlo check of log E exp(l (T - E T)) <= l^2 C' / 2 over a grid of l.

    The log-MGF standard error is the delta-method one, sd(e^Z) / (sqrt(samples) mean(e^Z)).
    A grid point is flagged only if the estimate exceeds the bound by more
    than three standard errors.
    """
    lambdas = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    if np.any(np.abs(lambdas) > family.M + BOX_TOL):
        raise LambdaOutOfRange(f"lambda outside [-{family.M}, {family.M}]")
    family.check_box([theta_i])
    constants = constants or cumulant_constants(family)
    rng = np.random.default_rng(seed)
    theta = np.full(samples, float(theta_i))
    mean_t = float(family.A1(np.float64(theta_i)))
    empirical = np.empty_like(lambdas)
    se = np.empty_like(lambdas)
    for k, lam in enumerate(lambdas):
        centred = family.T(family.sampler(theta, rng)) - mean_t
        w = np.exp(lam * centred)
        m = w.mean()
        empirical[k] = np.log(m)
        se[k] = w.std(ddof=1) / (np.sqrt(samples) * m) if samples > 1 else np.inf
    bound = lambdas**2 * constants.CprimeM / 2.0
    violations = [
        (float(lam), float(e), float(b))
        for lam, e, s, b in zip(lambdas, empirical, se, bound)
        if e - 3.0 * s > b
    ]
    return MGFReport(float(theta_i), lambdas, empirical, se, bound, violations)
