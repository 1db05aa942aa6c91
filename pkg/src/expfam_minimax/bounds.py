"""Lower and upper bound calculators.

The analytic entropy formulas for the monotone lattice class carry unit
hidden constants, so only their exponents in n are meaningful. The q = 2
formula is an upper bound on the entropy and every report derived from it
says so.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .expfam import FamilyConstants
from .geometry import ConstraintSet, epsilon_star

LOG2 = math.log(2.0)

ENTROPY_SOURCES = ("analytic", "estimated-lower-bound")


@dataclass(frozen=True)
class FanoResult:
    """Outcome of the Fano-type lower bound at one scale.

    ``bound`` is None when ``lhs`` (the local entropy) does not exceed
    ``threshold``.
    """

    bound: float | None
    epsilon: float
    lhs: float
    threshold: float

    @property
    def holds(self) -> bool:
        return self.bound is not None


def fano_lower_bound(epsilon: float, c: float, CM: float, log_Nloc_at_eps: float) -> FanoResult:
    """eps^2 / (8 c^2) when log N^loc(eps, c) > 4 max(eps^2 CM, log 2)."""
    threshold = 4.0 * max(epsilon * epsilon * CM, LOG2)
    bound = epsilon * epsilon / (8.0 * c * c) if log_Nloc_at_eps > threshold else None
    return FanoResult(bound, float(epsilon), float(log_Nloc_at_eps), threshold)


def monotone_entropy_q1(n: int, M: float, epsilon: float) -> float:
    """sqrt(2 n M) / eps for eps >= 2M / sqrt(n), else n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if epsilon >= 2.0 * M / math.sqrt(n):
        return math.sqrt(2.0 * n * M) / epsilon
    return float(n)


def _scale(n: int, M: float) -> float:
    return 2.0 * math.sqrt(2.0 * n * M)


def monotone_entropy_q2(n: int, M: float, epsilon: float) -> float:
    """Upper bound (eps / a)^-2 log(a / eps)^2 with a = 2 sqrt(2 n M); zero for eps >= a."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a = _scale(n, M)
    return (a / epsilon) ** 2 * max(math.log(a / epsilon), 0.0) ** 2


def monotone_entropy_q3plus(q: int, n: int, M: float, epsilon: float) -> float:
    """(eps / (2 sqrt(2 n M)))^(-2 (q - 1)) for q >= 3."""
    if q < 3:
        raise ValueError("q must be >= 3")
    if n < 1:
        raise ValueError("n must be >= 1")
    return (_scale(n, M) / epsilon) ** (2 * (q - 1))


def monotone_entropy(q: int, n: int, M: float) -> Callable[[float], float]:
    """The analytic entropy for dimension q as a function of eps."""
    if q == 1:
        return lambda eps: monotone_entropy_q1(n, M, eps)
    if q == 2:
        return lambda eps: monotone_entropy_q2(n, M, eps)
    if q >= 3:
        return lambda eps: monotone_entropy_q3plus(q, n, M, eps)
    raise ValueError("q must be >= 1")


@dataclass(frozen=True)
class PredictedRate:
    value: float
    exponent: float
    upper_bound_only: bool

    def __float__(self):
        return self.value


def monotone_rate(q: int, n: float) -> PredictedRate:
    """Predicted total squared risk scale for the monotone class on L_{q,n}."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if q == 1:
        return PredictedRate(n ** (1.0 / 3.0), 1.0 / 3.0, False)
    if q == 2:
        return PredictedRate(math.sqrt(n) * math.log(n), 0.5, True)
    return PredictedRate(n ** (1.0 - 1.0 / q), 1.0 - 1.0 / q, False)


def segment_entropy(length: float) -> Callable[[float, float], float]:
    """Exact log packing number of a ball of radius eps in a segment, at separation > eps / c."""

    def oracle(eps: float, c: float) -> float:
        span = min(2.0 * eps, length)
        if span <= 0:
            return 0.0
        return math.log(max(1, math.ceil(span * c / eps)))

    return oracle


def volumetric_entropy(dim: int) -> Callable[[float, float], float]:
    """Upper bound dim log(1 + 2c) on the log packing number of any eps-ball in R^dim."""

    def oracle(eps: float, c: float) -> float:
        return dim * math.log1p(2.0 * c)

    return oracle


@dataclass
class RateReport:
    eps_star: float
    d: float
    minimax_rate: float
    entropy_source: str
    lower_bound: FanoResult | None = None
    kappaM: float | None = None
    upper_bound_only: bool = False

    def __post_init__(self):
        if self.entropy_source not in ENTROPY_SOURCES:
            raise ValueError(f"entropy_source must be one of {ENTROPY_SOURCES}")

    def as_dict(self) -> dict:
        lb = self.lower_bound
        return {
            "eps_star": self.eps_star,
            "d": self.d,
            "minimax_rate": self.minimax_rate,
            "entropy_source": self.entropy_source,
            "kappaM": self.kappaM,
            "upper_bound_only": self.upper_bound_only,
            "lower_bound": None if lb is None else lb.bound,
            "lower_bound_eps": None if lb is None else lb.epsilon,
            "lower_bound_lhs": None if lb is None else lb.lhs,
            "lower_bound_threshold": None if lb is None else lb.threshold,
        }

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.as_dict().items())

    @staticmethod
    def csv_header() -> str:
        return ",".join(RateReport(0.0, 0.0, 0.0, "analytic").as_dict())

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def minimax_rate(cset: ConstraintSet | None, constants: FamilyConstants,
                 entropy: Callable[[float], float], kappaM: float | None = None,
                 c: float = 8.0, d: float | None = None, entropy_source: str = "analytic",
                 tol: float = 1e-9, upper_bound_only: bool = False) -> RateReport:
    """Solve for eps*, cap by the diameter, and evaluate the Fano bound at delta*.

    ``entropy`` maps eps to log N^loc(eps, c). ``d`` defaults to the set's
    diameter.
    """
    if d is None:
        if cset is None:
            raise ValueError("either cset or d is required")
        d = cset.diameter
    kappa = constants.kappaM if kappaM is None else float(kappaM)
    eps = epsilon_star(entropy, kappa, d, tol)
    rate = min(eps * eps, d * d)
    lower = None
    if eps > 0:
        delta = eps * min(math.sqrt(kappa / (8.0 * constants.CM)), 0.5)
        lower = fano_lower_bound(delta, c, constants.CM, float(entropy(delta)))
    return RateReport(eps, float(d), rate, entropy_source, lower, kappa, upper_bound_only)
