"""Predictive metrics, significance stars and behavioural-consistency screening."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import DataError, SpecificationError

if TYPE_CHECKING:
    from .engine import PosteriorSummary

# two-sided standard-normal critical values for p < 0.05, 0.01, 0.001
Z_CRITICAL = ((3.2905, "***"), (2.5758, "**"), (1.9600, "*"))

# orders-of-magnitude thresholds for monetary-ratio deviations
FLAG_WARN, FLAG_SEVERE = 2.0, 3.0
_FLAG_EPS = 1e-9


@dataclass(frozen=True)
class MetricsPair:
    cel: float
    gmpca: float

    @classmethod
    def from_log_probs(cls, log_probs) -> "MetricsPair":
        value = cel_from_log(log_probs)
        return cls(value, math.exp(-value))


def cel_from_log(log_probs) -> float:
    lp = np.asarray(log_probs, dtype=float).ravel()
    if lp.size == 0:
        raise DataError("cross-entropy of an empty sample")
    if np.any(lp == -np.inf) or np.any(np.isnan(lp)):
        raise DataError("zero or invalid probability in cross-entropy")
    return float(-lp.mean())


def cel(probabilities: Iterable[float]) -> float:
    """Cross-entropy loss, -(1/N) sum ln p_n, in nats per observation."""
    p = np.asarray(list(probabilities) if not isinstance(probabilities, np.ndarray)
                   else probabilities, dtype=float).ravel()
    if p.size == 0:
        raise DataError("cross-entropy of an empty sample")
    if np.any(p <= 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise DataError("probabilities must lie in (0, 1]")
    return float(-np.log(p).mean())


def gmpca(probabilities: Iterable[float]) -> float:
    """Geometric mean probability of the chosen alternative, exp(-CEL)."""
    return math.exp(-cel(probabilities))


def significance_stars(mean: float, sd: float) -> str:
    if sd < 0:
        raise ValueError("standard deviation must be nonnegative")
    if mean == 0:
        return ""
    if sd == 0:
        return "***"
    z = abs(mean) / sd
    for crit, stars in Z_CRITICAL:
        if z > crit:
            return stars
    return ""


@dataclass(frozen=True)
class CoefficientCheck:
    name: str
    sign_ok: bool
    ratio: float
    reference_ratio: float
    deviation: float  # |log10(ratio / reference_ratio)|
    flag: str  # "", "!" or "!!"


@dataclass(frozen=True)
class ConsistencyReport:
    cost_coefficient: str
    checks: tuple[CoefficientCheck, ...]

    def __getitem__(self, name: str) -> CoefficientCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def sign_errors(self) -> list[str]:
        return [c.name for c in self.checks if not c.sign_ok]

    @property
    def flagged(self) -> list[str]:
        return [c.name for c in self.checks if c.flag]


def deviation_flag(deviation: float) -> str:
    if not math.isfinite(deviation) or deviation >= FLAG_SEVERE - _FLAG_EPS:
        return "!!"
    if deviation >= FLAG_WARN - _FLAG_EPS:
        return "!"
    return ""


def _ratios(means: dict[str, float], cost: str) -> dict[str, float]:
    if cost not in means:
        raise SpecificationError(f"cost coefficient {cost!r} not in model")
    denom = means[cost]
    if denom == 0:
        return {k: math.nan for k in means}
    return {k: v / denom for k, v in means.items()}


def compare_coefficients(candidate: dict[str, float], reference: dict[str, float],
                         cost: str) -> ConsistencyReport:
    """Screen coefficient means of ``candidate`` against ``reference``."""
    if set(candidate) != set(reference):
        raise SpecificationError("candidate and reference have different coefficients")
    cand, ref = _ratios(candidate, cost), _ratios(reference, cost)
    checks = []
    for name in candidate:
        sign_ok = np.sign(candidate[name]) == np.sign(reference[name])
        r, r0 = cand[name], ref[name]
        if r == 0 and r0 == 0:
            dev = 0.0
        elif r == 0 or r0 == 0 or math.isnan(r) or math.isnan(r0):
            dev = math.inf
        else:
            dev = abs(math.log10(abs(r)) - math.log10(abs(r0)))
        checks.append(CoefficientCheck(name, bool(sign_ok), r, r0, dev, deviation_flag(dev)))
    return ConsistencyReport(cost, tuple(checks))


def behavioral_consistency(candidate: "PosteriorSummary", reference: "PosteriorSummary",
                           cost_coefficient: str) -> ConsistencyReport:
    """Monetary ratios and sign agreement of ``candidate`` relative to ``reference``.

    Ratios use utility-scale (simulated) means, so lognormal coefficients are
    compared on the same footing as fixed ones.
    """
    if candidate.spec.spec_hash != reference.spec.spec_hash:
        raise SpecificationError("summaries were estimated on different specifications")
    return compare_coefficients(candidate.coefficient_means(), reference.coefficient_means(),
                                cost_coefficient)


def value_of_time(summary: "PosteriorSummary", time_coefficients: Iterable[str],
                  cost_coefficient: str) -> dict[str, float]:
    means = summary.coefficient_means()
    missing = [n for n in [*time_coefficients, cost_coefficient] if n not in means]
    if missing:
        raise SpecificationError(f"unknown coefficients {missing}")
    cost = means[cost_coefficient]
    if cost == 0:
        raise ZeroDivisionError("cost coefficient mean is zero")
    return {n: means[n] / cost for n in time_coefficients}
