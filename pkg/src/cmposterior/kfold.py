"""K-fold aggregation: effective confusion matrices and fold correlation.

The K fold matrices of a cross-validation are correlated because training
sets overlap. They are summarised by an effective matrix whose counts are
the pooled counts deflated by ``1 + (K - 1) * rho``, where ``rho`` is the
correlation between fold results. ``rho`` is either fixed at ``1/K``, taken
from the interval ``[0, 1/K]``, or transferred from a reference method
through the ratio of overestimated CV variances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import CMError, ConfigError, EvaluationInput, GroupConfusionMatrix

STRATEGIES = ("fixed", "interval", "relative", "relative_interval")


@dataclass(frozen=True)
class RhoEstimate:
    strategy: str
    value: float
    interval: tuple[float, float] | None = None
    reference_method: str | None = None
    r_over: float | None = None
    clamped: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown rho strategy {self.strategy!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.value}")
        if self.interval is not None:
            lo, hi = self.interval
            if not (0.0 <= lo <= self.value <= hi <= 1.0):
                raise ConfigError(f"interval {self.interval} must contain rho={self.value} inside [0, 1]")
            object.__setattr__(self, "interval", (float(lo), float(hi)))

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "value": self.value,
            "interval": list(self.interval) if self.interval is not None else None,
            "reference_method": self.reference_method,
            "r_over": self.r_over,
            "clamped": self.clamped,
        }


@dataclass(frozen=True)
class HalfSplitPair:
    """Metric from a K-fold CV on one half of the data and on the disjoint other half."""

    mu: float
    mu_c: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.mu_c)):
            raise CMError(f"half-split metrics must be finite, got ({self.mu}, {self.mu_c})")


def effective_cm(fold_cms: Sequence[GroupConfusionMatrix], rho: float) -> GroupConfusionMatrix:
    """Effective confusion matrix of one group from its K fold matrices."""
    if len(fold_cms) == 0:
        raise CMError("effective_cm needs at least one fold matrix")
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    k = len(fold_cms)
    total = np.sum([cm.as_array() for cm in fold_cms], axis=0)
    return GroupConfusionMatrix.from_array(fold_cms[0].group_id, total / (1.0 + (k - 1) * rho))


def effective_input(data: EvaluationInput, rho: float) -> list[GroupConfusionMatrix]:
    """Effective matrix of every group; one ``rho`` governs all groups."""
    return [effective_cm(data.fold_matrices(gid), rho) for gid in data.group_ids]


def _check_k(K: int) -> None:
    if K < 2:
        raise ConfigError(f"fold correlation needs K >= 2, got K={K}")


def rho_fixed(K: int) -> RhoEstimate:
    _check_k(K)
    return RhoEstimate("fixed", 1.0 / K)


def rho_interval(K: int) -> RhoEstimate:
    """``rho`` in ``[0, 1/K]``, represented by the midpoint ``1/(2K)``."""
    _check_k(K)
    return RhoEstimate("interval", 0.5 / K, interval=(0.0, 1.0 / K))


def sigma_over(pairs: Sequence[HalfSplitPair]) -> float:
    """Overestimate of the K-fold CV variance from M disjoint half-split pairs.

    ``sum((mu_m - mu_c_m)**2) / (2 * M)``.
    """
    if len(pairs) == 0:
        raise CMError("sigma_over needs at least one half-split pair")
    return float(np.sum([(p.mu - p.mu_c) ** 2 for p in pairs]) / (2 * len(pairs)))


def relative_rho_raw(rho0: float, r: float, K: int) -> float:
    """``((r - 1) + r (K - 1) rho0) / (K - 1)``, unclamped."""
    return ((r - 1.0) + r * (K - 1) * rho0) / (K - 1)


def rho_relative(rho0: RhoEstimate, r_over: float, K: int, reference_method: str | None = None) -> RhoEstimate:
    """Transfer a reference correlation to another method.

    ``r_over`` is the reference method's overestimated CV variance divided by
    the target method's. A reference carrying an interval yields the
    ``relative_interval`` strategy with both endpoints mapped. Results are
    clamped into ``[0, 1]``.
    """
    _check_k(K)
    if not (np.isfinite(r_over) and r_over > 0):
        raise ConfigError(f"r_over must be a positive number, got {r_over}")
    raw = relative_rho_raw(rho0.value, r_over, K)
    value = float(np.clip(raw, 0.0, 1.0))
    clamped = value != raw
    interval = None
    strategy = "relative"
    if rho0.interval is not None:
        strategy = "relative_interval"
        ends = [relative_rho_raw(e, r_over, K) for e in rho0.interval]
        clamped = clamped or any(not 0.0 <= e <= 1.0 for e in ends)
        interval = tuple(float(np.clip(e, 0.0, 1.0)) for e in ends)
    return RhoEstimate(strategy, value, interval, reference_method, float(r_over), clamped)


def with_reference_method(estimate: RhoEstimate, name: str) -> RhoEstimate:
    return replace(estimate, reference_method=name)
