"""Shared vocabulary: confusion matrices, Dirichlet priors, metrics, inputs.

Confusion-matrix cells are always ordered ``(tp, tn, fp, fn)``. Metric
evaluators operate on arrays of shape ``(..., S, 4)`` where ``S`` indexes
sensitive groups, with the reference group at index 0. That lets the same
evaluator score one observed family of matrices or a whole block of
posterior draws at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CELLS = ("tp", "tn", "fp", "fn")
TP, TN, FP, FN = range(4)


class CMError(ValueError):
    """Base class for input and configuration errors raised by this package."""


class ConfigError(CMError):
    pass


@dataclass(frozen=True)
class GroupConfusionMatrix:
    """Confusion matrix of one sensitive group.

    Cells are real-valued so that effective (fractional) counts from K-fold
    aggregation can be represented.
    """

    group_id: str
    tp: float
    tn: float
    fp: float
    fn: float

    def __post_init__(self):
        for name in CELLS:
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise CMError(f"cell {name}={value!r} of group {self.group_id!r} must be a finite non-negative number")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "group_id", str(self.group_id))

    @classmethod
    def from_array(cls, group_id: str, cells: Sequence[float]) -> GroupConfusionMatrix:
        if len(cells) != 4:
            raise CMError(f"expected 4 cells (tp, tn, fp, fn), got {len(cells)}")
        return cls(group_id, *cells)

    def as_array(self) -> np.ndarray:
        return np.array([self.tp, self.tn, self.fp, self.fn], dtype=float)

    def total(self) -> float:
        return self.tp + self.tn + self.fp + self.fn

    def scaled(self, factor: float) -> GroupConfusionMatrix:
        return GroupConfusionMatrix.from_array(self.group_id, self.as_array() * factor)


def pool(groups: Sequence[GroupConfusionMatrix]) -> GroupConfusionMatrix:
    """Cellwise sum of several group matrices, labelled ``"pooled"``."""
    if len(groups) == 0:
        raise CMError("cannot pool an empty list of confusion matrices")
    total = np.sum([g.as_array() for g in groups], axis=0)
    return GroupConfusionMatrix.from_array("pooled", total)


@dataclass(frozen=True)
class DirichletPrior:
    alpha: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) != 4:
            raise ConfigError(f"Dirichlet prior needs 4 concentrations, got {len(alpha)}")
        if not all(np.isfinite(a) and a > 0 for a in alpha):
            raise ConfigError(f"Dirichlet concentrations must be strictly positive, got {alpha}")
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class DirichletPosterior:
    group_id: str
    alpha_post: tuple[float, float, float, float]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha_post)
        if len(alpha) != 4 or not all(np.isfinite(a) and a > 0 for a in alpha):
            raise ConfigError(f"invalid posterior concentration {alpha} for group {self.group_id!r}")
        object.__setattr__(self, "alpha_post", alpha)

    def mean(self) -> np.ndarray:
        a = np.asarray(self.alpha_post)
        return a / a.sum()


# --------------------------------------------------------------------------- metrics


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _pooled(cms: np.ndarray) -> np.ndarray:
    return cms.sum(axis=-2)


def _accuracy(c):
    return _ratio(c[..., TP] + c[..., TN], c.sum(axis=-1))


def _tpr(c):
    return _ratio(c[..., TP], c[..., TP] + c[..., FN])


def _tnr(c):
    return _ratio(c[..., TN], c[..., TN] + c[..., FP])


def _fpr(c):
    return _ratio(c[..., FP], c[..., FP] + c[..., TN])


def _acceptance_rate(c):
    return _ratio(c[..., TP] + c[..., FP], c.sum(axis=-1))


def _ppv(c):
    return _ratio(c[..., TP], c[..., TP] + c[..., FP])


def _two_groups(cms: np.ndarray, name: str) -> np.ndarray:
    if cms.shape[-2] != 2:
        raise ConfigError(f"fairness metric {name!r} needs exactly two groups, got {cms.shape[-2]}")
    return cms


def _group_gap(rate: Callable, name: str) -> Callable:
    def evaluate(cms):
        cms = _two_groups(np.asarray(cms, dtype=float), name)
        per_group = rate(cms)
        return (per_group[..., 1] - per_group[..., 0])[..., None]

    return evaluate


def _performance(rate: Callable) -> Callable:
    def evaluate(cms):
        return rate(_pooled(np.asarray(cms, dtype=float)))[..., None]

    return evaluate


def _equalized_odds(cms):
    cms = _two_groups(np.asarray(cms, dtype=float), "eo")
    tpr, fpr = _tpr(cms), _fpr(cms)
    return np.stack([tpr[..., 1] - tpr[..., 0], fpr[..., 1] - fpr[..., 0]], axis=-1)


@dataclass(frozen=True)
class MetricSpec:
    """A metric as a pure function of the per-group confusion matrices.

    ``direction`` says what "better" means when two methods are compared:
    ``"higher"`` or ``"lower"`` for performance metrics, ``"zero"`` for signed
    fairness gaps (smaller magnitude is better) and ``"raw"`` when no ordering
    applies.
    """

    name: str
    kind: str
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    columns: tuple[str, ...] = ()
    direction: str = "higher"
    formula: str = ""
    min_groups: int = 1

    def __post_init__(self):
        if self.kind not in ("performance", "fairness"):
            raise ConfigError(f"metric kind must be 'performance' or 'fairness', got {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown metric direction {self.direction!r}")
        if not self.columns:
            object.__setattr__(self, "columns", (self.name,))

    @property
    def arity(self) -> int:
        return len(self.columns)

    def __call__(self, cms) -> np.ndarray:
        cms = np.asarray(cms, dtype=float)
        if cms.ndim < 2 or cms.shape[-1] != 4:
            raise ConfigError(f"metric {self.name!r} expects (..., groups, 4) counts, got shape {cms.shape}")
        if cms.shape[-2] < self.min_groups:
            raise ConfigError(f"metric {self.name!r} needs {self.min_groups} groups, got {cms.shape[-2]}")
        return self.evaluator(cms)


DIRECTIONS = ("higher", "lower", "zero", "raw")


def builtin_metrics() -> list[MetricSpec]:
    """Registry of the shipped binary metrics.

    Performance metrics are computed on the pooled matrix; fairness metrics
    are group-1 minus group-0 differences, group 0 being the reference.
    """
    return [
        MetricSpec("accuracy", "performance", _performance(_accuracy), formula="(tp+tn)/n"),
        MetricSpec("tpr", "performance", _performance(_tpr), formula="tp/(tp+fn)"),
        MetricSpec("tnr", "performance", _performance(_tnr), formula="tn/(tn+fp)"),
        MetricSpec("fpr", "performance", _performance(_fpr), direction="lower", formula="fp/(fp+tn)"),
        MetricSpec("ar", "performance", _performance(_acceptance_rate), direction="raw", formula="(tp+fp)/n"),
        MetricSpec("ppv", "performance", _performance(_ppv), formula="tp/(tp+fp)"),
        MetricSpec("dp", "fairness", _group_gap(_acceptance_rate, "dp"), direction="zero",
                   formula="AR_1 - AR_0", min_groups=2),
        MetricSpec("eop", "fairness", _group_gap(_tpr, "eop"), direction="zero",
                   formula="TPR_1 - TPR_0", min_groups=2),
        MetricSpec("pp", "fairness", _group_gap(_ppv, "pp"), direction="zero",
                   formula="PPV_1 - PPV_0", min_groups=2),
        MetricSpec("eo", "fairness", _equalized_odds, columns=("eo_tpr", "eo_fpr"), direction="zero",
                   formula="(TPR_1 - TPR_0, FPR_1 - FPR_0)", min_groups=2),
    ]


_REGISTRY = {m.name: m for m in builtin_metrics()}
_COLUMN_OWNER = {col: m for m in _REGISTRY.values() for col in m.columns}


def get_metric(name: str) -> MetricSpec:
    try:
        return _REGISTRY[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown metric {name!r}; available: {', '.join(_REGISTRY)}") from None


def resolve_metrics(metrics: Iterable[str | MetricSpec]) -> list[MetricSpec]:
    out = [m if isinstance(m, MetricSpec) else get_metric(m) for m in metrics]
    if not out:
        raise ConfigError("at least one metric is required")
    return out


def column_direction(column: str) -> str:
    """Direction of a sample column produced by a builtin metric (``"higher"`` if unknown)."""
    owner = _COLUMN_OWNER.get(column)
    return owner.direction if owner is not None else "higher"


def evaluate_metrics(metrics: Sequence[MetricSpec], cms: np.ndarray) -> np.ndarray:
    """Concatenate the outputs of ``metrics`` on counts of shape ``(..., S, 4)``."""
    return np.concatenate([np.asarray(m(cms), dtype=float) for m in metrics], axis=-1)


# --------------------------------------------------------------------------- inputs


@dataclass(frozen=True)
class EvaluationInput:
    """Observed confusion matrices, one tuple of group matrices per fold.

    A hold-out evaluation is the single-fold case. Group order is the same in
    every fold and the first group is the fairness reference group.
    """

    folds: tuple[tuple[GroupConfusionMatrix, ...], ...]
    source: str = "holdout"

    def __post_init__(self):
        folds = tuple(tuple(f) for f in self.folds)
        if not folds or not folds[0]:
            raise CMError("evaluation input needs at least one fold with one group")
        if self.source not in ("holdout", "kfold"):
            raise CMError(f"source must be 'holdout' or 'kfold', got {self.source!r}")
        order = [g.group_id for g in folds[0]]
        for k, fold in enumerate(folds):
            ids = [g.group_id for g in fold]
            if len(set(ids)) != len(ids):
                raise CMError(f"duplicate group labels in fold {k}: {ids}")
            if set(ids) != set(order):
                raise CMError(f"fold {k} has groups {sorted(ids)}, expected {sorted(order)}")
        # canonical order: that of the first fold
        folds = tuple(tuple(sorted(f, key=lambda g: order.index(g.group_id))) for f in folds)
        if self.source == "holdout" and len(folds) != 1:
            raise CMError(f"hold-out input must have exactly one fold, got {len(folds)}")
        object.__setattr__(self, "folds", folds)

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g.group_id for g in self.folds[0])

    def fold_matrices(self, group_id: str) -> list[GroupConfusionMatrix]:
        """The K matrices of one group, in fold order."""
        if group_id not in self.group_ids:
            raise CMError(f"unknown group {group_id!r}")
        return [next(g for g in fold if g.group_id == group_id) for fold in self.folds]

    def pooled_by_group(self) -> list[GroupConfusionMatrix]:
        """Per-group matrices summed over folds."""
        return [
            GroupConfusionMatrix.from_array(gid, pool(self.fold_matrices(gid)).as_array())
            for gid in self.group_ids
        ]

    def with_reference(self, reference_group: str | None) -> EvaluationInput:
        """Same input with ``reference_group`` moved to position 0."""
        if reference_group is None:
            return self
        if reference_group not in self.group_ids:
            raise ConfigError(f"reference group {reference_group!r} not among {list(self.group_ids)}")
        folds = tuple(
            tuple(sorted(fold, key=lambda g: g.group_id != reference_group)) for fold in self.folds
        )
        return EvaluationInput(folds, self.source)

    def as_array(self) -> np.ndarray:
        """Counts as an array of shape (K, S, 4)."""
        return np.array([[g.as_array() for g in fold] for fold in self.folds])


@dataclass(frozen=True, eq=False)
class JointSampleMatrix:
    """T rows of joint metric samples, one column per metric output.

    ``flagged`` marks rows where at least one metric was undefined (a zero
    denominator); those rows hold NaN in the affected columns.
    """

    columns: tuple[str, ...]
    samples: np.ndarray
    seed: int | None = None
    flagged: np.ndarray | None = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float, copy=True)
        if samples.ndim == 1:
            samples = samples[:, None]
        columns = tuple(self.columns)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] != len(columns):
            raise CMError(f"samples of shape {samples.shape} do not match columns {columns}")
        if len(set(columns)) != len(columns):
            raise CMError(f"duplicate column names {columns}")
        flagged = ~np.isfinite(samples).all(axis=1) if self.flagged is None else np.array(self.flagged, dtype=bool)
        if flagged.shape != (samples.shape[0],):
            raise CMError("flag vector must have one entry per row")
        samples.setflags(write=False)
        flagged.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "flagged", flagged)

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def column(self, name: str) -> np.ndarray:
        try:
            return self.samples[:, self.columns.index(name)]
        except ValueError:
            raise CMError(f"no column {name!r}; have {list(self.columns)}") from None

    def select(self, names: Sequence[str]) -> JointSampleMatrix:
        idx = [self.columns.index(n) if n in self.columns else None for n in names]
        missing = [n for n, i in zip(names, idx) if i is None]
        if missing:
            raise CMError(f"no columns {missing}; have {list(self.columns)}")
        sub = self.samples[:, idx]
        return JointSampleMatrix(tuple(names), sub, self.seed, ~np.isfinite(sub).all(axis=1))

    def __eq__(self, other):
        if not isinstance(other, JointSampleMatrix):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.seed == other.seed
            and np.array_equal(self.samples, other.samples, equal_nan=True)
            and np.array_equal(self.flagged, other.flagged)
        )

    __hash__ = None
