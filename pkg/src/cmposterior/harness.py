"""Self-contained experiment driver.

Provides synthetic two-group datasets with known per-group error rates, three
toy classifiers (logistic regression by full-batch gradient descent, a
single-feature decision stump, and a Bernoulli label-noiser), stratified
K-fold and half splits, cross-validation, the disjoint-half variance
overestimation protocol, repeated-CV sweeps and the coverage experiment.

Seed derivations (all through :mod:`cmposterior.seeding`):

=====================  ==========================================
``kfold_split``        ``generator(seed)``
``run_cv`` fold ``k``  split with ``seed``; training ``(seed, 1, k)``
half split ``m``       ``generator(seed, 2, m)``; CVs ``(seed, 3, m, 0|1)``
sweep repeat ``r``     ``run_cv`` with ``child_seed(seed, 4, r)``
coverage experiment    anchor ``(seed, 5)``, sweep ``(seed, 6)``,
                       rho protocol ``(seed, 7)``, posterior ``(seed, 8, i)``
=====================  ==========================================
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import CMError, ConfigError, DirichletPrior, EvaluationInput, GroupConfusionMatrix, get_metric
from .hdr import coverage_fraction, fit_hdr
from .kfold import (
    HalfSplitPair,
    RhoEstimate,
    effective_input,
    rho_fixed,
    rho_interval,
    rho_relative,
    sigma_over,
)
from .posterior import DEFAULT_T, posteriors_for, sample_joint
from .seeding import child_seed, generator

log = logging.getLogger(__name__)

CLASSIFIER_KINDS = ("logistic", "stump", "bernoulli")


class TrainingError(CMError):
    def __init__(self, message: str, fold: int | None = None):
        super().__init__(message if fold is None else f"fold {fold}: {message}")
        self.fold = fold


class DatasetTooSmallError(CMError):
    pass


# --------------------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class TabularDataset:
    features: np.ndarray
    group: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        g = np.asarray(self.group).astype(str)
        y = np.asarray(self.label).astype(int)
        if not (len(x) == len(g) == len(y)):
            raise CMError(f"inconsistent lengths: features {len(x)}, group {len(g)}, label {len(y)}")
        if not np.isin(y, (0, 1)).all():
            raise CMError("labels must be binary 0/1")
        for arr in (x, g, y):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "group", g)
        object.__setattr__(self, "label", y)

    @property
    def n(self) -> int:
        return len(self.label)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def group_ids(self) -> list[str]:
        """Group labels in order of first appearance."""
        _, first = np.unique(self.group, return_index=True)
        return [str(self.group[i]) for i in sorted(first)]

    def subset(self, idx) -> TabularDataset:
        idx = np.asarray(idx, dtype=int)
        return TabularDataset(self.features[idx], self.group[idx], self.label[idx])


@dataclass(frozen=True)
class SyntheticSpec:
    """Generative recipe: per-group sizes, true positive and true negative rates.

    Feature 0 carries the signal: its sign equals the label with probability
    ``tpr[g]`` for positives and ``tnr[g]`` for negatives, and its magnitude is
    ``0.5 + |z|`` for standard normal ``z``, so thresholding feature 0 at zero
    recovers the target rates. Remaining features are standard normal noise.
    """

    group_sizes: Mapping[str, int]
    tpr: Mapping[str, float]
    tnr: Mapping[str, float]
    positive_rate: float = 0.5
    d: int = 2

    def __post_init__(self):
        groups = list(self.group_sizes)
        if not groups:
            raise ConfigError("synthetic spec needs at least one group")
        for name, rates in (("tpr", self.tpr), ("tnr", self.tnr)):
            if set(rates) != set(groups):
                raise ConfigError(f"{name} must give a rate for every group {groups}")
            for g, r in rates.items():
                if not 0.0 <= float(r) <= 1.0:
                    raise ConfigError(f"{name}[{g!r}]={r} is not a rate in [0, 1]")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise ConfigError(f"positive_rate={self.positive_rate} is not in [0, 1]")
        if any(int(n) < 0 for n in self.group_sizes.values()):
            raise ConfigError("group sizes must be non-negative")
        if self.d < 0:
            raise ConfigError(f"d must be >= 0, got {self.d}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SyntheticSpec:
        data = dict(data)
        return cls(
            group_sizes={str(k): int(v) for k, v in data.pop("group_sizes").items()},
            tpr={str(k): float(v) for k, v in data.pop("tpr").items()},
            tnr={str(k): float(v) for k, v in data.pop("tnr").items()},
            **data,
        )


def make_synthetic(spec: SyntheticSpec, seed: int) -> TabularDataset:
    rng = generator(seed)
    feats, groups, labels = [], [], []
    for g, size in spec.group_sizes.items():
        size = int(size)
        y = (rng.random(size) < spec.positive_rate).astype(int)
        rate = np.where(y == 1, spec.tpr[g], spec.tnr[g])
        correct = rng.random(size) < rate
        side = np.where(correct, 2 * y - 1, 1 - 2 * y)
        x = np.empty((size, spec.d))
        if spec.d > 0:
            x[:, 0] = side * (0.5 + np.abs(rng.standard_normal(size)))
            x[:, 1:] = rng.standard_normal((size, spec.d - 1))
        feats.append(x)
        groups.append(np.full(size, g))
        labels.append(y)
    return TabularDataset(np.concatenate(feats), np.concatenate(groups), np.concatenate(labels))


def load_dataset(path, seed: int = 0) -> TabularDataset:
    """Read a dataset CSV (``x0..x{d-1}, group, label``) or a JSON synthetic spec."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            with open(path) as fh:
                return make_synthetic(SyntheticSpec.from_dict(json.load(fh)), seed)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise CMError(f"{path}: cannot read dataset: {exc.strerror}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: invalid synthetic spec: {exc}") from exc
    for col in ("group", "label"):
        if col not in header:
            raise CMError(f"{path}: missing required column {col!r}")
    if not rows:
        raise CMError(f"{path}: no data rows")
    xcols = [c for c in header if c not in ("group", "label", "fold")]
    x = np.array([[float(r[c]) for c in xcols] for r in rows]).reshape(len(rows), len(xcols))
    return TabularDataset(x, [r["group"] for r in rows], [int(r["label"]) for r in rows])


def dataset_csv(ds: TabularDataset) -> str:
    lines = [",".join([f"x{j}" for j in range(ds.d)] + ["group", "label"])]
    for i in range(ds.n):
        lines.append(",".join([format(v, ".12g") for v in ds.features[i]] + [ds.group[i], str(ds.label[i])]))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- classifiers


@dataclass(frozen=True)
class ToyClassifier:
    """A toy classifier recipe; training is deterministic given data and seed.

    Parameters by kind: ``logistic`` takes ``lr``, ``iterations`` and ``l2``;
    ``bernoulli`` takes ``p`` (probability of predicting the true label).
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}; use one of {CLASSIFIER_KINDS}")
        allowed = {"logistic": {"lr", "iterations", "l2"}, "stump": set(), "bernoulli": {"p"}}[self.kind]
        extra = set(self.params) - allowed
        if extra:
            raise ConfigError(f"{self.kind} classifier does not take {sorted(extra)}")
        if self.kind == "bernoulli" and not 0.0 <= self.params.get("p", 0.5) <= 1.0:
            raise ConfigError(f"bernoulli p must be in [0, 1], got {self.params['p']}")

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))

    @classmethod
    def parse(cls, text: str) -> ToyClassifier:
        """Parse ``"kind"`` or ``"kind:key=value,key=value"``."""
        kind, _, rest = text.strip().partition(":")
        params = {}
        for item in filter(None, (p.strip() for p in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"classifier parameter {item!r} is not key=value")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"classifier parameter {item!r} is not numeric") from None
        return cls(kind.strip().lower(), params)

    def train_predict(self, train: TabularDataset, test: TabularDataset, seed: int) -> np.ndarray:
        if self.kind == "bernoulli":
            rng = generator(seed)
            keep = rng.random(test.n) < self.params.get("p", 0.5)
            return np.where(keep, test.label, 1 - test.label)
        if train.d == 0:
            raise ConfigError(f"{self.kind} classifier needs at least one feature (d=0 only works with bernoulli)")
        if self.kind == "logistic":
            return _logistic(train, test, self.params)
        return _stump(train, test)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic(train, test, params) -> np.ndarray:
    lr = float(params.get("lr", 0.5))
    iterations = int(params.get("iterations", 300))
    l2 = float(params.get("l2", 1e-3))
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)

    def design(x):
        return np.hstack([np.ones((len(x), 1)), (x - mu) / sd])

    X, y = design(train.features), train.label.astype(float)
    w = np.zeros(X.shape[1])
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iterations):
            grad = X.T @ (_sigmoid(X @ w) - y) / len(y)
            grad[1:] += l2 * w[1:]
            w = w - lr * grad
            if not np.isfinite(w).all():
                raise TrainingError("logistic regression diverged (non-finite weights)")
    return (design(test.features) @ w >= 0).astype(int)


def _stump(train, test) -> np.ndarray:
    """Single-feature threshold with the lowest training error."""
    y = train.label
    n = len(y)
    best = (np.inf, 0, 0.0, 1)  # error, feature, threshold, polarity
    for j in range(train.d):
        order = np.argsort(train.features[:, j], kind="stable")
        xs, ys = train.features[order, j], y[order]
        # predict positive above the threshold (polarity 1): errors = positives below + negatives above
        pos_below = np.concatenate([[0], np.cumsum(ys)])
        neg_above = (n - ys.sum()) - np.concatenate([[0], np.cumsum(1 - ys)])
        err = pos_below + neg_above
        valid = np.concatenate([[True], xs[1:] != xs[:-1], [True]])
        for polarity, e in ((1, err), (-1, n - err)):
            e = np.where(valid, e, np.inf)
            i = int(np.argmin(e))
            if e[i] < best[0]:
                if i == 0:
                    thr = xs[0] - 1.0
                elif i == n:
                    thr = xs[-1] + 1.0
                else:
                    thr = 0.5 * (xs[i - 1] + xs[i])
                best = (e[i], j, thr, polarity)
    _, j, thr, polarity = best
    above = test.features[:, j] > thr
    return (above if polarity == 1 else ~above).astype(int)


# --------------------------------------------------------------------------- splitting


def _strata(ds: TabularDataset, rng: np.random.Generator) -> np.ndarray:
    """Indices grouped by (group, label) stratum, shuffled within each."""
    keys = sorted({(g, int(y)) for g, y in zip(ds.group, ds.label)})
    parts = []
    for g, y in keys:
        idx = np.flatnonzero((ds.group == g) & (ds.label == y))
        parts.append(rng.permutation(idx))
    return np.concatenate(parts) if parts else np.array([], dtype=int)


def kfold_split(ds: TabularDataset, K: int, seed: int, stratify: bool = True) -> list[np.ndarray]:
    """K disjoint folds covering every index; sizes differ by at most one."""
    if K < 2:
        raise ConfigError(f"K must be >= 2, got {K}")
    if K > ds.n:
        raise ConfigError(f"K={K} exceeds the number of instances n={ds.n}")
    rng = generator(seed)
    order = _strata(ds, rng) if stratify else rng.permutation(ds.n)
    return [np.sort(order[k::K]) for k in range(K)]


def half_split(ds: TabularDataset, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two disjoint stratified halves of size floor(n/2) each."""
    rng = generator(seed)
    order = _strata(ds, rng)
    h = ds.n // 2
    return np.sort(order[0::2][:h]), np.sort(order[1::2][:h])


# --------------------------------------------------------------------------- cross-validation


def count_cms(group: np.ndarray, y_true: np.ndarray, y_pred: np.ndarray, group_ids: Sequence[str]):
    out = []
    for g in group_ids:
        m = group == g
        t, p = y_true[m] == 1, y_pred[m] == 1
        out.append(GroupConfusionMatrix(g, np.sum(t & p), np.sum(~t & ~p), np.sum(~t & p), np.sum(t & ~p)))
    return tuple(out)


def run_cv(
    ds: TabularDataset,
    classifier: ToyClassifier,
    K: int,
    seed: int,
    group_ids: Sequence[str] | None = None,
) -> EvaluationInput:
    """K-fold CV: train on K-1 folds, count per-group matrices on the held-out fold."""
    group_ids = list(group_ids) if group_ids is not None else ds.group_ids()
    folds = kfold_split(ds, K, seed)
    all_idx = np.arange(ds.n)
    out = []
    for k, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, test_idx, assume_unique=True)
        train, test = ds.subset(train_idx), ds.subset(test_idx)
        try:
            y_pred = classifier.train_predict(train, test, child_seed(seed, 1, k))
        except TrainingError as exc:
            raise TrainingError(str(exc), fold=k) from exc
        out.append(count_cms(test.group, test.label, y_pred, group_ids))
    return EvaluationInput(tuple(out), "kfold")


def cv_metric_point(data: EvaluationInput, metrics: Sequence[str]) -> np.ndarray:
    """Metric values of one CV computed on the fold-pooled per-group matrices."""
    pooled = np.array([g.as_array() for g in data.pooled_by_group()])
    return np.concatenate([get_metric(m)(pooled) for m in metrics])


def half_split_protocol(
    ds: TabularDataset,
    classifier: ToyClassifier,
    K: int,
    M: int,
    metric: str = "accuracy",
    seed: int = 0,
) -> list[HalfSplitPair]:
    """M pairs of K-fold CV results on disjoint halves of the data."""
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if ds.n // 2 < 2 * K:
        raise DatasetTooSmallError(f"half size {ds.n // 2} is below 2K={2 * K}; dataset too small for half splits")
    spec = get_metric(metric)
    if spec.arity != 1:
        raise ConfigError(f"half-split protocol needs a scalar metric, {metric!r} has {spec.arity} outputs")
    group_ids = ds.group_ids()
    pairs = []
    for m in range(M):
        d_idx, dc_idx = half_split(ds, child_seed(seed, 2, m))
        values = []
        for side, idx in enumerate((d_idx, dc_idx)):
            cv = run_cv(ds.subset(idx), classifier, K, child_seed(seed, 3, m, side), group_ids)
            values.append(float(cv_metric_point(cv, [metric])[0]))
        pairs.append(HalfSplitPair(*values))
    return pairs


def repeated_cv_sweep(
    ds: TabularDataset,
    classifier: ToyClassifier,
    K: int,
    n_repeats: int,
    seed: int,
    metrics: Sequence[str] = ("accuracy", "eop"),
) -> np.ndarray:
    """One metric point per repeated K-fold CV, each with a distinct split seed."""
    if n_repeats < 1:
        raise ConfigError(f"n_repeats must be >= 1, got {n_repeats}")
    group_ids = ds.group_ids()
    return np.array(
        [cv_metric_point(run_cv(ds, classifier, K, child_seed(seed, 4, r), group_ids), metrics)
         for r in range(n_repeats)]
    )


# --------------------------------------------------------------------------- rho


RATIO_ORDERS = ("reference/target", "target/reference")


def overestimate_ratio(sigma_reference: float, sigma_target: float, order: str = "reference/target") -> float:
    """``r_over`` from two overestimated variances; two zeros count as equal (ratio one)."""
    if order not in RATIO_ORDERS:
        raise ConfigError(f"ratio order must be one of {RATIO_ORDERS}, got {order!r}")
    num, den = (sigma_reference, sigma_target) if order == "reference/target" else (sigma_target, sigma_reference)
    if num == 0.0 and den == 0.0:
        return 1.0
    if num == 0.0 or den == 0.0:
        raise CMError(f"one method has zero overestimated variance "
                      f"(reference {sigma_reference}, target {sigma_target}); r_over is degenerate")
    return num / den


@dataclass(frozen=True)
class RelativeRhoResult:
    estimate: RhoEstimate
    sigma2_reference: float
    sigma2_target: float
    pairs_reference: tuple[HalfSplitPair, ...]
    pairs_target: tuple[HalfSplitPair, ...]

    def as_dict(self) -> dict:
        out = self.estimate.as_dict()
        out.update(sigma2_over_reference=self.sigma2_reference, sigma2_over_target=self.sigma2_target)
        return out


def reference_rho(kind: str, K: int) -> RhoEstimate:
    if kind == "fixed":
        return rho_fixed(K)
    if kind == "interval":
        return rho_interval(K)
    raise ConfigError(f"reference rho must be 'fixed' or 'interval', got {kind!r}")


def estimate_relative_rho(
    ds: TabularDataset,
    target: ToyClassifier,
    reference: ToyClassifier,
    K: int,
    M: int = 5,
    metric: str = "accuracy",
    reference_rho_kind: str = "fixed",
    seed: int = 0,
    paired: bool = True,
    ratio: str = "reference/target",
) -> RelativeRhoResult:
    """Relative fold correlation of ``target`` with respect to ``reference``.

    With ``paired`` (default) both methods run the half-split protocol on the
    same splits, so split-to-split noise cancels in the variance ratio.
    Otherwise the target uses independent splits drawn from ``(seed, 1)``.

    ``ratio`` picks how ``r_over`` is formed from the two overestimated
    variances. Matching the variance ratio of the CV means under the
    equicorrelation model requires ``"target/reference"``; the default
    ``"reference/target"`` is the conventional form.
    """
    rho0 = reference_rho(reference_rho_kind, K)
    pairs_ref = half_split_protocol(ds, reference, K, M, metric, seed)
    if paired and target == reference:
        pairs_tgt = pairs_ref  # identical computation
    else:
        pairs_tgt = half_split_protocol(ds, target, K, M, metric, seed if paired else child_seed(seed, 1))
    s_ref, s_tgt = sigma_over(pairs_ref), sigma_over(pairs_tgt)
    estimate = rho_relative(rho0, overestimate_ratio(s_ref, s_tgt, ratio), K, reference.label)
    return RelativeRhoResult(estimate, s_ref, s_tgt, tuple(pairs_ref), tuple(pairs_tgt))


# --------------------------------------------------------------------------- coverage experiment


def posterior_from_input(
    data: EvaluationInput,
    rho: float,
    metrics: Sequence[str],
    T: int,
    seed: int,
    prior: DirichletPrior | Mapping[str, DirichletPrior] | None = None,
    workers: int = 1,
):
    """Effective matrices -> Dirichlet posteriors -> joint metric samples."""
    groups = effective_input(data, rho) if data.k > 1 else list(data.folds[0])
    posts = posteriors_for(groups, prior)
    return sample_joint(posts, [g.total() for g in groups], metrics, T, seed, workers)


def coverage_experiment(
    ds: TabularDataset,
    classifier: ToyClassifier,
    K: int = 10,
    repeats: int = 100,
    strategies: Sequence[str] = ("fixed", "interval", "relative", "relative_interval"),
    reference: ToyClassifier | None = None,
    M: int = 5,
    metrics: Sequence[str] = ("accuracy", "eop"),
    T: int = DEFAULT_T,
    seed: int = 0,
    coverage: float = 0.95,
    prior: DirichletPrior | Mapping[str, DirichletPrior] | None = None,
    anchor_metric: str = "accuracy",
    workers: int = 1,
) -> list[dict]:
    """HDR area and share of repeated CV results it encloses, per rho strategy.

    One anchor CV is turned into a posterior for every strategy; the
    ``coverage`` HDR of that posterior is then checked against ``repeats``
    further CVs with different splits.
    """
    if len(set(strategies)) != len(strategies):
        raise ConfigError(f"duplicate strategies in {list(strategies)}")
    reference = reference or classifier
    group_ids = ds.group_ids()
    anchor = run_cv(ds, classifier, K, child_seed(seed, 5), group_ids)
    points = repeated_cv_sweep(ds, classifier, K, repeats, child_seed(seed, 6), metrics)

    relative = None
    if {"relative", "relative_interval"} & set(strategies):
        relative = {
            kind: estimate_relative_rho(ds, classifier, reference, K, M, anchor_metric, kind, child_seed(seed, 7))
            for kind in ("fixed", "interval")
        }

    rows = []
    for i, strategy in enumerate(strategies):
        if strategy == "fixed":
            rho = rho_fixed(K)
        elif strategy == "interval":
            rho = rho_interval(K)
        elif strategy == "relative":
            rho = relative["fixed"].estimate
        elif strategy == "relative_interval":
            rho = relative["interval"].estimate
        else:
            raise ConfigError(f"unknown rho strategy {strategy!r}")
        samples = posterior_from_input(anchor, rho.value, metrics, T, child_seed(seed, 8, i), prior, workers)
        region = fit_hdr(samples, coverage)
        pct = 100.0 * coverage_fraction(region, points)
        log.info("strategy %s: rho=%.6g area=%.6g %%res=%.2f", strategy, rho.value, region.area, pct)
        rows.append({
            "strategy": strategy,
            "rho": rho.value,
            "rho_lo": rho.interval[0] if rho.interval else rho.value,
            "rho_hi": rho.interval[1] if rho.interval else rho.value,
            "r_over": rho.r_over,
            "area": region.area,
            "pct_res": pct,
            "n_repeats": int(repeats),
            "n_flagged": samples.n_flagged,
        })
    return rows
