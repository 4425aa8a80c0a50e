"""Dirichlet-multinomial posterior update and hierarchical sampling.

Each sample row is produced by drawing cell probabilities from every group's
Dirichlet posterior, drawing a confusion matrix of the group's size from the
multinomial with those probabilities, and evaluating the metrics on the
resulting family of matrices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    CMError,
    ConfigError,
    DirichletPosterior,
    DirichletPrior,
    GroupConfusionMatrix,
    JointSampleMatrix,
    MetricSpec,
    evaluate_metrics,
    resolve_metrics,
)
from .seeding import generator

DEFAULT_T = 100_000
# Rows are generated in fixed-size blocks, each with its own derived stream,
# so the output does not depend on how blocks are spread over workers.
BLOCK_SIZE = 4096


class EmptySummaryError(CMError):
    pass


def update(prior: DirichletPrior, observed: GroupConfusionMatrix) -> DirichletPosterior:
    """Conjugate update: posterior concentration = prior + observed cells."""
    alpha = tuple(a + c for a, c in zip(prior.alpha, observed.as_array().tolist()))
    return DirichletPosterior(observed.group_id, alpha)


def effective_total(total: float) -> int:
    """Integer trial count for the multinomial step (round half to even)."""
    return int(round(float(total)))


def sample_dirichlet(alpha, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` probability vectors from Dir(alpha) via normalised gammas.

    Concentrations below one are drawn in log space (Gamma(a) = Gamma(a+1) *
    U**(1/a)) so that tiny gamma variates cannot underflow to an all-zero row.
    """
    alpha = np.asarray(alpha, dtype=float)
    small = alpha < 1.0
    if not small.any():
        g = rng.gamma(alpha, size=(size, alpha.size))
        return g / g.sum(axis=1, keepdims=True)
    log_g = np.log(rng.gamma(np.where(small, alpha + 1.0, alpha), size=(size, alpha.size)))
    u = rng.random((size, alpha.size))
    log_g = np.where(small, log_g + np.log(u) / alpha, log_g)
    log_g -= log_g.max(axis=1, keepdims=True)
    g = np.exp(log_g)
    return g / g.sum(axis=1, keepdims=True)


def _sample_block(posteriors, totals, metrics, n_rows, seed, block) -> np.ndarray:
    rng = generator(seed, block)
    cms = np.empty((n_rows, len(posteriors), 4))
    for s, (post, n_s) in enumerate(zip(posteriors, totals)):
        pi = sample_dirichlet(post.alpha_post, n_rows, rng)
        cms[:, s, :] = rng.multinomial(n_s, pi)
    return evaluate_metrics(metrics, cms)


def sample_joint(
    posteriors: Sequence[DirichletPosterior],
    group_totals: Sequence[float],
    metrics: Sequence[str | MetricSpec],
    T: int = DEFAULT_T,
    seed: int = 0,
    workers: int = 1,
) -> JointSampleMatrix:
    """Joint posterior samples of the requested metrics.

    Parameters
    ----------
    posteriors : sequence of DirichletPosterior
        One per group; the first is the fairness reference group.
    group_totals : sequence of float
        Multinomial size per group. Non-integers (effective totals) are
        rounded half to even.
    metrics : sequence of metric names or MetricSpec
    T : int
        Number of rows.
    seed : int
        Master seed. Output is bitwise identical for a given seed whatever
        the value of ``workers``.
    workers : int
        Threads used to evaluate blocks of rows.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if len(posteriors) != len(group_totals):
        raise ConfigError("need one group total per posterior")
    if len(posteriors) == 0:
        raise ConfigError("need at least one group posterior")
    metrics = resolve_metrics(metrics)
    for m in metrics:
        if len(posteriors) < m.min_groups or (m.kind == "fairness" and len(posteriors) != 2):
            raise ConfigError(f"metric {m.name!r} needs exactly two groups, got {len(posteriors)}")
    totals = [effective_total(n) for n in group_totals]
    if any(n < 0 for n in totals):
        raise ConfigError(f"group totals must be non-negative, got {group_totals}")
    columns = tuple(c for m in metrics for c in m.columns)

    n_blocks = -(-T // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, T - b * BLOCK_SIZE) for b in range(n_blocks)]

    def job(b):
        return _sample_block(posteriors, totals, metrics, sizes[b], seed, b)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(job, range(n_blocks)))
    else:
        blocks = [job(b) for b in range(n_blocks)]
    return JointSampleMatrix(columns, np.concatenate(blocks, axis=0), seed)


def posteriors_for(
    groups: Sequence[GroupConfusionMatrix],
    priors: DirichletPrior | dict[str, DirichletPrior] | None = None,
) -> list[DirichletPosterior]:
    """Update one prior per group (a shared prior, a per-group map, or uniform)."""
    out = []
    for g in groups:
        if priors is None:
            prior = DirichletPrior()
        elif isinstance(priors, DirichletPrior):
            prior = priors
        else:
            prior = priors.get(g.group_id, DirichletPrior())
        out.append(update(prior, g))
    return out


@dataclass(frozen=True)
class MarginalSummary:
    metric: str
    mean: float
    sd: float
    lower: float
    upper: float
    level: float
    n_valid: int
    n_flagged: int

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "mean": self.mean,
            "sd": self.sd,
            "interval": [self.lower, self.upper],
            "level": self.level,
            "n_valid": self.n_valid,
            "n_flagged": self.n_flagged,
        }


def marginal_summary(samples: JointSampleMatrix, metric: str, level: float = 0.95) -> MarginalSummary:
    """Mean, standard deviation and central credible interval of one column.

    Samples where this column is undefined are skipped and counted.
    """
    if not 0 < level < 1:
        raise ConfigError(f"credible level must be in (0, 1), got {level}")
    x = samples.column(metric)
    ok = np.isfinite(x)
    if not ok.any():
        raise EmptySummaryError(f"all {x.size} samples of {metric!r} are undefined")
    v = x[ok]
    lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2])
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return MarginalSummary(metric, float(v.mean()), sd, float(lo), float(hi), level, int(ok.sum()), int((~ok).sum()))
