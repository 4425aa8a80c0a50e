"""Posterior uncertainty for classifier performance and fairness metrics.

Per-group confusion matrices get a Dirichlet-Multinomial posterior; joint
metric samples drawn from it feed marginal summaries, highest density
regions and probabilistic comparisons of two methods.
"""

from .comparison import ComparisonReport, Rope, compare, gap_distribution
from .core import (
    CMError,
    ConfigError,
    DirichletPosterior,
    DirichletPrior,
    EvaluationInput,
    GroupConfusionMatrix,
    JointSampleMatrix,
    MetricSpec,
    builtin_metrics,
    get_metric,
    pool,
)
from .hdr import HdrRegion, contains, coverage_fraction, fit_hdr
from .kfold import (
    HalfSplitPair,
    RhoEstimate,
    effective_cm,
    effective_input,
    rho_fixed,
    rho_interval,
    rho_relative,
    sigma_over,
)
from .posterior import MarginalSummary, marginal_summary, posteriors_for, sample_joint, update

__all__ = [
    "CMError",
    "ComparisonReport",
    "ConfigError",
    "DirichletPosterior",
    "DirichletPrior",
    "EvaluationInput",
    "GroupConfusionMatrix",
    "HalfSplitPair",
    "HdrRegion",
    "JointSampleMatrix",
    "MarginalSummary",
    "MetricSpec",
    "RhoEstimate",
    "Rope",
    "builtin_metrics",
    "compare",
    "contains",
    "coverage_fraction",
    "effective_cm",
    "effective_input",
    "fit_hdr",
    "gap_distribution",
    "get_metric",
    "marginal_summary",
    "pool",
    "posteriors_for",
    "rho_fixed",
    "rho_interval",
    "rho_relative",
    "sample_joint",
    "sigma_over",
    "update",
]

__version__ = "0.1.0"
