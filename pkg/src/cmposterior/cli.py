"""Command-line entry point: ``cmposterior <command> ...``.

Exit codes: 0 on success, 2 on invalid arguments, input or configuration
errors (the diagnostic goes to stderr), 1 on unexpected failures. Files
written by a failing command are removed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .comparison import Rope, compare, gap_distribution
from .core import CMError, ConfigError, EvaluationInput
from .hdr import fit_hdr
from .harness import (
    ToyClassifier,
    coverage_experiment,
    estimate_relative_rho,
    load_dataset,
    posterior_from_input,
)
from .kfold import rho_fixed, rho_interval
from .posterior import EmptySummaryError, marginal_summary
from .seeding import child_seed

log = logging.getLogger("cmposterior")


class _Outputs:
    """Tracks files written by a command so they can be removed on failure."""

    def __init__(self):
        self.paths: list[Path] = []

    def json(self, data, path):
        path = Path(path)
        self.paths.append(path)
        io.write_json(data, path)

    def report(self, obj, path, format=None):
        path = Path(path)
        self.paths.append(path)
        io.export_report(obj, path, format)

    def discard(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


# --------------------------------------------------------------------------- argument types


def _coverage(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"coverage must be in (0, 1), got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _csv_list(text: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


# --------------------------------------------------------------------------- helpers


def _config(args) -> io.Config:
    cfg = io.load_config(getattr(args, "config", None))
    return cfg.replace(
        T=getattr(args, "T", None),
        seed=getattr(args, "seed", None),
        metrics=getattr(args, "metrics", None),
        rho_strategy=getattr(args, "rho", None),
    )


def _rho_value(strategy: str, K: int) -> float:
    if strategy == "fixed":
        return rho_fixed(K).value
    if strategy == "interval":
        return rho_interval(K).value
    try:
        value = float(strategy)
    except ValueError:
        raise ConfigError(f"rho must be 'fixed', 'interval' or a number in [0, 1], got {strategy!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {value}")
    return value


def _posterior(data: EvaluationInput, cfg: io.Config, seed: int, workers: int):
    rho = 0.0
    if data.k > 1:
        rho = _rho_value(cfg.rho_strategy, data.k)
        log.info("K=%d fold input, rho=%.6g: effective CM scale 1/%.6g = %.6g",
                 data.k, rho, 1 + (data.k - 1) * rho, 1 / (1 + (data.k - 1) * rho))
    samples = posterior_from_input(data, rho, cfg.metrics, cfg.T, seed, cfg.priors(), workers)
    return samples, rho


def _summaries(samples):
    out = []
    for col in samples.columns:
        try:
            out.append(marginal_summary(samples, col).as_dict())
        except EmptySummaryError:
            out.append({"metric": col, "n_valid": 0, "n_flagged": samples.T})
    return out


# --------------------------------------------------------------------------- commands


def cmd_posterior(args, out: _Outputs) -> None:
    cfg = _config(args)
    data = io.load_evaluation(args.input, cfg)
    samples, rho = _posterior(data, cfg, cfg.seed, args.workers)
    target = Path(args.out)
    out.report(samples, target / "samples.csv")
    out.json({
        "input_source": data.source,
        "K": data.k,
        "groups": list(data.group_ids),
        "rho": rho,
        "effective_scale": 1.0 / (1 + (data.k - 1) * rho),
        "T": cfg.T,
        "seed": cfg.seed,
        "n_flagged": samples.n_flagged,
        "summaries": _summaries(samples),
    }, target / "summary.json")


def _load_side(path, cfg: io.Config, seed: int, workers: int):
    if io.is_sample_file(path):
        return io.load_samples(path)
    samples, _ = _posterior(io.load_evaluation(path, cfg), cfg, seed, workers)
    return samples


def cmd_compare(args, out: _Outputs) -> None:
    cfg = _config(args)
    a = _load_side(args.a, cfg, child_seed(cfg.seed, 0), args.workers)
    b = _load_side(args.b, cfg, child_seed(cfg.seed, 1), args.workers)
    if a.columns != b.columns:
        raise ConfigError(f"metric sets differ: A has {list(a.columns)}, B has {list(b.columns)}")
    rope = Rope.parse(args.rope, len(a.columns)) if args.rope else cfg.rope_for(len(a.columns))
    gap = gap_distribution(a, b, mode=args.mode)
    report = compare(gap, rope)
    target = Path(args.out)
    out.report(gap, target / "gaps.csv")
    data = report.as_dict()
    data["mode"] = args.mode
    out.json(data, target / "report.json")


def cmd_estimate_rho(args, out: _Outputs) -> None:
    ds = load_dataset(args.dataset, args.seed)
    target = ToyClassifier.parse(args.classifier)
    reference = ToyClassifier.parse(args.reference) if args.reference else target
    if args.M < 1:
        raise ConfigError(f"M must be >= 1, got {args.M}")
    result = estimate_relative_rho(ds, target, reference, args.K, args.M, args.metric, args.reference_rho, args.seed,
                                   paired=not args.unpaired, ratio=args.ratio)
    data = result.as_dict()
    data.update(K=args.K, M=args.M, metric=args.metric, target_method=target.label, seed=args.seed,
                paired=not args.unpaired, ratio=args.ratio)
    if args.out:
        out.json(data, args.out)
    print(json.dumps(io._jsonable(data), indent=2, sort_keys=True))


def cmd_hdr(args, out: _Outputs) -> None:
    samples = io.load_samples(args.samples)
    columns = list(args.columns) if args.columns else None
    region = fit_hdr(samples, args.coverage, args.resolution, columns)
    if region.flagged:
        log.warning("degenerate samples on axis/axes %s; region collapsed and flagged",
                    [c for c, deg in zip(region.columns, region.degenerate) if deg])
    out.report(region, args.out, "json")
    if args.mask:
        out.report(region, args.mask, "csv")


def cmd_experiment_coverage(args, out: _Outputs) -> None:
    ds = load_dataset(args.dataset, args.seed)
    classifier = ToyClassifier.parse(args.classifier)
    reference = ToyClassifier.parse(args.reference) if args.reference else None
    rows = coverage_experiment(
        ds, classifier, K=args.K, repeats=args.repeats, strategies=args.rho_strategy,
        reference=reference, M=args.M, metrics=args.metrics, T=args.T, seed=args.seed,
        coverage=args.coverage, workers=args.workers,
    )
    path = Path(args.out)
    if path.suffix.lower() == ".csv":
        out.report(rows, path, "csv")
    else:
        out.json({
            "classifier": classifier.label,
            "K": args.K,
            "repeats": args.repeats,
            "coverage": args.coverage,
            "metrics": list(args.metrics),
            "seed": args.seed,
            "rows": rows,
        }, path)


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmposterior", description="Posterior uncertainty of classifier metrics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sampling=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=_positive_int, default=1)
        if sampling:
            sp.add_argument("--config", help="JSON configuration file")
            sp.add_argument("--metrics", type=_csv_list, default=None)
            sp.add_argument("-T", type=_positive_int, default=None, help="posterior samples")
            sp.add_argument("--rho", default=None, help="fixed, interval, or a value in [0, 1] (K-fold input)")

    sp = sub.add_parser("posterior", help="sample the joint metric posterior of one evaluation")
    sp.add_argument("--input", required=True, help="confusion-matrix or predictions CSV")
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_posterior)

    sp = sub.add_parser("compare", help="compare two methods against a RoPE")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--rope", default=None, help="comma-separated tolerances, one per metric column")
    sp.add_argument("--mode", choices=("oriented", "raw"), default="oriented")
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("estimate-rho", help="relative fold correlation via disjoint half splits")
    sp.add_argument("--dataset", required=True, help="dataset CSV or synthetic spec JSON")
    sp.add_argument("--classifier", required=True, help="e.g. logistic:lr=0.5,iterations=300")
    sp.add_argument("--reference", default=None, help="reference classifier (default: the target)")
    sp.add_argument("-K", type=int, default=10)
    sp.add_argument("-M", type=int, default=5)
    sp.add_argument("--reference-rho", choices=("fixed", "interval"), default="fixed")
    sp.add_argument("--metric", default="accuracy")
    sp.add_argument("--unpaired", action="store_true", help="draw the target's half splits independently")
    sp.add_argument("--ratio", choices=("reference/target", "target/reference"), default="reference/target",
                    help="how r_over is formed from the two overestimated variances")
    sp.add_argument("--out", default=None, help="also write the JSON here")
    common(sp, sampling=False)
    sp.set_defaults(func=cmd_estimate_rho)

    sp = sub.add_parser("hdr", help="highest density region of 1-D or 2-D samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--coverage", type=_coverage, default=0.95)
    sp.add_argument("--columns", type=_csv_list, default=None)
    sp.add_argument("--resolution", type=_positive_int, default=None)
    sp.add_argument("--out", required=True, help="region JSON")
    sp.add_argument("--mask", default=None, help="optional grid-mask CSV")
    sp.set_defaults(func=cmd_hdr)

    sp = sub.add_parser("experiment", help="experiments on synthetic or tabular data")
    exp = sp.add_subparsers(dest="experiment", required=True)
    ep = exp.add_parser("coverage", help="HDR area and repeated-CV coverage per rho strategy")
    ep.add_argument("--dataset", required=True)
    ep.add_argument("--classifier", required=True)
    ep.add_argument("--reference", default=None)
    ep.add_argument("-K", type=int, default=10)
    ep.add_argument("-M", type=int, default=5)
    ep.add_argument("--repeats", type=_positive_int, default=100)
    ep.add_argument("--rho-strategy", type=_csv_list, default=("fixed", "interval", "relative", "relative_interval"))
    ep.add_argument("--metrics", type=_csv_list, default=("accuracy", "eop"))
    ep.add_argument("-T", type=_positive_int, default=100_000)
    ep.add_argument("--coverage", type=_coverage, default=0.95)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--workers", type=_positive_int, default=1)
    ep.add_argument("--out", required=True, help="results .json or .csv")
    ep.set_defaults(func=cmd_experiment_coverage)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "seed", 0) is None and args.command in ("estimate-rho", "hdr"):
        args.seed = 0
    out = _Outputs()
    try:
        args.func(args, out)
    except CMError as exc:
        out.discard()
        print(f"cmposterior {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except BaseException:
        out.discard()
        raise
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
