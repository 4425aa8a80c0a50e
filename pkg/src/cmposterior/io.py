"""CSV/JSON ingestion of evaluation data and configuration; report export.

Input schemas
-------------
predictions CSV
    ``y_true, y_pred, group[, fold]``; labels are matched as strings against
    the configured positive/negative labels.
confusion-matrix CSV
    ``group, tp, tn, fp, fn[, fold]`` with non-negative real cells.
samples CSV
    a header of metric column names followed by one row per sample.

Reals are written with 12 significant digits. Every file is written to a
temporary sibling first and moved into place, so a failed export leaves no
partial file behind.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import math
import os
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import CMError, ConfigError, DirichletPrior, EvaluationInput, GroupConfusionMatrix, JointSampleMatrix
from .comparison import ComparisonReport, DEFAULT_EPS
from .hdr import HdrRegion
from .posterior import DEFAULT_T, MarginalSummary

CM_COLUMNS = ("group", "tp", "tn", "fp", "fn")
PREDICTION_COLUMNS = ("y_true", "y_pred", "group")


class InputError(CMError):
    pass


class MissingColumnError(InputError):
    def __init__(self, column: str, path):
        super().__init__(f"{path}: missing required column {column!r}")
        self.column = column


class EmptyFileError(InputError):
    pass


class UnknownLabelError(InputError):
    pass


class FoldIndexError(InputError):
    pass


class DuplicateEntryError(InputError):
    pass


class NegativeCellError(InputError):
    pass


class ExportError(CMError):
    pass


def fmt(x: float) -> str:
    """Canonical text form of a real: 12 significant digits."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    out = format(x, ".12g")
    return "0" if out == "-0" else out


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class Config:
    """Run configuration, usually read from a JSON file.

    ``prior`` is either one 4-vector shared by all groups or a mapping from
    group label to 4-vector.
    """

    positive_label: str = "1"
    negative_label: str = "0"
    groups: tuple[str, ...] | None = None
    reference_group: str | None = None
    prior: Any = (1.0, 1.0, 1.0, 1.0)
    T: int = DEFAULT_T
    seed: int = 0
    rope: tuple[float, ...] | None = None
    rho_strategy: str = "fixed"
    metrics: tuple[str, ...] = ("accuracy", "eop")
    coverage: float = 0.95

    def priors(self) -> DirichletPrior | dict[str, DirichletPrior]:
        if isinstance(self.prior, Mapping):
            return {str(k): DirichletPrior(tuple(v)) for k, v in self.prior.items()}
        return DirichletPrior(tuple(self.prior))

    def rope_for(self, dimension: int):
        from .comparison import Rope

        if self.rope is None:
            return Rope.square(dimension, DEFAULT_EPS)
        if len(self.rope) != dimension:
            raise ConfigError(f"config RoPE has {len(self.rope)} tolerances for {dimension} metric columns")
        return Rope(tuple(self.rope))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Config:
        data = dict(data)
        labels = data.pop("labels", None)
        if labels is not None:
            data.setdefault("positive_label", labels.get("positive", "1"))
            data.setdefault("negative_label", labels.get("negative", "0"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("positive_label", "negative_label", "reference_group"):
            if data.get(key) is not None:
                data[key] = str(data[key])
        if isinstance(data.get("metrics"), str):
            data["metrics"] = [m.strip() for m in data["metrics"].split(",")]
        for key in ("groups", "rope", "metrics"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        cfg = cls(**data)
        cfg.priors()  # validate early
        if cfg.positive_label == cfg.negative_label:
            raise ConfigError("positive and negative labels must differ")
        return cfg

    def replace(self, **changes) -> Config:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in changes.items() if v is not None})
        return Config(**values)


def load_config(path) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: cannot read config: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return Config.from_dict(data)


# --------------------------------------------------------------------------- reading


def _read_rows(path) -> tuple[list[str], list[dict[str, str]]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in (reader.fieldnames or [])]
            if not header:
                raise EmptyFileError(f"{path}: file is empty")
            reader.fieldnames = header
            rows = [{k: (v or "").strip() for k, v in row.items() if k is not None} for row in reader]
    except OSError as exc:
        raise InputError(f"{path}: cannot read: {exc.strerror}") from exc
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")
    return header, rows


def _require(header, columns, path):
    for col in columns:
        if col not in header:
            raise MissingColumnError(col, path)


def _fold_index(value: str, path, line: int) -> int:
    try:
        k = int(value)
    except ValueError:
        raise FoldIndexError(f"{path}:{line}: fold index {value!r} is not an integer") from None
    if k < 0:
        raise FoldIndexError(f"{path}:{line}: fold index {k} is negative")
    return k


def _check_contiguous(folds: Iterable[int], path) -> int:
    present = sorted(set(folds))
    if present != list(range(len(present))):
        raise FoldIndexError(f"{path}: fold indices {present} are not contiguous from 0")
    return len(present)


def _order_groups(seen: list[str], reference: str | None, declared: Sequence[str] | None) -> list[str]:
    order = [g for g in declared if g in seen] if declared else list(seen)
    if reference is not None:
        if reference not in order:
            raise ConfigError(f"reference group {reference!r} not found among {order}")
        order.remove(reference)
        order.insert(0, reference)
    return order


def load_predictions(path, config: Config | None = None) -> EvaluationInput:
    """Count per-(fold, group) confusion matrices from a predictions CSV."""
    config = config or Config()
    header, rows = _read_rows(path)
    _require(header, PREDICTION_COLUMNS, path)
    has_fold = "fold" in header
    pos, neg = config.positive_label, config.negative_label
    declared = set(config.groups) if config.groups else None
    counts: dict[tuple[int, str], np.ndarray] = {}
    seen: list[str] = []
    for line, row in enumerate(rows, start=2):
        for col in ("y_true", "y_pred"):
            if row[col] not in (pos, neg):
                raise UnknownLabelError(f"{path}:{line}: {col} label {row[col]!r} is neither {pos!r} nor {neg!r}")
        group = row["group"]
        if not group:
            raise InputError(f"{path}:{line}: empty group label")
        if declared is not None and group not in declared:
            raise UnknownLabelError(f"{path}:{line}: group {group!r} not among declared groups {sorted(declared)}")
        if group not in seen:
            seen.append(group)
        fold = _fold_index(row["fold"], path, line) if has_fold else 0
        t, p = row["y_true"] == pos, row["y_pred"] == pos
        cell = 0 if (t and p) else 1 if (not t and not p) else 2 if p else 3
        counts.setdefault((fold, group), np.zeros(4))[cell] += 1
    K = _check_contiguous([f for f, _ in counts], path) if has_fold else 1
    order = _order_groups(seen, config.reference_group, config.groups)
    folds = tuple(
        tuple(GroupConfusionMatrix.from_array(g, counts.get((k, g), np.zeros(4))) for g in order) for k in range(K)
    )
    return EvaluationInput(folds, "kfold" if has_fold else "holdout")


def _cell_value(text: str, name: str, path, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path}:{line}: {name}={text!r} is not a number") from None
    if not math.isfinite(v):
        raise InputError(f"{path}:{line}: {name}={text!r} is not finite")
    if v < 0:
        raise NegativeCellError(f"{path}:{line}: {name}={v} is negative")
    return v


def load_confusion_matrices(path, config: Config | None = None) -> EvaluationInput:
    """Read a confusion-matrix CSV (one row per group, optionally per fold)."""
    config = config or Config()
    header, rows = _read_rows(path)
    _require(header, CM_COLUMNS, path)
    has_fold = "fold" in header
    cms: dict[tuple[int, str], GroupConfusionMatrix] = {}
    seen: list[str] = []
    for line, row in enumerate(rows, start=2):
        group = row["group"]
        if not group:
            raise InputError(f"{path}:{line}: empty group label")
        fold = _fold_index(row["fold"], path, line) if has_fold else 0
        if (fold, group) in cms:
            raise DuplicateEntryError(f"{path}:{line}: duplicate entry for fold {fold}, group {group!r}")
        cells = [_cell_value(row[c], c, path, line) for c in CM_COLUMNS[1:]]
        cms[(fold, group)] = GroupConfusionMatrix.from_array(group, cells)
        if group not in seen:
            seen.append(group)
    K = _check_contiguous([f for f, _ in cms], path) if has_fold else 1
    order = _order_groups(seen, config.reference_group, config.groups)
    folds = []
    for k in range(K):
        missing = [g for g in order if (k, g) not in cms]
        if missing:
            raise InputError(f"{path}: fold {k} has no row for group(s) {missing}")
        folds.append(tuple(cms[(k, g)] for g in order))
    return EvaluationInput(tuple(folds), "kfold" if has_fold else "holdout")


def load_evaluation(path, config: Config | None = None) -> EvaluationInput:
    """Dispatch on the header: confusion-matrix or predictions CSV."""
    header, _ = _read_rows(path)
    if "tp" in header:
        return load_confusion_matrices(path, config)
    if "y_true" in header or "y_pred" in header:
        return load_predictions(path, config)
    # name the first column that is missing from the more common schema
    _require(header, CM_COLUMNS, path)
    raise InputError(f"{path}: unrecognised CSV schema")  # pragma: no cover


def load_samples(path) -> JointSampleMatrix:
    header, rows = _read_rows(path)
    try:
        data = np.array([[float(r[c]) for c in header] for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric sample value ({exc})") from None
    return JointSampleMatrix(tuple(header), data)


def is_sample_file(path) -> bool:
    header, _ = _read_rows(path)
    return not ({"tp", "y_true", "y_pred", "group"} & set(header))


# --------------------------------------------------------------------------- writing


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ExportError(f"{path}: cannot write: {exc.strerror or exc}") from exc


def write_json(data, path) -> None:
    _atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _csv_text(header: Sequence[str] | None, rows: Iterable[Sequence]) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def samples_csv(samples: JointSampleMatrix) -> str:
    return _csv_text(samples.columns, ([fmt(v) for v in row] for row in samples.samples))


def evaluation_csv(data: EvaluationInput) -> str:
    with_fold = data.source == "kfold"
    header = (("fold",) if with_fold else ()) + CM_COLUMNS
    rows = []
    for k, fold in enumerate(data.folds):
        for g in fold:
            rows.append(((k,) if with_fold else ()) + (g.group_id, *map(float, g.as_array())))
    return _csv_text(header, rows)


def _probability_rows(report: ComparisonReport):
    yield ("equivalent", "rope", report.p_equivalent)
    for key, p in report.orthant_probs.items():
        yield ("orthant", key, p)
    for key, p in report.band_probs.items():
        yield ("band", key, p)


def _hdr_csv(region: HdrRegion) -> str:
    if region.dimension == 1:
        if region.degenerate[0]:
            return _csv_text(("center", "density", "inside"), [])
        c = region.centers(0)
        rows = ((float(x), float(d), int(m)) for x, d, m in zip(c, region.density, region.mask))
        return _csv_text(("center", "density", "inside"), rows)
    if region.flagged:
        raise ExportError("degenerate 2-D region has no grid mask")
    return _csv_text(None, region.mask.astype(int).tolist())


def _summary_rows(items: Sequence[MarginalSummary]):
    for s in items:
        yield (s.metric, s.mean, s.sd, s.lower, s.upper, s.level, s.n_valid, s.n_flagged)


def export_report(obj, path, format: str | None = None) -> None:
    """Write a report object as JSON (full) or CSV (flat table).

    ``obj`` may be a ComparisonReport, JointSampleMatrix, HdrRegion,
    EvaluationInput, a MarginalSummary or a list of them, or a plain dict
    (JSON only). The format defaults to the file suffix.
    """
    fmt_name = (format or Path(path).suffix.lstrip(".") or "json").lower()
    if fmt_name not in ("json", "csv"):
        raise ExportError(f"{path}: unsupported export format {fmt_name!r}")
    if isinstance(obj, MarginalSummary):
        obj = [obj]

    if fmt_name == "json":
        if isinstance(obj, (ComparisonReport, HdrRegion)):
            data = obj.as_dict()
        elif isinstance(obj, JointSampleMatrix):
            data = {"columns": list(obj.columns), "seed": obj.seed, "samples": obj.samples, "flagged": obj.flagged}
        elif isinstance(obj, EvaluationInput):
            data = {
                "source": obj.source,
                "groups": list(obj.group_ids),
                "folds": [[{"group": g.group_id, **dict(zip(CM_COLUMNS[1:], g.as_array()))} for g in f]
                          for f in obj.folds],
            }
        elif isinstance(obj, list) and all(isinstance(s, MarginalSummary) for s in obj):
            data = [s.as_dict() for s in obj]
        elif isinstance(obj, (dict, list)):
            data = obj
        else:
            raise ExportError(f"cannot export {type(obj).__name__} as JSON")
        write_json(data, path)
        return

    if isinstance(obj, ComparisonReport):
        text = _csv_text(("event", "pattern", "probability"), _probability_rows(obj))
    elif isinstance(obj, JointSampleMatrix):
        text = samples_csv(obj)
    elif isinstance(obj, HdrRegion):
        text = _hdr_csv(obj)
    elif isinstance(obj, EvaluationInput):
        text = evaluation_csv(obj)
    elif isinstance(obj, list) and all(isinstance(s, MarginalSummary) for s in obj):
        text = _csv_text(("metric", "mean", "sd", "lower", "upper", "level", "n_valid", "n_flagged"),
                         _summary_rows(obj))
    elif isinstance(obj, list) and obj and all(isinstance(r, dict) for r in obj):
        header = list(obj[0])
        text = _csv_text(header, ([r.get(h) for h in header] for r in obj))
    else:
        raise ExportError(f"cannot export {type(obj).__name__} as CSV")
    _atomic_write(path, text)
