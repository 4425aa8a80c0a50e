"""Probabilistic comparison of two methods against a region of practical equivalence.

The gap between two methods' posterior samples is classified row by row:

* inside the RoPE (every coordinate within its tolerance, boundary included);
* otherwise, by the sign of each coordinate. The all-positive cell is "A
  practically outperforms B" and the all-negative cell the converse.

A finer partition labels each axis ``-``, ``0`` or ``+`` depending on whether
the coordinate is below, inside or above its tolerance band; its all-``0``
cell is the RoPE itself.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import CMError, ConfigError, DIRECTIONS, JointSampleMatrix, column_direction

DEFAULT_EPS = 0.01


@dataclass(frozen=True)
class Rope:
    eps_theta: tuple[float, ...] = ()
    eps_eta: tuple[float, ...] = ()

    def __post_init__(self):
        eps_theta = tuple(float(e) for e in self.eps_theta)
        eps_eta = tuple(float(e) for e in self.eps_eta)
        if not eps_theta + eps_eta:
            raise ConfigError("RoPE needs at least one tolerance")
        if not all(np.isfinite(e) and e > 0 for e in eps_theta + eps_eta):
            raise ConfigError(f"RoPE tolerances must be positive, got {eps_theta + eps_eta}")
        object.__setattr__(self, "eps_theta", eps_theta)
        object.__setattr__(self, "eps_eta", eps_eta)

    @property
    def eps(self) -> np.ndarray:
        return np.array(self.eps_theta + self.eps_eta)

    @property
    def dimension(self) -> int:
        return len(self.eps_theta) + len(self.eps_eta)

    @classmethod
    def parse(cls, text: str, dimension: int) -> Rope:
        """Parse ``"0.01,0.02"``; the tolerance count must equal ``dimension``."""
        try:
            values = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse RoPE {text!r}") from None
        if len(values) != dimension:
            raise ConfigError(f"RoPE {text!r} has {len(values)} tolerances for {dimension} metric columns")
        return cls(tuple(values))

    @classmethod
    def square(cls, dimension: int, eps: float = DEFAULT_EPS) -> Rope:
        return cls((eps,) * dimension)


@dataclass(frozen=True)
class ComparisonReport:
    p_equivalent: float
    p_a_outperforms: float
    p_b_outperforms: float
    orthant_probs: dict[str, float]
    band_probs: dict[str, float]
    gap_samples: JointSampleMatrix
    rope: Rope
    n_used: int
    n_flagged: int

    def as_dict(self) -> dict:
        return {
            "columns": list(self.gap_samples.columns),
            "rope": self.rope.eps.tolist(),
            "p_equivalent": self.p_equivalent,
            "p_a_outperforms": self.p_a_outperforms,
            "p_b_outperforms": self.p_b_outperforms,
            "orthant_probs": dict(self.orthant_probs),
            "band_probs": dict(self.band_probs),
            "n_used": self.n_used,
            "n_flagged": self.n_flagged,
        }


def _orientations(columns, orientation, mode) -> list[str]:
    if mode not in ("oriented", "raw"):
        raise ConfigError(f"mode must be 'oriented' or 'raw', got {mode!r}")
    if mode == "raw":
        return ["raw"] * len(columns)
    orientation = dict(orientation or {})
    unknown = set(orientation) - set(columns)
    if unknown:
        raise ConfigError(f"orientation given for unknown columns {sorted(unknown)}")
    out = [orientation.get(c, column_direction(c)) for c in columns]
    bad = [d for d in out if d not in DIRECTIONS]
    if bad:
        raise ConfigError(f"unknown orientation(s) {bad}; use one of {DIRECTIONS}")
    return out


def gap_distribution(
    samples_a: JointSampleMatrix,
    samples_b: JointSampleMatrix,
    orientation: Mapping[str, str] | None = None,
    mode: str = "oriented",
) -> JointSampleMatrix:
    """Row-paired gap between two independent sample sets, positive meaning A is better.

    In ``"oriented"`` mode each column follows its direction: ``higher`` gives
    ``a - b``, ``lower`` gives ``b - a``, ``zero`` (signed fairness gaps)
    gives ``|b| - |a|`` and ``raw`` gives ``a - b``. ``orientation`` overrides
    the direction of named columns; builtin metric columns default to their
    registry direction. ``"raw"`` mode uses ``a - b`` everywhere.
    """
    if samples_a.columns != samples_b.columns:
        raise ConfigError(f"metric columns differ: {samples_a.columns} vs {samples_b.columns}")
    if samples_a.T != samples_b.T:
        raise ConfigError(f"sample counts differ: {samples_a.T} vs {samples_b.T}")
    a, b = samples_a.samples, samples_b.samples
    gap = np.empty_like(a)
    for j, direction in enumerate(_orientations(samples_a.columns, orientation, mode)):
        if direction == "lower":
            gap[:, j] = b[:, j] - a[:, j]
        elif direction == "zero":
            gap[:, j] = np.abs(b[:, j]) - np.abs(a[:, j])
        else:
            gap[:, j] = a[:, j] - b[:, j]
    flagged = samples_a.flagged | samples_b.flagged | ~np.isfinite(gap).all(axis=1)
    return JointSampleMatrix(samples_a.columns, gap, None, flagged)


_SYMBOLS = "-0+"


def _cell_ids(codes: np.ndarray) -> np.ndarray:
    # per-axis codes in {0, 1, 2} -> one base-3 cell id per row
    d = codes.shape[1]
    return codes @ (3 ** np.arange(d - 1, -1, -1))


def _decode(idx: int, d: int) -> str:
    out = []
    for _ in range(d):
        out.append(_SYMBOLS[idx % 3])
        idx //= 3
    return "".join(reversed(out))


def compare(gap: JointSampleMatrix, rope: Rope) -> ComparisonReport:
    """Probabilities of equivalence, dominance, and every other cell.

    Flagged gap rows are excluded from the denominators and counted.
    ``orthant_probs`` is keyed by sign patterns over the rows outside the
    RoPE (``+``/``-`` per axis, ``0`` only for an exact zero coordinate);
    ``band_probs`` is keyed by ``-``/``0``/``+`` band patterns excluding the
    all-``0`` RoPE cell. Each partition sums to one with ``p_equivalent``.
    """
    d = len(gap.columns)
    if rope.dimension != d:
        raise ConfigError(f"RoPE has {rope.dimension} tolerances for {d} gap columns")
    x = gap.samples[~gap.flagged]
    n = x.shape[0]
    if n == 0:
        raise CMError("no unflagged gap samples to compare")
    eps = rope.eps

    band = np.where(x > eps, 2, np.where(x < -eps, 0, 1))
    inside = (band == 1).all(axis=1)
    sign = (np.sign(x) + 1).astype(int)  # 0 '-', 1 exact zero, 2 '+'

    band_counts = np.bincount(_cell_ids(band), minlength=3**d)
    sign_counts = np.bincount(_cell_ids(sign[~inside]), minlength=3**d)
    rope_id = _cell_ids(np.ones((1, d), dtype=int))[0]

    band_probs = {}
    for idx in range(3**d):
        if idx != rope_id:
            band_probs[_decode(idx, d)] = band_counts[idx] / n
    orthant_probs = {}
    for a in itertools.product((0, 2), repeat=d):
        idx = int(np.dot(a, 3 ** np.arange(d - 1, -1, -1)))
        orthant_probs[_decode(idx, d)] = sign_counts[idx] / n
    for idx in np.flatnonzero(sign_counts):
        key = _decode(int(idx), d)
        orthant_probs.setdefault(key, sign_counts[idx] / n)

    return ComparisonReport(
        p_equivalent=float(inside.sum() / n),
        p_a_outperforms=float(orthant_probs["+" * d]),
        p_b_outperforms=float(orthant_probs["-" * d]),
        orthant_probs={k: float(v) for k, v in orthant_probs.items()},
        band_probs={k: float(v) for k, v in band_probs.items()},
        gap_samples=gap,
        rope=rope,
        n_used=n,
        n_flagged=gap.n_flagged,
    )
