"""Highest-density regions of 1-D and 2-D sample clouds.

The density is a Gaussian product-kernel KDE with Scott's-rule bandwidths,
evaluated on a regular grid by linear binning followed by a separable
convolution. The density threshold is found with the quantile approach:
densities at the samples are sorted in descending order and the
``ceil(coverage * n)``-th value is taken. The region is the set of points
whose density reaches that threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import convolve1d

from .core import CMError, ConfigError, JointSampleMatrix

MIN_SAMPLES = 100
PAD_BANDWIDTHS = 3.0
KERNEL_BANDWIDTHS = 5.0
DEFAULT_RESOLUTION = {1: 512, 2: 256}


@dataclass(frozen=True, eq=False)
class HdrRegion:
    """A fitted highest-density region.

    Axes with zero spread are collapsed to the point ``point_values[i]``;
    such a region has zero area and ``degenerate`` set on that axis.
    """

    columns: tuple[str, ...]
    coverage_target: float
    f_alpha: float
    bandwidths: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]
    density: np.ndarray = field(repr=False)
    area: float
    n_samples: int
    degenerate: tuple[bool, ...]
    point_values: tuple[float | None, ...]
    kernel: str = "gaussian"

    @property
    def dimension(self) -> int:
        return len(self.columns)

    @property
    def flagged(self) -> bool:
        return any(self.degenerate)

    @property
    def _active(self) -> list[int]:
        return [i for i, deg in enumerate(self.degenerate) if not deg]

    def centers(self, axis: int) -> np.ndarray:
        """Cell centres along an active axis."""
        lo, hi, res = self.lower[axis], self.upper[axis], self.resolution[axis]
        w = (hi - lo) / res
        return lo + (np.arange(res) + 0.5) * w

    def cell_widths(self) -> tuple[float, ...]:
        return tuple((hi - lo) / r if r else 0.0 for lo, hi, r in zip(self.lower, self.upper, self.resolution))

    @property
    def mask(self) -> np.ndarray:
        return self.density >= self.f_alpha

    def density_at(self, points) -> np.ndarray:
        """KDE density at points of shape (m, dimension), read off the grid.

        Points off the collapsed value of a degenerate axis have density 0.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            if self.dimension == 1 and pts.shape[0] == 1:
                pts = pts.T
            else:
                raise ConfigError(f"points of dimension {pts.shape[1]} for a {self.dimension}-D region")
        on_point = np.ones(len(pts), dtype=bool)
        for i, deg in enumerate(self.degenerate):
            if deg:
                on_point &= pts[:, i] == self.point_values[i]
        active = self._active
        if not active:
            return np.where(on_point, np.inf, 0.0)
        if len(active) == 1:
            dens = np.interp(pts[:, active[0]], self.centers(active[0]), self.density, left=0.0, right=0.0)
        else:
            interp = RegularGridInterpolator(
                tuple(self.centers(i) for i in active), self.density, bounds_error=False, fill_value=0.0
            )
            dens = interp(pts[:, active])
        return np.where(on_point, dens, 0.0)

    def intervals(self) -> list[tuple[float, float]]:
        """Disjoint intervals of a 1-D region, endpoints refined by linear interpolation."""
        if self.dimension != 1:
            raise ConfigError("intervals are only defined for 1-D regions")
        if self.degenerate[0]:
            v = self.point_values[0]
            return [(v, v)]
        c, dens, f = self.centers(0), self.density, self.f_alpha
        inside = dens >= f
        out = []
        i, n = 0, len(c)
        while i < n:
            if not inside[i]:
                i += 1
                continue
            j = i
            while j + 1 < n and inside[j + 1]:
                j += 1
            left = self.lower[0] if i == 0 else _crossing(c[i - 1], c[i], dens[i - 1], dens[i], f)
            right = self.upper[0] if j == n - 1 else _crossing(c[j], c[j + 1], dens[j], dens[j + 1], f)
            out.append((float(left), float(right)))
            i = j + 1
        return out

    def as_dict(self, include_mask: bool = True) -> dict:
        out = {
            "columns": list(self.columns),
            "dimension": self.dimension,
            "coverage_target": self.coverage_target,
            "f_alpha": self.f_alpha,
            "kernel": self.kernel,
            "bandwidths": list(self.bandwidths),
            "grid": {"lower": list(self.lower), "upper": list(self.upper), "resolution": list(self.resolution)},
            "area": self.area,
            "n_samples": self.n_samples,
            "degenerate": list(self.degenerate),
            "point_values": list(self.point_values),
        }
        if self.dimension == 1:
            out["intervals"] = [list(iv) for iv in self.intervals()]
        elif include_mask and not self.flagged:
            out["mask"] = self.mask.astype(int).tolist()
        return out


def _crossing(x0, x1, d0, d1, f):
    if d1 == d0:
        return 0.5 * (x0 + x1)
    return x0 + (f - d0) * (x1 - x0) / (d1 - d0)


def _as_points(samples, columns) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(samples, JointSampleMatrix):
        if columns is not None:
            samples = samples.select(list(columns))
        x = samples.samples[~samples.flagged]
        names = samples.columns
    else:
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = x[np.isfinite(x).all(axis=1)]
        names = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(x.shape[1]))
    if x.ndim != 2 or x.shape[1] not in (1, 2):
        raise ConfigError(f"HDR supports 1 or 2 columns, got {x.shape[1] if x.ndim == 2 else x.ndim}")
    if len(names) != x.shape[1]:
        raise ConfigError(f"{len(names)} column names for {x.shape[1]} columns")
    return x, tuple(names)


def scott_bandwidth(x: np.ndarray, d: int) -> float:
    return float(len(x) ** (-1.0 / (d + 4)) * np.std(x, ddof=1))


def _gaussian_kernel(h: float, w: float, res: int) -> np.ndarray:
    half = min(int(math.ceil(KERNEL_BANDWIDTHS * h / w)), res)
    u = np.arange(-half, half + 1) * w / h
    return np.exp(-0.5 * u * u) / (h * math.sqrt(2 * math.pi))


def _linear_bin(x: np.ndarray, lo: float, w: float, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the two nearest cell centres for each value."""
    u = (x - lo) / w - 0.5
    i0 = np.floor(u).astype(int)
    frac = u - i0
    idx = np.stack([i0, i0 + 1], axis=-1)
    wts = np.stack([1.0 - frac, frac], axis=-1)
    wts = np.where((idx >= 0) & (idx < res), wts, 0.0)
    return np.clip(idx, 0, res - 1), wts


def _binned_kde(x: np.ndarray, lower, upper, res, bandwidths) -> np.ndarray:
    n, d = x.shape
    widths = [(hi - lo) / r for lo, hi, r in zip(lower, upper, res)]
    if d == 1:
        idx, wts = _linear_bin(x[:, 0], lower[0], widths[0], res[0])
        counts = np.bincount(idx.ravel(), weights=wts.ravel(), minlength=res[0])
    else:
        ix, wx = _linear_bin(x[:, 0], lower[0], widths[0], res[0])
        iy, wy = _linear_bin(x[:, 1], lower[1], widths[1], res[1])
        flat = (ix[:, :, None] * res[1] + iy[:, None, :]).ravel()
        weight = (wx[:, :, None] * wy[:, None, :]).ravel()
        counts = np.bincount(flat, weights=weight, minlength=res[0] * res[1]).reshape(res[0], res[1])
    dens = counts
    for axis in range(d):
        kern = _gaussian_kernel(bandwidths[axis], widths[axis], res[axis])
        dens = convolve1d(dens, kern, axis=axis, mode="constant", cval=0.0)
    return np.maximum(dens / n, 0.0)


def fit_hdr(
    samples: JointSampleMatrix | np.ndarray,
    coverage: float = 0.95,
    grid_resolution: int | Sequence[int] | None = None,
    columns: Sequence[str] | None = None,
) -> HdrRegion:
    """Fit the ``coverage`` highest-density region of 1-D or 2-D samples.

    Parameters
    ----------
    samples : JointSampleMatrix or array of shape (n,) / (n, d)
        Flagged rows (or non-finite rows) are ignored.
    coverage : float
        Target probability mass, strictly between 0 and 1.
    grid_resolution : int or pair of ints, optional
        Cells per axis; defaults to 512 in 1-D and 256 per axis in 2-D.
    columns : sequence of str, optional
        Columns to use when ``samples`` has more than two.
    """
    if not 0.0 < coverage < 1.0:
        raise ConfigError(f"coverage must be strictly between 0 and 1, got {coverage}")
    x, names = _as_points(samples, columns)
    n, d = x.shape
    if n < MIN_SAMPLES:
        raise CMError(f"HDR estimation needs at least {MIN_SAMPLES} valid samples, got {n}")
    if grid_resolution is None:
        grid_resolution = DEFAULT_RESOLUTION[d]
    res_all = (grid_resolution,) * d if np.isscalar(grid_resolution) else tuple(grid_resolution)
    if len(res_all) != d or any(int(r) < 2 for r in res_all):
        raise ConfigError(f"grid resolution {grid_resolution!r} invalid for {d}-D samples")

    spread = x.max(axis=0) - x.min(axis=0)
    degenerate = tuple(bool(s == 0) for s in spread)
    point_values = tuple(float(x[0, i]) if deg else None for i, deg in enumerate(degenerate))
    active = [i for i in range(d) if not degenerate[i]]

    bandwidths = [0.0] * d
    lower, upper, resolution = [0.0] * d, [0.0] * d, [0] * d
    for i in range(d):
        if degenerate[i]:
            lower[i] = upper[i] = point_values[i]
            continue
        h = scott_bandwidth(x[:, i], len(active))
        bandwidths[i] = h
        lower[i] = float(x[:, i].min() - PAD_BANDWIDTHS * h)
        upper[i] = float(x[:, i].max() + PAD_BANDWIDTHS * h)
        resolution[i] = int(res_all[i])

    if active:
        xa = x[:, active]
        density = _binned_kde(
            xa, [lower[i] for i in active], [upper[i] for i in active],
            [resolution[i] for i in active], [bandwidths[i] for i in active],
        )
    else:
        density = np.array(np.inf)

    region = HdrRegion(
        columns=names,
        coverage_target=float(coverage),
        f_alpha=0.0,
        bandwidths=tuple(bandwidths),
        lower=tuple(lower),
        upper=tuple(upper),
        resolution=tuple(resolution),
        density=density,
        area=0.0,
        n_samples=n,
        degenerate=degenerate,
        point_values=point_values,
    )
    at_samples = np.sort(region.density_at(x))[::-1]
    f_alpha = float(at_samples[math.ceil(coverage * n) - 1])
    area = 0.0
    if not any(degenerate):
        area = float(np.count_nonzero(density >= f_alpha) * np.prod(region.cell_widths()))
    density.setflags(write=False)
    object.__setattr__(region, "f_alpha", f_alpha)
    object.__setattr__(region, "area", area)
    return region


def contains(region: HdrRegion, point) -> bool:
    """True when the density at ``point`` reaches the region's threshold (closed set)."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (region.dimension,):
        raise ConfigError(f"point of shape {p.shape} for a {region.dimension}-D region")
    return bool(region.density_at(p[None, :])[0] >= region.f_alpha)


def coverage_fraction(region: HdrRegion, points) -> float:
    """Fraction of ``points`` (shape (m, dimension)) lying inside the region."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise CMError("coverage_fraction needs at least one point")
    if region.dimension == 1:
        pts = pts.reshape(-1, 1)
    pts = np.atleast_2d(pts)
    if pts.shape[1] != region.dimension:
        raise ConfigError(f"points of dimension {pts.shape[1]} for a {region.dimension}-D region")
    return float(np.mean(region.density_at(pts) >= region.f_alpha))
