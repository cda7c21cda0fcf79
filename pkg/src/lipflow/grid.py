"""Sampled functions on midpoint tensor grids, bumps, quadrature, and pairings.

Functions live at cell midpoints of an open box and are extended by zero
outside it.  The midpoint convention keeps axis-aligned kinks like x = 0 off
the sample set and makes the quadrature exact on affine integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import GridMismatchError, LipflowError, SupportError
from .expr import Expression, evaluate_many
from .region import Region


def axis_midpoints(lower: float, upper: float, count: int) -> np.ndarray:
    # centered construction keeps midpoints exactly antisymmetric on
    # symmetric boxes, so odd integrands cancel exactly
    w = (upper - lower) / count
    center = 0.5 * (lower + upper)
    return center + (np.arange(count) + 0.5 * (1 - count)) * w


def quad_sum(values: np.ndarray) -> float:
    """Exactly rounded sum; antisymmetric value sets cancel to exactly zero."""
    return math.fsum(values)


def midpoint_grid(lower, upper, counts) -> Tuple[np.ndarray, float]:
    """All cell midpoints of a box, row-major, plus the cell volume."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    axes = [axis_midpoints(l, u, c) for l, u, c in zip(lower, upper, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vol = float(np.prod((upper - lower) / np.asarray(counts)))
    return pts, vol


@dataclass(frozen=True)
class SampledFunction:
    """Values at the cell midpoints of a box, zero outside the box.

    `flagged` marks nodes whose value is a placeholder (escaped trajectory,
    failed stencil); it is all-false by default.
    """

    region: Region
    resolution: tuple
    values: np.ndarray
    flagged: Optional[np.ndarray] = None

    def __post_init__(self):
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        object.__setattr__(self, "resolution", res)
        if len(res) != self.region.dimension:
            raise GridMismatchError("resolution rank must match region dimension")
        if any(r < 2 for r in res):
            raise GridMismatchError("resolution must be at least 2 per axis")
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size != int(np.prod(res)):
            raise GridMismatchError(
                f"expected {int(np.prod(res))} values, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise LipflowError("sampled values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.flagged is not None:
            fl = np.asarray(self.flagged, dtype=bool).reshape(-1)
            if fl.size != vals.size:
                raise GridMismatchError("flag array size mismatch")
            fl.flags.writeable = False
            object.__setattr__(self, "flagged", fl)

    @property
    def cell_widths(self) -> np.ndarray:
        return self.region.widths / np.asarray(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    def midpoints(self) -> np.ndarray:
        pts, _ = midpoint_grid(self.region.lo, self.region.hi, self.resolution)
        return pts

    def flags(self) -> np.ndarray:
        if self.flagged is None:
            return np.zeros(self.values.size, dtype=bool)
        return self.flagged

    def with_values(self, values, flagged=None) -> "SampledFunction":
        return SampledFunction(self.region, self.resolution, values, flagged)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation with zero extension outside the box.

        Inside the box but beyond the outermost midpoints the value is
        clamped to the edge cell (constant in the outer half-cell).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.region.dimension
        res = self.resolution
        w = self.cell_widths
        g = (pts - (self.region.lo + 0.5 * w)) / w
        i0 = np.empty((pts.shape[0], n), dtype=np.int64)
        frac = np.empty_like(g)
        for ax in range(n):
            gi = g[:, ax]
            base = np.clip(np.floor(gi), 0, res[ax] - 2).astype(np.int64)
            i0[:, ax] = base
            frac[:, ax] = np.clip(gi - base, 0.0, 1.0)
        strides = np.ones(n, dtype=np.int64)
        for ax in range(n - 2, -1, -1):
            strides[ax] = strides[ax + 1] * res[ax + 1]
        out = np.zeros(pts.shape[0])
        for corner in range(1 << n):
            offs = np.array([(corner >> (n - 1 - ax)) & 1 for ax in range(n)], dtype=np.int64)
            idx = ((i0 + offs) * strides).sum(axis=1)
            weight = np.ones(pts.shape[0])
            for ax in range(n):
                weight *= frac[:, ax] if offs[ax] else (1.0 - frac[:, ax])
            out += weight * self.values[idx]
        out[~self.region.contains(pts)] = 0.0
        return out


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported smooth bump with analytic gradient.

    u(x) = exp(1 - 1/(1 - |x-c|^2/r^2)) for |x-c| < r, zero outside; the
    peak value is u(c) = 1 and 0 <= u <= 1 everywhere.
    """

    __test__ = False  # not a pytest class despite the name

    center: tuple
    radius: float

    def __post_init__(self):
        center = tuple(float(v) for v in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise SupportError("bump radius must be positive")

    @property
    def dimension(self) -> int:
        return len(self.center)

    def _s2(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center)
        return np.sum(d * d, axis=1) / (self.radius * self.radius)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s2 = self._s2(pts)
        out = np.zeros(pts.shape[0])
        inside = s2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Closed-form gradient, (N, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s2 = self._s2(pts)
        out = np.zeros_like(pts)
        inside = s2 < 1.0
        d = pts[inside] - np.asarray(self.center)
        denom = (1.0 - s2[inside]) ** 2
        u = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        out[inside] = -u[:, None] * (2.0 / (self.radius * self.radius)) * d / denom[:, None]
        return out

    def validate_support(self, region: Region, margin: float = 0.0) -> None:
        if self.dimension != region.dimension:
            raise SupportError("bump dimension does not match region")
        if not region.ball_inside(self.center, self.radius + margin):
            raise SupportError(
                f"bump support (center {self.center}, radius {self.radius}) "
                f"not inside region with margin {margin}"
            )


def sample(fn, region: Region, resolution) -> SampledFunction:
    """Sample an Expression, TestFunction, or callable at the cell midpoints."""
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(res) == 1 and region.dimension > 1:
        res = res * region.dimension
    pts, _ = midpoint_grid(region.lo, region.hi, res)
    if isinstance(fn, Expression):
        vals = evaluate_many(fn, pts)
    else:
        vals = np.asarray(fn(pts), dtype=float).reshape(-1)
    if vals.size != pts.shape[0]:
        raise LipflowError("sampled callable returned wrong number of values")
    if not np.all(np.isfinite(vals)):
        raise LipflowError("evaluation failed: non-finite value at a grid node")
    return SampledFunction(region, res, vals)


def _check_same_grid(f: SampledFunction, g: SampledFunction) -> None:
    if f.resolution != g.resolution or f.region.lower != g.region.lower \
            or f.region.upper != g.region.upper:
        raise GridMismatchError("sampled functions do not share a grid")


def _sub_mask(f: SampledFunction, sub: Optional[Region]) -> np.ndarray:
    if sub is None:
        return np.ones(f.values.size, dtype=bool)
    return sub.contains(f.midpoints())


def integrate(f: SampledFunction, sub: Optional[Region] = None) -> float:
    """Midpoint rule over cells whose midpoint lies in `sub` (or all cells)."""
    mask = _sub_mask(f, sub)
    return quad_sum(f.values[mask]) * f.cell_volume


def l1_distance(f: SampledFunction, g: SampledFunction, sub: Optional[Region] = None) -> float:
    _check_same_grid(f, g)
    mask = _sub_mask(f, sub)
    return quad_sum(np.abs(f.values[mask] - g.values[mask])) * f.cell_volume


def l1_norm(f: SampledFunction, sub: Optional[Region] = None) -> float:
    mask = _sub_mask(f, sub)
    return quad_sum(np.abs(f.values[mask])) * f.cell_volume


def pair(f: SampledFunction, u: TestFunction) -> float:
    """Midpoint quadrature of f * u; the bump support must lie inside f's box."""
    u.validate_support(f.region)
    uvals = u(f.midpoints())
    return quad_sum(f.values * uvals) * f.cell_volume


CSV_FLOAT_FORMAT = "%.17g"


def save_csv(f: SampledFunction, path) -> None:
    """Write "index,coord0..coord{n-1},value" rows, row-major over the grid."""
    pts = f.midpoints()
    n = f.region.dimension
    header = "index," + ",".join(f"coord{i}" for i in range(n)) + ",value"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for i in range(pts.shape[0]):
            coords = ",".join(CSV_FLOAT_FORMAT % c for c in pts[i])
            fh.write(f"{i},{coords},{CSV_FLOAT_FORMAT % f.values[i]}\n")


def load_csv(path, region: Optional[Region] = None) -> SampledFunction:
    """Read a file written by save_csv.

    Values round-trip bit-exactly.  If `region` is omitted, the box is
    reconstructed from the midpoint coordinates.
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "index" or header[-1] != "value":
            raise LipflowError(f"unrecognized CSV header {header!r}")
        n = len(header) - 2
        coords = []
        vals = []
        for line in fh:
            parts = line.strip().split(",")
            coords.append([float(p) for p in parts[1:1 + n]])
            vals.append(float(parts[-1]))
    coords = np.asarray(coords)
    vals = np.asarray(vals)
    res = tuple(np.unique(coords[:, ax]).size for ax in range(n))
    if region is None:
        lo, hi = [], []
        for ax in range(n):
            uniq = np.unique(coords[:, ax])
            w = uniq[1] - uniq[0] if uniq.size > 1 else 1.0
            lo.append(uniq[0] - w / 2)
            hi.append(uniq[-1] + w / 2)
        region = Region(tuple(lo), tuple(hi))
    return SampledFunction(region, res, vals)
