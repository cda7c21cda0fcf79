"""Locally Lipschitz vector fields on open boxes: evaluation, Lipschitz
estimation, and a.e. divergence via central differences."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import EvaluationError, LipschitzDeclarationError, RegionError
from .expr import Expression, evaluate_many, parse, uses_nonsmooth_ops
from .grid import SampledFunction, midpoint_grid
from .region import Region

__all__ = [
    "Region",
    "VectorField",
    "eval_field",
    "estimate_lipschitz",
    "divergence_at",
    "divergence_many",
    "divergence_field",
]


@dataclass(frozen=True)
class VectorField:
    """Field X = sum_i a_i d/dx_i with expression components on an open box.

    `declared_lipschitz` is trusted by every bound formula; the sampled
    estimator only validates it.  Fields whose components contain kinked
    primitives (abs, min, max, sqrt) are treated as nonsmooth by the
    integrator.
    """

    region: Region
    components: Tuple[Expression, ...]
    declared_lipschitz: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        n = self.region.dimension
        if len(comps) != n:
            raise RegionError(f"need {n} components, got {len(comps)}")
        if any(c.dimension != n for c in comps):
            raise RegionError("component expression dimension mismatch")
        if self.declared_lipschitz is not None and self.declared_lipschitz < 0:
            raise LipschitzDeclarationError("declared Lipschitz constant must be nonnegative")
        # components must evaluate finitely on the closed box; probe corners
        # and a coarse interior lattice
        probe = _probe_points(self.region)
        try:
            vals = self.eval_many(probe)
        except EvaluationError as err:
            raise RegionError(
                f"field {self.name or '<unnamed>'} fails to evaluate on the closed box: {err}"
            ) from err
        if not np.all(np.isfinite(vals)):
            raise RegionError(f"field {self.name or '<unnamed>'} is not finite on the closed box")

    @classmethod
    def from_components(cls, region: Region, sources: Sequence[str],
                        lipschitz: Optional[float] = None, name: str = "") -> "VectorField":
        comps = tuple(parse(src, region.dimension) for src in sources)
        return cls(region, comps, lipschitz, name)

    @cached_property
    def nonsmooth(self) -> bool:
        return any(uses_nonsmooth_ops(c) for c in self.components)

    @property
    def dimension(self) -> int:
        return self.region.dimension

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate all components on an (N, n) array, returning (N, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty_like(pts)
        for i, comp in enumerate(self.components):
            out[:, i] = evaluate_many(comp, pts)
        return out

    def component_values(self, index: int, points: np.ndarray) -> np.ndarray:
        return evaluate_many(self.components[index], np.atleast_2d(points))


def _probe_points(region: Region) -> np.ndarray:
    n = region.dimension
    axes = [np.linspace(region.lower[i], region.upper[i], 3) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def eval_field(field: VectorField, x) -> np.ndarray:
    """Value (a_1(x), ..., a_n(x)) at a point of the open box."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if not field.region.contains_point(pt[0]):
        raise RegionError(f"point {tuple(pt[0])} is outside the open box")
    return field.eval_many(pt)[0]


def estimate_lipschitz(field, samples: int, seed: int) -> float:
    """Max quotient |X(x)-X(y)|/|x-y| over `samples` random point pairs.

    Deterministic given the seed; for a fixed seed the estimate is monotone
    nondecreasing in `samples` because pairs are drawn from a single stream.
    Raises if a declared constant is contradicted beyond 1e-12.
    """
    if samples < 2:
        raise ValueError("need at least 2 sample pairs")
    region = field.region
    if region.volume <= 0:
        raise RegionError("degenerate region")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(size=(samples, 2, region.dimension))
    pts = region.lo + draws * (region.hi - region.lo)
    x, y = pts[:, 0, :], pts[:, 1, :]
    dist = np.linalg.norm(x - y, axis=1)
    ok = dist > 1e-12
    fx = field.eval_many(x[ok])
    fy = field.eval_many(y[ok])
    quotients = np.linalg.norm(fx - fy, axis=1) / dist[ok]
    estimate = float(quotients.max(initial=0.0))
    declared = getattr(field, "declared_lipschitz", None)
    if declared is not None and estimate > declared + 1e-12:
        raise LipschitzDeclarationError(
            f"declared Lipschitz constant {declared} is invalid: "
            f"sampled quotient reached {estimate}"
        )
    return estimate


def _stencil_ok(region: Region, points: np.ndarray, h: float) -> np.ndarray:
    pts = np.atleast_2d(points)
    return np.all((pts - h > region.lo) & (pts + h < region.hi), axis=1)


def divergence_many(field, points: np.ndarray, h: float) -> np.ndarray:
    """Central-difference divergence at each point; O(h^2) for C^2 components."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if h <= 0:
        raise ValueError("step h must be positive")
    if not np.all(_stencil_ok(field.region, pts, h)):
        raise RegionError("divergence stencil leaves the open box")
    n = pts.shape[1]
    div = np.zeros(pts.shape[0])
    component = getattr(field, "component_values", None)
    for ax in range(n):
        step = np.zeros(n)
        step[ax] = h
        if component is not None:
            plus = component(ax, pts + step)
            minus = component(ax, pts - step)
        else:
            plus = field.eval_many(pts + step)[:, ax]
            minus = field.eval_many(pts - step)[:, ax]
        div += (plus - minus) / (2.0 * h)
    return div


def divergence_at(field, x, h: float) -> float:
    """Divergence at one point; the ball of radius h around x must be in the box."""
    return float(divergence_many(field, np.asarray(x, dtype=float).reshape(1, -1), h)[0])


def divergence_field(field, grid_region: Region, resolution, h: float) -> SampledFunction:
    """Divergence sampled at the grid midpoints.

    Nodes whose stencil leaves the box carry value 0 and are flagged.
    """
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(res) == 1 and grid_region.dimension > 1:
        res = res * grid_region.dimension
    if any(r < 2 for r in res):
        raise RegionError("resolution must be at least 2 per axis")
    pts, _ = midpoint_grid(grid_region.lo, grid_region.hi, res)
    ok = _stencil_ok(field.region, pts, h)
    vals = np.zeros(pts.shape[0])
    if np.any(ok):
        vals[ok] = divergence_many(field, pts[ok], h)
    return SampledFunction(grid_region, res, vals, flagged=~ok)
