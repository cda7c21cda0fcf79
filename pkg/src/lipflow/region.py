"""Open axis-aligned boxes with optional relatively compact sub-boxes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import RegionError


@dataclass(frozen=True)
class Region:
    """Open box prod_i (lower_i, upper_i), optionally carrying a sub-box.

    The sub-box, when present, must have positive margin on every side so
    that its closure sits inside the box.
    """

    lower: tuple
    upper: tuple
    sub: Optional["Region"] = None

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper) or not lower:
            raise RegionError("lower and upper must be nonempty and of equal length")
        if not all(np.isfinite(lower)) or not all(np.isfinite(upper)):
            raise RegionError("box bounds must be finite")
        if any(l >= u for l, u in zip(lower, upper)):
            raise RegionError(f"degenerate box: need lower < upper, got {lower} / {upper}")
        if self.sub is not None:
            if self.sub.dimension != len(lower):
                raise RegionError("sub-box dimension mismatch")
            gaps = [min(sl - l, u - su)
                    for l, u, sl, su in zip(lower, upper, self.sub.lower, self.sub.upper)]
            if min(gaps) <= 0.0:
                raise RegionError("sub-box closure must sit inside the box with positive margin")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @cached_property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @cached_property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @cached_property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict membership of an (N, n) array of points in the open box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts > self.lo) & (pts < self.hi), axis=1)

    def contains_point(self, x) -> bool:
        return bool(self.contains(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def ball_inside(self, center, radius: float) -> bool:
        """Whether the closed Euclidean ball sits strictly inside the box."""
        c = np.asarray(center, dtype=float)
        if c.shape != (self.dimension,):
            raise RegionError(f"center has dimension {c.shape}, box has {self.dimension}")
        return bool(np.all(c - radius > self.lo) and np.all(c + radius < self.hi))

    def shrunk(self, margin: float) -> "Region":
        """Concentric box with every face moved inward by `margin`."""
        lo = self.lo + margin
        hi = self.hi - margin
        if np.any(lo >= hi):
            raise RegionError("margin too large for box")
        return Region(tuple(lo), tuple(hi))
