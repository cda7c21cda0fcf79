"""Flow maps of Lipschitz vector fields: RK4 integration, escape detection,
Jacobian matrices and determinants, and the quantitative flow estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import EscapeError, IntegrationError, LipflowError, RegionError

_LOG2 = math.log(2.0)
# strict inequality in the step cap keeps every substep Jacobian factor
# inside the unit ball around the identity, hence orientation-preserving
_CAP_SAFETY = 0.99


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-substep RK4 configuration.

    The substep never exceeds (1/L) log 2 for a field with declared constant
    L > 0, and drops to sqrt(tolerance) for fields flagged nonsmooth, where
    the scheme's order degrades to O(step).
    """

    base_step: float = 0.01
    tolerance: float = 1e-9
    max_steps: int = 1_000_000
    jacobian_mode: str = "variational"

    def __post_init__(self):
        if self.base_step <= 0 or self.tolerance <= 0 or self.max_steps < 1:
            raise IntegrationError("base_step, tolerance must be positive; max_steps >= 1")
        if self.jacobian_mode not in ("variational", "forward_difference"):
            raise IntegrationError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass(frozen=True)
class FlowSample:
    """One flow evaluation: point, time, image, advance, Jacobian determinant."""

    x: tuple
    t: float
    gamma: tuple
    advance: tuple
    jac_det: float
    escaped: bool
    escape_time: Optional[float] = None


@dataclass(frozen=True)
class PairBoundReport:
    """Worst pairwise ratio against an exponential bound."""

    label: str
    worst_ratio: float
    bound: float
    tolerance: float
    passed: bool
    pair_count: int
    notes: str = ""


def effective_step(field, cfg: IntegratorConfig) -> float:
    step = cfg.base_step
    lip = getattr(field, "declared_lipschitz", None)
    if lip is not None and lip > 0:
        step = min(step, _CAP_SAFETY * _LOG2 / lip)
    if getattr(field, "nonsmooth", False):
        step = min(step, math.sqrt(cfg.tolerance))
    return step


def _substep_count(t: float, step: float, cfg: IntegratorConfig) -> int:
    k = max(1, int(math.ceil(abs(t) / step)))
    if k > cfg.max_steps:
        raise IntegrationError(
            f"integration over t={t} needs {k} substeps, exceeding max_steps={cfg.max_steps}"
        )
    return k


def _field_jacobians(field, pts: np.ndarray, delta: float) -> np.ndarray:
    """Central-difference Jacobian matrices of the field, (N, n, n)."""
    n = pts.shape[1]
    A = np.empty((pts.shape[0], n, n))
    for ax in range(n):
        step = np.zeros(n)
        step[ax] = delta
        A[:, :, ax] = (field.eval_many(pts + step) - field.eval_many(pts - step)) / (2.0 * delta)
    return A


def _rk4_batch(field, points: np.ndarray, t: float, cfg: IntegratorConfig,
               want_jacobian: bool = False):
    """Integrate the flow (and optionally the linearized system) from every row.

    Returns (state, escaped, escape_times, jac) where rows that leave the box
    freeze at the last inside state and carry the pre-escape substep time.
    """
    region = field.region
    pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    N, n = pts.shape
    escaped = ~region.contains(pts)
    escape_times = np.full(N, np.nan)
    escape_times[escaped] = 0.0
    jac = np.broadcast_to(np.eye(n), (N, n, n)).copy() if want_jacobian else None
    if t == 0.0:
        return pts, escaped, escape_times, jac

    step = effective_step(field, cfg)
    k = _substep_count(t, step, cfg)
    h = t / k
    delta = cfg.tolerance  # finite-difference step for the field Jacobian

    for j in range(k):
        active = ~escaped
        if not active.any():
            break
        x = pts[active]
        if want_jacobian:
            D = jac[active]
            k1 = field.eval_many(x)
            a1 = _field_jacobians(field, x, delta)
            k1D = np.einsum("nij,njk->nik", a1, D)
            x2 = x + 0.5 * h * k1
            k2 = field.eval_many(x2)
            a2 = _field_jacobians(field, x2, delta)
            k2D = np.einsum("nij,njk->nik", a2, D + 0.5 * h * k1D)
            x3 = x + 0.5 * h * k2
            k3 = field.eval_many(x3)
            a3 = _field_jacobians(field, x3, delta)
            k3D = np.einsum("nij,njk->nik", a3, D + 0.5 * h * k2D)
            x4 = x + h * k3
            k4 = field.eval_many(x4)
            a4 = _field_jacobians(field, x4, delta)
            k4D = np.einsum("nij,njk->nik", a4, D + h * k3D)
            xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            Dn = D + (h / 6.0) * (k1D + 2.0 * k2D + 2.0 * k3D + k4D)
        else:
            k1 = field.eval_many(x)
            k2 = field.eval_many(x + 0.5 * h * k1)
            k3 = field.eval_many(x + 0.5 * h * k2)
            k4 = field.eval_many(x + h * k3)
            xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            Dn = None
        inside = region.contains(xn)
        idx = np.where(active)[0]
        keep = idx[inside]
        pts[keep] = xn[inside]
        if want_jacobian:
            jac[keep] = Dn[inside]
        newly = idx[~inside]
        escaped[newly] = True
        escape_times[newly] = j * h
    return pts, escaped, escape_times, jac


def flow_many(field, points: np.ndarray, t: float, cfg: IntegratorConfig
              ) -> Tuple[np.ndarray, np.ndarray]:
    """Batch flow map: (gamma, escaped).  Escaped rows hold the last inside state."""
    state, escaped, _, _ = _rk4_batch(field, points, t, cfg)
    return state, escaped


def jacobian_many(field, points: np.ndarray, t: float, cfg: IntegratorConfig
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Batch Jacobian matrices of x -> gamma_t(x): ((N, n, n), escaped)."""
    if cfg.jacobian_mode == "variational":
        _, escaped, _, jac = _rk4_batch(field, points, t, cfg, want_jacobian=True)
        return jac, escaped
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    h = math.sqrt(cfg.tolerance)
    jac = np.empty((pts.shape[0], n, n))
    escaped = np.zeros(pts.shape[0], dtype=bool)
    for ax in range(n):
        step = np.zeros(n)
        step[ax] = h
        gp, ep = flow_many(field, pts + step, t, cfg)
        gm, em = flow_many(field, pts - step, t, cfg)
        escaped |= ep | em
        jac[:, :, ax] = (gp - gm) / (2.0 * h)
    return jac, escaped


def _bisect_escape(field, state: np.ndarray, h: float, cfg: IntegratorConfig) -> float:
    """Largest tau in [0, h] such that one RK4 step of size tau stays inside."""
    region = field.region

    def inside_after(tau: float) -> bool:
        if tau == 0.0:
            return True
        x = state.reshape(1, -1)
        k1 = field.eval_many(x)
        k2 = field.eval_many(x + 0.5 * tau * k1)
        k3 = field.eval_many(x + 0.5 * tau * k2)
        k4 = field.eval_many(x + tau * k3)
        xn = x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return bool(region.contains(xn)[0])

    lo, hi = 0.0, h
    while abs(hi - lo) > cfg.tolerance:
        mid = 0.5 * (lo + hi)
        if inside_after(mid):
            lo = mid
        else:
            hi = mid
    return lo


def flow_point(field, x, t: float, cfg: IntegratorConfig) -> FlowSample:
    """Integrate one trajectory, detecting box escape by bisection."""
    x0 = np.asarray(x, dtype=float).reshape(-1)
    if not field.region.contains_point(x0):
        raise RegionError(f"starting point {tuple(x0)} is outside the open box")
    if t == 0.0:
        n = x0.size
        return FlowSample(tuple(x0), 0.0, tuple(x0), (0.0,) * n, 1.0, False)

    want_jac = cfg.jacobian_mode == "variational"
    state, escaped, etimes, jac = _rk4_batch(
        field, x0.reshape(1, -1), t, cfg, want_jacobian=want_jac)
    if escaped[0]:
        h = t / _substep_count(t, effective_step(field, cfg), cfg)
        tau = _bisect_escape(field, state[0], h, cfg)
        if tau != 0.0:
            probe, esc2, _, _ = _rk4_batch(field, state, tau, cfg)
            if not esc2[0]:
                state = probe
        gamma = state[0]
        return FlowSample(tuple(x0), float(t), tuple(gamma), tuple(gamma - x0),
                          float("nan"), True, float(etimes[0] + tau))

    if want_jac:
        det = float(np.linalg.det(jac[0]))
        if det <= 0.0:
            raise LipflowError(f"flow Jacobian determinant {det} is not positive")
    else:
        det = jacobian_det(field, x0, t, cfg)
    gamma = state[0]
    return FlowSample(tuple(x0), float(t), tuple(gamma), tuple(gamma - x0),
                      det, False, None)


def jacobian_matrix(field, x, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """Jacobian matrix of x -> gamma_t(x) at one point (trajectory must stay in)."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if not field.region.contains_point(pt[0]):
        raise RegionError(f"point {tuple(pt[0])} is outside the open box")
    jac, escaped = jacobian_many(field, pt, t, cfg)
    if escaped[0]:
        raise EscapeError(f"trajectory from {tuple(pt[0])} escapes before t={t}")
    return jac[0]


def jacobian_det(field, x, t: float, cfg: IntegratorConfig) -> float:
    """Determinant of the flow Jacobian; strictly positive along kept trajectories."""
    if t == 0.0:
        return 1.0
    det = float(np.linalg.det(jacobian_matrix(field, x, t, cfg)))
    if det <= 0.0:
        raise LipflowError(f"flow Jacobian determinant {det} is not positive")
    return det


def _require_lipschitz(field) -> float:
    lip = getattr(field, "declared_lipschitz", None)
    if lip is None:
        raise LipflowError("bound checks need a declared Lipschitz constant")
    return float(lip)


def _flow_pairs(field, pairs: Sequence, t: float, cfg: IntegratorConfig):
    pairs = list(pairs)
    xs = np.asarray([p[0] for p in pairs], dtype=float)
    ys = np.asarray([p[1] for p in pairs], dtype=float)
    gx, ex = flow_many(field, xs, t, cfg)
    gy, ey = flow_many(field, ys, t, cfg)
    if np.any(ex) or np.any(ey):
        bad = int(np.argmax(ex | ey))
        raise EscapeError(f"pair {bad} escapes the box before t={t}")
    return xs, ys, gx, gy


def check_gronwall(field, pairs: Sequence, t: float, cfg: IntegratorConfig,
                   tolerance: float = 1e-6) -> PairBoundReport:
    """Check |gamma_t(x)-gamma_t(y)| <= e^{L|t|} |x-y| over point pairs."""
    lip = _require_lipschitz(field)
    xs, ys, gx, gy = _flow_pairs(field, pairs, t, cfg)
    base = np.linalg.norm(xs - ys, axis=1)
    if np.any(base <= 0):
        raise LipflowError("pairs must consist of distinct points")
    ratios = np.linalg.norm(gx - gy, axis=1) / base
    worst = float(ratios.max())
    bound = math.exp(lip * abs(t))
    return PairBoundReport(
        label=f"gronwall[{getattr(field, 'name', '')} t={t}]",
        worst_ratio=worst, bound=bound, tolerance=tolerance,
        passed=worst <= bound + tolerance, pair_count=len(xs),
        notes=f"L={lip}",
    )


def check_advance_estimate(field, pairs: Sequence, t: float, cfg: IntegratorConfig,
                           tolerance: float = 1e-6) -> PairBoundReport:
    """Check |lambda(x,t)-lambda(y,t)| <= (e^{L|t|}-1) |x-y| over point pairs."""
    lip = _require_lipschitz(field)
    xs, ys, gx, gy = _flow_pairs(field, pairs, t, cfg)
    base = np.linalg.norm(xs - ys, axis=1)
    if np.any(base <= 0):
        raise LipflowError("pairs must consist of distinct points")
    adv_x = gx - xs
    adv_y = gy - ys
    ratios = np.linalg.norm(adv_x - adv_y, axis=1) / base
    worst = float(ratios.max())
    bound = math.exp(lip * abs(t)) - 1.0
    return PairBoundReport(
        label=f"advance[{getattr(field, 'name', '')} t={t}]",
        worst_ratio=worst, bound=bound, tolerance=tolerance,
        passed=worst <= bound + tolerance, pair_count=len(xs),
        notes=f"L={lip}",
    )
