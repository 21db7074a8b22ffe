"""Incentive compatibility and equilibrium checks for (q, qbar) pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InternalError, MonotonicityError, ValidationError
from .foundation import EQ_TOL, CostModel, TypeGrid
from .majorization import MajorizationReport, check_majorization, first_decrease


@dataclass(frozen=True)
class ICReport:
    """Pairwise IC scan. ``worst`` is (i, j, gain) for type i mimicking type j."""

    passed: bool
    worst: tuple
    participation: bool
    min_profit: float
    monotone: bool

    def to_dict(self) -> dict:
        i, j, mag = self.worst
        return {
            "pass": self.passed,
            "worst": {"type": i, "mimics": j, "gain": mag},
            "participation": self.participation,
            "min_profit": self.min_profit,
            "monotone": self.monotone,
        }


def profits(q, qbar, model: CostModel, grid: TypeGrid) -> np.ndarray:
    return np.asarray(qbar, dtype=float) - model.C(q, grid.nodes)


def _aligned(q, qbar, grid):
    q = np.asarray(q, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    if q.shape != grid.nodes.shape or qbar.shape != grid.nodes.shape:
        raise ValidationError("schedules must align with the grid")
    return q, qbar


def check_ic(q, qbar, model: CostModel, grid: TypeGrid, tol: float = EQ_TOL) -> ICReport:
    """Full N x N scan of qbar_j - C(q_j, theta_i) - Pi_i, plus participation."""
    q, qbar = _aligned(q, qbar, grid)
    monotone = first_decrease(q, tol) is None
    payoff = qbar[None, :] - model.C(q[None, :], grid.nodes[:, None])
    gain, i, j = kernels.max_ic_violation(payoff)
    pi = np.diag(payoff)
    min_profit = float(pi.min())
    participation = min_profit >= -tol
    return ICReport(bool(gain <= tol and participation), (int(i), int(j), float(gain)),
                    bool(participation), min_profit, bool(monotone))


def ic_band(q, model: CostModel, grid: TypeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Bounds on Pi_{i+1} - Pi_i from the two adjacent IC constraints.

    The lower bound stops type i+1 mimicking i; the upper bound stops type i
    mimicking i+1.
    """
    q = np.asarray(q, dtype=float)
    t = grid.nodes
    lo = model.C(q[:-1], t[:-1]) - model.C(q[:-1], t[1:])
    hi = model.C(q[1:], t[:-1]) - model.C(q[1:], t[1:])
    return lo, hi


def adjacent_ic_gap(q, qbar, model: CostModel, grid: TypeGrid) -> float:
    """Largest adjacent IC violation; with q monotone this bounds every pairwise one."""
    q, qbar = _aligned(q, qbar, grid)
    if q.size < 2:
        return 0.0
    pi = profits(q, qbar, model, grid)
    lo, hi = ic_band(q, model, grid)
    step = np.diff(pi)
    return float(max(np.max(lo - step), np.max(step - hi)))


def signaled_from_envelope(q, model: CostModel, grid: TypeGrid, pi0: float,
                           check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Integrate Pi' = -C_theta(q(theta), theta) from the lowest type.

    Trapezoid increments are clipped into the discrete IC band so the result
    is exactly incentive compatible on the grid. Returns (qbar, Pi).
    """
    q = np.asarray(q, dtype=float)
    if q.shape != grid.nodes.shape:
        raise ValidationError("schedule must align with the grid")
    i = first_decrease(q)
    if i is not None:
        raise MonotonicityError(f"q decreases between indices {i} and {i + 1}", index=i)
    t = grid.nodes
    pi = np.empty_like(q)
    pi[0] = pi0
    if q.size > 1:
        slope = -model.C_theta(q, t)
        inc = 0.5 * np.diff(t) * (slope[:-1] + slope[1:])
        lo, hi = ic_band(q, model, grid)
        inc = np.minimum(np.maximum(inc, lo), hi)
        pi[1:] = pi0 + np.cumsum(inc)
    qbar = pi + model.C(q, t)
    if check:
        rep = check_ic(q, qbar, model, grid)
        if rep.worst[2] > EQ_TOL:
            raise InternalError(f"envelope schedule violates IC by {rep.worst[2]:.3g}")
    return qbar, pi


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    passed: bool
    ic: ICReport | None
    majorization: MajorizationReport | None
    monotone: bool
    continuity_flags: tuple
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "monotone": self.monotone,
            "ic": self.ic.to_dict() if self.ic else None,
            "majorization": self.majorization.to_dict() if self.majorization else None,
            "continuity_flags": list(self.continuity_flags),
            "message": self.message,
        }


def verify_equilibrium(q, qbar, model: CostModel, grid: TypeGrid,
                       tol: float = EQ_TOL) -> EquilibriumReport:
    """IC scan plus majorization; discretized grids also flag profit jumps."""
    q, qbar = _aligned(q, qbar, grid)
    ic = check_ic(q, qbar, model, grid, tol)
    try:
        maj = check_majorization(q, qbar, grid, tol)
        monotone = True
        msg = ""
    except MonotonicityError as exc:
        maj = None
        monotone = False
        msg = str(exc)
    flags = ()
    if grid.origin == "discretized" and q.size > 1:
        pi = profits(q, qbar, model, grid)
        bound = 10.0 * np.diff(grid.nodes) * np.max(np.abs(model.C_theta(q, grid.nodes)))
        flags = tuple(int(k) for k in np.nonzero(np.abs(np.diff(pi)) > bound)[0])
    passed = bool(ic.passed and monotone and maj is not None and maj.holds and not flags)
    if maj is not None and not maj.holds:
        msg = f"majorization fails at partial sum {maj.first_failure}"
    elif not ic.passed:
        msg = "incentive or participation constraint violated"
    return EquilibriumReport(passed, ic, maj, monotone, flags, msg)
