"""Optimal (q, qbar) schedules and their rating systems for each welfare regime."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .construction import construct_rating, full_mixing
from .equilibrium import EquilibriumReport, signaled_from_envelope, verify_equilibrium
from .errors import PreconditionError, ValidationError
from .foundation import CostModel, TypeGrid, WelfareWeights, normalize_weights, solve_marginal
from .rating import RatingSystem, full_information

log = logging.getLogger(__name__)

VERIFY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SolverSolution:
    """Optimal schedules with their objective sum(lambda * f * Pi) and metadata."""

    q: np.ndarray
    qbar: np.ndarray
    profit: np.ndarray
    objective: float
    regime: str
    grid: TypeGrid
    weights: WelfareWeights
    rating: RatingSystem | None = None
    meta: dict = field(default_factory=dict)

    def verify(self, model: CostModel, tol: float = VERIFY_TOL) -> EquilibriumReport:
        return verify_equilibrium(self.q, self.qbar, model, self.grid, tol)

    def to_dict(self) -> dict:
        meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.meta.items()}
        out = {
            "regime": self.regime,
            "objective": self.objective,
            "theta": self.grid.nodes.tolist(),
            "f": self.grid.weights.tolist(),
            "lambda": self.weights.values.tolist(),
            "q": self.q.tolist(),
            "qbar": self.qbar.tolist(),
            "profit": self.profit.tolist(),
            "meta": meta,
        }
        if self.rating is not None:
            out["rating"] = self.rating.to_dict()
        return out


def objective_value(profit, weights: WelfareWeights, grid: TypeGrid) -> float:
    return float(np.sum(weights.values * grid.weights * np.asarray(profit, dtype=float)))


def _solution(q, qbar, model, grid, weights, regime, rating, meta) -> SolverSolution:
    pi = qbar - model.C(q, grid.nodes)
    return SolverSolution(q, qbar, pi, objective_value(pi, weights, grid), regime,
                          grid, weights, rating, meta)


def _uniform_weights(grid: TypeGrid) -> WelfareWeights:
    return normalize_weights(np.ones(grid.n), grid)


def iron(values, weights) -> np.ndarray:
    """Weighted isotonic (nondecreasing) regression by pool-adjacent-violators."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValidationError("values and weights must align")
    if not np.all(np.isfinite(values)):
        raise ValidationError("ironing needs finite values")
    return kernels.pav(values, weights)


def first_best_quality(model: CostModel, grid: TypeGrid) -> np.ndarray:
    q = solve_marginal(model, [(1.0, grid.nodes)])
    bad = np.nonzero(~np.isfinite(q))[0]
    if bad.size:
        raise PreconditionError(
            f"C_q(q, theta) = 1 has no root on the search bracket at index {int(bad[0])}",
            index=int(bad[0]))
    return q


def first_best(model: CostModel, grid: TypeGrid, weights: WelfareWeights | None = None,
               regime: str = "total") -> SolverSolution:
    """Quality with C_q = 1 at every type, fully revealed."""
    weights = weights or _uniform_weights(grid)
    q = first_best_quality(model, grid)
    return _solution(q, q.copy(), model, grid, weights, regime, full_information(grid.n), {})


# ----------------------------------------------------------------- low quality


def virtual_weight(grid: TypeGrid, lam) -> np.ndarray:
    """V_j = (mass above j minus lambda-weighted mass above j) * cell width / f_j."""
    f = grid.weights
    lam = np.asarray(lam, dtype=float)
    tail = grid.upper_tail()
    ltail = np.zeros(grid.n)
    ltail[:-1] = np.cumsum((lam * f)[::-1])[::-1][1:]
    v = np.zeros(grid.n)
    if grid.n > 1:
        if np.any(f[:-1] <= 0):
            raise ValidationError("a cell has zero mass, so V is not finite; refine the grid")
        v[:-1] = (tail[:-1] - ltail[:-1]) * np.diff(grid.nodes) / f[:-1]
    return v


@dataclass(frozen=True, eq=False)
class _LowCore:
    q: np.ndarray
    qbar: np.ndarray
    profit: np.ndarray
    virtual: np.ndarray
    ironed: np.ndarray
    residual: np.ndarray


def _low_core(model: CostModel, grid: TypeGrid, lam) -> _LowCore:
    t = grid.nodes
    v = virtual_weight(grid, lam)
    raw = solve_marginal(model, [(1.0, t), (-v, t, "qtheta")])
    bad = np.nonzero(~np.isfinite(raw))[0]
    if bad.size:
        raise PreconditionError(f"no interior quality solves the first-order condition at index {int(bad[0])}",
                                index=int(bad[0]))
    residual = np.abs(1.0 - model.C_q(raw, t) + model.C_qtheta(raw, t) * v)
    q = raw
    ironed = np.zeros(grid.n, dtype=bool)
    if np.any(np.diff(raw) < 0):
        q = iron(raw, grid.weights)
        ironed = np.abs(q - raw) > 1e-12
    qbar0, pi_0 = signaled_from_envelope(q, model, grid, 0.0, check=False)
    pi0 = float(grid.weights @ (q - qbar0))
    return _LowCore(q, qbar0 + pi0, pi_0 + pi0, v, ironed, residual)


def _attach_rating(q, qbar, grid) -> tuple[RatingSystem, str]:
    try:
        return full_mixing(q, qbar, grid).rating, "full-mixing"
    except PreconditionError:
        rs, _ = construct_rating(q, qbar, grid)
        return rs, "constructed"


def solve_low_quality(model: CostModel, grid: TypeGrid, weights: WelfareWeights) -> SolverSolution:
    """Decreasing weights: distort quality by V and fully mix."""
    if weights.shape not in ("decreasing", "constant"):
        raise PreconditionError(f"low-quality solver needs decreasing weights, got {weights.shape}")
    if weights.shape == "constant":
        sol = first_best(model, grid, weights, regime="low")
        sol.meta.update(virtual=np.zeros(grid.n), ironed=[], residual=0.0, rating_kind="full-information")
        return sol
    core = _low_core(model, grid, weights.values)
    rating, kind = _attach_rating(core.q, core.qbar, grid)
    meta = {
        "virtual": core.virtual,
        "ironed": [int(i) for i in np.nonzero(core.ironed)[0]],
        "residual": float(np.max(core.residual[~core.ironed])) if np.any(~core.ironed) else 0.0,
        "rating_kind": kind,
    }
    return _solution(core.q, core.qbar, model, grid, weights, "low", rating, meta)


def solve_high_quality(model: CostModel, grid: TypeGrid, weights: WelfareWeights) -> SolverSolution:
    """Increasing weights: first best with full revelation."""
    if weights.shape not in ("increasing", "constant"):
        raise PreconditionError(f"high-quality solver needs increasing weights, got {weights.shape}")
    return first_best(model, grid, weights, regime="high")


def solve_total(model: CostModel, grid: TypeGrid, weights: WelfareWeights | None = None) -> SolverSolution:
    return first_best(model, grid, weights, regime="total")


# ----------------------------------------------------------------- mid quality


@dataclass(frozen=True, eq=False)
class _Upper:
    q: np.ndarray
    profit: np.ndarray
    value: float
    inv_mu: float


class _MidProblem:
    """Reveal below i_hat, bunch on [i_hat, i_tilde), fully mix from i_tilde up.

    The upper block keeps one adjacent IC constraint binding per step, the
    side set by the sign of its weight, and meets the resource constraint with Pi(i_tilde) at least the profit the
    boundary type earns from the bunch allocation. Quality there solves the
    discrete first-order condition with multiplier mu on the resource
    constraint, found by a 1-D root in 1/mu.
    """

    def __init__(self, model: CostModel, grid: TypeGrid, lam):
        self.model = model
        self.grid = grid
        self.lam = np.asarray(lam, dtype=float)
        self.t = grid.nodes
        self.f = grid.weights
        self.lf = self.lam * self.f
        self.tail = grid.upper_tail()
        lt = np.zeros(grid.n)
        lt[:-1] = np.cumsum(self.lf[::-1])[::-1][1:]
        self.ltail = lt
        self.fb = first_best_quality(model, grid)
        self.fb_profit = self.fb - model.C(self.fb, self.t)
        self._cache = {}

    def lower(self, ih: int, it: int):
        q = self.fb[:it].copy()
        q[ih:it] = self.fb[ih] if ih < it else q[ih:it]
        pi = q - self.model.C(q, self.t[:it])
        return q, pi

    def _schedule(self, start: int, s: float, floor: float | None = None):
        """Quality and cumulative profit steps for the upper block at 1/mu = s.

        W_j weighs the step Pi_{j+1} - Pi_j; the step sits on the lower IC edge
        where W_j >= 0 and on the upper edge where W_j < 0.
        """
        t, f = self.t[start:], self.f[start:]
        w = (self.tail[start:-1] - self.ltail[start:-1] * s) / f[:-1]
        up = w < 0
        lw = np.where(up, 0.0, w)
        # an upper-edge step j is priced at q_{j+1}, so it enters node j+1's condition
        v = np.zeros(t.size)
        v[1:] = np.where(up, w * f[:-1], 0.0) / f[1:]
        prev = np.concatenate(([t[0]], t[:-1]))
        nxt = np.concatenate((t[1:], [t[-1]]))
        lw = np.concatenate((lw, [0.0]))
        q = solve_marginal(self.model, [(1.0 + lw - v, t), (-lw, nxt), (v, prev)])
        if not np.all(np.isfinite(q)):
            return None
        if floor is not None:
            # the partial sum at the boundary type binds: Pi = q - C(q, theta)
            q[0] = max(q[0], floor)
        if np.any(np.diff(q) < 0):
            q = kernels.pav(q, f)
        lo = self.model.C(q[:-1], t[:-1]) - self.model.C(q[:-1], t[1:])
        hi = self.model.C(q[1:], t[:-1]) - self.model.C(q[1:], t[1:])
        inc = np.where(up, hi, lo)
        cum = np.concatenate(([0.0], np.cumsum(inc)))
        base = (f @ (q - self.model.C(q, t)) - f @ cum) / f.sum()
        return q, cum, float(base)

    def upper(self, start: int, boundary: float | None) -> _Upper | None:
        key = (start, boundary)
        if key in self._cache:
            return self._cache[key]
        out = self._upper(start, boundary)
        self._cache[key] = out
        return out

    def _upper(self, start: int, boundary: float | None) -> _Upper | None:
        f = self.f[start:]
        s_free = f.sum() / self.lf[start:].sum()
        if boundary is None:
            sched, s = self._schedule(start, s_free), s_free
        else:
            floor = self._jump_floor(start, boundary)
            if floor is None:
                return None
            s = self._match_boundary(start, boundary, s_free, floor)
            sched = None if s is None else self._schedule(start, s, floor)
        if sched is None:
            return None
        q, cum, base = sched
        pi = (base if boundary is None else boundary) + cum
        return _Upper(q, pi, float(self.lf[start:] @ pi), s)

    def _jump_floor(self, start: int, boundary: float) -> float | None:
        """Smallest quality above first best at which the full-information profit is ``boundary``."""
        th = self.t[start]
        q0 = self.fb[start]

        def excess(q):
            return q - self.model.C(q, th) - boundary

        if excess(q0) <= 0:
            return float(q0)
        hi = 2.0 * q0 + 1.0
        for _ in range(200):
            if excess(hi) < 0:
                break
            hi *= 2.0
        else:
            return None
        return brentq(excess, q0, hi, xtol=1e-15, rtol=1e-15, maxiter=300)

    def _match_boundary(self, start: int, boundary: float, s_free: float,
                        floor: float | None = None) -> float | None:
        """1/mu at which the resource constraint leaves Pi(start) equal to ``boundary``.

        Base profit falls as 1/mu grows; past some 1/mu the first-order
        condition has no root, which counts as falling below any boundary.
        """
        def gap(x):
            r = self._schedule(start, x, floor)
            return -np.inf if r is None else r[2] - boundary

        g0 = gap(0.0)
        if not g0 >= 0:
            return None
        if g0 == 0:
            return 0.0
        lo, hi = 0.0, s_free
        for _ in range(80):
            if gap(hi) < 0:
                break
            lo, hi = hi, 2.0 * hi
        else:
            return None
        if not np.isfinite(gap(hi)):
            # move hi to the edge of the region where the schedule exists
            a, b = lo, hi
            for _ in range(80):
                m = 0.5 * (a + b)
                if np.isfinite(gap(m)):
                    a = m
                else:
                    b = m
            if gap(a) >= 0:
                return None if gap(a) > 1e-12 else a
            lo, hi = lo, a
        return brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)

    def candidate(self, ih: int, it: int):
        """Objective and schedules for one (i_hat, i_tilde) pair, or None if infeasible."""
        ql, pl = self.lower(ih, it)
        boundary = None
        if it > 0:
            qb = ql[-1]
            boundary = float(qb - self.model.C(qb, self.t[it]))
        up = self.upper(it, boundary)
        if up is None:
            return None
        if it > 0 and up.q[0] < ql[-1] - 1e-12:
            return None
        q = np.concatenate((ql, up.q))
        pi = np.concatenate((pl, up.profit))
        qbar = pi + self.model.C(q, self.t)
        gaps = np.cumsum(self.f[it:] * (qbar[it:] - q[it:]))
        slack = 1e-13 * max(1.0, float(np.max(np.abs(q))))
        if np.any(gaps < -slack) or abs(gaps[-1]) > slack:
            return None
        value = float(self.lf[:it] @ pl) + up.value
        return value, q, qbar, pi


def _local_search(prob: _MidProblem, start, peak: int, radius: int, best):
    ih, it = start
    seen = set()
    improved = True
    while improved:
        improved = False
        for j in range(max(0, it - radius), min(peak - 1, it + radius) + 1):
            for i in range(max(0, ih - radius), min(j, ih + radius) + 1):
                if (i, j) in seen:
                    continue
                seen.add((i, j))
                c = prob.candidate(i, j)
                if c is not None and c[0] > best[0] + 1e-15:
                    best = (c[0], (i, j), c)
                    improved = True
        ih, it = best[1]
    return best


def solve_mid_quality(model: CostModel, grid: TypeGrid, weights: WelfareWeights,
                      stride: int | None = None) -> SolverSolution:
    """Hump-shaped weights: reveal, bunch, then fully mix above a quality jump."""
    if weights.shape in ("decreasing", "constant"):
        warnings.warn("weights peak at the lowest type; using the low-quality solver", stacklevel=2)
        return solve_low_quality(model, grid, weights)
    if weights.shape == "increasing":
        warnings.warn("weights peak at the highest type; using the high-quality solver", stacklevel=2)
        return solve_high_quality(model, grid, weights)
    if weights.shape != "hump":
        raise PreconditionError(f"mid-quality solver needs hump-shaped weights, got {weights.shape}")
    peak = int(weights.peak)
    prob = _MidProblem(model, grid, weights.values)
    stride = stride or max(1, peak // 24)
    best = (-np.inf, None, None)
    coarse = sorted(set(range(0, peak, stride)) | {peak - 1})
    for it in coarse:
        for ih in sorted(set(range(0, it + 1, stride)) | {it}):
            c = prob.candidate(ih, it)
            if c is not None and c[0] > best[0]:
                best = (c[0], (ih, it), c)
    if best[1] is None:
        raise PreconditionError("no feasible reveal/bunch/mix structure on this grid")
    best = _local_search(prob, best[1], peak, max(1, stride), best)
    value, (ih, it), (_, q, qbar, pi) = best
    rating, _ = construct_rating(q, qbar, grid)
    jump = float(q[it] - q[it - 1]) if it > 0 else 0.0
    boundary = float(q[it - 1] - model.C(q[it - 1], grid.nodes[it])) if it > 0 else float(pi[0])
    meta = {
        "i_hat": ih,
        "i_tilde": it,
        "theta_hat": float(grid.nodes[ih]),
        "theta_tilde": float(grid.nodes[it]),
        "theta_star": float(grid.nodes[peak]),
        "jump": jump,
        "continuity_gap": float(abs(pi[it] - boundary)),
    }
    return _solution(q, qbar, model, grid, weights, "mid", rating, meta)


# -------------------------------------------------------------------- revenue


def dirac_weights(grid: TypeGrid) -> WelfareWeights:
    raw = np.zeros(grid.n)
    raw[0] = 1.0
    return normalize_weights(raw, grid)


def solve_revenue(model: CostModel, grid: TypeGrid) -> SolverSolution:
    """Entry fee Pi(cutoff) charged to types at or above the cutoff.

    For each cutoff the entrants' problem puts all weight on the cutoff type;
    revenue is that type's profit times the entering mass.
    """
    revenue = np.full(grid.n, -np.inf)
    mass = grid.weights[::-1].cumsum()[::-1]
    for c in range(grid.n):
        if mass[c] <= 0:
            continue
        sub = grid.restrict(c)
        core = _low_core(model, sub, dirac_weights(sub).values)
        revenue[c] = core.profit[0] * mass[c]
    c = int(np.argmax(revenue))
    sub = grid.restrict(c)
    w = dirac_weights(sub)
    sol = solve_low_quality(model, sub, w)
    meta = dict(sol.meta)
    meta.update(cutoff=c, theta_cutoff=float(grid.nodes[c]), fee=float(sol.profit[0]),
                revenue=float(revenue[c]), revenue_by_cutoff=revenue)
    return SolverSolution(sol.q, sol.qbar, sol.profit, sol.objective, "revenue", sub, w,
                          sol.rating, meta)


def market_clearing_entry(buyer_cdf, grid: TypeGrid, nu: float) -> float:
    """Seller threshold theta_e with G(nu) = 1 - F(theta_e), by inverse interpolation."""
    target = 1.0 - float(buyer_cdf(nu))
    if not 0.0 <= target <= 1.0:
        warnings.warn(f"1 - G(nu) = {target:.6g} outside [0, 1]; clamped", stacklevel=2)
        target = min(1.0, max(0.0, target))
    if grid.edges is not None:
        xs = grid.edges
        fs = np.concatenate(([0.0], grid.cdf()))
    else:
        xs = np.concatenate(([grid.nodes[0]], grid.nodes))
        fs = np.concatenate(([0.0], grid.cdf()))
    return float(np.interp(target, fs, xs))


SOLVERS = {
    "total": lambda m, g, w: solve_total(m, g, w),
    "low": solve_low_quality,
    "high": solve_high_quality,
    "mid": solve_mid_quality,
    "revenue": lambda m, g, w: solve_revenue(m, g),
}
