"""Brute-force ground truth: random garblings, perturbation certificates, exhaustive partitions."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .construction import construct_rating, interval_pooled, two_point_pooled
from .equilibrium import ic_band
from .errors import InternalError, PreconditionError, ValidationError
from .foundation import CostModel, TypeGrid
from .majorization import check_majorization
from .random_quality import (MonotonePartition, OutcomeFamily, TwoTypeProblem, _partition_value,
                             outcome_lattice, partition_from_cuts)
from .rating import GarblingMatrix, double_expectation
from .solvers import SolverSolution

ORACLE_TOL = 1e-6
FEAS_TOL = 1e-9
MAX_ENUM = 12


# ----------------------------------------------------------------- garblings


def random_garbling(grid: TypeGrid, seed=None, components: int | None = None,
                    generators=None, probs=None) -> GarblingMatrix:
    """Convex combination of the identity with interval and two-point pooling matrices.

    Each generator is f-stochastic, so every mixture is too. ``generators``
    may name explicit ("interval" | "pair", k, l) triples instead of random ones.
    """
    f = grid.weights
    n = f.size
    rng = np.random.default_rng(seed)
    if generators is None:
        if components is None:
            components = int(rng.integers(1, 2 * n + 1)) if n > 1 else 0
        generators = []
        for _ in range(components if n > 1 else 0):
            k, l = sorted(rng.choice(n, size=2, replace=False))
            generators.append(("interval" if rng.random() < 0.5 else "pair", int(k), int(l)))
    mats = [np.eye(n)]
    for kind, k, l in generators:
        g = interval_pooled(k, l, f) if kind == "interval" else two_point_pooled(k, l, f)
        mats.append(g.matrix)
    if probs is None:
        probs = rng.dirichlet(np.ones(len(mats))) if len(mats) > 1 else np.ones(1)
    else:
        probs = np.asarray(probs, dtype=float)
        if probs.size == len(mats) - 1:
            probs = np.concatenate(([1.0 - probs.sum()], probs))
    if probs.size != len(mats) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValidationError("mixture probabilities must be a distribution over identity + generators")
    a = sum(p * m for p, m in zip(probs, mats))
    return GarblingMatrix(a, f)


# ----------------------------------------------------------------- perturbation certificate


@dataclass(frozen=True, eq=False)
class PerturbationCertificate:
    """Largest objective gain found over feasible random perturbations."""

    digest: str
    trials: int
    best_improvement: float
    tol: float
    log: dict = field(default_factory=dict)
    best_trial: int | None = None

    @property
    def passed(self) -> bool:
        return self.best_improvement <= self.tol

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "trials": self.trials,
            "best_improvement": self.best_improvement,
            "best_trial": self.best_trial,
            "tol": self.tol,
            "pass": self.passed,
            "log": self.log,
        }


def instance_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


class _Evaluator:
    """Objective and feasibility of perturbed (q, qbar) pairs on a fixed grid."""

    def __init__(self, model: CostModel, grid: TypeGrid, lam, tol: float):
        self.model = model
        self.grid = grid
        self.f = grid.weights
        self.t = grid.nodes
        self.lam = np.asarray(lam, dtype=float)
        self.tol = tol

    def profit(self, q, qbar):
        return qbar - self.model.C(q, self.t)

    def objective(self, q, qbar) -> float:
        return float(np.sum(self.lam * self.f * self.profit(q, qbar)))

    def feasible(self, q, qbar) -> str | None:
        """None when feasible, otherwise the name of the first failed check."""
        tol = self.tol
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qbar))):
            return "finite"
        if np.any(np.diff(q) < -tol):
            return "monotone"
        d = np.cumsum(self.f * (qbar - q))
        scale = max(1.0, float(np.max(np.abs(q))))
        if np.any(d[:-1] < -tol * scale) or abs(d[-1]) > tol * scale:
            return "majorization"
        pi = self.profit(q, qbar)
        if pi.min() < -tol:
            return "participation"
        if q.size > 1:
            lo, hi = ic_band(q, self.model, self.grid)
            step = np.diff(pi)
            if np.any(step < lo - tol) or np.any(step > hi + tol):
                return "ic"
        return None

    def reintegrate(self, q_new, q, pi):
        """Profits for q_new keeping each adjacent step's slack over the lower IC edge,
        shifted by a constant so the total signaled quality matches total quality."""
        lo_old, _ = ic_band(q, self.model, self.grid)
        lo_new, _ = ic_band(q_new, self.model, self.grid)
        pi_new = np.empty_like(pi)
        pi_new[0] = pi[0]
        if pi.size > 1:
            pi_new[1:] = pi[0] + np.cumsum(np.diff(pi) - lo_old + lo_new)
        qbar = pi_new + self.model.C(q_new, self.t)
        shift = float(np.dot(self.f, q_new - qbar))
        return qbar + shift


def _bump(rng, n: int, amp: float) -> np.ndarray:
    """Random localized tent or box bump of height amp."""
    if n == 1:
        return np.array([amp])
    a = int(rng.integers(0, n))
    b = int(rng.integers(a + 1, n + 1))
    out = np.zeros(n)
    if rng.random() < 0.5:
        out[a:b] = amp
    else:
        m = b - a
        out[a:b] = amp * (1.0 - np.abs(np.linspace(-1.0, 1.0, m + 2)[1:-1]))
    return out


FAMILIES = ("compensated", "transfer", "band", "noise", "reveal")


def certify_optimality(solution: SolverSolution, model: CostModel, trials: int = 10_000,
                       seed: int = 0, steps=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
                       tol: float = ORACLE_TOL, feas_tol: float = FEAS_TOL) -> PerturbationCertificate:
    """Search random feasible perturbations of (q, qbar) for an objective gain.

    Families: compensated q bumps with re-integrated profits, two-point qbar
    transfers, band profit shifts with a uniform offset, generic q noise
    re-integrated like the bumps, and bumps moving q and qbar together.
    Trial t draws from its own generator seeded by (seed, t), so more trials
    search a superset.
    """
    grid = solution.grid
    ev = _Evaluator(model, grid, solution.weights.values, feas_tol)
    q0 = np.asarray(solution.q, dtype=float)
    qb0 = np.asarray(solution.qbar, dtype=float)
    pi0 = ev.profit(q0, qb0)
    base = ev.objective(q0, qb0)
    pre = ev.feasible(q0, qb0)
    if pre is not None:
        raise PreconditionError(f"solution to certify fails its own {pre} check")
    n = q0.size
    f = grid.weights
    scale = max(float(np.max(np.abs(q0))), 1e-12)
    log = {k: {"proposed": 0, "feasible": 0, "best": -np.inf} for k in FAMILIES}
    rejects: dict = {}
    best, best_trial = -np.inf, None
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        fam = FAMILIES[int(rng.integers(len(FAMILIES)))]
        amp = float(steps[int(rng.integers(len(steps)))]) * scale * (1 if rng.random() < 0.5 else -1)
        if fam == "compensated":
            q1 = q0 + _bump(rng, n, amp)
            qb1 = ev.reintegrate(q1, q0, pi0)
        elif fam == "noise":
            q1 = q0 + amp * rng.standard_normal(n) * (rng.random(n) < 0.5)
            qb1 = ev.reintegrate(q1, q0, pi0)
        elif fam == "reveal":
            d = _bump(rng, n, amp)
            q1, qb1 = q0 + d, qb0 + d
        elif fam == "transfer":
            if n < 2:
                continue
            i, j = rng.choice(n, size=2, replace=False)
            q1 = q0
            qb1 = qb0.copy()
            mass = amp * min(f[i], f[j])
            qb1[i] += mass / f[i]
            qb1[j] -= mass / f[j]
        else:
            q1 = q0
            qb1 = qb0 + _bump(rng, n, amp)
            qb1 = qb1 - float(np.dot(f, qb1 - qb0))
        log[fam]["proposed"] += 1
        why = ev.feasible(q1, qb1)
        if why is not None:
            rejects[why] = rejects.get(why, 0) + 1
            continue
        gain = ev.objective(q1, qb1) - base
        log[fam]["feasible"] += 1
        log[fam]["best"] = max(log[fam]["best"], gain)
        if gain > best:
            best, best_trial = gain, t
    for v in log.values():
        v["best"] = None if v["best"] == -np.inf else v["best"]
    log["rejected"] = dict(sorted(rejects.items()))
    return PerturbationCertificate(instance_digest(q0, qb0, solution.weights.values),
                                   trials, float(best) if best > -np.inf else 0.0, tol, log,
                                   best_trial)


# ----------------------------------------------------------------- exhaustive partitions


def enumerate_partitions(gamma, h, x) -> tuple[float, MonotonePartition]:
    """Exact optimum of the auxiliary problem by checking every breakpoint pattern.

    Each block is pooled or fully revealed, whichever is worth more; ties go
    to revelation.
    """
    g = np.asarray(gamma, dtype=float)
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    n = g.size
    if not (x.shape == h.shape == g.shape) or n < 1:
        raise ValidationError("gain, weights and outcomes must be aligned and nonempty")
    if n > MAX_ENUM:
        raise ValidationError(f"exhaustive enumeration limited to n <= {MAX_ENUM}, got {n}")
    if np.any(h <= 0):
        raise ValidationError("weights must be positive")
    best, best_cuts = -np.inf, None
    for mask in range(1 << (n - 1)):
        cuts, start, total = [], 0, 0.0
        for j in range(1, n + 1):
            if j == n or mask >> (j - 1) & 1:
                a, b = start, j
                reveal = float(np.dot(g[a:b] * x[a:b], h[a:b]))
                pool = float(np.dot(g[a:b], h[a:b]) * np.dot(x[a:b], h[a:b]) / np.sum(h[a:b]))
                if b - a > 1 and pool > reveal:
                    cuts.append((a, b))
                    total += pool
                else:
                    cuts.extend((k, k + 1) for k in range(a, b))
                    total += reveal
                start = j
        if total > best:
            best, best_cuts = total, cuts
    part = partition_from_cuts(best_cuts, x, h)
    return float(best), MonotonePartition(part.blocks, x, h, float(best))


def partition_value(part: MonotonePartition, gamma) -> float:
    return _partition_value(part.blocks, np.asarray(gamma, dtype=float), part.x, part.h)


# ----------------------------------------------------------------- implementability boundary


@dataclass(frozen=True)
class BoundaryProbe:
    """Largest t with base + t * direction majorized by q, and the construction checks."""

    t: float
    majorized_at_t: bool
    constructed_at_t: bool
    residual: float
    fails_beyond: bool
    majorized_beyond: bool

    @property
    def consistent(self) -> bool:
        return (self.majorized_at_t and self.constructed_at_t
                and self.fails_beyond and not self.majorized_beyond)

    def to_dict(self) -> dict:
        return {"t": self.t, "majorized_at_t": self.majorized_at_t,
                "constructed_at_t": self.constructed_at_t, "residual": self.residual,
                "fails_beyond": self.fails_beyond, "majorized_beyond": self.majorized_beyond,
                "consistent": self.consistent}


def _constructs(q, qbar, grid) -> tuple[bool, float]:
    try:
        rs, _ = construct_rating(q, qbar, grid)
    except PreconditionError:
        return False, float("nan")
    return True, float(np.max(np.abs(double_expectation(rs, q, grid) - qbar)))


def implementability_boundary(q, grid: TypeGrid, direction, base=None,
                              resolution: float = 1e-6, t_max: float = 1e6) -> BoundaryProbe:
    """Bisect along qbar = base + t * direction for the last majorized point.

    ``base`` defaults to the constant prior mean, which is always implementable.
    """
    q = np.asarray(q, dtype=float)
    f = grid.weights
    d = np.asarray(direction, dtype=float)
    base = np.full(q.size, float(np.dot(f, q))) if base is None else np.asarray(base, dtype=float)
    if d.shape != q.shape or base.shape != q.shape:
        raise ValidationError("direction and base must align with q")

    def ok(t):
        return check_majorization(q, base + t * d, grid).holds

    if not ok(0.0):
        raise PreconditionError("base point is not majorized by q")
    lo, hi = 0.0, resolution
    while ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > t_max:
            raise PreconditionError("feasible ray is unbounded along this direction")
    while hi - lo > 0.25 * resolution:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    at = base + lo * d
    beyond = base + (lo + resolution) * d
    built, resid = _constructs(q, at, grid)
    built_beyond, _ = _constructs(q, beyond, grid)
    return BoundaryProbe(float(lo), ok(lo), built, resid, not built_beyond, ok(lo + resolution))


# ----------------------------------------------------------------- two-type grid search


@dataclass(frozen=True)
class GridOracleResult:
    value: float
    cells: tuple
    thresholds: tuple
    q: tuple
    skipped: int = 0


def _best_response(prob: TwoTypeProblem, xb, i: int, fine, fine_probs, refine: bool = True) -> float:
    u = fine_probs @ xb - prob.model.C(fine, prob.theta[i])
    k = int(np.argmax(u))
    if not refine:
        return float(fine[k])
    lo, hi = fine[max(k - 1, 0)], fine[min(k + 1, fine.size - 1)]
    res = minimize_scalar(lambda z: -prob.payoff(xb, z, i), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x) if -res.fun >= u[k] else float(fine[k])


def _fixed_point(prob: TwoTypeProblem, a: int, b: int, fine, fine_probs, max_iter: int):
    """Sequential best responses: lattice phase, then exact refinement.

    Returns None when the lattice phase revisits a state (a best-response
    cycle) or the refinement fails to settle.
    """
    q = np.array([0.5, 0.5])
    for refine in (False, True):
        seen = set()
        for _ in range(max_iter):
            old = q.copy()
            for i in range(prob.active):
                q[i] = _best_response(prob, prob.xbar(a, b, q), i, fine, fine_probs, refine)
            if prob.active == 1:
                q[1] = q[0]
            if np.max(np.abs(q - old)) < 1e-10:
                break
            key = tuple(np.round(q, 12))
            if not refine and key in seen:
                return None
            seen.add(key)
        else:
            return None
    return q


def two_type_grid_oracle(model: CostModel, family: OutcomeFamily, theta, f,
                         resolution: float = 1.0 / 64, n: int = 256,
                         max_iter: int = 200) -> GridOracleResult:
    """Pooling thresholds on a coarse grid; each seller plays an exact best response.

    Best responses come from a fine scan of the seller objective refined by a
    bounded scalar search, iterated to a fixed point. No first-order
    condition is used. Threshold pairs without a settled fixed point are
    skipped and counted.
    """
    prob = TwoTypeProblem(model, family, theta, f, outcome_lattice(n))
    fine = np.linspace(0.001, 0.999, 999)
    fine_probs = np.array([prob.probs(z) for z in fine])
    step = max(1, int(round(resolution * n)))
    pts = list(range(0, n + 1, step))
    best = None
    skipped = 0
    for ia, a in enumerate(pts):
        for b in [a] + pts[ia + 1:]:
            if b - a == 1 or (a == b and a > 0):
                continue
            q = _fixed_point(prob, a, b, fine, fine_probs, max_iter)
            if q is None:
                skipped += 1
                continue
            val = prob.payoff(prob.xbar(a, b, q), q[0], 0)
            if best is None or val > best[0] + 1e-15:
                best = (float(val), a, b, q)
    if best is None:
        raise InternalError("no threshold pair reached a best-response fixed point")
    val, a, b, q = best
    edges = prob.lattice.edges
    return GridOracleResult(val, (a, b), (float(edges[a]), float(edges[b])),
                            (float(q[0]), float(q[1])), skipped)
