"""Type grids, cost models and welfare weights."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import ValidationError

SUM_TOL = 1e-12
EQ_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TypeGrid:
    """Seller types ``nodes`` with probability masses ``weights``.

    ``origin`` is ``"discrete"`` or ``"discretized"``; discretized grids keep the
    source descriptor and the cell ``edges`` used for the midpoint rule.
    """

    nodes: np.ndarray
    weights: np.ndarray
    origin: str = "discrete"
    source: dict | None = None
    edges: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).copy()
        weights = np.asarray(self.weights, dtype=float).copy()
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValidationError("nodes and weights must be 1-D arrays of equal length")
        if nodes.size < 1:
            raise ValidationError("a grid needs at least one node")
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
            raise ValidationError("nodes and weights must be finite")
        bad = np.nonzero(np.diff(nodes) <= 0)[0]
        if bad.size:
            raise ValidationError(f"nodes not strictly increasing at index {int(bad[0]) + 1}")
        neg = np.nonzero(weights < 0)[0]
        if neg.size:
            raise ValidationError(f"negative weight {weights[neg[0]]!r} at index {int(neg[0])}")
        total = float(weights.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValidationError(f"weights sum {total:.12g} ≠ 1")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if self.edges is not None:
            edges = np.asarray(self.edges, dtype=float).copy()
            edges.flags.writeable = False
            object.__setattr__(self, "edges", edges)

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.nodes)

    def cdf(self) -> np.ndarray:
        """F at each node, counting the node's own mass."""
        return np.cumsum(self.weights)

    def upper_tail(self) -> np.ndarray:
        """Mass strictly above each node."""
        tail = np.zeros(self.n)
        tail[:-1] = np.cumsum(self.weights[::-1])[::-1][1:]
        return tail

    def restrict(self, start: int) -> "TypeGrid":
        """Sub-grid of nodes ``start..N-1`` with renormalized weights."""
        w = self.weights[start:]
        total = w.sum()
        if total <= 0:
            raise ValidationError("restricted grid carries no mass")
        w = w / total
        w[-1] += 1.0 - w.sum()
        edges = None if self.edges is None else self.edges[start:]
        return TypeGrid(self.nodes[start:], w, self.origin, self.source, edges)

    def to_dict(self) -> dict:
        if self.origin == "discretized" and self.source is not None:
            return {"source": dict(self.source), "n": self.n}
        return {"nodes": self.nodes.tolist(), "weights": self.weights.tolist()}


def _frozen_source(desc: dict):
    kind = desc.get("dist")
    if kind == "uniform":
        lo, hi = float(desc["low"]), float(desc["high"])
        return stats.uniform(loc=lo, scale=hi - lo), (lo, hi)
    if kind == "beta":
        lo, hi = float(desc.get("low", 0.0)), float(desc.get("high", 1.0))
        return stats.beta(float(desc["a"]), float(desc["b"]), loc=lo, scale=hi - lo), (lo, hi)
    if kind == "truncnorm":
        lo, hi = float(desc["low"]), float(desc["high"])
        mu, sd = float(desc["mean"]), float(desc["sd"])
        return stats.truncnorm((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd), (lo, hi)
    if kind == "triangular":
        lo, mode, hi = float(desc["low"]), float(desc["mode"]), float(desc["high"])
        return stats.triang((mode - lo) / (hi - lo), loc=lo, scale=hi - lo), (lo, hi)
    raise ValidationError(f"unknown source distribution {kind!r}")


def make_type_grid(nodes=None, weights=None, *, source=None, n: int | None = None) -> TypeGrid:
    """Build a grid from explicit nodes and weights, or discretize a continuous source.

    ``source`` is a descriptor such as ``{"dist": "uniform", "low": 1, "high": 2}``
    or a frozen scipy distribution with bounded support. The support is cut into
    ``n`` equal cells, each represented by its midpoint and its CDF increment.
    """
    if source is None:
        if nodes is None or weights is None:
            raise ValidationError("explicit grids need both nodes and weights")
        return TypeGrid(nodes, weights)
    if n is None or n < 1:
        raise ValidationError("continuous sources need a node count n >= 1")
    if isinstance(source, dict):
        dist, (lo, hi) = _frozen_source(source)
        desc = dict(source)
    else:
        dist = source
        lo, hi = (float(v) for v in dist.support())
        desc = None
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise ValidationError("continuous source needs bounded support")
    edges = np.linspace(lo, hi, n + 1)
    cdf = dist.cdf(edges)
    if np.any(np.diff(cdf) <= 0):
        raise ValidationError("source CDF is not increasing on its support")
    w = np.diff(cdf) / (cdf[-1] - cdf[0])
    w[-1] += 1.0 - w.sum()
    mids = 0.5 * (edges[:-1] + edges[1:])
    return TypeGrid(mids, w, "discretized", desc, edges)


def grid_from_dict(d: dict) -> TypeGrid:
    allowed = {"nodes", "weights", "source", "n"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown grid fields {sorted(extra)}")
    if "source" in d:
        return make_type_grid(source=d["source"], n=int(d["n"]))
    return make_type_grid(d.get("nodes"), d.get("weights"))


# ---------------------------------------------------------------- cost models


@dataclass(frozen=True, eq=False)
class CostModel:
    """Cost C(q, theta) with analytic partials, all numpy-broadcasting.

    When C_q and C_qtheta are both ``q**qpower`` times a function of theta the
    model sets ``qpower``; solvers then invert marginal-cost equations in
    closed form.
    """

    family: str
    params: dict
    cost: Callable
    cost_q: Callable
    cost_theta: Callable
    cost_qq: Callable
    cost_qtheta: Callable
    qpower: float | None = None

    def C(self, q, theta):
        return self.cost(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))

    def C_q(self, q, theta):
        return self.cost_q(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))

    def C_theta(self, q, theta):
        return self.cost_theta(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))

    def C_qq(self, q, theta):
        return self.cost_qq(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))

    def C_qtheta(self, q, theta):
        return self.cost_qtheta(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))

    def to_dict(self) -> dict:
        if self.family == "custom":
            raise ValidationError("custom cost models have no JSON form")
        return {"family": self.family, "params": dict(self.params)}

    def scaled(self, factor: float) -> "CostModel":
        """Same family with the cost multiplied by ``factor``."""
        params = dict(self.params)
        params["scale"] = params.get("scale", 1.0) * factor
        return cost_model(self.family, **params)


def _power_cost(p: float, s: float, family: str, params: dict) -> CostModel:
    if p <= 1:
        raise ValidationError("power cost needs exponent > 1")
    return CostModel(
        family,
        params,
        cost=lambda q, t: s * q**p / (p * t),
        cost_q=lambda q, t: s * q ** (p - 1) / t,
        cost_theta=lambda q, t: -s * q**p / (p * t**2),
        cost_qq=lambda q, t: s * (p - 1) * q ** (p - 2) / t,
        cost_qtheta=lambda q, t: -s * q ** (p - 1) / t**2,
        qpower=p - 1,
    )


def cost_model(family: str = "quadratic", **params) -> CostModel:
    """Named cost families.

    ``quadratic``: s q^2/(2 theta) (reference); ``cubic``: s q^3/(3 theta);
    ``power``: s q^p/(p theta); ``quadratic_theta``: s q^2 theta/2, which
    violates C_theta <= 0 and exists for validation tests.
    """
    s = float(params.get("scale", 1.0))
    if family == "quadratic":
        return _power_cost(2.0, s, family, {"scale": s})
    if family == "cubic":
        return _power_cost(3.0, s, family, {"scale": s})
    if family == "power":
        p = float(params["exponent"])
        return _power_cost(p, s, family, {"exponent": p, "scale": s})
    if family == "quadratic_theta":
        return CostModel(
            family,
            {"scale": s},
            cost=lambda q, t: s * q**2 * t / 2,
            cost_q=lambda q, t: s * q * t,
            cost_theta=lambda q, t: s * q**2 / 2 + 0 * t,
            cost_qq=lambda q, t: s * t + 0 * q,
            cost_qtheta=lambda q, t: s * q + 0 * t,
            qpower=1.0,
        )
    raise ValidationError(f"unknown cost family {family!r}")


def custom_cost(cost, cost_q, cost_theta, cost_qq, cost_qtheta) -> CostModel:
    return CostModel("custom", {}, cost, cost_q, cost_theta, cost_qq, cost_qtheta)


def cost_from_dict(d: dict) -> CostModel:
    extra = set(d) - {"family", "params"}
    if extra:
        raise ValidationError(f"unknown cost fields {sorted(extra)}")
    return cost_model(d["family"], **d.get("params", {}))


@dataclass(frozen=True)
class AssumptionReport:
    passed: bool
    worst: dict
    derivative_error: float | None = None


def check_cost_assumptions(model: CostModel, qmax: float, density: int = 16,
                           theta_range=(1.0, 2.0), tol: float = EQ_TOL) -> AssumptionReport:
    """Check the sign and boundary conditions on a (q, theta) lattice.

    ``worst`` maps each condition to (violation, q, theta); a positive violation
    means the condition fails there. Non-finite evaluations count as infinite.
    """
    if qmax <= 0:
        raise ValidationError("qmax must be positive")
    if density < 8:
        raise ValidationError("lattice density must be at least 8")
    qs = np.linspace(0.0, qmax, density)
    ts = np.linspace(theta_range[0], theta_range[1], density)
    Q, T = np.meshgrid(qs, ts, indexing="ij")
    Z = np.zeros_like(T[:1])
    with np.errstate(all="ignore"):
        checks = {
            "C_q>=0": (-model.C_q(Q, T), Q, T),
            "C_theta<=0": (model.C_theta(Q, T), Q, T),
            "C_qq>=0": (-model.C_qq(Q, T), Q, T),
            "C_qtheta<=0": (model.C_qtheta(Q, T), Q, T),
            "C(0,theta)=0": (np.abs(model.C(Z, T[:1])), Z, T[:1]),
            "C_q(0,theta)=0": (np.abs(model.C_q(Z, T[:1])), Z, T[:1]),
        }
    worst = {}
    passed = True
    for name, (viol, qq, tt) in checks.items():
        viol = np.broadcast_to(np.asarray(viol, dtype=float), qq.shape)
        viol = np.where(np.isfinite(viol), viol, np.inf)
        idx = np.unravel_index(int(np.argmax(viol)), viol.shape)
        v = float(viol[idx])
        worst[name] = (v, float(qq[idx]), float(tt[idx]))
        if v > tol:
            passed = False
    fd = derivative_error(model, Q.ravel()[Q.ravel() > 0], T.ravel()[Q.ravel() > 0])
    return AssumptionReport(passed, worst, fd)


def derivative_error(model: CostModel, q, theta, step: float = 1e-4) -> float:
    """Largest relative gap between analytic partials and central differences."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(theta, dtype=float)
    h = step
    pairs = [
        (model.C_q(q, t), (model.C(q + h, t) - model.C(q - h, t)) / (2 * h)),
        (model.C_theta(q, t), (model.C(q, t + h) - model.C(q, t - h)) / (2 * h)),
        (model.C_qq(q, t), (model.C_q(q + h, t) - model.C_q(q - h, t)) / (2 * h)),
        (model.C_qtheta(q, t), (model.C_q(q, t + h) - model.C_q(q, t - h)) / (2 * h)),
    ]
    worst = 0.0
    for exact, approx in pairs:
        exact = np.broadcast_to(exact, q.shape)
        scale = np.maximum(np.abs(exact), 1e-3)
        err = np.abs(np.asarray(exact) - np.asarray(approx)) / scale
        worst = max(worst, float(np.max(err)) if err.size else 0.0)
    return worst


def solve_marginal(model: CostModel, terms, qmax: float = 1e3, tol: float = 1e-12) -> np.ndarray:
    """Solve sum_k a_k * D_k(q, theta_k) = 1 node-wise for q >= 0.

    ``terms`` holds (a, theta) pairs for D = C_q, or (a, theta, "qtheta") for
    D = C_qtheta. Returns nan where the left side never reaches 1 on [0, qmax].
    """
    parsed = []
    for term in terms:
        a, t = np.asarray(term[0], dtype=float), np.asarray(term[1], dtype=float)
        kind = term[2] if len(term) > 2 else "q"
        parsed.append((a, t, model.C_qtheta if kind == "qtheta" else model.C_q))
    shape = np.broadcast_shapes(*(np.broadcast_shapes(a.shape, t.shape) for a, t, _ in parsed))
    if model.qpower is not None:
        coef = sum(a * fn(1.0, t) for a, t, fn in parsed)
        coef = np.broadcast_to(coef, shape).astype(float)
        out = np.full(shape, np.nan)
        ok = coef > 0
        out[ok] = (1.0 / coef[ok]) ** (1.0 / model.qpower)
        return out

    def lhs(q):
        return sum(a * fn(q, t) for a, t, fn in parsed)

    lo = np.zeros(shape)
    hi = np.full(shape, qmax)
    ok = lhs(hi) - 1.0 > 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = lhs(mid) - 1.0 > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.max(hi - lo) <= tol:
            break
    out = 0.5 * (lo + hi)
    return np.where(ok, out, np.nan)


# ------------------------------------------------------------ welfare weights


@dataclass(frozen=True, eq=False)
class WelfareWeights:
    """Pareto weights lambda with sum(lambda * f) = 1 and an inferred shape tag."""

    values: np.ndarray
    shape: str
    peak: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def to_dict(self) -> dict:
        return {"lambda": self.values.tolist()}


def infer_shape(values, rtol: float = 1e-12) -> tuple[str, int | None]:
    v = np.asarray(values, dtype=float)
    tol = rtol * max(1.0, float(np.max(np.abs(v))))
    d = np.diff(v)
    if v.size < 2 or np.all(np.abs(d) <= tol):
        return "constant", None
    if np.all(d <= tol):
        return "decreasing", None
    if np.all(d >= -tol):
        return "increasing", None
    p = int(np.argmax(v))
    if np.all(d[:p] >= -tol) and np.all(d[p:] <= tol):
        return "hump", p
    return "other", None


def normalize_weights(raw, grid: TypeGrid) -> WelfareWeights:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != grid.nodes.shape:
        raise ValidationError("weights must align with the grid")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValidationError("welfare weights must be finite and nonnegative")
    total = float(raw @ grid.weights)
    if total <= 0:
        raise ValidationError("welfare weights are zero on the support")
    # inputs normalized up to roundoff pass through untouched, so normalizing is idempotent
    lam = raw.copy() if abs(total - 1.0) <= 4 * raw.size * np.finfo(float).eps else raw / total
    shape, peak = infer_shape(lam)
    return WelfareWeights(lam, shape, peak)


def weight_profile(family: str, grid: TypeGrid, **params) -> np.ndarray:
    """Raw weight profiles: ``constant``, ``linear`` (a + b theta), ``tent``, ``dirac``."""
    t = grid.nodes
    if family == "constant":
        return np.ones_like(t)
    if family == "linear":
        return float(params.get("a", 0.0)) + float(params.get("b", 0.0)) * t
    if family == "tent":
        lo = float(params.get("low", t[0]))
        hi = float(params.get("high", t[-1]))
        pk = float(params["peak"])
        floor = float(params.get("floor", 0.0))
        up = (t - lo) / (pk - lo) if pk > lo else np.ones_like(t)
        down = (hi - t) / (hi - pk) if hi > pk else np.ones_like(t)
        return floor + np.clip(np.minimum(up, down), 0.0, None)
    if family == "dirac":
        out = np.zeros_like(t)
        out[int(params.get("index", 0))] = 1.0
        return out
    raise ValidationError(f"unknown weight family {family!r}")


def weights_from_dict(d: dict | None, grid: TypeGrid) -> WelfareWeights:
    if d is None:
        return normalize_weights(np.ones(grid.n), grid)
    extra = set(d) - {"lambda", "family", "params"}
    if extra:
        raise ValidationError(f"unknown weight fields {sorted(extra)}")
    if "lambda" in d:
        return normalize_weights(d["lambda"], grid)
    return normalize_weights(weight_profile(d["family"], grid, **d.get("params", {})), grid)
