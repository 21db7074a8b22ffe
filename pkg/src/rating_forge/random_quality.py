"""Random quality outcomes: outcome densities, gain functions and monotone partitions.

A seller picks a mean quality q and the realized outcome x in [0, 1] is drawn
from g(x|q). The intermediary rates x, so the design object is a monotone
signaled-outcome schedule xbar(x). Outcomes live on a uniform lattice of cells;
cell probabilities come from differences of G, and each cell is represented by
its midpoint.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .errors import PreconditionError, ValidationError
from .foundation import CostModel

log = logging.getLogger(__name__)

FAMILIES = ("power-x", "power-1mx", "exponential-x", "custom")
_ALIASES = {"exp-x": "exponential-x", "exponential": "exponential-x"}
QMIN, QMAX = 1e-4, 1.0 - 1e-4
LOG_Z_CLIP = 200.0
FOA_LATTICE = np.round(np.arange(1, 100) / 100.0, 2)


# ----------------------------------------------------------------- families


@dataclass(frozen=True, eq=False)
class OutcomeFamily:
    """Evaluators g(x|q), G(x|q), g_q(x|q), vectorized over broadcastable x and q.

    ``cdf_q`` and ``log_density`` are optional; missing ones are derived
    numerically from the other evaluators.
    """

    name: str
    density: Callable
    cdf: Callable
    density_q: Callable
    cdf_q: Callable | None = None
    log_density: Callable | None = None
    score_fn: Callable | None = None

    def g(self, x, q):
        return self.density(np.asarray(x, dtype=float), np.asarray(q, dtype=float))

    def G(self, x, q):
        return self.cdf(np.asarray(x, dtype=float), np.asarray(q, dtype=float))

    def g_q(self, x, q):
        return self.density_q(np.asarray(x, dtype=float), np.asarray(q, dtype=float))

    def G_q(self, x, q, step: float = 1e-6):
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.cdf_q is not None:
            return self.cdf_q(x, q)
        return (self.cdf(x, q + step) - self.cdf(x, q - step)) / (2.0 * step)

    def log_g(self, x, q):
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.log_density is not None:
            return self.log_density(x, q)
        with np.errstate(divide="ignore"):
            return np.log(self.density(x, q))

    def score(self, x, q):
        """Likelihood-ratio slope g_q / g."""
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.score_fn is not None:
            return self.score_fn(x, q)
        return self.density_q(x, q) / self.density(x, q)

    def cell_probs(self, edges, q) -> np.ndarray:
        return np.diff(self.G(edges, q))

    def cell_probs_q(self, edges, q) -> np.ndarray:
        return np.diff(self.G_q(edges, q))

    def to_dict(self) -> dict:
        return {"family": self.name}


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _power_x() -> OutcomeFamily:
    # G = x^a with a = q/(1-q)
    def a_of(q):
        return q / (1.0 - q)

    def cdf(x, q):
        return np.power(x, a_of(q))

    def log_density(x, q):
        a = a_of(q)
        return np.log(a) + (a - 1.0) * _safe_log(x)

    def density(x, q):
        return np.exp(log_density(x, q))

    def score(x, q):
        return ((1.0 - q) / q + _safe_log(x)) / (1.0 - q) ** 2

    def density_q(x, q):
        return density(x, q) * score(x, q)

    def cdf_q(x, q):
        lx = _safe_log(np.where(x > 0, x, 1.0))
        return np.where(x > 0, np.power(x, a_of(q)) * lx, 0.0) / (1.0 - q) ** 2

    return OutcomeFamily("power-x", density, cdf, density_q, cdf_q, log_density, score)


def _power_1mx() -> OutcomeFamily:
    # G = 1 - (1-x)^b with b = (1-q)/q
    def b_of(q):
        return (1.0 - q) / q

    def cdf(x, q):
        return 1.0 - np.power(1.0 - x, b_of(q))

    def log_density(x, q):
        b = b_of(q)
        return np.log(b) + (b - 1.0) * _safe_log(1.0 - x)

    def density(x, q):
        return np.exp(log_density(x, q))

    def score(x, q):
        return -(q / (1.0 - q) + _safe_log(1.0 - x)) / q ** 2

    def density_q(x, q):
        return density(x, q) * score(x, q)

    def cdf_q(x, q):
        y = 1.0 - x
        ly = _safe_log(np.where(y > 0, y, 1.0))
        return np.where(y > 0, np.power(y, b_of(q)) * ly, 0.0) / q ** 2

    return OutcomeFamily("power-1mx", density, cdf, density_q, cdf_q, log_density, score)


_SMALL_RATE = 1e-2


def exp_mean(lam):
    """Mean of the density proportional to exp(lam x) on [0, 1]."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < _SMALL_RATE
    safe = np.where(small, 1.0, lam)
    big = -1.0 / np.expm1(-safe) - 1.0 / safe
    l2 = lam * lam
    series = 0.5 + lam / 12.0 - lam * l2 / 720.0 + lam * l2 * l2 / 30240.0
    return np.where(small, series, big)


def exp_variance(lam):
    """Derivative of exp_mean, which is also the variance of x."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < _SMALL_RATE
    safe = np.where(small, 1.0, lam)
    big = 1.0 / safe ** 2 - 0.25 / np.sinh(0.5 * safe) ** 2
    l2 = lam * lam
    series = 1.0 / 12.0 - l2 / 240.0 + l2 * l2 / 6048.0 - l2 ** 3 / 172800.0
    return np.where(small, series, big)


@lru_cache(maxsize=4096)
def _rate(qk: float) -> float:
    bound = 2.0 / min(qk, 1.0 - qk) + 10.0
    return optimize.brentq(lambda t: float(exp_mean(t)) - qk, -bound, bound,
                           xtol=1e-14, rtol=4 * np.finfo(float).eps)


def exp_rate(q):
    """Invert exp_mean: the rate whose mean is q."""
    q = np.asarray(q, dtype=float)
    out = np.full(q.shape, np.nan)
    for k, qk in np.ndenumerate(q):
        if 0.0 < qk < 1.0:
            out[k] = _rate(float(qk))
    return out if q.ndim else float(out)


def _exponential_x() -> OutcomeFamily:
    # g = lam exp(lam x) / (exp(lam) - 1), mean m(lam) = q
    def log_density(x, q):
        lam = np.asarray(exp_rate(q))
        small = np.abs(lam) < 1e-12
        s = np.where(small, 1.0, lam)
        # both branches are evaluated; only the one matching the sign of s is kept
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            pos = np.log(np.abs(s)) + s * (x - 1.0) - np.log(-np.expm1(-s))
            neg = np.log(np.abs(s)) + s * x - np.log(np.abs(np.expm1(s)))
        return np.where(small, 0.0 * x, np.where(s > 0, pos, neg))

    def density(x, q):
        return np.exp(log_density(x, q))

    def cdf(x, q):
        lam = np.asarray(exp_rate(q))
        small = np.abs(lam) < 1e-12
        s = np.where(small, 1.0, lam)
        with np.errstate(invalid="ignore", over="ignore"):
            pos = (np.exp(s * (x - 1.0)) - np.exp(-s)) / (-np.expm1(-s))
            neg = np.expm1(s * x) / np.expm1(s)
        return np.where(small, x, np.where(s > 0, pos, neg))

    def score(x, q):
        lam = np.asarray(exp_rate(q))
        return (x - q) / exp_variance(lam)

    def density_q(x, q):
        return density(x, q) * score(x, q)

    return OutcomeFamily("exponential-x", density, cdf, density_q, None, log_density, score)


_BUILDERS = {"power-x": _power_x, "power-1mx": _power_1mx, "exponential-x": _exponential_x}


def outcome_family(name: str) -> OutcomeFamily:
    key = _ALIASES.get(name, name)
    if key not in _BUILDERS:
        raise ValidationError(f"unknown outcome family {name!r}; choose from {sorted(_BUILDERS)}")
    return _BUILDERS[key]()


def custom_family(density, cdf, density_q, name: str = "custom") -> OutcomeFamily:
    return OutcomeFamily(name, density, cdf, density_q)


# ----------------------------------------------------------------- assumption checks


@dataclass(frozen=True)
class OutcomeReport:
    """Mean identity, full support and likelihood-ratio monotonicity on a lattice.

    Worst entries are (violation, q, x); x is nan for the mean test.
    """

    passed: bool
    mean_ok: bool
    support_ok: bool
    mlrp_ok: bool
    finite: bool
    worst_mean: tuple
    worst_support: tuple
    worst_mlrp: tuple

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "mean": {"ok": self.mean_ok, "worst": list(self.worst_mean)},
            "support": {"ok": self.support_ok, "worst": list(self.worst_support)},
            "mlrp": {"ok": self.mlrp_ok, "worst": list(self.worst_mlrp)},
            "finite": self.finite,
        }


def default_q_lattice(n: int = 64) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def default_x_lattice(n: int = 64) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def outcome_mean(family: OutcomeFamily, q: float) -> float:
    # near-singular endpoint densities trip quad's roundoff warning; the
    # mean test itself reports any real inaccuracy
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda x: x * float(family.g(x, q)), 0.0, 1.0,
                                limit=200, epsabs=1e-13, epsrel=1e-12)
    return float(val)


def check_outcome_assumptions(family: OutcomeFamily, q_lattice=None, x_lattice=None,
                              mean_tol: float = 1e-6) -> OutcomeReport:
    q = default_q_lattice() if q_lattice is None else np.asarray(q_lattice, dtype=float)
    x = default_x_lattice() if x_lattice is None else np.asarray(x_lattice, dtype=float)
    if np.any((q <= 0) | (q >= 1)) or np.any((x <= 0) | (x >= 1)):
        raise ValidationError("lattices must lie inside (0, 1)")
    with np.errstate(all="ignore"):
        g = family.g(x[None, :], q[:, None])
        s = family.score(x[None, :], q[:, None])
        means = np.array([outcome_mean(family, qk) for qk in q])
    finite = bool(np.all(np.isfinite(g)) and np.all(np.isfinite(s)) and np.all(np.isfinite(means)))

    err = np.abs(np.where(np.isfinite(means), means - q, np.inf))
    k = int(np.argmax(err))
    worst_mean = (float(err[k]), float(q[k]), float("nan"))

    gz = np.where(np.isfinite(g), g, -np.inf)
    k, j = np.unravel_index(int(np.argmin(gz)), g.shape)
    worst_support = (float(-min(gz[k, j], 0.0)), float(q[k]), float(x[j]))

    ds = np.diff(s, axis=1)
    ds = np.where(np.isfinite(ds), ds, -np.inf)
    k, j = np.unravel_index(int(np.argmin(ds)), ds.shape)
    worst_mlrp = (float(-ds[k, j]) if ds[k, j] <= 0 else 0.0, float(q[k]), float(x[j]))

    mean_ok = bool(err.max() <= mean_tol)
    support_ok = bool(np.all(gz > 0))
    mlrp_ok = bool(np.all(ds > 0))
    return OutcomeReport(bool(mean_ok and support_ok and mlrp_ok and finite), mean_ok, support_ok,
                         mlrp_ok, finite, worst_mean, worst_support, worst_mlrp)


@dataclass(frozen=True, eq=False)
class ShapeReport:
    """Second-difference sign tests of phi and psi = z phi along a z lattice.

    Slack is relative: a sign test at a point passes if the violation is at
    most ``slack * (1 + local magnitude)``.
    """

    passed: bool
    q_pair: tuple
    z: np.ndarray
    phi_curv_max: float
    psi_curv_min: float
    ratio_drop: float
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "q_pair": list(self.q_pair),
            "phi_curv_max": self.phi_curv_max,
            "psi_curv_min": self.psi_curv_min,
            "ratio_drop": self.ratio_drop,
            "checks": self.checks,
        }


def _invert_increasing(fun, targets, lo: float, hi: float, iters: int = 200) -> np.ndarray:
    a = np.full(targets.shape, lo)
    b = np.full(targets.shape, hi)
    for _ in range(iters):
        m = 0.5 * (a + b)
        up = fun(m) < targets
        a = np.where(up, m, a)
        b = np.where(up, b, m)
        if np.all(b - a <= 4 * np.finfo(float).eps * np.maximum(np.abs(a), 1e-300)):
            break
    return 0.5 * (a + b)


def _second_difference(v, hm, hp):
    return 2.0 * ((v[2:] - v[1:-1]) / hp - (v[1:-1] - v[:-2]) / hm) / (hm + hp)


def _roundoff(v, hm, hp, eps):
    mag = np.abs(v[2:]) + 2.0 * np.abs(v[1:-1]) + np.abs(v[:-2])
    return 64.0 * eps * mag / np.minimum(hm, hp) ** 2


def check_assumption3(family: OutcomeFamily, q1: float, q2: float, z_n: int = 64,
                      x_range: tuple = (1.0 / 128, 1.0 - 1.0 / 128),
                      slack: float = 1e-7) -> ShapeReport:
    """Curvature signs of phi(z) = g_q/g at xhat(z), with z = g(xhat|q2)/g(xhat|q1).

    phi is evaluated at both q1 and q2 and both must pass.
    """
    if not 0 < q1 < q2 < 1:
        raise ValidationError("need 0 < q1 < q2 < 1")

    def logratio(x):
        return family.log_g(x, q2) - family.log_g(x, q1)

    x_lo, x_hi = x_range
    with np.errstate(all="ignore"):
        l_lo, l_hi = float(logratio(np.array(x_lo))), float(logratio(np.array(x_hi)))
    if not l_hi > l_lo:
        raise PreconditionError("likelihood ratio is not increasing on the x range")
    # geometric z lattice: likelihood ratios can span hundreds of decades;
    # clipping log z keeps curvatures of order 1/z^2 inside double range
    l_lo, l_hi = max(l_lo, -LOG_Z_CLIP), min(l_hi, LOG_Z_CLIP)
    logz = l_lo + (l_hi - l_lo) * np.arange(1, z_n + 1) / (z_n + 1)
    z = np.exp(logz)
    xhat = _invert_increasing(logratio, logz, x_lo, x_hi)
    hm, hp = z[1:-1] - z[:-2], z[2:] - z[1:-1]
    checks = {}
    phi_max, psi_min, drop = -np.inf, np.inf, -np.inf
    passed = True
    eps = np.finfo(float).eps
    for tag, qq in (("q1", q1), ("q2", q2)):
        phi = family.score(xhat, qq)
        psi = z * phi
        d2phi = _second_difference(phi, hm, hp)
        d2psi = _second_difference(psi, hm, hp)
        noise_phi = _roundoff(phi, hm, hp, eps)
        noise_psi = _roundoff(psi, hm, hp, eps)
        tol_phi = slack * (1.0 + np.abs(d2phi)) + noise_phi
        tol_psi = slack * (1.0 + np.abs(d2psi)) + noise_psi
        ok_phi = bool(np.all(d2phi <= tol_phi))
        ok_psi = bool(np.all(d2psi >= -tol_psi))
        with np.errstate(all="ignore"):
            ratio = d2phi / d2psi
        dr = np.diff(ratio)
        tol_r = slack * (1.0 + np.abs(ratio[1:]) + np.abs(ratio[:-1]))
        ok_ratio = bool(np.all(np.isfinite(ratio)) and np.all(dr >= -tol_r))
        checks[tag] = {"phi_concave": ok_phi, "psi_convex": ok_psi, "ratio_increasing": ok_ratio}
        passed = passed and ok_phi and ok_psi and ok_ratio
        phi_max = max(phi_max, float(np.max(d2phi)))
        psi_min = min(psi_min, float(np.min(d2psi)))
        if dr.size:
            drop = max(drop, float(np.max(-dr)))
    return ShapeReport(bool(passed), (q1, q2), z, phi_max, psi_min, drop, checks)


def assumption_suite(family: OutcomeFamily, n: int = 64) -> dict:
    """Outcome checks on an n x n (q, x) lattice plus curvature checks on q pairs.

    Pairs are adjacent lattice points and mirrored pairs (q_k, q_{n-1-k}).
    """
    q = default_q_lattice(n)
    base = check_outcome_assumptions(family, q, default_x_lattice(n))
    pairs = [(q[k], q[k + 1]) for k in range(n - 1)]
    pairs += [(q[k], q[n - 1 - k]) for k in range(n // 2)]
    failures = []
    for q1, q2 in pairs:
        rep = check_assumption3(family, float(q1), float(q2), z_n=n)
        if not rep.passed:
            failures.append(rep.to_dict())
    return {
        "family": family.name,
        "pass": bool(base.passed and not failures),
        "outcome": base.to_dict(),
        "shape_pairs": len(pairs),
        "shape_failures": failures,
    }


# ----------------------------------------------------------------- lattice, gains, partitions


@dataclass(frozen=True, eq=False)
class OutcomeLattice:
    """Uniform cells on [0, 1] with midpoints as representative outcomes."""

    edges: np.ndarray

    @property
    def n(self) -> int:
        return self.edges.size - 1

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def outcome_lattice(n: int = 256) -> OutcomeLattice:
    if n < 2:
        raise ValidationError("outcome lattice needs at least 2 cells")
    return OutcomeLattice(np.linspace(0.0, 1.0, n + 1))


def mixture_density(q, f, family: OutcomeFamily, x) -> np.ndarray:
    """h(x) = sum_i f_i g(x|q_i) evaluated pointwise."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    f = np.atleast_1d(np.asarray(getattr(f, "weights", f), dtype=float))
    if q.shape != f.shape:
        raise ValidationError("q schedule must align with the type weights")
    if np.any((q <= 0) | (q >= 1)):
        raise ValidationError("q values must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    return np.tensordot(f, family.g(x[None, ...], q.reshape((-1,) + (1,) * x.ndim)), axes=1)


def mixture_masses(q, f, family: OutcomeFamily, lattice: OutcomeLattice) -> np.ndarray:
    """Cell probabilities of the type mixture."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    f = np.atleast_1d(np.asarray(f, dtype=float))
    return sum(fi * family.cell_probs(lattice.edges, qi) for fi, qi in zip(f, q) if fi > 0)


def _sign_changes(values, rtol: float = 1e-12) -> int:
    d = np.diff(np.asarray(values, dtype=float))
    scale = max(1.0, float(np.max(np.abs(values)))) if np.size(values) else 1.0
    s = np.sign(d[np.abs(d) > rtol * scale])
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass(frozen=True, eq=False)
class GainFunction:
    """Gain values on an outcome lattice with positive cell weights h."""

    x: np.ndarray
    values: np.ndarray
    h: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("x", "values", "h"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.x.shape == self.values.shape == self.h.shape) or self.x.ndim != 1:
            raise ValidationError("gain values, outcomes and weights must be aligned vectors")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("gain values must be finite")
        if np.any(self.h <= 0):
            raise ValidationError("weights h must be positive")

    @property
    def sign_changes(self) -> int:
        return _sign_changes(self.values)

    def shifted(self, c: float) -> "GainFunction":
        return GainFunction(self.x, self.values + c, self.h, dict(self.meta))


def gain_two_type(q1: float, q2: float, gamma1: float, gamma2: float, f, family: OutcomeFamily,
                  lattice: OutcomeLattice | None = None) -> GainFunction:
    """Gamma = (p1 + gamma1 dp1/dq + gamma2 dp2/dq) / h on lattice cells.

    p_i are the cell probabilities at q_i and h = f1 p1 + f2 p2. Cells with
    h = 0 are dropped.
    """
    if not 0 < q1 <= q2 < 1:
        raise ValidationError("need 0 < q1 <= q2 < 1")
    lattice = lattice or outcome_lattice()
    f = np.asarray(getattr(f, "weights", f), dtype=float)
    p1 = family.cell_probs(lattice.edges, q1)
    p2 = family.cell_probs(lattice.edges, q2)
    d1 = family.cell_probs_q(lattice.edges, q1)
    d2 = family.cell_probs_q(lattice.edges, q2)
    h = f[0] * p1 + f[1] * p2
    keep = h > 0
    values = (p1[keep] + gamma1 * d1[keep] + gamma2 * d2[keep]) / h[keep]
    gain = GainFunction(lattice.mids[keep], values, h[keep],
                        {"q": (q1, q2), "gamma": (gamma1, gamma2), "dropped": int(np.sum(~keep))})
    gain.meta["sign_changes"] = gain.sign_changes
    return gain


@dataclass(frozen=True, eq=False)
class MonotonePartition:
    """Ordered blocks of lattice cells, each fully revealed or pooled.

    Blocks are (start, stop, kind, value) over cell indices [start, stop);
    value is the pooled mean for pool blocks and nan for reveal blocks.
    ``bounds`` maps cell boundaries to outcome space when known.
    """

    blocks: tuple
    x: np.ndarray
    h: np.ndarray
    value: float = float("nan")
    bounds: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.size

    def xbar(self) -> np.ndarray:
        out = self.x.copy()
        for a, b, kind, v in self.blocks:
            if kind == "pool":
                out[a:b] = v
        return out

    def pooled(self) -> list:
        return [(a, b) for a, b, kind, _ in self.blocks if kind == "pool"]

    def mean_gap(self) -> float:
        return float(np.dot(self.xbar() - self.x, self.h))

    def adjacent_pools(self) -> int:
        kinds = [blk[2] for blk in self.blocks]
        return sum(1 for k0, k1 in zip(kinds, kinds[1:]) if k0 == k1 == "pool")

    def interval(self, block) -> tuple:
        a, b = block[0], block[1]
        if self.bounds is not None:
            return float(self.bounds[a]), float(self.bounds[b])
        return float(self.x[a]), float(self.x[b - 1])

    def to_dict(self) -> dict:
        blocks = []
        for blk in self.blocks:
            lo, hi = self.interval(blk)
            blocks.append({"cells": [blk[0], blk[1]], "interval": [lo, hi], "kind": blk[2],
                           "value": None if blk[2] == "reveal" else blk[3]})
        return {"blocks": blocks, "value": self.value}


def _pool_mean(x, h, a, b) -> float:
    return float(np.dot(x[a:b], h[a:b]) / np.sum(h[a:b]))


def partition_from_cuts(cuts, x, h, gamma=None, bounds=None) -> MonotonePartition:
    """Build a partition from raw DP blocks [(a, b), ...]: singletons reveal, longer blocks pool.

    Runs of singletons merge into maximal reveal blocks.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    blocks = []
    for a, b in cuts:
        if b - a == 1:
            if blocks and blocks[-1][2] == "reveal":
                blocks[-1] = (blocks[-1][0], b, "reveal", float("nan"))
            else:
                blocks.append((a, b, "reveal", float("nan")))
        else:
            blocks.append((a, b, "pool", _pool_mean(x, h, a, b)))
    value = float("nan")
    if gamma is not None:
        value = _partition_value(blocks, np.asarray(gamma, dtype=float), x, h)
    return MonotonePartition(tuple(blocks), x, h, value, bounds)


def _partition_value(blocks, gamma, x, h) -> float:
    total = 0.0
    for a, b, kind, _ in blocks:
        if kind == "pool":
            total += np.dot(gamma[a:b], h[a:b]) * np.dot(x[a:b], h[a:b]) / np.sum(h[a:b])
        else:
            total += np.dot(gamma[a:b] * x[a:b], h[a:b])
    return float(total)


def _merge_equal_pools(blocks, gamma, h, tol: float):
    out = []
    for blk in blocks:
        if out and out[-1][2] == "pool" and blk[2] == "pool":
            a0, b0 = out[-1][0], out[-1][1]
            a1, b1 = blk[0], blk[1]
            m0 = np.dot(gamma[a0:b0], h[a0:b0]) / np.sum(h[a0:b0])
            m1 = np.dot(gamma[a1:b1], h[a1:b1]) / np.sum(h[a1:b1])
            if abs(m0 - m1) <= tol * max(1.0, abs(m0), abs(m1)):
                out[-1] = (a0, b1, "pool", float("nan"))
                continue
        out.append(blk)
    return out


def solve_auxiliary(gain, h=None, x=None, merge_tol: float = 1e-9,
                    bounds=None) -> MonotonePartition:
    """Best monotone mean-preserving partition for sum_j Gamma_j xbar_j h_j.

    O(n^2) dynamic program over block ends; a block (i, j] is worth
    (sum Gamma h)(sum x h)/(sum h). Adjacent pooled blocks with equal gain
    averages are merged afterwards, which leaves the value unchanged.
    """
    if isinstance(gain, GainFunction):
        gvals, h, x = gain.values, gain.h, gain.x
    else:
        gvals = np.asarray(gain, dtype=float)
        if h is None or x is None:
            raise ValidationError("raw gain values need h and x")
        GainFunction(x, gvals, h)
    gvals = np.asarray(gvals, dtype=float)
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    if gvals.size < 1:
        raise ValidationError("empty lattice")
    sg = np.concatenate([[0.0], np.cumsum(gvals * h)])
    sx = np.concatenate([[0.0], np.cumsum(x * h)])
    sh = np.concatenate([[0.0], np.cumsum(h)])
    value, prev = kernels.partition_dp(sg, sx, sh)
    cuts = []
    j = gvals.size
    while j > 0:
        i = int(prev[j])
        cuts.append((i, j))
        j = i
    cuts.reverse()
    raw = partition_from_cuts(cuts, x, h)
    merged = _merge_equal_pools(list(raw.blocks), gvals, h, merge_tol)
    blocks = tuple((a, b, kind, _pool_mean(x, h, a, b) if kind == "pool" else v)
                   for a, b, kind, v in merged)
    return MonotonePartition(blocks, x, h, float(value), bounds)


# ----------------------------------------------------------------- two-type design


@dataclass(frozen=True, eq=False)
class TwoTypeSolution:
    """Optimal two-type design under the first-order approach.

    Thresholds are outcome-space bounds of the pooled block; ``certificate``
    records the fitted multipliers and whether the DP on the implied gain
    reproduces the partition.
    """

    q: tuple
    thresholds: tuple
    partition: MonotonePartition
    multipliers: tuple
    objective: float
    profits: tuple
    foa_valid: bool
    certificate: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "q": list(self.q),
            "thresholds": [None if np.isnan(t) else t for t in self.thresholds],
            "partition": self.partition.to_dict(),
            "multipliers": list(self.multipliers),
            "objective": self.objective,
            "profits": list(self.profits),
            "foa_valid": self.foa_valid,
            "certificate": self.certificate,
            "meta": self.meta,
        }


class TwoTypeProblem:
    """Seller i picks q to maximize sum_j xbar_j p_j(q) - C(q, theta_i) given xbar.

    A candidate (a, b) pools cells [a, b) at their mixture-weighted mean and
    reveals the rest; the mixture depends on (q1, q2), so equilibrium is a
    joint solve.
    """

    def __init__(self, model: CostModel, family: OutcomeFamily, theta, f,
                 lattice: OutcomeLattice | None = None, foa_lattice=None):
        self.model = model
        self.family = family
        self.theta = np.asarray(theta, dtype=float)
        self.f = np.asarray(f, dtype=float)
        if self.theta.shape != (2,) or self.f.shape != (2,):
            raise ValidationError("two-type problem needs two types and two weights")
        if not self.theta[0] < self.theta[1]:
            raise ValidationError("types must satisfy theta1 < theta2")
        if np.any(self.f < 0) or abs(self.f.sum() - 1.0) > 1e-12 or self.f[0] <= 0:
            raise ValidationError("weights must be nonnegative, sum to 1, with f1 > 0")
        self.lattice = lattice or outcome_lattice()
        self.x = self.lattice.mids
        self.active = 2 if self.f[1] > 0 else 1
        self.foa_q = FOA_LATTICE if foa_lattice is None else np.asarray(foa_lattice, dtype=float)
        self._foa_probs = np.array([family.cell_probs(self.lattice.edges, qq) for qq in self.foa_q])

    def probs(self, q: float) -> np.ndarray:
        return self.family.cell_probs(self.lattice.edges, q)

    def dprobs(self, q: float) -> np.ndarray:
        return self.family.cell_probs_q(self.lattice.edges, q)

    def masses(self, q) -> np.ndarray:
        h = self.f[0] * self.probs(q[0])
        if self.active == 2:
            h = h + self.f[1] * self.probs(q[1])
        return h

    def xbar(self, a: int, b: int, q) -> np.ndarray:
        xb = self.x.copy()
        if b - a > 1:
            h = self.masses(q)
            w = np.sum(h[a:b])
            if w > 0:
                xb[a:b] = np.dot(self.x[a:b], h[a:b]) / w
        return xb

    def payoff(self, xb, q: float, i: int) -> float:
        return float(np.dot(xb, self.probs(q)) - self.model.C(q, self.theta[i]))

    def residual(self, q, a: int, b: int) -> np.ndarray:
        xb = self.xbar(a, b, q)
        return np.array([np.dot(xb, self.dprobs(q[i])) - self.model.C_q(q[i], self.theta[i])
                         for i in range(self.active)])

    def lattice_best(self, xb, i: int) -> tuple:
        u = self._foa_probs @ xb - self.model.C(self.foa_q, self.theta[i])
        k = int(np.argmax(u))
        return float(self.foa_q[k]), float(u[k])

    def newton(self, a: int, b: int, start, tol: float = 1e-12, max_iter: int = 100):
        """Damped Newton on the first-order conditions, numerical Jacobian."""
        q = np.array(start[: self.active], dtype=float)
        full = np.array(start, dtype=float)

        def fq(v):
            full[: self.active] = v
            return self.residual(full, a, b)

        r = fq(q)
        for _ in range(max_iter):
            norm = float(np.max(np.abs(r)))
            if norm <= tol:
                full[: self.active] = q
                return full.copy()
            jac = np.empty((self.active, self.active))
            step = 1e-7
            for k in range(self.active):
                e = np.zeros(self.active)
                e[k] = step
                jac[:, k] = (fq(q + e) - fq(q - e)) / (2 * step)
            try:
                d = np.linalg.solve(jac, -r)
            except np.linalg.LinAlgError:
                return None
            t = 1.0
            while True:
                qn = q + t * d
                if np.all((qn > QMIN) & (qn < QMAX)):
                    rn = fq(qn)
                    if np.max(np.abs(rn)) < norm * (1.0 - 1e-4 * t):
                        break
                t *= 0.5
                if t < 1e-12:
                    return None
            q, r = qn, rn
        return None

    def foa_check(self, q, a: int, b: int, tol: float = 1e-9) -> tuple:
        """Worst shortfall of the candidate q against a brute scan of the seller objective."""
        xb = self.xbar(a, b, q)
        worst = 0.0
        for i in range(self.active):
            _, best = self.lattice_best(xb, i)
            worst = max(worst, best - self.payoff(xb, q[i], i))
        return worst <= tol, worst

    def evaluate(self, a: int, b: int, start=None):
        """Solve the candidate; returns (objective, q) or None when infeasible or FOA fails."""
        if start is None:
            start = np.array([0.5, 0.5])
        start = np.array(start, dtype=float)
        xb = self.xbar(a, b, start)
        for i in range(self.active):
            start[i] = self.lattice_best(xb, i)[0]
        start = np.clip(start, 0.02, 0.98)
        q = self.newton(a, b, start)
        if q is None:
            return None
        if self.active == 1:
            q[1] = q[0]
        if self.active == 2 and q[1] < q[0] - 1e-12:
            return None
        ok, _ = self.foa_check(q, a, b)
        if not ok:
            return None
        return self.payoff(self.xbar(a, b, q), q[0], 0), q


def _fit_multipliers(prob: TwoTypeProblem, q, a: int, b: int):
    """Least-squares multipliers from the pooling-boundary conditions.

    At an interior pooling boundary the gain equals the block's average gain.
    The boundary gain is the mean of the two straddling cells.
    """
    n = prob.lattice.n
    p1 = prob.probs(q[0])
    cols = [prob.dprobs(q[0])] + ([prob.dprobs(q[1])] if prob.active == 2 else [])
    h = prob.masses(q)
    if b - a < 2:
        return (0.0, 0.0), 0.0
    hb = np.sum(h[a:b])

    def row(vec):
        g = vec / h
        avg = np.sum(vec[a:b]) / hb
        out = []
        if a > 0:
            out.append(0.5 * (g[a - 1] + g[a]) - avg)
        if b < n:
            out.append(0.5 * (g[b - 1] + g[b]) - avg)
        return np.array(out)

    rhs = -row(p1)
    if rhs.size == 0:
        return (0.0, 0.0), 0.0
    mat = np.column_stack([row(c) for c in cols])
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    resid = float(np.max(np.abs(mat @ sol - rhs)))
    gam = (float(sol[0]), float(sol[1]) if prob.active == 2 else 0.0)
    return gam, resid


def _certify(prob: TwoTypeProblem, q, a: int, b: int, cell_tol: int):
    gam, resid = _fit_multipliers(prob, q, a, b)
    h = prob.masses(q)
    keep = h > 0
    vals = prob.probs(q[0]) + gam[0] * prob.dprobs(q[0])
    if prob.active == 2:
        vals = vals + gam[1] * prob.dprobs(q[1])
    gain = GainFunction(prob.x[keep], vals[keep] / h[keep], h[keep])
    part = solve_auxiliary(gain)
    idx = np.nonzero(keep)[0]
    pools = [(int(idx[s]), int(idx[e - 1]) + 1) for s, e in part.pooled()]
    if b - a < 2:
        same = not pools
        cuts = [(j, j + 1) for j in range(gain.x.size)]
    else:
        same = len(pools) == 1 and abs(pools[0][0] - a) <= cell_tol and abs(pools[0][1] - b) <= cell_tol
        ka, kb = np.searchsorted(idx, a), np.searchsorted(idx, b)
        cuts = [(j, j + 1) for j in range(ka)] + [(ka, kb)] + [(j, j + 1) for j in range(kb, gain.x.size)]
    own = _partition_value(partition_from_cuts(cuts, gain.x, gain.h).blocks, gain.values, gain.x, gain.h)
    # under ties (e.g. a constant gain) the DP may pick another partition of equal value
    optimal = own >= part.value - 1e-9 * max(1.0, abs(part.value))
    return {"gamma": list(gam), "fit_residual": resid, "dp_pools": [list(p) for p in pools],
            "cell_tol": cell_tol, "same_partition": bool(same), "dp_value": part.value,
            "candidate_value": own, "match": bool(same or optimal)}


def _candidates_grid(n: int, stride: int):
    pts = list(range(0, n + 1, stride))
    if pts[-1] != n:
        pts.append(n)
    out = [(0, 0)]
    for i, a in enumerate(pts):
        for b in pts[i + 1:]:
            if b - a >= 2:
                out.append((a, b))
    return out


def _scan(prob: TwoTypeProblem, cands, start, threads: int):
    def run(c):
        return c, prob.evaluate(c[0], c[1], start)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cands))
    else:
        results = [run(c) for c in cands]
    best = None
    for c, r in results:
        if r is None:
            continue
        # strict improvement keeps the lexicographically first candidate on ties
        if best is None or r[0] > best[0] + 1e-15:
            best = (r[0], c, r[1])
    return best, sum(r is None for _, r in results)


def solve_two_type(model: CostModel, family: OutcomeFamily, theta, f, lam=(1.0, 0.0),
                   n: int = 256, stride: int = 8, radius: int = 8, threads: int = 1,
                   cell_tol: int = 2) -> TwoTypeSolution:
    """Reveal-pool-reveal design maximizing type-1 profit.

    Coarse scan over pooling blocks [a, b) at ``stride`` cells, then repeated
    exhaustive search in a window of ``radius`` cells around the incumbent.
    Each candidate is solved by damped Newton on the sellers' first-order
    conditions and kept only if the brute lattice scan confirms both are
    global best responses.
    """
    lam = tuple(float(v) for v in lam)
    if lam != (1.0, 0.0):
        raise ValidationError("two-type design is implemented for weights (1, 0)")
    prob = TwoTypeProblem(model, family, theta, f, outcome_lattice(n))
    best, rejected = _scan(prob, _candidates_grid(n, stride), None, threads)
    if best is None:
        raise PreconditionError("FOA invalid here: no candidate passes the best-response scan")
    for _ in range(50):
        a0, b0 = best[1]
        window = [(a, b) for a in range(max(a0 - radius, 0), min(a0 + radius, n) + 1)
                  for b in range(max(b0 - radius, a + 2), min(b0 + radius, n) + 1)]
        if a0 == b0:
            window.append((0, 0))
        cand, rej = _scan(prob, sorted(set(window)), best[2], threads)
        rejected += rej
        if cand is None or cand[0] <= best[0] + 1e-15:
            break
        best = cand
    value, (a, b), q = best
    xb = prob.xbar(a, b, q)
    h = prob.masses(q)
    cuts = [(j, j + 1) for j in range(a)] + ([(a, b)] if b - a >= 2 else []) + \
        [(j, j + 1) for j in range(b if b - a >= 2 else a, n)]
    part = partition_from_cuts(cuts, prob.x, h, bounds=prob.lattice.edges)
    foa_ok, foa_gap = prob.foa_check(q, a, b)
    cert = _certify(prob, q, a, b, cell_tol)
    profits = tuple(prob.payoff(xb, q[i], i) for i in range(2))
    edges = prob.lattice.edges
    thresholds = (float(edges[a]), float(edges[b])) if b - a >= 2 else (float("nan"), float("nan"))
    meta = {"cells": [int(a), int(b)], "rejected_candidates": int(rejected),
            "foa_gap": float(foa_gap), "n": n, "family": family.name,
            "residual": float(np.max(np.abs(prob.residual(q, a, b))))}
    log.info("two-type optimum: pool cells [%d, %d), q=%s, value %.10g", a, b, q, value)
    return TwoTypeSolution((float(q[0]), float(q[1])), thresholds, part,
                           tuple(cert["gamma"]), float(value), profits, bool(foa_ok), cert, meta)
