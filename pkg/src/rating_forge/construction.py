"""Rating systems that implement a majorized (q, qbar) pair.

``construct_rating`` runs the pooling algorithm step by step and records its
trace and composed garbling. The kernel it returns is built separately: every
point of the majorization polytope is a mixture of interval-partition pooling
vectors, and a mixture of partitions is a genuine rating system. A product of
pooled garblings is f-stochastic but is in general not the garbling of any
signal kernel, so the trace product is kept only as a certificate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InternalError, PreconditionError, ValidationError
from .foundation import TypeGrid
from .majorization import check_majorization
from .rating import GarblingMatrix, RatingSystem, double_expectation, posterior_prices

SNAP_REL = 1e-10
CHECK_TOL = 1e-9


def _weights(grid) -> np.ndarray:
    return grid.weights if isinstance(grid, TypeGrid) else np.asarray(grid, dtype=float)


def _check_pair(k: int, l: int, n: int):
    if not 0 <= k < l < n:
        raise ValidationError(f"need 0 <= k < l < N, got k={k}, l={l}, N={n}")


def pool_matrix(idx, f) -> np.ndarray:
    """Identity except that rows in ``idx`` are replaced by the f-weighted average over ``idx``."""
    f = np.asarray(f, dtype=float)
    n = f.size
    a = np.eye(n)
    idx = np.asarray(idx)
    w = f[idx]
    tot = w.sum()
    row = w / tot if tot > 0 else np.full(idx.size, 1.0 / idx.size)
    a[np.ix_(idx, idx)] = row[None, :]
    return a


def interval_pooled(k: int, l: int, grid) -> GarblingMatrix:
    """Pool types k..l (0-based, inclusive) into one signal; reveal the rest."""
    f = _weights(grid)
    _check_pair(k, l, f.size)
    return GarblingMatrix(pool_matrix(np.arange(k, l + 1), f), f)


def two_point_pooled(k: int, l: int, grid) -> GarblingMatrix:
    """Pool types k and l only; every other type is revealed."""
    f = _weights(grid)
    _check_pair(k, l, f.size)
    return GarblingMatrix(pool_matrix(np.array([k, l]), f), f)


def partition_rating(blocks, n: int, labels=None) -> RatingSystem:
    """Deterministic rating system that reports which block a type lies in."""
    kernel = np.zeros((n, len(blocks)))
    for s, (a, b) in enumerate(blocks):
        kernel[a:b + 1, s] = 1.0
    if labels is None:
        labels = [f"reveal[{a}]" if a == b else f"pool[{a}-{b}]" for a, b in blocks]
    return RatingSystem(tuple(labels), kernel)


# ------------------------------------------------------------------ grouping


@dataclass(frozen=True, eq=False)
class _Groups:
    starts: np.ndarray
    ends: np.ndarray
    index: np.ndarray
    q: np.ndarray
    qbar: np.ndarray
    f: np.ndarray


def _group_ties(q, qbar, f, tol: float) -> _Groups:
    n = q.size
    starts = [0]
    for i in range(1, n):
        if q[i] - q[i - 1] > tol:
            starts.append(i)
    starts = np.array(starts)
    ends = np.append(starts[1:] - 1, n - 1)
    index = np.repeat(np.arange(starts.size), ends - starts + 1)
    gq, gqb, gf = [], [], []
    for a, b in zip(starts, ends):
        w = f[a:b + 1]
        tot = w.sum()
        if tot <= 0:
            raise PreconditionError(f"types {a}..{b} carry zero mass", index=int(a))
        if np.ptp(qbar[a:b + 1]) > tol:
            raise PreconditionError(
                f"qbar must be constant across tied qualities {a}..{b}", index=int(a))
        gq.append(w @ q[a:b + 1] / tot)
        gqb.append(w @ qbar[a:b + 1] / tot)
        gf.append(tot)
    gq, gqb, gf = np.array(gq), np.array(gqb), np.array(gf)
    # interior partial sums may dip below zero within tolerance; lift them to
    # zero so the trace sees an exactly majorized pair
    d = np.cumsum(gf * (gqb - gq))
    if np.any(d[:-1] < 0):
        d[:-1] = np.maximum(d[:-1], 0.0)
        gqb = gq + np.diff(d, prepend=0.0) / gf
    return _Groups(starts, ends, index, gq, gqb, gf)


# --------------------------------------------------------------- the trace


@dataclass(frozen=True, eq=False)
class ConstructionStep:
    kind: str
    k: int
    l: int
    lam: float
    r_before: np.ndarray
    r_after: np.ndarray
    mismatch_before: int
    mismatch_after: int


@dataclass(frozen=True, eq=False)
class ConstructionTrace:
    """Pooling steps; indices refer to the first type of each tie group."""

    steps: tuple
    composed: GarblingMatrix
    residual: float

    def __len__(self):
        return len(self.steps)

    def rows(self):
        for i, s in enumerate(self.steps):
            yield i, s.kind, s.k, s.l, s.lam


def _crossing_lambda(m: float, r: np.ndarray, qb: np.ndarray, below: np.ndarray, top: int) -> float:
    """Largest lambda in [0, 1) at which a pooling constraint becomes tight.

    Along m + lambda (r_j - m): indices in ``below`` must stay <= qbar_j and the
    index ``top`` must stay >= qbar_top.
    """
    lam = 0.0
    for j in below:
        if m > qb[j] and m > r[j]:
            lam = max(lam, (m - qb[j]) / (m - r[j]))
    if m < qb[top] and r[top] > m:
        lam = max(lam, (qb[top] - m) / (r[top] - m))
    return min(lam, 1.0)


def _pooling_trace(q, qb, f, tol):
    n = q.size
    r = q.copy()
    composed = np.eye(n)
    steps = []

    def mismatch(x):
        return int(np.sum(np.abs(x - qb) > tol))

    while True:
        before = mismatch(r)
        if before == 0:
            break
        if len(steps) >= n:
            raise InternalError("algorithm stalled: more steps than types")
        up = np.nonzero(qb - r > tol)[0]
        if up.size == 0:
            raise InternalError("algorithm stalled: no index with qbar above r")
        k = int(up[0])
        down = np.nonzero((qb - r < -tol) & (np.arange(n) > k))[0]
        if down.size == 0:
            raise InternalError("algorithm stalled: no index with qbar below r")
        l = int(down[0])
        mid = np.arange(k + 1, l)
        if np.all(qb[mid] - r[mid] > tol):
            kind, idx = "interval", np.arange(k, l + 1)
            kk = k
        else:
            cand = [j for j in range(k, l - 1) if qb[j] - r[j] > tol and abs(qb[j + 1] - r[j + 1]) <= tol]
            if not cand:
                raise InternalError("algorithm stalled: no two-point anchor")
            kk = cand[-1]
            kind, idx = "two-point", np.array([kk, l])
        m = float(f[idx] @ r[idx] / f[idx].sum())
        lam = _crossing_lambda(m, r, qb, idx[:-1], l)
        new = r.copy()
        new[idx] = m + lam * (r[idx] - m)
        snap = np.abs(new - qb) <= tol
        new[snap] = qb[snap]
        after = mismatch(new)
        if after >= before:
            raise InternalError("algorithm stalled: mismatch count did not fall")
        steps.append((kind, kk, l, lam, r.copy(), new.copy(), before, after))
        # left-multiply by lam*I + (1-lam)*pool(idx); only rows in idx change
        rows = composed[idx]
        avg = f[idx] @ rows / f[idx].sum()
        composed[idx] = lam * rows + (1.0 - lam) * avg[None, :]
        r = new
    return steps, composed


# ------------------------------------------------------- vertex decomposition


def _block_means(q, f, cuts):
    v = np.empty_like(q)
    a = 0
    for b in cuts:
        v[a:b + 1] = f[a:b + 1] @ q[a:b + 1] / f[a:b + 1].sum()
        a = b + 1
    return v


def _blocks_from_cuts(cuts):
    out, a = [], 0
    for b in cuts:
        out.append((a, int(b)))
        a = int(b) + 1
    return tuple(out)


def partition_mixture(q, x, f, tol: float = CHECK_TOL):
    """Write x as a convex combination of interval-partition poolings of q.

    Needs q strictly increasing and q >=_F x. Each step moves from x away from
    the pooling vertex of its binding set until one more partial sum binds, so
    there are at most N components. Returns a list of (weight, blocks).
    """
    n = q.size
    scale = max(1.0, float(np.max(np.abs(q))))
    x = x.astype(float).copy()
    gaps = np.cumsum(f * (x - q))
    bind = {int(k) for k in np.nonzero(gaps[:-1] <= tol)[0]}
    comps = []
    w = 1.0
    for _ in range(n + 1):
        cuts = sorted(bind) + [n - 1]
        v = _block_means(q, f, cuts)
        d = x - v
        if np.max(np.abs(d)) <= 1e-12 * scale:
            comps.append((w, _blocks_from_cuts(cuts)))
            return comps
        dv = np.cumsum(f * (v - q))
        dd = np.cumsum(f * d)
        free = np.array([k for k in range(n - 1) if k not in bind], dtype=int)
        slope = dd[free]
        neg = slope < 0
        if not np.any(neg):
            # partial sums counted as binding within tol leave a remainder of
            # that size; anything larger means the walk went wrong
            if np.max(np.abs(dd)) <= 2.0 * tol * scale:
                comps.append((w, _blocks_from_cuts(cuts)))
                return comps
            raise InternalError("vertex walk found no bounding constraint")
        ratios = dv[free][neg] / (-slope[neg])
        t = float(ratios.min())
        if not t > 1.0:
            raise InternalError("vertex walk step does not move")
        tight = free[neg][ratios <= t * (1 + 1e-12)]
        comps.append((w * (1.0 - 1.0 / t), _blocks_from_cuts(cuts)))
        w /= t
        x = v + t * d
        bind.update(int(k) for k in tight)
    raise InternalError("vertex walk did not terminate")


def mixture_rating(comps, groups: _Groups) -> RatingSystem:
    """Kernel of a randomized partition: one signal per distinct block."""
    n = groups.index.size
    blocks = {}
    for wt, parts in comps:
        if wt <= 0:
            continue
        for a, b in parts:
            blocks[(a, b)] = blocks.get((a, b), 0.0) + wt
    keys = sorted(blocks)
    kernel = np.zeros((n, len(keys)))
    labels = []
    for s, (a, b) in enumerate(keys):
        lo, hi = int(groups.starts[a]), int(groups.ends[b])
        kernel[lo:hi + 1, s] = blocks[(a, b)]
        if a == b:
            labels.append(f"reveal[{lo}]" if lo == hi else f"reveal[{lo}-{hi}]")
        else:
            labels.append(f"pool[{lo}-{hi}]")
    kernel /= kernel.sum(axis=1, keepdims=True)
    return RatingSystem(tuple(labels), kernel)


def _expand_garbling(a_g, groups: _Groups, f) -> np.ndarray:
    share = f / groups.f[groups.index]
    return a_g[np.ix_(groups.index, groups.index)] * share[None, :]


def construct_rating(q, qbar, grid: TypeGrid, tol: float = CHECK_TOL):
    """Rating system implementing qbar from q, plus the pooling trace.

    Raises PreconditionError (with the failing partial-sum index) when q does
    not F-majorize qbar.
    """
    q = np.asarray(q, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    f = grid.weights
    rep = check_majorization(q, qbar, grid, tol)
    if not rep.holds:
        k = rep.first_failure
        if k == rep.tie_failure:
            raise PreconditionError(f"qbar must be constant across the tied qualities from index {k}",
                                    index=k)
        raise PreconditionError(
            f"q does not majorize qbar: partial sum {k} is {rep.gaps[k]:.6g}", index=k)
    scale = max(1.0, float(np.max(np.abs(q))))
    groups = _group_ties(q, qbar, f, tol * scale)
    snap = SNAP_REL * scale
    raw_steps, composed_g = _pooling_trace(groups.q, groups.qbar, groups.f, snap)
    first = groups.starts
    steps = tuple(
        ConstructionStep(kind, int(first[k]), int(first[l]), float(lam), rb, ra, mb, ma)
        for kind, k, l, lam, rb, ra, mb, ma in raw_steps
    )
    composed = GarblingMatrix(_expand_garbling(composed_g, groups, f), f)
    residual = float(np.max(np.abs(composed.matrix @ q - qbar)))
    # majorization is judged on f-weighted partial sums, so a pair accepted
    # within tol may only be reachable up to tol / f_j in entry j
    if float(np.max(f * np.abs(composed.matrix @ q - qbar))) > 2.0 * CHECK_TOL * scale:
        raise InternalError(f"trace garbling misses qbar by {residual:.3g}")
    trace = ConstructionTrace(steps, composed, residual)

    comps = partition_mixture(groups.q, groups.qbar, groups.f, tol)
    rs = mixture_rating(comps, groups)
    miss = np.abs(double_expectation(rs, q, grid) - qbar)
    err = float(np.max(miss))
    if float(np.max(f * miss)) > 2.0 * CHECK_TOL * scale:
        raise InternalError(f"constructed rating misses qbar by {err:.3g}")
    return rs, trace


# --------------------------------------------------------------- full mixing


@dataclass(frozen=True, eq=False)
class FullMixing:
    """Reveal q_i with probability alpha_i, otherwise send one generic signal priced at ``crossing_value``."""

    alpha: np.ndarray
    crossing_value: float
    crossing_index: int
    rating: RatingSystem
    generic_price: float


def full_mixing(q, qbar, grid: TypeGrid, tol: float = CHECK_TOL) -> FullMixing:
    q = np.asarray(q, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    f = grid.weights
    n = q.size
    rep = check_majorization(q, qbar, grid, tol)
    if not rep.holds:
        raise PreconditionError("q does not majorize qbar", index=rep.first_failure)
    diff = qbar - q
    pos = np.nonzero(diff > tol)[0]
    neg = np.nonzero(diff < -tol)[0]
    if pos.size == 0 or neg.size == 0:
        raise PreconditionError("qbar and q do not cross; use construct_rating")
    if pos.max() > neg.min():
        raise PreconditionError("qbar and q cross more than once; use construct_rating")
    k, k1 = int(pos.max()), int(neg.min())
    zero = np.arange(k + 1, k1)
    if zero.size:
        z = int(zero[zero.size // 2])
        c = float(q[z])
        cross = z
    else:
        s = diff[k] / (diff[k] - diff[k1])
        c = float(q[k] + s * (q[k1] - q[k]))
        cross = k
    den = q - c
    at = np.abs(den) <= tol * max(1.0, abs(c))
    alpha = np.empty(n)
    alpha[~at] = (qbar[~at] - c) / den[~at]
    for i in np.nonzero(at)[0]:
        nb = [alpha[j] for j in (i - 1, i + 1) if 0 <= j < n and not at[j]]
        alpha[i] = float(np.mean(nb)) if nb else 0.0
    if np.any(alpha < -tol) or np.any(alpha > 1 + tol):
        i = int(np.argmax(np.maximum(-alpha, alpha - 1)))
        raise PreconditionError(f"mixing weight {alpha[i]:.6g} at index {i} outside [0, 1]", index=i)
    alpha = np.clip(alpha, 0.0, 1.0)

    values, inv = np.unique(q, return_inverse=True)
    kernel = np.zeros((n, values.size + 1))
    kernel[np.arange(n), inv] = alpha
    kernel[:, -1] = 1.0 - alpha
    keep = np.append(kernel[:, :-1].sum(axis=0) > 0, True)
    labels = [f"reveal[{i}]" for i in range(values.size)] + ["generic"]
    labels = [lab for lab, k_ in zip(labels, keep) if k_]
    rs = RatingSystem(tuple(labels), kernel[:, keep])
    table = posterior_prices(rs, q, grid)
    generic = float(table.prices[-1]) if table.defined[-1] else c
    if table.defined[-1] and abs(generic - c) > 1e-6 * max(1.0, abs(c)):
        raise InternalError(f"generic signal price {generic:.9g} differs from crossing value {c:.9g}")
    return FullMixing(alpha, c, cross, rs, generic)
