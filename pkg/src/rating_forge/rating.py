"""Finite rating systems, posterior prices and the induced garbling matrix."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonMonotoneWarning, ValidationError
from .foundation import TypeGrid

ROW_TOL = 1e-12
GARBLE_TOL = 1e-10
MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RatingSystem:
    """Signal labels and a kernel with one row pi(. | q_i) per grid type."""

    signals: tuple
    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float).copy()
        if k.ndim != 2 or k.shape[1] != len(self.signals):
            raise ValidationError("kernel must be N x M with one column per signal")
        if np.any(k < -ROW_TOL) or not np.all(np.isfinite(k)):
            raise ValidationError("kernel entries must be finite and nonnegative")
        rows = k.sum(axis=1)
        bad = np.nonzero(np.abs(rows - 1.0) > ROW_TOL)[0]
        if bad.size:
            raise ValidationError(f"kernel row {int(bad[0])} sums to {rows[bad[0]]!r}")
        k = np.clip(k, 0.0, None)
        k.flags.writeable = False
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "signals", tuple(str(s) for s in self.signals))

    @property
    def n_types(self) -> int:
        return self.kernel.shape[0]

    def to_dict(self) -> dict:
        return {"signals": list(self.signals), "kernel": self.kernel.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RatingSystem":
        extra = set(d) - {"signals", "kernel"}
        if extra:
            raise ValidationError(f"unknown rating fields {sorted(extra)}")
        return cls(tuple(d["signals"]), np.asarray(d["kernel"], dtype=float))


def full_information(n: int) -> RatingSystem:
    return RatingSystem(tuple(f"reveal[{i}]" for i in range(n)), np.eye(n))


def no_information(n: int) -> RatingSystem:
    return RatingSystem(("pool",), np.ones((n, 1)))


def mix_ratings(systems, probs) -> RatingSystem:
    """Randomize over rating systems; signals stay distinct per component."""
    probs = np.asarray(probs, dtype=float)
    labels, blocks = [], []
    for c, (rs, p) in enumerate(zip(systems, probs)):
        labels.extend(f"{c}:{s}" for s in rs.signals)
        blocks.append(p * rs.kernel)
    return RatingSystem(tuple(labels), np.hstack(blocks))


@dataclass(frozen=True, eq=False)
class GarblingMatrix:
    """Second-order expectation operator A with A e = e and f^T A = f^T."""

    matrix: np.ndarray
    weights: np.ndarray
    flagged_rows: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float).copy()
        f = np.asarray(self.weights, dtype=float).copy()
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != f.size:
            raise ValidationError("garbling must be N x N and aligned with the weights")
        a.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "weights", f)

    def violations(self) -> tuple[float, float, float]:
        """(row-sum error, column-balance error, most negative entry)."""
        a, f = self.matrix, self.weights
        return (
            float(np.max(np.abs(a.sum(axis=1) - 1.0))),
            float(np.max(np.abs(f @ a - f))),
            float(min(0.0, a.min())),
        )

    def is_f_stochastic(self, tol: float = GARBLE_TOL) -> bool:
        rows, cols, neg = self.violations()
        return rows <= tol and cols <= tol and neg >= -tol

    def __matmul__(self, other):
        if isinstance(other, GarblingMatrix):
            return GarblingMatrix(self.matrix @ other.matrix, self.weights)
        return self.matrix @ np.asarray(other, dtype=float)


@dataclass(frozen=True, eq=False)
class PriceTable:
    """Posterior mean price and marginal probability per signal."""

    prices: np.ndarray
    marginals: np.ndarray
    defined: np.ndarray

    def to_dict(self, signals=None) -> dict:
        out = {
            "prices": [float(p) if d else None for p, d in zip(self.prices, self.defined)],
            "marginals": self.marginals.tolist(),
        }
        if signals is not None:
            out["signals"] = list(signals)
        return out


def _check_aligned(rs: RatingSystem, grid: TypeGrid):
    if rs.n_types != grid.n:
        raise ValidationError(f"rating system has {rs.n_types} rows, grid has {grid.n} types")


def posterior_prices(rs: RatingSystem, q, grid: TypeGrid) -> PriceTable:
    """p(s) = E[q | s]; signals never sent are flagged and priced nan."""
    _check_aligned(rs, grid)
    q = np.asarray(q, dtype=float)
    w = rs.kernel * grid.weights[:, None]
    marg = w.sum(axis=0)
    defined = marg > 0
    if not np.any(defined):
        raise ValidationError("no signal has positive probability")
    prices = np.full(marg.size, np.nan)
    prices[defined] = (q @ w[:, defined]) / marg[defined]
    return PriceTable(prices, marg, defined)


def garbling_from_rating(rs: RatingSystem, grid: TypeGrid) -> GarblingMatrix:
    """A_ij = sum_s pi(s|i) pi(s|j) f_j / P(s).

    This equals diag(f)^-1 sum_s (pi_s f)(pi_s f)^T / P(s) when f_i > 0 and stays
    well defined for zero-mass types, whose rows are flagged.
    """
    _check_aligned(rs, grid)
    if np.any(rs.kernel.sum(axis=1) <= 0):
        raise ValidationError("every type needs a signal with positive kernel mass")
    f = grid.weights
    w = rs.kernel * f[:, None]
    marg = w.sum(axis=0)
    live = marg > 0
    a = (rs.kernel[:, live] / marg[live]) @ w[:, live].T
    lost = rs.kernel[:, ~live].sum(axis=1)
    # signals only zero-mass types send carry no price; treat them as the prior mean
    a += lost[:, None] * f[None, :]
    dead = np.nonzero(f <= 0)[0]
    return GarblingMatrix(a, f, tuple(int(i) for i in dead))


def signaled_qualities(A, q, warn: bool = True) -> np.ndarray:
    """qbar = A q; warns (NonMonotoneWarning) when the result decreases."""
    mat = A.matrix if isinstance(A, GarblingMatrix) else np.asarray(A, dtype=float)
    q = np.asarray(q, dtype=float)
    if mat.shape[1] != q.size:
        raise ValidationError("garbling and schedule sizes differ")
    qbar = mat @ q
    if warn and np.any(np.diff(qbar) < -1e-12):
        warnings.warn("signaled qualities are not monotone", NonMonotoneWarning, stacklevel=2)
    return qbar


def double_expectation(rs: RatingSystem, q, grid: TypeGrid) -> np.ndarray:
    """sum_s pi(s|q_i) p(s), computed without the garbling matrix."""
    table = posterior_prices(rs, q, grid)
    p = np.where(table.defined, table.prices, 0.0)
    return rs.kernel @ p


def check_separating(rs: RatingSystem, k: int, tol: float = MASS_TOL) -> bool:
    """True iff no signal is sent by both types 0..k and types k+1..N-1."""
    n = rs.n_types
    if not 0 <= k < n - 1:
        raise ValidationError(f"cutoff index must lie in [0, {n - 2}]")
    low = rs.kernel[: k + 1].max(axis=0) > tol
    high = rs.kernel[k + 1:].max(axis=0) > tol
    return not bool(np.any(low & high))
