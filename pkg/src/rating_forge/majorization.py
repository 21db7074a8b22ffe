"""F-majorization between a quality schedule and a signaled-quality schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MonotonicityError, ValidationError
from .foundation import EQ_TOL, TypeGrid


@dataclass(frozen=True, eq=False)
class MajorizationReport:
    """Partial sums D_k = sum_{j<=k} f_j (qbar_j - q_j) and what they imply.

    ``binding`` holds 0-based indices k with |D_k| <= tol; k = N-1 is the
    total-mass condition. ``tie_failure`` is the first index of a run of tied
    qualities whose signaled qualities differ; such a pair is never
    implementable, whatever the partial sums say.
    """

    holds: bool
    gaps: np.ndarray
    binding: tuple
    total: float
    tol: float
    first_failure: int | None = None
    tie_failure: int | None = None

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "gaps": self.gaps.tolist(),
            "binding": list(self.binding),
            "total": self.total,
            "tie_failure": self.tie_failure,
        }


def first_decrease(x, tol: float = EQ_TOL) -> int | None:
    bad = np.nonzero(np.diff(np.asarray(x, dtype=float)) < -tol)[0]
    return int(bad[0]) if bad.size else None


def _weights(grid) -> np.ndarray:
    return grid.weights if isinstance(grid, TypeGrid) else np.asarray(grid, dtype=float)


def _tie_failure(q, qbar, tol: float) -> int | None:
    scale = tol * max(1.0, float(np.max(np.abs(q))))
    start = 0
    for i in range(1, q.size + 1):
        if i == q.size or q[i] - q[i - 1] > scale:
            if np.ptp(qbar[start:i]) > scale:
                return start
            start = i
    return None


def check_majorization(q, qbar, grid, tol: float = EQ_TOL,
                       check_monotone: bool = True) -> MajorizationReport:
    """Test q >=_F qbar.

    ``grid`` may be a TypeGrid or a bare weight vector. With ``check_monotone``
    off, the partial-sum test runs on arbitrary schedules (used to check that
    any garbling of an increasing q is majorized) and the tie rule is skipped.
    Tied qualities must carry equal signaled qualities.
    """
    q = np.asarray(q, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    f = _weights(grid)
    if q.shape != f.shape or qbar.shape != f.shape:
        raise ValidationError("schedules must align with the grid")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qbar))):
        raise ValidationError("schedules must be finite")
    if check_monotone:
        for name, x in (("q", q), ("qbar", qbar)):
            i = first_decrease(x, tol)
            if i is not None:
                raise MonotonicityError(
                    f"{name} decreases between indices {i} and {i + 1}", index=i)
    gaps = np.cumsum(f * (qbar - q))
    binding = tuple(int(k) for k in np.nonzero(np.abs(gaps) <= tol)[0])
    neg = np.nonzero(gaps < -tol)[0]
    first = int(neg[0]) if neg.size else None
    total = float(gaps[-1])
    if first is None and abs(total) > tol:
        first = q.size - 1
    ties = _tie_failure(q, qbar, tol) if check_monotone else None
    if ties is not None and (first is None or ties < first):
        first = ties
    holds = first is None
    gaps.flags.writeable = False
    return MajorizationReport(holds, gaps, binding, total, tol, first, ties)


def binding_points(report: MajorizationReport, q) -> list[float]:
    """Quality cutoffs where any implementing rating system must separate.

    A cutoff at k separates types 0..k from k+1..N-1. Indices inside a run of
    tied qualities are skipped since tied types cannot be told apart.
    """
    if not report.holds:
        raise ValidationError("binding points need a majorization report that holds")
    q = np.asarray(q, dtype=float)
    n = q.size
    return [float(q[k]) for k in report.binding if k < n - 1 and q[k + 1] > q[k]]


def is_majorized(q, qbar, grid, tol: float = EQ_TOL) -> bool:
    try:
        return check_majorization(q, qbar, grid, tol).holds
    except MonotonicityError:
        return False
