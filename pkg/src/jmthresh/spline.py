"""B-spline basis for the log baseline hazard.

The basis is built on a clamped (open-uniform at the ends) knot vector, so the
first basis function equals one at the left boundary and the last one equals one
at the right boundary.  Evaluation uses the triangular Cox-de Boor scheme and is
shared with the compiled survival kernel through :func:`basis_funs`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit


class KnotError(ValueError):
    """Raised when a knot configuration cannot be built."""


@dataclass(frozen=True)
class KnotVector:
    degree: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]
    full: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lo, hi = float(self.boundary[0]), float(self.boundary[1])
        if self.degree < 0:
            raise KnotError("degree must be non-negative")
        if not hi > lo:
            raise KnotError(f"empty boundary [{lo}, {hi}]")
        interior = tuple(float(k) for k in self.interior_knots)
        if any(k <= lo or k >= hi for k in interior):
            raise KnotError("interior knots must lie strictly inside the boundary")
        if any(b < a for a, b in zip(interior, interior[1:])):
            raise KnotError("interior knots must be nondecreasing")
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "boundary", (lo, hi))
        full = np.concatenate(
            [np.full(self.degree + 1, lo), np.asarray(interior, float), np.full(self.degree + 1, hi)]
        )
        full.setflags(write=False)
        object.__setattr__(self, "full", full)

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "interior_knots": list(self.interior_knots),
            "boundary": list(self.boundary),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnotVector":
        return cls(int(d["degree"]), tuple(d["interior_knots"]), tuple(d["boundary"]))


@dataclass
class BaselineHazardCoeffs:
    gamma0: float
    gammas: np.ndarray

    def __post_init__(self) -> None:
        self.gammas = np.asarray(self.gammas, dtype=float)
        if not (np.isfinite(self.gamma0) and np.all(np.isfinite(self.gammas))):
            raise ValueError("baseline hazard coefficients must be finite")


def build_knots(
    event_times, Q: int, degree: int = 3, t_max: float | None = None
) -> KnotVector:
    """Place ``Q - degree - 1`` interior knots at equally spaced quantiles.

    Quantiles are taken over the uncensored event times; the boundary is
    ``[0, t_max]`` where ``t_max`` defaults to the largest event time (pass the
    largest observed time, censored or not, when fitting).
    """
    times = np.asarray(event_times, dtype=float)
    if times.size == 0:
        raise KnotError("no event times to place knots at")
    if Q < degree + 1:
        raise KnotError(f"Q={Q} is smaller than degree+1={degree + 1}")
    hi = float(times.max()) if t_max is None else float(t_max)
    n_int = Q - degree - 1
    if n_int == 0:
        return KnotVector(degree, (), (0.0, hi))
    probs = np.arange(1, n_int + 1) / (n_int + 1)
    knots = np.quantile(times, probs)
    if np.unique(times).size < n_int or np.any(np.diff(knots) <= 0) or knots[0] <= 0 or knots[-1] >= hi:
        raise KnotError(
            f"{np.unique(times).size} distinct event time(s) cannot support {n_int} interior knots"
        )
    return KnotVector(degree, tuple(knots), (0.0, hi))


@njit(cache=True, inline="always")
def find_span(t, knots, degree):
    # index s with knots[s] <= t < knots[s+1], restricted to the non-degenerate range
    n = knots.size - degree - 1
    if t >= knots[n]:
        return n - 1
    if t <= knots[degree]:
        return degree
    lo = degree
    hi = n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if t < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


@njit(cache=True, inline="always")
def basis_funs_buf(span, t, degree, knots, out, left, right):
    """Fill ``out[0..degree]`` with the nonzero basis values on ``span``."""
    out[0] = 1.0
    for j in range(1, degree + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = out[r] / (right[r + 1] + left[j - r])
            out[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        out[j] = saved


@njit(cache=True)
def basis_funs(span, t, degree, knots, out):
    basis_funs_buf(span, t, degree, knots, out, np.empty(degree + 1), np.empty(degree + 1))


@njit(cache=True, inline="always")
def _cubic_value(u, knots, coef):
    # triangular scheme unrolled for degree 3; scalars only so nothing aliases
    s = find_span(u, knots, 3)
    l1 = u - knots[s]
    r1 = knots[s + 1] - u
    l2 = u - knots[s - 1]
    r2 = knots[s + 2] - u
    l3 = u - knots[s - 2]
    r3 = knots[s + 3] - u
    tmp = 1.0 / (r1 + l1)
    n0 = r1 * tmp
    n1 = l1 * tmp
    tmp = n0 / (r1 + l2)
    m0 = r1 * tmp
    saved = l2 * tmp
    tmp = n1 / (r2 + l1)
    m1 = saved + r2 * tmp
    m2 = l1 * tmp
    tmp = m0 / (r1 + l3)
    p0 = r1 * tmp
    saved = l3 * tmp
    tmp = m1 / (r2 + l2)
    p1 = saved + r2 * tmp
    saved = l2 * tmp
    tmp = m2 / (r3 + l1)
    p2 = saved + r3 * tmp
    p3 = l1 * tmp
    return coef[s - 3] * p0 + coef[s - 2] * p1 + coef[s - 1] * p2 + coef[s] * p3


@njit(cache=True, inline="always")
def spline_value(t, knots, degree, coef):
    """sum_q coef[q] * B_q(t) with ``t`` clamped into the boundary."""
    u = min(max(t, knots[0]), knots[knots.size - 1])
    if degree == 3:
        return _cubic_value(u, knots, coef)
    span = find_span(u, knots, degree)
    vals = np.empty(degree + 1)
    basis_funs(span, u, degree, knots, vals)
    acc = 0.0
    for r in range(degree + 1):
        acc += coef[span - degree + r] * vals[r]
    return acc


@njit(cache=True)
def _design_rows(ts, knots, degree, nb, out):
    vals = np.empty(degree + 1)
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    lo = knots[0]
    hi = knots[knots.size - 1]
    for i in range(ts.size):
        t = min(max(ts[i], lo), hi)
        span = find_span(t, knots, degree)
        basis_funs_buf(span, t, degree, knots, vals, left, right)
        for r in range(degree + 1):
            out[i, span - degree + r] = vals[r]


def eval_basis(t, kv: KnotVector) -> np.ndarray:
    """Basis values at ``t``; shape ``(Q,)`` for a scalar, ``(m, Q)`` for an array.

    Points outside the boundary are evaluated at the nearest boundary point.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((ts.size, kv.n_basis))
    _design_rows(ts.ravel(), kv.full, kv.degree, kv.n_basis, out)
    if np.ndim(t) == 0:
        return out[0]
    return out.reshape(np.shape(t) + (kv.n_basis,))


def log_baseline_hazard(t, coeffs: BaselineHazardCoeffs, kv: KnotVector):
    if coeffs.gammas.shape != (kv.n_basis,):
        raise ValueError(
            f"expected {kv.n_basis} spline coefficients, got {coeffs.gammas.shape[0]}"
        )
    return coeffs.gamma0 + eval_basis(t, kv) @ coeffs.gammas
