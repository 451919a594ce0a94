"""Subject mean trajectories and the two threshold features entering the hazard.

A threshold is either a real number or NA.  NA is written as ``None`` or NaN in
the scalar API and means "feature present, no threshold": the indicator is
identically one and the feature is the plain current value or cumulative area.

Designs are polynomial in time: ``x(t) = [1, t, ..., t^p]`` with ``p + 1`` the
length of ``beta`` and likewise ``z(t)`` for the random effects.  Linear
trajectories (the default ``[1, t]`` design) get exact crossing times and a
closed-form area; higher degrees fall back to adaptive quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit
from scipy import integrate


class FeatureType(IntEnum):
    CURRENT_VALUE = 1
    AREA_ABOVE = -1


FEATURE_TYPES = (FeatureType.CURRENT_VALUE, FeatureType.AREA_ABOVE)
FEATURE_LABELS = {FeatureType.CURRENT_VALUE: "Value", FeatureType.AREA_ABOVE: "Area"}


class NonlinearTrajectoryError(ValueError):
    """The trajectory is not linear in time; use the quadrature path."""


def is_na(gamma) -> bool:
    return gamma is None or (isinstance(gamma, float) and math.isnan(gamma)) or (
        isinstance(gamma, np.floating) and np.isnan(gamma)
    )


@dataclass
class TrajectoryParams:
    beta: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))

    @property
    def coefficients(self) -> np.ndarray:
        """Polynomial coefficients of mu(t) in increasing powers of t."""
        out = np.zeros(max(self.beta.size, self.b.size, 2))
        out[: self.beta.size] += self.beta
        out[: self.b.size] += self.b
        # trailing zeros would make a linear trajectory look quadratic
        while out.size > 2 and out[-1] == 0.0:
            out = out[:-1]
        return out

    @property
    def is_linear(self) -> bool:
        return self.coefficients.size <= 2


def eval_mu(tp: TrajectoryParams, t):
    return np.polynomial.polynomial.polyval(t, tp.coefficients)


def current_value_feature(tp: TrajectoryParams, t: float, gamma) -> float:
    mu = float(eval_mu(tp, t))
    if is_na(gamma):
        return mu
    return mu if mu > gamma else 0.0


def crossing_times(tp: TrajectoryParams, gamma: float, window) -> list[float]:
    """Times in ``window`` where mu(s) = gamma (linear trajectories only)."""
    if not tp.is_linear:
        raise NonlinearTrajectoryError("crossing times are only closed-form for linear designs")
    lo, hi = float(window[0]), float(window[1])
    a, c = tp.coefficients[:2]
    if c == 0.0:
        return []
    s = (gamma - a) / c
    return [float(s)] if lo <= s <= hi else []


@njit(cache=True, inline="always")
def linear_area_above(a, c, gamma, t):
    """Integral over [0, t] of (a + c s) 1{a + c s > gamma}; gamma=-inf means NA."""
    if t <= 0.0:
        return 0.0
    if c == 0.0:
        return a * t if a > gamma else 0.0
    s = (gamma - a) / c
    if c > 0.0:
        lo = min(max(s, 0.0), t)
        hi = t
    else:
        lo = 0.0
        hi = min(max(s, 0.0), t)
    return (a * hi + 0.5 * c * hi * hi) - (a * lo + 0.5 * c * lo * lo)


@njit(cache=True)
def linear_value_above(a, c, gamma, t):
    mu = a + c * t
    return mu if mu > gamma else 0.0


def _real_roots_in(coefs: np.ndarray, level: float, lo: float, hi: float) -> list[float]:
    shifted = coefs.copy()
    shifted[0] -= level
    roots = np.polynomial.polynomial.polyroots(shifted)
    real = roots[np.abs(roots.imag) < 1e-12].real
    return sorted(float(r) for r in real if lo < r < hi)


def area_feature(tp: TrajectoryParams, t: float, gamma) -> float:
    if t <= 0:
        return 0.0
    g = -math.inf if is_na(gamma) else float(gamma)
    if tp.is_linear:
        a, c = tp.coefficients[:2]
        return float(linear_area_above(a, c, g, float(t)))
    coefs = tp.coefficients
    if g == -math.inf:
        anti = np.polynomial.polynomial.polyint(coefs)
        return float(np.polynomial.polynomial.polyval(t, anti))

    def integrand(s):
        mu = np.polynomial.polynomial.polyval(s, coefs)
        return mu if mu > g else 0.0

    breaks = _real_roots_in(coefs, g, 0.0, float(t))
    val, _ = integrate.quad(integrand, 0.0, float(t), points=breaks or None, limit=200,
                            epsabs=1e-12, epsrel=1e-12)
    return float(val)
