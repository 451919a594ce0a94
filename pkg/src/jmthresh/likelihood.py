"""Longitudinal and survival log-likelihoods and the joint log-posterior.

The survival part is written as

    log h_i(t) = gamma0 + w_i' delta + r_i(t),
    r_i(t)     = sum_q gamma_q B_q(t) + sum_{g,j} alpha_gj f_gj(t),

so that ``H_i(T) = exp(gamma0 + w_i' delta) * I_i`` with ``I_i = int_0^T exp(r_i)``.
Only ``I_i`` and ``r_i(T_i)`` need the compiled kernel; moves on ``gamma0`` and
``delta`` reuse them.  The kernel integrates ``exp(r_i)`` with Gauss-Legendre
rules on pieces split at every threshold crossing and at the interior spline
knots, so each piece is smooth and the spline is a single polynomial on it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.interpolate import PPoly

from .features import TrajectoryParams, area_feature, current_value_feature
from .model import Dataset, ModelSpec, SubjectData
from .priors import LOG_2PI, log_prior
from .spline import BaselineHazardCoeffs, log_baseline_hazard


@njit(cache=True, inline="always")
def _feature_terms(u, i, a, c, alpha, thr):
    r = 0.0
    for g in range(a.shape[1]):
        ai = a[i, g]
        ci = c[i, g]
        al0 = alpha[g, 0]
        al1 = alpha[g, 1]
        if al0 != 0.0:
            mu = ai + ci * u
            if mu > thr[i, g, 0]:
                r += al0 * mu
        if al1 != 0.0:
            gam = thr[i, g, 1]
            if ci == 0.0:
                area = ai * u if ai > gam else 0.0
            else:
                s = (gam - ai) / ci
                if ci > 0.0:
                    lo = min(max(s, 0.0), u)
                    hi = u
                else:
                    lo = 0.0
                    hi = min(max(s, 0.0), u)
                area = (ai * hi + 0.5 * ci * hi * hi) - (ai * lo + 0.5 * ci * lo * lo)
            r += al1 * area
    return r


@njit(cache=True, inline="always")
def _pp_value(u, k, xs, bhi, pp):
    x = min(u, bhi) - xs[k]
    acc = pp[k, 0]
    for d in range(1, pp.shape[1]):
        acc = acc * x + pp[k, d]
    return acc


@njit(cache=True)
def survival_integrals(upper, a, c, alpha, thr, xs, bhi, pp, glx, glw):
    """Per subject: integral of exp(r_i) over [0, upper_i] and r_i(upper_i).

    The baseline spline is passed in piecewise-polynomial form: interval ``k``
    starts at ``xs[k]`` and carries Horner coefficients ``pp[k]`` (highest power
    first, local variable ``t - xs[k]``); ``bhi`` is the right boundary, beyond
    which the spline is held constant.  ``thr`` holds -inf for NA thresholds and
    features with zero alpha are skipped.
    """
    n, G = a.shape
    I_out = np.empty(n)
    LH_out = np.empty(n)
    nx = xs.size
    pts = np.empty(2 + nx + 2 * G)
    for i in range(n):
        Ti = upper[i]
        m = 0
        pts[m] = 0.0
        m += 1
        for k in range(1, nx):
            if xs[k] < Ti:
                pts[m] = xs[k]
                m += 1
        if bhi < Ti:
            pts[m] = bhi
            m += 1
        for g in range(G):
            ci = c[i, g]
            if ci == 0.0:
                continue
            for j in range(2):
                if alpha[g, j] != 0.0 and thr[i, g, j] > -np.inf:
                    s = (thr[i, g, j] - a[i, g]) / ci
                    if 0.0 < s < Ti:
                        pts[m] = s
                        m += 1
        pts[m] = Ti
        m += 1
        # insertion sort of the few break points
        for p in range(1, m):
            v = pts[p]
            q = p - 1
            while q >= 0 and pts[q] > v:
                pts[q + 1] = pts[q]
                q -= 1
            pts[q + 1] = v
        total = 0.0
        k = 0
        for p in range(m - 1):
            lo = pts[p]
            hi = pts[p + 1]
            if hi <= lo:
                continue
            while k + 1 < nx and xs[k + 1] <= lo:
                k += 1
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            acc = 0.0
            for q in range(glx.size):
                u = mid + half * glx[q]
                r = _pp_value(u, k, xs, bhi, pp) + _feature_terms(u, i, a, c, alpha, thr)
                acc += glw[q] * math.exp(r)
            total += half * acc
        I_out[i] = total
        kk = 0
        while kk + 1 < nx and xs[kk + 1] <= Ti:
            kk += 1
        LH_out[i] = _pp_value(Ti, kk, xs, bhi, pp) + _feature_terms(Ti, i, a, c, alpha, thr)
    return I_out, LH_out


def spline_pieces(knots: np.ndarray, degree: int, coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left ends and Horner coefficients of the spline on each knot interval."""
    nb = knots.size - degree - 1
    pp = PPoly.from_spline((knots, np.asarray(coef, float), degree))
    xs = np.ascontiguousarray(pp.x[degree:nb])
    return xs, np.ascontiguousarray(pp.c[:, degree:nb].T)


class FitContext:
    """Data arrays laid out for vectorized likelihood evaluation."""

    def __init__(self, data: Dataset, spec: ModelSpec):
        if data.G != spec.G:
            raise ValueError(f"dataset has {data.G} risk factors, model declares {spec.G}")
        self.data = data
        self.spec = spec
        self.n = data.n
        self.G = spec.G
        self.T = data.T
        self.event = data.event.astype(float)
        self.n_events = float(self.event.sum())
        idx = [data.covariate_names.index(c) for c in spec.covariates]
        self.Wd = data.W[:, idx] if idx else np.zeros((data.n, 0))
        self.stratum = data.stratum
        self.strata_members = [np.flatnonzero(self.stratum == l) for l in range(4)]
        self.obs = data.obs
        self.n_obs = np.array([o.value.size for o in data.obs])
        self.knots = np.ascontiguousarray(spec.knots.full, dtype=float)
        self.degree = spec.knots.degree
        self.bhi = float(self.knots[-1])
        self.glx, self.glw = np.polynomial.legendre.leggauss(spec.n_gl)
        self.slices = spec.re_slices
        # per-subject Z'Z blocks of the longitudinal design
        R = spec.R
        self.ZtZ = np.zeros((self.n, R, R))
        for g, o in enumerate(data.obs):
            sl = self.slices[g]
            r = spec.factors[g].n_random
            Z = np.ones((o.time.size, r))
            if r == 2:
                Z[:, 1] = o.time
            outer = Z[:, :, None] * Z[:, None, :]
            block = np.zeros((self.n, r, r))
            np.add.at(block, o.subject, outer)
            self.ZtZ[:, sl, sl] = block

    def trajectories(self, beta, b) -> tuple[np.ndarray, np.ndarray]:
        """Intercepts and slopes (n, G) of every subject's mean trajectory."""
        a = np.empty((self.n, self.G))
        c = np.empty((self.n, self.G))
        for g, sl in enumerate(self.slices):
            bg = b[:, sl]
            a[:, g] = beta[g, 0] + bg[:, 0]
            c[:, g] = beta[g, 1] + (bg[:, 1] if bg.shape[1] > 1 else 0.0)
        return a, c

    def subject_thresholds(self, thresholds) -> np.ndarray:
        thr = thresholds[:, :, self.stratum].transpose(2, 0, 1)
        return np.where(np.isnan(thr), -np.inf, thr)

    def survival_parts(self, state, a=None, c=None, alpha=None, thr=None, gammas=None, upper=None):
        if a is None:
            a, c = self.trajectories(state.beta, state.b)
        alpha = state.alpha if alpha is None else alpha
        thr = self.subject_thresholds(state.thresholds) if thr is None else thr
        gammas = state.gammas if gammas is None else gammas
        upper = self.T if upper is None else upper
        xs, pp = spline_pieces(self.knots, self.degree, gammas)
        return survival_integrals(np.ascontiguousarray(upper, dtype=float), a, c,
                                  np.ascontiguousarray(alpha, dtype=float), np.ascontiguousarray(thr),
                                  xs, self.bhi, pp, self.glx, self.glw)

    def survival_loglik(self, gamma0, delta, I, LH) -> np.ndarray:
        eta = gamma0 + self.Wd @ delta
        with np.errstate(over="ignore", invalid="ignore"):
            return self.event * (eta + LH) - np.exp(eta) * I

    def longitudinal_loglik(self, a, c, sigma2) -> np.ndarray:
        """(n, G) Gaussian log-likelihood of each subject's records."""
        out = np.zeros((self.n, self.G))
        for g, o in enumerate(self.obs):
            if o.value.size == 0:
                continue
            r = o.value - a[o.subject, g] - c[o.subject, g] * o.time
            ll = -0.5 * r * r / sigma2[g] - 0.5 * (LOG_2PI + math.log(sigma2[g]))
            out[:, g] = np.bincount(o.subject, weights=ll, minlength=self.n)
        return out

    def re_logprior(self, b, D) -> np.ndarray:
        L = np.linalg.cholesky(D)
        z = np.linalg.solve(L, b.T)
        return (-0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L)))
                - 0.5 * D.shape[0] * LOG_2PI)


# scalar API ---------------------------------------------------------------


def _trajectory(state, spec: ModelSpec, g: int, row: int) -> TrajectoryParams:
    return TrajectoryParams(state.beta[g], state.b[row, spec.re_slices[g]])


def longitudinal_loglik(s: SubjectData, g: int, state, spec: ModelSpec, row: int = 0) -> float:
    sigma2 = float(state.sigma2[g])
    if not sigma2 > 0:
        raise ValueError("sigma_g must be positive")
    t, y = s.obs[g]
    tp = _trajectory(state, spec, g, row)
    r = np.asarray(y, float) - np.polynomial.polynomial.polyval(np.asarray(t, float), tp.coefficients)
    return float(np.sum(-0.5 * r * r / sigma2 - 0.5 * math.log(2 * math.pi * sigma2)))


def _covariates(s: SubjectData, spec: ModelSpec) -> np.ndarray:
    names = list(s.covariate_names)
    return np.array([s.w[names.index(c)] for c in spec.covariates], dtype=float)


def log_hazard(s: SubjectData, t: float, state, spec: ModelSpec, row: int = 0) -> float:
    """Log hazard of one subject at time ``t`` assembled term by term."""
    from .model import stratum_index

    out = float(log_baseline_hazard(t, BaselineHazardCoeffs(state.gamma0, state.gammas), spec.knots))
    out += float(_covariates(s, spec) @ state.delta)
    l = int(stratum_index(s.sex, s.race))
    alpha = state.alpha
    for g in range(spec.G):
        tp = _trajectory(state, spec, g, row)
        gv, ga = state.thresholds[g, 0, l], state.thresholds[g, 1, l]
        if alpha[g, 0] != 0:
            out += alpha[g, 0] * current_value_feature(tp, t, None if np.isnan(gv) else gv)
        if alpha[g, 1] != 0:
            out += alpha[g, 1] * area_feature(tp, t, None if np.isnan(ga) else ga)
    return out


def log_hazard_grid(s: SubjectData, times: np.ndarray, state, spec: ModelSpec, row: int = 0) -> np.ndarray:
    """Vectorized log hazard of one (linear-trajectory) subject on a time grid."""
    from scipy.interpolate import BSpline

    from .model import stratum_index

    kv = spec.knots
    times = np.asarray(times, dtype=float)
    tc = np.clip(times, kv.boundary[0], kv.boundary[1])
    out = state.gamma0 + BSpline(kv.full, state.gammas, kv.degree, extrapolate=False)(tc)
    out = out + float(_covariates(s, spec) @ state.delta)
    l = int(stratum_index(s.sex, s.race))
    alpha = state.alpha
    for g in range(spec.G):
        coefs = _trajectory(state, spec, g, row).coefficients
        a, c = coefs[0], coefs[1]
        mu = a + c * times
        for j in range(2):
            if alpha[g, j] == 0:
                continue
            gam = state.thresholds[g, j, l]
            gam = -np.inf if np.isnan(gam) else gam
            if j == 0:
                out = out + alpha[g, 0] * np.where(mu > gam, mu, 0.0)
            else:
                if c == 0:
                    area = np.where(a > gam, a * times, 0.0)
                else:
                    s_star = (gam - a) / c
                    if c > 0:
                        lo, hi = np.clip(s_star, 0, times), times
                    else:
                        lo, hi = np.zeros_like(times), np.clip(s_star, 0, times)
                    area = (a * hi + 0.5 * c * hi ** 2) - (a * lo + 0.5 * c * lo ** 2)
                out = out + alpha[g, 1] * area
    return out


def _single_context(s: SubjectData, state, spec: ModelSpec, row: int, upper: float):
    a = np.empty((1, spec.G))
    c = np.empty((1, spec.G))
    for g in range(spec.G):
        coefs = _trajectory(state, spec, g, row).coefficients
        if coefs.size > 2:
            raise ValueError("the survival kernel requires linear trajectories")
        a[0, g], c[0, g] = coefs[0], coefs[1]
    from .model import stratum_index

    l = int(stratum_index(s.sex, s.race))
    thr = state.thresholds[:, :, l][None]
    thr = np.where(np.isnan(thr), -np.inf, thr)
    glx, glw = np.polynomial.legendre.leggauss(spec.n_gl)
    xs, pp = spline_pieces(np.asarray(spec.knots.full, float), spec.knots.degree, state.gammas)
    return survival_integrals(np.array([upper], float), a, c, np.ascontiguousarray(state.alpha),
                              np.ascontiguousarray(thr), xs, float(spec.knots.boundary[1]), pp, glx, glw)


def cumulative_hazard(s: SubjectData, state, spec: ModelSpec, row: int = 0, upper: float | None = None) -> float:
    T = s.T if upper is None else upper
    if T <= 0:
        return 0.0
    I, _ = _single_context(s, state, spec, row, T)
    eta = state.gamma0 + float(_covariates(s, spec) @ state.delta)
    return float(math.exp(eta) * I[0])


def survival_loglik(s: SubjectData, state, spec: ModelSpec, row: int = 0) -> float:
    H = cumulative_hazard(s, state, spec, row)
    if s.event:
        return log_hazard(s, s.T, state, spec, row) - H
    return -H


def joint_log_posterior(data: Dataset, state, spec: ModelSpec, ctx: FitContext | None = None) -> float:
    """Unnormalized log posterior; any non-finite term gives -inf."""
    with np.errstate(all="ignore"):
        try:
            total = log_prior(state, spec)
            if data.n:
                ctx = ctx or FitContext(data, spec)
                a, c = ctx.trajectories(state.beta, state.b)
                if np.any(state.sigma2 <= 0):
                    return -math.inf
                total += float(np.sum(ctx.longitudinal_loglik(a, c, state.sigma2)))
                I, LH = ctx.survival_parts(state, a, c)
                total += float(np.sum(ctx.survival_loglik(state.gamma0, state.delta, I, LH)))
                total += float(np.sum(ctx.re_logprior(state.b, state.D)))
        except (np.linalg.LinAlgError, ValueError, ZeroDivisionError):
            return -math.inf
    return total if np.isfinite(total) else -math.inf
