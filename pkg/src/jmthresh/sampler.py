"""Metropolis-within-Gibbs sampler.

One sweep visits four blocks in a fixed order:

* longitudinal: fixed effects, residual variances, random-effects covariance and
  the random effects themselves;
* survival: (gamma0, delta), the spline coefficients and their penalty;
* association: group in/out toggles, pattern moves, refreshes of the active
  directions and magnitudes, and the conjugate hyperparameter updates;
* thresholds: NA <-> real mode jumps, moves within the real mode, the threshold
  regression coefficients, the prior precision and the NA probabilities.

Moves whose proposal would be exact without the survival term are used as
independence proposals and corrected by the survival likelihood ratio; moves
that only touch prior terms never call the survival kernel.  Point masses (an
excluded group, an unselected feature, an NA threshold) are entered and left by
birth/death moves that draw the new coordinates from their conditional prior,
so the acceptance ratios reduce to likelihood ratios times prior odds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .likelihood import FitContext
from .model import N_STRATA, ConfigError, Dataset, ModelSpec
from .priors import (LOG_2PI, dirichlet_concentration, halfnormal_logpdf, log_normal_mass,
                     pattern_masks, sample_truncnorm, threshold_prior_means, truncnorm_logpdf)
from .state import ParameterState, thresholds_shape

LONGITUDINAL_MOVES = ("beta", "sigma2", "D", "b")
SURVIVAL_MOVES = ("gamma0_delta", "spline", "lambda")
ASSOCIATION_MOVES = ("group", "pattern", "swap", "d_tau", "d", "scale", "pi_group", "q", "s2")
THRESHOLD_MOVES = ("thr_jump", "thr_within", "thr_coef", "pi_na")
ALL_MOVES = LONGITUDINAL_MOVES + SURVIVAL_MOVES + ASSOCIATION_MOVES + THRESHOLD_MOVES
DEFAULT_MOVES = tuple(m for m in ALL_MOVES if m != "d")
# sd of the random log factor on the magnitude in the value/area swap
SWAP_LOG_SD = 0.5

STORED_FIELDS = ("beta", "sigma2", "D", "delta", "gamma0", "gammas", "lam", "group_in", "d",
                 "tau", "pattern", "pi_group", "q", "s2", "thresholds", "m", "tau2", "pi_na")


class InitializationError(RuntimeError):
    """The chain cannot be started from the data."""


@dataclass
class SamplerConfig:
    n_iter: int = 2000
    burn_in: int = 1000
    thin: int = 1
    n_chains: int = 1
    rng_seed: int = 0
    target_accept: float = 0.3
    parallel_chains: bool = False
    moves: tuple = DEFAULT_MOVES
    use_likelihood: bool = True
    store_b: bool = False
    overdispersed: bool = True
    threshold_rw_frac: float = 0.8  # remaining proposals are independence draws from the prior
    threshold_rw_sd: float = 0.25  # in units of C * sigma_g

    def __post_init__(self) -> None:
        self.moves = tuple(self.moves)
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be at least 1")
        unknown = set(self.moves) - set(ALL_MOVES)
        if unknown:
            raise ConfigError(f"unknown moves {sorted(unknown)}; available: {list(ALL_MOVES)}")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["moves"] = list(self.moves)
        return d


class _Adapter:
    """Robbins-Monro tuning of a log proposal scale, switched off after burn-in."""

    def __init__(self, target: float, scale: float = 1.0):
        self.target = target
        self.log_scale = math.log(scale)
        self.t = 0

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def update(self, acc_prob: float, adapting: bool) -> None:
        if adapting:
            self.t += 1
            self.log_scale += (acc_prob - self.target) / self.t ** 0.6


@dataclass
class _Counter:
    accepted: float = 0.0
    proposed: float = 0.0

    def add(self, acc, n=1) -> None:
        self.accepted += float(acc)
        self.proposed += float(n)

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def _accept(rng, log_ratio) -> np.ndarray:
    """Vectorized Metropolis decision; NaN ratios reject."""
    log_ratio = np.nan_to_num(np.asarray(log_ratio, dtype=float), nan=-np.inf)
    return np.log(rng.uniform(size=log_ratio.shape)) < log_ratio


def _least_squares_start(data: Dataset, g: int) -> tuple[np.ndarray, float]:
    o = data.obs[g]
    if o.value.size < 2:
        raise InitializationError(f"risk factor '{data.factor_names[g]}' has fewer than two records")
    X = np.column_stack([np.ones_like(o.time), o.time])
    if np.linalg.matrix_rank(X) < 2:
        raise InitializationError(
            f"risk factor '{data.factor_names[g]}': all records share one time, slope not estimable")
    coef, *_ = np.linalg.lstsq(X, o.value, rcond=None)
    resid = o.value - X @ coef
    s2 = float(resid @ resid / max(o.value.size - 2, 1))
    return coef, max(s2, 1e-8)


def init_state(spec: ModelSpec, data: Dataset, rng: np.random.Generator,
               overdisperse: bool = False) -> ParameterState:
    """Deterministic start (optionally jittered for over-dispersed chains).

    Feature magnitudes start at 0.1 divided by the typical size of the feature,
    so that every feature moves the log hazard by about 0.1 at the start.
    """
    G, J, R, Q = spec.G, spec.J, spec.R, spec.Q
    h = spec.hyper
    bm, _ = spec.beta_prior()
    beta = bm.copy()
    sigma2 = np.ones(G)
    feat_scale = np.ones((G, J))
    for g in range(G):
        if data.n and data.obs[g].value.size:
            beta[g], sigma2[g] = _least_squares_start(data, g)
            mu_bar = abs(float(np.mean(data.obs[g].value))) or 1.0
            feat_scale[g] = (mu_bar, mu_bar * max(float(np.mean(data.T)), 1e-8))
    n_ev = float(data.event.sum()) if data.n else 0.0
    exposure = float(data.T.sum()) if data.n else 0.0
    gamma0 = math.log(max(n_ev, 0.5) / exposure) if exposure > 0 else h.gamma0_mean
    masks = pattern_masks(J)
    state = ParameterState(
        beta=beta, sigma2=sigma2, b=np.zeros((data.n, R)), D=np.eye(R),
        delta=np.zeros(len(spec.covariates)), gamma0=gamma0, gammas=np.zeros(Q),
        lam=h.lambda_shape / h.lambda_rate, group_in=np.ones(G, bool), d=np.ones((G, J)),
        tau=0.1 / feat_scale, pattern=np.full(G, masks.shape[0] - 1),
        pi_group=np.full(G, 0.5), q=np.tile(dirichlet_concentration(J, h.a_dirichlet), (G, 1)),
        s2=float(np.mean((0.1 / feat_scale) ** 2)), thresholds=np.empty(thresholds_shape(spec)),
        m=np.zeros((G, 3)), tau2=np.ones(G), pi_na=np.full((G, J), 0.5))
    state.q /= state.q.sum(axis=1, keepdims=True)
    for g, f in enumerate(spec.factors):
        state.thresholds[g] = min(max(f.gv, f.lower), f.upper)
    if overdisperse:
        state.beta = state.beta + rng.normal(0.0, 0.05, size=beta.shape) * np.abs(beta)
        state.sigma2 = state.sigma2 * np.exp(rng.normal(0.0, 0.3, size=G))
        state.gamma0 += float(rng.normal(0.0, 0.5))
        state.delta = rng.normal(0.0, 0.2, size=state.delta.shape)
        state.d = rng.choice([-1.0, 1.0], size=(G, J)) * np.exp(rng.normal(0, 0.3, size=(G, J)))
        state.tau = state.tau * np.exp(rng.normal(0.0, 0.5, size=(G, J)))
        for g, f in enumerate(spec.factors):
            half = 0.5 * (f.upper - f.lower)
            jit = rng.uniform(-0.5, 0.5, size=state.thresholds[g].shape) * min(half, 2 * h.C * f.sd)
            state.thresholds[g] = np.clip(state.thresholds[g] + jit, f.lower, f.upper)
    return state


class Chain:
    """One Markov chain with cached likelihood pieces."""

    def __init__(self, spec: ModelSpec, data: Dataset, cfg: SamplerConfig,
                 rng: np.random.Generator, state: ParameterState):
        self.spec = spec
        self.cfg = cfg
        self.rng = rng
        self.data = data if cfg.use_likelihood else data.subset(np.zeros(0, dtype=np.int64))
        self.ctx = FitContext(self.data, spec)
        self.s = state.copy()
        if self.s.b.shape[0] != self.ctx.n:
            self.s.b = np.zeros((self.ctx.n, spec.R))
        self.moves = set(cfg.moves)
        self.iteration = 0
        self.adapting = True
        self.masks = pattern_masks(spec.J)
        self.conc = dirichlet_concentration(spec.J, spec.hyper.a_dirichlet)
        self.counters = {m: _Counter() for m in ALL_MOVES}
        t = cfg.target_accept
        self.ad = {
            "b": _Adapter(t, 1.0), "gamma0_delta": _Adapter(t, 1.0), "spline": _Adapter(t, 0.5),
            "d_tau": _Adapter(t, 0.5), "d": _Adapter(t, 0.5), "scale": _Adapter(t, 0.3),
            "beta": _Adapter(t, 1.0),
        }
        self._suff_stats()
        self._init_birth_proposals()
        self._gd_cov = None
        self._spline_hist: list[np.ndarray] = []
        self._spline_cov = np.eye(spec.Q) * 0.01
        self.refresh()
        if not np.isfinite(self.total_loglik()):
            raise InitializationError("log posterior is not finite at the starting state")

    def set_data(self, data: Dataset) -> None:
        """Swap in new data for the same subjects (used by the joint-distribution test)."""
        self.data = data
        self.ctx = FitContext(data, self.spec)
        self._suff_stats()
        self.refresh()

    # ---- birth proposals tuned during burn-in -----------------------------
    def _init_birth_proposals(self) -> None:
        spec, G, J = self.spec, self.spec.G, self.spec.J
        scale = np.ones((G, J))
        for g in range(G):
            o = self.data.obs[g]
            mu_bar = abs(float(np.mean(o.value))) if o.value.size else abs(spec.factors[g].gv)
            mu_bar = mu_bar or 1.0
            t_bar = float(np.mean(self.data.T)) if self.data.n else float(spec.knots.boundary[1]) / 2
            scale[g] = (mu_bar, mu_bar * max(t_bar, 1e-8))
        self.feat_scale = scale
        # a birth moves the log hazard by O(1) at typical feature values
        self.alpha_mu = np.zeros((G, J))
        self.alpha_sd = 1.0 / scale
        self._alpha_floor = 0.02 / scale
        self.thr_mu = np.broadcast_to(threshold_prior_means(self.s.m, spec), (G, J, N_STRATA)).copy()
        self.thr_sd = np.array([[[0.5 * f.sd] * N_STRATA] * J for f in spec.factors])
        self._thr_floor = np.array([[[0.1 * spec.hyper.C * f.sd] * N_STRATA] * J
                                    for f in spec.factors])
        self.thr_na = np.full((G, J, N_STRATA), 0.5)
        self._acc = {"a_n": np.zeros((G, J)), "a_s": np.zeros((G, J)), "a_ss": np.zeros((G, J)),
                     "t_n": np.zeros((G, J, N_STRATA)), "t_na": np.zeros((G, J, N_STRATA)),
                     "t_s": np.zeros((G, J, N_STRATA)), "t_ss": np.zeros((G, J, N_STRATA))}

    def _record_for_births(self) -> None:
        s, acc = self.s, self._acc
        act = s.active
        al = s.alpha
        acc["a_n"] += act
        acc["a_s"] += np.where(act, al, 0.0)
        acc["a_ss"] += np.where(act, al * al, 0.0)
        act3 = np.broadcast_to(act[:, :, None], s.thresholds.shape)
        real = act3 & ~np.isnan(s.thresholds)
        x = np.where(real, s.thresholds, 0.0)
        acc["t_n"] += act3
        acc["t_na"] += act3 & np.isnan(s.thresholds)
        acc["t_s"] += x
        acc["t_ss"] += x * x
        if self.iteration % 50 == 49:
            n = acc["a_n"]
            ok = n >= 20
            mu = acc["a_s"] / np.maximum(n, 1)
            sd = np.sqrt(np.maximum(acc["a_ss"] / np.maximum(n, 1) - mu ** 2, 0.0))
            self.alpha_mu = np.where(ok, mu, self.alpha_mu)
            self.alpha_sd = np.where(ok, np.maximum(1.5 * sd, self._alpha_floor), self.alpha_sd)
            nt = acc["t_n"]
            nr = nt - acc["t_na"]
            okr = nr >= 20
            mu = acc["t_s"] / np.maximum(nr, 1)
            sd = np.sqrt(np.maximum(acc["t_ss"] / np.maximum(nr, 1) - mu ** 2, 0.0))
            self.thr_mu = np.where(okr, mu, self.thr_mu)
            self.thr_sd = np.where(okr, np.maximum(1.5 * sd, self._thr_floor), self.thr_sd)
            self.thr_na = np.where(nt >= 20, np.clip((acc["t_na"] + 1) / (nt + 2), 0.05, 0.95),
                                   self.thr_na)
            if self.iteration % 200 == 199:
                # forget the early part of burn-in
                for v in acc.values():
                    v *= 0.5

    # ---- cached quantities -------------------------------------------------
    def _suff_stats(self) -> None:
        n, G = self.ctx.n, self.spec.G
        st = np.zeros((6, n, G))
        for g, o in enumerate(self.data.obs):
            t, y, i = o.time, o.value, o.subject
            for k, v in enumerate((np.ones_like(t), t, t * t, y, t * y, y * y)):
                st[k, :, g] = np.bincount(i, weights=v, minlength=n)
        self.S0, self.S1, self.S2, self.Sy, self.Sty, self.Syy = st
        self.N_g = self.S0.sum(axis=0)

    def refresh(self) -> None:
        s = self.s
        self.a, self.c = self.ctx.trajectories(s.beta, s.b)
        self.alpha = s.alpha
        self.thr = self.ctx.subject_thresholds(s.thresholds)
        self.I, self.LH = self._integrals(self.a, self.c, self.alpha, self.thr, s.gammas)
        self.eta = s.gamma0 + self.ctx.Wd @ s.delta
        self.surv = self._surv(self.eta, self.I, self.LH)

    def _integrals(self, a, c, alpha, thr, gammas):
        if self.ctx.n == 0:
            return np.zeros(0), np.zeros(0)
        return self.ctx.survival_parts(None, a, c, alpha, thr, gammas)

    def _surv(self, eta, I, LH) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.ctx.event * (eta + LH) - np.exp(eta) * I
        return np.where(np.isnan(out), -np.inf, out)

    def _ssr(self, a, c) -> np.ndarray:
        return (self.Syy - 2 * a * self.Sy - 2 * c * self.Sty + a * a * self.S0
                + 2 * a * c * self.S1 + c * c * self.S2)

    def longitudinal_loglik(self) -> float:
        ssr = self._ssr(self.a, self.c).sum(axis=0)
        s2 = self.s.sigma2
        return float(np.sum(-0.5 * self.N_g * np.log(2 * np.pi * s2) - 0.5 * ssr / s2))

    def total_loglik(self) -> float:
        if self.ctx.n == 0:
            return 0.0
        return (self.longitudinal_loglik() + float(self.surv.sum())
                + float(self.ctx.re_logprior(self.s.b, self.s.D).sum()))

    def _features_on(self, g=None) -> bool:
        act = self.alpha != 0
        return bool(act.any() if g is None else act[g].any())

    # ---- longitudinal block ------------------------------------------------
    def update_beta(self) -> None:
        self._beta_conditional_step()
        self._center_shift()

    def _beta_conditional_step(self) -> None:
        s, spec = self.s, self.spec
        if self.ctx.n == 0:
            bm, bs = spec.beta_prior()
            s.beta = self.rng.normal(bm, bs)
            return
        bm, bs = spec.beta_prior()
        for g, sl in enumerate(self.ctx.slices):
            b0 = s.b[:, sl.start]
            b1 = s.b[:, sl.start + 1] if sl.stop - sl.start > 1 else np.zeros(self.ctx.n)
            XtX = np.array([[self.S0[:, g].sum(), self.S1[:, g].sum()],
                            [self.S1[:, g].sum(), self.S2[:, g].sum()]])
            r0 = np.sum(self.Sy[:, g] - b0 * self.S0[:, g] - b1 * self.S1[:, g])
            r1 = np.sum(self.Sty[:, g] - b0 * self.S1[:, g] - b1 * self.S2[:, g])
            P = XtX / s.sigma2[g] + np.diag(1.0 / bs[g] ** 2)
            h = np.array([r0, r1]) / s.sigma2[g] + bm[g] / bs[g] ** 2
            L = np.linalg.cholesky(P)
            mean = np.linalg.solve(P, h)
            prop = mean + np.linalg.solve(L.T, self.rng.normal(size=2))
            if not self._features_on(g):
                s.beta[g] = prop
                self.a[:, g] = prop[0] + b0
                self.c[:, g] = prop[1] + b1
                self.counters["beta"].add(1)
                continue
            a = self.a.copy()
            c = self.c.copy()
            a[:, g] = prop[0] + b0
            c[:, g] = prop[1] + b1
            I, LH = self._integrals(a, c, self.alpha, self.thr, s.gammas)
            surv = self._surv(self.eta, I, LH)
            ok = bool(_accept(self.rng, surv.sum() - self.surv.sum()))
            self.counters["beta"].add(ok)
            if ok:
                s.beta[g] = prop
                self.a, self.c, self.I, self.LH, self.surv = a, c, I, LH, surv

    def _center_shift(self) -> None:
        """beta_g += k, b_ig -= k for all i leaves every trajectory unchanged, so
        k is drawn exactly from prior(beta) x N(b; 0, D)."""
        s, spec = self.s, self.spec
        n = self.ctx.n
        if n == 0:
            return
        bm, bs = spec.beta_prior()
        Dinv = np.linalg.inv(s.D)
        bsum = s.b.sum(axis=0)
        for g, sl in enumerate(self.ctx.slices):
            r = sl.stop - sl.start
            Dg = Dinv[:, sl]  # columns hit by the shift of block g
            P = n * Dinv[sl, sl] + np.diag(1.0 / bs[g, :r] ** 2)
            h = Dg.T @ bsum + (bm[g, :r] - s.beta[g, :r]) / bs[g, :r] ** 2
            k = np.linalg.solve(P, h) + np.linalg.solve(np.linalg.cholesky(P).T,
                                                          self.rng.normal(size=r))
            s.beta[g, :r] += k
            s.b[:, sl] -= k

    def update_sigma2(self) -> None:
        s, h = self.s, self.spec.hyper
        ssr = self._ssr(self.a, self.c).sum(axis=0)
        shape = h.sigma2_shape + 0.5 * self.N_g
        scale = h.sigma2_scale + 0.5 * ssr
        s.sigma2 = scale / self.rng.gamma(shape)
        self.counters["sigma2"].add(1)

    def update_D(self) -> None:
        s = self.s
        n = self.ctx.n
        psi = self.spec.D_scale_matrix + s.b.T @ s.b
        s.D = np.atleast_2d(stats.invwishart.rvs(df=self.spec.D_df + n, scale=psi,
                                                 random_state=self.rng))
        s.D = 0.5 * (s.D + s.D.T)
        self.counters["D"].add(1)

    def _b_conditional(self):
        """Per-subject precision, Cholesky factor and mean of the random effects
        given the longitudinal data and D (survival term left out)."""
        s, ctx = self.s, self.ctx
        n, R = ctx.n, self.spec.R
        P = np.broadcast_to(np.linalg.inv(s.D), (n, R, R)).copy()
        h = np.zeros((n, R))
        for g, sl in enumerate(ctx.slices):
            r = sl.stop - sl.start
            P[:, sl, sl] += ctx.ZtZ[:, sl, sl] / s.sigma2[g]
            h[:, sl.start] = (self.Sy[:, g] - s.beta[g, 0] * self.S0[:, g]
                              - s.beta[g, 1] * self.S1[:, g]) / s.sigma2[g]
            if r > 1:
                h[:, sl.start + 1] = (self.Sty[:, g] - s.beta[g, 0] * self.S1[:, g]
                                      - s.beta[g, 1] * self.S2[:, g]) / s.sigma2[g]
        L = np.linalg.cholesky(P)
        mean = np.linalg.solve(P, h[:, :, None])[:, :, 0]
        return P, L, mean

    def _set_b(self, b_new, ok):
        s = self.s
        s.b[ok] = b_new[ok]

    def update_b(self) -> None:
        s, ctx = self.s, self.ctx
        n, R = ctx.n, self.spec.R
        if n == 0:
            return
        P, L, mean = self._b_conditional()
        # independence draw from the longitudinal conditional, corrected by survival
        z = self.rng.normal(size=(n, R, 1))
        prop = mean + np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
        if not self._features_on():
            s.b = prop
            self.a, self.c = ctx.trajectories(s.beta, s.b)
            self.counters["b"].add(n, n)
            return
        a, c = ctx.trajectories(s.beta, prop)
        I, LH = self._integrals(a, c, self.alpha, self.thr, s.gammas)
        surv = self._surv(self.eta, I, LH)
        ok = _accept(self.rng, surv - self.surv)
        self._commit_subjects(ok, prop, a, c, I, LH, surv)
        self.counters["b"].add(ok.sum(), n)
        # local random walk with the conditional covariance shape
        sc = self.ad["b"].scale
        z = self.rng.normal(size=(n, R, 1))
        prop = s.b + sc * np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
        a, c = ctx.trajectories(s.beta, prop)
        I, LH = self._integrals(a, c, self.alpha, self.thr, s.gammas)
        surv = self._surv(self.eta, I, LH)

        def quad(b):
            dlt = (b - mean)[:, :, None]
            return -0.5 * (np.swapaxes(dlt, 1, 2) @ P @ dlt)[:, 0, 0]

        ok = _accept(self.rng, quad(prop) - quad(s.b) + surv - self.surv)
        self._commit_subjects(ok, prop, a, c, I, LH, surv)
        self.ad["b"].update(float(ok.mean()), self.adapting)

    def _commit_subjects(self, ok, b, a, c, I, LH, surv) -> None:
        s = self.s
        s.b[ok] = b[ok]
        self.a[ok] = a[ok]
        self.c[ok] = c[ok]
        self.I[ok] = I[ok]
        self.LH[ok] = LH[ok]
        self.surv[ok] = surv[ok]

    # ---- survival block ----------------------------------------------------
    def _gd_proposal_cov(self) -> np.ndarray:
        h = self.spec.hyper
        p = self.ctx.Wd.shape[1]
        X = np.column_stack([np.ones(self.ctx.n), self.ctx.Wd])
        prior_prec = np.diag(np.r_[1.0 / h.gamma0_sd ** 2, np.full(p, 1.0 / h.delta_sd ** 2)])
        if self.ctx.n:
            wgt = np.clip(np.exp(self.eta) * self.I, 0.0, 1e12)
            H = X.T @ (X * wgt[:, None]) + prior_prec
        else:
            H = prior_prec
        # the intercept is pinned mostly by the spline's own level; keep a floor
        return np.linalg.inv(H) + 1e-10 * np.eye(p + 1)

    def update_gamma0_delta(self) -> None:
        s, h = self.s, self.spec.hyper
        if self._gd_cov is None or (self.adapting and self.iteration % 100 == 0):
            self._gd_cov = self._gd_proposal_cov()
            self._gd_chol = np.linalg.cholesky(self._gd_cov)
        # the spline is a partition of unity: shifting gamma0 up and every spline
        # coefficient down leaves the likelihood unchanged, so draw the shift exactly
        if "spline" in self.moves:
            prec = 1.0 / h.gamma0_sd ** 2 + 1.0 / h.spline_init_sd ** 2
            mean = ((h.gamma0_mean - s.gamma0) / h.gamma0_sd ** 2
                    + s.gammas[0] / h.spline_init_sd ** 2) / prec
            k = mean + self.rng.normal() / math.sqrt(prec)
            s.gamma0 += k
            s.gammas = s.gammas - k
            self.eta = self.eta + k
            self.I = self.I * math.exp(-k)
            self.LH = self.LH - k
        p = self.ctx.Wd.shape[1]
        for _ in range(3):
            step = self.ad["gamma0_delta"].scale * self._gd_chol @ self.rng.normal(size=p + 1)
            g0 = s.gamma0 + step[0]
            dl = s.delta + step[1:]
            eta = g0 + self.ctx.Wd @ dl
            surv = self._surv(eta, self.I, self.LH)
            lr = (surv.sum() - self.surv.sum()
                  - 0.5 * ((g0 - h.gamma0_mean) ** 2 - (s.gamma0 - h.gamma0_mean) ** 2) / h.gamma0_sd ** 2
                  - 0.5 * (dl @ dl - s.delta @ s.delta) / h.delta_sd ** 2)
            ok = bool(_accept(self.rng, lr))
            self.counters["gamma0_delta"].add(ok)
            self.ad["gamma0_delta"].update(float(ok), self.adapting)
            if ok:
                s.gamma0, s.delta, self.eta, self.surv = float(g0), dl, eta, surv

    def _rw2_logpdf(self, g) -> float:
        h = self.spec.hyper
        out = -0.5 * (g[0] / h.spline_init_sd) ** 2
        if g.size > 1:
            out -= 0.5 * ((g[1] - g[0]) / h.spline_init_sd) ** 2
        if g.size > 2:
            out -= 0.5 * self.s.lam * float(np.sum(np.diff(g, 2) ** 2))
        return out

    def update_spline(self) -> None:
        s = self.s
        Q = self.spec.Q
        if self.adapting:
            self._spline_hist.append(s.gammas.copy())
            if len(self._spline_hist) >= 50 and len(self._spline_hist) % 25 == 0:
                H = np.array(self._spline_hist[len(self._spline_hist) // 2:])
                self._spline_cov = np.cov(H.T).reshape(Q, Q) * 2.38 ** 2 / Q + 1e-8 * np.eye(Q)
        L = np.linalg.cholesky(self._spline_cov)
        prop = s.gammas + self.ad["spline"].scale * L @ self.rng.normal(size=Q)
        I, LH = self._integrals(self.a, self.c, self.alpha, self.thr, prop)
        surv = self._surv(self.eta, I, LH)
        lr = surv.sum() - self.surv.sum() + self._rw2_logpdf(prop) - self._rw2_logpdf(s.gammas)
        ok = bool(_accept(self.rng, lr))
        self.counters["spline"].add(ok)
        self.ad["spline"].update(float(ok), self.adapting)
        if ok:
            s.gammas, self.I, self.LH, self.surv = prop, I, LH, surv

    def update_lambda(self) -> None:
        s, h = self.s, self.spec.hyper
        d2 = np.diff(s.gammas, 2)
        s.lam = float(self.rng.gamma(h.lambda_shape + 0.5 * d2.size,
                                     1.0 / (h.lambda_rate + 0.5 * float(d2 @ d2))))
        self.counters["lambda"].add(1)

    # ---- association block -------------------------------------------------
    def _try_features(self, alpha, thresholds):
        """Survival terms for a proposed (alpha, thresholds) pair."""
        thr = self.ctx.subject_thresholds(thresholds)
        I, LH = self._integrals(self.a, self.c, alpha, thr, self.s.gammas)
        return thr, I, LH, self._surv(self.eta, I, LH)

    def _commit_features(self, thr, I, LH, surv) -> None:
        self.alpha = self.s.alpha
        self.thr, self.I, self.LH, self.surv = thr, I, LH, surv

    # Births mix the prior draw with a proposal tuned during burn-in (50/50), so
    # both enter the acceptance ratio through the mixture density.
    def _thr_log_prior(self, g, j, vals) -> np.ndarray:
        s, f = self.s, self.spec.factors[g]
        mean = self._prior_means()[g, j]
        sd = 1.0 / math.sqrt(s.tau2[g])
        p = s.pi_na[g, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            real = math.log1p(-p) + truncnorm_logpdf(np.nan_to_num(vals, nan=f.lower), mean, sd,
                                                     f.lower, f.upper) if p < 1 else np.full(4, -np.inf)
            return np.where(np.isnan(vals), math.log(p) if p > 0 else -np.inf, real)

    def _thr_log_real_prop(self, g, j, vals) -> np.ndarray:
        """Log density of the real-valued part of the threshold proposal mixture."""
        s, f = self.s, self.spec.factors[g]
        x = np.nan_to_num(vals, nan=f.lower)
        with np.errstate(divide="ignore"):
            lp = truncnorm_logpdf(x, self._prior_means()[g, j], 1.0 / math.sqrt(s.tau2[g]),
                                  f.lower, f.upper)
            la = truncnorm_logpdf(x, self.thr_mu[g, j], self.thr_sd[g, j], f.lower, f.upper)
        return np.logaddexp(lp, la) - math.log(2.0)

    def _thr_log_prop(self, g, j, vals) -> np.ndarray:
        p = self.s.pi_na[g, j]
        rho = self.thr_na[g, j]
        with np.errstate(divide="ignore"):
            real = np.logaddexp(math.log(0.5) + np.log1p(-p) + self._tn_prior(g, j, vals),
                                math.log(0.5) + np.log1p(-rho) + self._tn_adapt(g, j, vals))
            return np.where(np.isnan(vals), np.log(0.5 * p + 0.5 * rho), real)

    def _tn_prior(self, g, j, vals):
        f = self.spec.factors[g]
        return truncnorm_logpdf(np.nan_to_num(vals, nan=f.lower), self._prior_means()[g, j],
                                1.0 / math.sqrt(self.s.tau2[g]), f.lower, f.upper)

    def _tn_adapt(self, g, j, vals):
        f = self.spec.factors[g]
        return truncnorm_logpdf(np.nan_to_num(vals, nan=f.lower), self.thr_mu[g, j],
                                self.thr_sd[g, j], f.lower, f.upper)

    def _draw_real_prop(self, g, j) -> np.ndarray:
        s, f = self.s, self.spec.factors[g]
        from_prior = sample_truncnorm(self.rng, self._prior_means()[g, j],
                                      1.0 / math.sqrt(s.tau2[g]), f.lower, f.upper)
        adapted = sample_truncnorm(self.rng, self.thr_mu[g, j], self.thr_sd[g, j], f.lower, f.upper)
        return np.where(self.rng.uniform(size=N_STRATA) < 0.5, from_prior, adapted)

    def _draw_thr_prop(self, g, j) -> np.ndarray:
        use_prior = self.rng.uniform(size=N_STRATA) < 0.5
        p_na = np.where(use_prior, self.s.pi_na[g, j], self.thr_na[g, j])
        f = self.spec.factors[g]
        from_prior = sample_truncnorm(self.rng, self._prior_means()[g, j],
                                      1.0 / math.sqrt(self.s.tau2[g]), f.lower, f.upper)
        adapted = sample_truncnorm(self.rng, self.thr_mu[g, j], self.thr_sd[g, j], f.lower, f.upper)
        real = np.where(use_prior, from_prior, adapted)
        return np.where(self.rng.uniform(size=N_STRATA) < p_na, np.nan, real)

    def _assoc_log_mix(self, g, j, tau, d) -> float:
        """log N(d) - log(mixture density of the (tau, d) birth proposal) / hn(tau)."""
        ld = -0.5 * d * d - 0.5 * LOG_2PI
        a = tau * d
        la = (-0.5 * ((a - self.alpha_mu[g, j]) / self.alpha_sd[g, j]) ** 2 - 0.5 * LOG_2PI
              - math.log(self.alpha_sd[g, j]) + (math.log(tau) if tau > 0 else -math.inf))
        return ld - (np.logaddexp(ld, la) - math.log(2.0))

    def _assoc_birth(self, g, j) -> tuple[float, float, float]:
        tau = abs(self.rng.normal(0.0, math.sqrt(self.s.s2)))
        if self.rng.uniform() < 0.5:
            d = self.rng.normal()
        else:
            d = (self.alpha_mu[g, j] + self.alpha_sd[g, j] * self.rng.normal()) / max(tau, 1e-300)
        return tau, d, self._assoc_log_mix(g, j, tau, d)

    def _birth_thresholds(self, thresholds, g, feats) -> float:
        corr = 0.0
        for j in np.flatnonzero(feats):
            vals = self._draw_thr_prop(g, j)
            thresholds[g, j] = vals
            corr += float(np.sum(self._thr_log_prior(g, j, vals) - self._thr_log_prop(g, j, vals)))
        return corr

    def _death_thresholds(self, thresholds, g, feats) -> float:
        corr = 0.0
        for j in np.flatnonzero(feats):
            vals = self.s.thresholds[g, j]
            corr -= float(np.sum(self._thr_log_prior(g, j, vals) - self._thr_log_prop(g, j, vals)))
            thresholds[g, j] = np.nan
        return corr

    def update_group(self) -> None:
        s = self.s
        J = self.spec.J
        for g in range(self.spec.G):
            mask = self.masks[s.pattern[g]]
            thresholds = s.thresholds.copy()
            tau = s.tau[g].copy()
            if s.group_in[g]:
                new_in = False
                d = np.zeros(J)
                corr = self._death_thresholds(thresholds, g, mask)
                for j in np.flatnonzero(mask):
                    corr -= self._assoc_log_mix(g, j, s.tau[g, j], s.d[g, j])
                    tau[j] = abs(self.rng.normal(0.0, math.sqrt(s.s2)))
                corr += math.log(s.pi_group[g]) - math.log1p(-s.pi_group[g])
            else:
                new_in = True
                d = self.rng.normal(size=J)
                corr = 0.0
                for j in np.flatnonzero(mask):
                    tau[j], d[j], c = self._assoc_birth(g, j)
                    corr += c
                corr += self._birth_thresholds(thresholds, g, mask)
                corr += math.log1p(-s.pi_group[g]) - math.log(s.pi_group[g])
            alpha = self.alpha.copy()
            alpha[g] = np.where(mask & new_in, tau * d, 0.0)
            thr, I, LH, surv = self._try_features(alpha, thresholds)
            ok = bool(_accept(self.rng, surv.sum() - self.surv.sum() + corr))
            self.counters["group"].add(ok)
            if ok:
                s.group_in[g] = new_in
                s.d[g] = d
                s.tau[g] = tau
                s.thresholds = thresholds
                self._commit_features(thr, I, LH, surv)

    def update_pattern(self) -> None:
        s = self.s
        for g in range(self.spec.G):
            c_new = int(self.rng.choice(self.conc.size, p=s.q[g]))
            if c_new == s.pattern[g]:
                self.counters["pattern"].add(1)
                continue
            old = self.masks[s.pattern[g]]
            new = self.masks[c_new]
            born = new & ~old
            died = old & ~new
            tau = s.tau[g].copy()
            d = s.d[g].copy()
            tau[died] = 0.0
            thresholds = s.thresholds.copy()
            if s.group_in[g]:
                corr = 0.0
                for j in np.flatnonzero(died):
                    corr -= self._assoc_log_mix(g, j, s.tau[g, j], s.d[g, j])
                    d[j] = self.rng.normal()
                for j in np.flatnonzero(born):
                    tau[j], d[j], c = self._assoc_birth(g, j)
                    corr += c
                corr += self._death_thresholds(thresholds, g, died)
                corr += self._birth_thresholds(thresholds, g, born)
                alpha = self.alpha.copy()
                alpha[g] = np.where(new, tau * d, 0.0)
                thr, I, LH, surv = self._try_features(alpha, thresholds)
                lr = surv.sum() - self.surv.sum() + corr
            else:
                tau[born] = np.abs(self.rng.normal(0.0, math.sqrt(s.s2), size=born.sum()))
                lr = 0.0
            ok = bool(_accept(self.rng, lr))
            self.counters["pattern"].add(ok)
            if ok:
                s.pattern[g] = c_new
                s.tau[g] = tau
                s.d[g] = d
                s.thresholds = thresholds
                if s.group_in[g]:
                    self._commit_features(thr, I, LH, surv)

    def update_swap(self) -> None:
        """Exchange the active feature between the two single-feature patterns.

        The direction and the stratum thresholds (with their NA states) carry
        over to the other feature, and the magnitude is rescaled by the ratio of
        typical feature sizes times a log-normal factor, so tau' = k tau with
        Jacobian k.  The spare direction of the inactive feature is swapped back,
        keeping its N(0, 1) prior.  Without this move a chain can only leave
        "value only" for "area only" through a fresh birth of the other feature.
        """
        s = self.s
        if self.spec.J != 2:
            return
        single = [int(np.flatnonzero(np.all(self.masks == m, axis=1))[0])
                  for m in (np.array([True, False]), np.array([False, True]))]
        for g in range(self.spec.G):
            if not s.group_in[g] or s.pattern[g] not in single:
                continue
            j_old = single.index(int(s.pattern[g]))
            j_new = 1 - j_old
            c_new = single[j_new]
            log_k = (math.log(self.feat_scale[g, j_old] / self.feat_scale[g, j_new])
                     + SWAP_LOG_SD * self.rng.normal())
            tau = np.zeros(2)
            tau[j_new] = s.tau[g, j_old] * math.exp(log_k)
            d = s.d[g, ::-1].copy()
            thresholds = s.thresholds.copy()
            thresholds[g, j_new] = s.thresholds[g, j_old]
            thresholds[g, j_old] = np.nan
            alpha = self.alpha.copy()
            alpha[g] = tau * d
            thr, I, LH, surv = self._try_features(alpha, thresholds)
            with np.errstate(divide="ignore"):
                lr = (surv.sum() - self.surv.sum() + log_k
                      + halfnormal_logpdf(tau[j_new], s.s2)
                      - halfnormal_logpdf(s.tau[g, j_old], s.s2)
                      + float(np.sum(self._thr_log_prior(g, j_new, thresholds[g, j_new])))
                      - float(np.sum(self._thr_log_prior(g, j_old, s.thresholds[g, j_old])))
                      + math.log(s.q[g, c_new]) - math.log(s.q[g, s.pattern[g]]))
            ok = bool(_accept(self.rng, lr))
            self.counters["swap"].add(ok)
            if ok:
                s.pattern[g] = c_new
                s.tau[g] = tau
                s.d[g] = d
                s.thresholds = thresholds
                self._commit_features(thr, I, LH, surv)

    def _refresh_d_tau(self, move: str) -> None:
        """Random walk on the selected directions with step ``scale * sd_alpha / tau``,
        i.e. on the alpha scale; tau is fixed during the move so the step is
        symmetric.  Magnitudes change through the scale move and, while the
        group is excluded, by exact draws from their prior."""
        s = self.s
        J = self.spec.J
        for g in range(self.spec.G):
            mask = self.masks[s.pattern[g]]
            if not s.group_in[g]:
                if move == "d_tau":
                    s.tau[g] = np.where(mask, np.abs(self.rng.normal(0.0, math.sqrt(s.s2), J)), 0.0)
                continue
            # directions of unselected features do not enter the likelihood
            s.d[g, ~mask] = self.rng.normal(size=(~mask).sum())
            sc = self.ad[move].scale
            d = s.d[g].copy()
            step = sc * self.alpha_sd[g, mask] / np.maximum(s.tau[g, mask], 1e-300)
            d[mask] += step * self.rng.normal(size=mask.sum())
            alpha = self.alpha.copy()
            alpha[g] = np.where(mask, s.tau[g] * d, 0.0)
            thr, I, LH, surv = self._try_features(alpha, s.thresholds)
            lr = surv.sum() - self.surv.sum() - 0.5 * (d @ d - s.d[g] @ s.d[g])
            ok = bool(_accept(self.rng, lr))
            self.counters[move].add(ok)
            self.ad[move].update(float(ok), self.adapting)
            if ok:
                s.d[g] = d
                self._commit_features(thr, I, LH, surv)

    def update_scale(self) -> None:
        """Rescale (tau, d) -> (k tau, d / k) on the selected features; alpha and
        hence the likelihood are unchanged and the Jacobian is one."""
        s = self.s
        for g in range(self.spec.G):
            if not s.group_in[g]:
                continue
            mask = self.masks[s.pattern[g]]
            k = math.exp(self.ad["scale"].scale * self.rng.normal())
            tau = s.tau[g] * k
            d = s.d[g].copy()
            d[mask] /= k
            lr = (-0.5 * (d @ d - s.d[g] @ s.d[g]) - 0.5 * (tau @ tau - s.tau[g] @ s.tau[g]) / s.s2)
            ok = bool(_accept(self.rng, lr))
            self.counters["scale"].add(ok)
            self.ad["scale"].update(float(ok), self.adapting)
            if ok:
                s.tau[g], s.d[g] = tau, d

    def update_pi_group(self) -> None:
        s, h = self.s, self.spec.hyper
        out = (~s.group_in).astype(float)
        s.pi_group = self.rng.beta(h.beta_a + out, h.beta_b + 1.0 - out)
        self.counters["pi_group"].add(1)

    def update_q(self) -> None:
        s = self.s
        for g in range(self.spec.G):
            a = self.conc.copy()
            a[s.pattern[g]] += 1.0
            s.q[g] = self.rng.dirichlet(a)
        self.counters["q"].add(1)

    def update_s2(self) -> None:
        s, h = self.s, self.spec.hyper
        sel = self.masks[s.pattern]
        k = int(sel.sum())
        rate = 1.0 / h.t_scale + 0.5 * float(np.sum(s.tau[sel] ** 2))
        s.s2 = float(rate / self.rng.gamma(1.0 + 0.5 * k))
        self.counters["s2"].add(1)

    # ---- threshold block ---------------------------------------------------
    def _stratum_sums(self, v) -> np.ndarray:
        return np.bincount(self.ctx.stratum, weights=v, minlength=N_STRATA)

    def _prior_means(self) -> np.ndarray:
        return threshold_prior_means(self.s.m, self.spec)

    def _threshold_move(self, g, j, proposal, log_q_ratio) -> np.ndarray:
        """Per-stratum Metropolis step for the thresholds of feature (g, j)."""
        s = self.s
        thresholds = s.thresholds.copy()
        thresholds[g, j] = proposal
        thr, I, LH, surv = self._try_features(self.alpha, thresholds)
        lr = self._stratum_sums(surv) - self._stratum_sums(self.surv) + log_q_ratio
        ok = _accept(self.rng, lr)
        if ok.any():
            s.thresholds[g, j, ok] = proposal[ok]
            rows = ok[self.ctx.stratum]
            self.thr[rows] = thr[rows]
            self.I[rows] = I[rows]
            self.LH[rows] = LH[rows]
            self.surv[rows] = surv[rows]
        return ok

    def update_thr_jump(self) -> None:
        s = self.s
        act = s.active
        for g in range(self.spec.G):
            for j in range(self.spec.J):
                if not act[g, j]:
                    continue
                cur = s.thresholds[g, j]
                na = np.isnan(cur)
                proposal = np.where(na, self._draw_real_prop(g, j), np.nan)
                real_vals = np.where(na, proposal, cur)
                p = s.pi_na[g, j]
                with np.errstate(divide="ignore"):
                    # log of [(1 - pi) TN_prior(x)] / [pi q(x)] at the real value x
                    lr_real = (np.log1p(-p) - np.log(p) + self._tn_prior(g, j, real_vals)
                               - self._thr_log_real_prop(g, j, real_vals))
                log_q = np.where(na, lr_real, -lr_real)
                ok = self._threshold_move(g, j, proposal, log_q)
                self.counters["thr_jump"].add(ok.sum(), N_STRATA)

    def _log_tn_kernel(self, x, mean, sd, lower, upper):
        out = -0.5 * ((x - mean) / sd) ** 2
        return np.where((x < lower) | (x > upper) | np.isnan(x), -np.inf, out)

    def update_thr_within(self) -> None:
        s, cfg = self.s, self.cfg
        act = s.active
        means = self._prior_means()
        for g in range(self.spec.G):
            f = self.spec.factors[g]
            sd = 1.0 / math.sqrt(s.tau2[g])
            for j in range(self.spec.J):
                if not act[g, j]:
                    continue
                cur = s.thresholds[g, j]
                real = ~np.isnan(cur)
                if not real.any():
                    continue
                mean = means[g, j]
                rw = self.rng.uniform(size=N_STRATA) < cfg.threshold_rw_frac
                step = cfg.threshold_rw_sd * self.spec.hyper.C * f.sd * self.rng.normal(size=N_STRATA)
                indep = sample_truncnorm(self.rng, mean, sd, f.lower, f.upper)
                proposal = np.where(rw, cur + step, indep)
                proposal = np.where(real, proposal, np.nan)
                with np.errstate(invalid="ignore"):
                    lp_new = self._log_tn_kernel(proposal, mean, sd, f.lower, f.upper)
                    lp_old = self._log_tn_kernel(cur, mean, sd, f.lower, f.upper)
                    # independence proposals cancel the prior exactly
                    log_q = np.where(rw, lp_new - lp_old, 0.0)
                log_q = np.where(real, log_q, -np.inf)
                ok = self._threshold_move(g, j, np.where(real, proposal, cur), log_q)
                self.counters["thr_within"].add(ok.sum(), real.sum())

    def update_thr_coef(self) -> None:
        """(m_F, m_S, m_R) and tau^2 from their untruncated conditionals,
        corrected for the truncation normalizers by an independence step."""
        s, spec = self.s, self.spec
        w1, w2 = spec.weights
        from .model import STRATA

        ft = np.array([1.0, -1.0])
        for g, f in enumerate(spec.factors):
            real = ~np.isnan(s.thresholds[g])  # (J, L)
            jj, ll = np.nonzero(real)
            y = s.thresholds[g][real] - f.gv
            X = np.column_stack([ft[jj], np.array([STRATA[l][0] for l in ll], float) - w1,
                                 np.array([STRATA[l][1] for l in ll], float) - w2]).reshape(-1, 3)
            sd0 = spec.hyper.C * f.sd

            def log_z(m, tau2):
                mu = f.gv + X @ m
                sdt = 1.0 / math.sqrt(tau2)
                return float(np.sum(log_normal_mass((f.lower - mu) / sdt, (f.upper - mu) / sdt)))

            t2 = s.tau2[g]
            P = t2 * X.T @ X + np.eye(3) / sd0 ** 2
            L = np.linalg.cholesky(P)
            mean = np.linalg.solve(P, t2 * X.T @ y)
            m_new = mean + np.linalg.solve(L.T, self.rng.normal(size=3))
            lr = log_z(s.m[g], t2) - log_z(m_new, t2) if y.size else 0.0
            ok = bool(_accept(self.rng, lr))
            self.counters["thr_coef"].add(ok)
            if ok:
                s.m[g] = m_new
            resid = y - X @ s.m[g]
            t2_new = float(self.rng.gamma(1.0 + 0.5 * y.size, 1.0 / (1.0 + 0.5 * float(resid @ resid))))
            lr = log_z(s.m[g], t2) - log_z(s.m[g], t2_new) if y.size else 0.0
            ok = bool(_accept(self.rng, lr))
            self.counters["thr_coef"].add(ok)
            if ok:
                s.tau2[g] = t2_new

    def update_pi_na(self) -> None:
        s, h = self.s, self.spec.hyper
        act = s.active
        n_na = np.where(act, np.isnan(s.thresholds).sum(axis=2), 0)
        n_real = np.where(act, (~np.isnan(s.thresholds)).sum(axis=2), 0)
        s.pi_na = self.rng.beta(h.pi_na_a + n_na, h.pi_na_b + n_real)
        self.counters["pi_na"].add(1)

    # ---- driver -----------------------------------------------------------
    def sweep(self) -> None:
        mv = self.moves
        for name in ALL_MOVES:
            if name in mv:
                if name in ("d_tau", "d"):
                    self._refresh_d_tau(name)
                else:
                    getattr(self, "update_" + name)()
        if self.adapting:
            self._record_for_births()
        self.iteration += 1


@dataclass
class ChainDraws:
    """Thinned post-burn-in draws of one chain."""

    draws: dict
    acceptance: dict
    seed: list
    b_last: np.ndarray | None = None
    b_draws: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return int(next(iter(self.draws.values())).shape[0])


@dataclass
class SampleStore:
    chains: list
    spec: dict
    config: dict
    seed: int
    factor_names: list = field(default_factory=list)
    covariates: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    def stacked(self, name: str) -> np.ndarray:
        """Draws of one field with chains concatenated along the first axis."""
        return np.concatenate([c.draws[name] for c in self.chains], axis=0)

    def per_chain(self, name: str) -> np.ndarray:
        """(chains, draws, ...) array; chains are truncated to a common length."""
        n = min(c.n_draws for c in self.chains)
        return np.stack([c.draws[name][:n] for c in self.chains])


def run_chain(spec: ModelSpec, data: Dataset, cfg: SamplerConfig, rng: np.random.Generator,
              state: ParameterState | None = None, overdisperse: bool = False,
              seed_entropy=None, callback=None) -> ChainDraws:
    if state is None:
        state = init_state(spec, data, rng, overdisperse=overdisperse)
    ch = Chain(spec, data, cfg, rng, state)
    keep = {k: [] for k in STORED_FIELDS}
    b_keep = []
    for it in range(cfg.n_iter):
        ch.adapting = it < cfg.burn_in
        ch.sweep()
        if callback is not None:
            callback(ch)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == cfg.thin - 1:
            for k in STORED_FIELDS:
                keep[k].append(np.array(getattr(ch.s, k), copy=True))
            if cfg.store_b:
                b_keep.append(ch.s.b.copy())
        if ch.adapting and it == cfg.burn_in - 1:
            # counters report post-adaptation behaviour only
            ch.counters = {m: _Counter() for m in ALL_MOVES}
    draws = {k: np.array(v) for k, v in keep.items()}
    acc = {m: {"accepted": c.accepted, "proposed": c.proposed}
           for m, c in ch.counters.items() if m in ch.moves}
    return ChainDraws(draws, acc, list(seed_entropy or []), ch.s.b.copy(),
                      np.array(b_keep) if cfg.store_b else None)


def _chain_job(args):
    spec, data, cfg, ss, k = args
    rng = np.random.default_rng(ss)
    return run_chain(spec, data, cfg, rng, overdisperse=cfg.overdispersed and k > 0,
                     seed_entropy=[int(ss.entropy), *ss.spawn_key])


def sample(spec: ModelSpec, data: Dataset, cfg: SamplerConfig) -> SampleStore:
    """Run ``cfg.n_chains`` independent chains; chain k uses the k-th child
    of ``SeedSequence(cfg.rng_seed)``."""
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_chains)
    jobs = [(spec, data, cfg, ss, k) for k, ss in enumerate(seeds)]
    if cfg.parallel_chains and cfg.n_chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.n_chains) as ex:
            chains = list(ex.map(_chain_job, jobs))
    else:
        chains = [_chain_job(j) for j in jobs]
    return SampleStore(chains, spec.to_dict(), cfg.to_dict(), cfg.rng_seed,
                       list(data.factor_names), list(spec.covariates))
