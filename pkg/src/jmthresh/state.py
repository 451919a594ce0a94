"""A single point of the posterior."""
from __future__ import annotations

import copy
from dataclasses import dataclass, fields

import numpy as np

from .model import N_STRATA, ModelSpec
from .priors import constrained_intercept, pattern_masks


@dataclass
class ParameterState:
    beta: np.ndarray  # (G, 2) fixed intercept and slope
    sigma2: np.ndarray  # (G,)
    b: np.ndarray  # (n, R) random effects stacked over factors
    D: np.ndarray  # (R, R)
    delta: np.ndarray  # (p,)
    gamma0: float
    gammas: np.ndarray  # (Q,)
    lam: float  # second-difference penalty precision
    group_in: np.ndarray  # (G,) bool, False means d_g is at the point mass
    d: np.ndarray  # (G, J)
    tau: np.ndarray  # (G, J) >= 0
    pattern: np.ndarray  # (G,) index into pattern_masks(J)
    pi_group: np.ndarray  # (G,) spike probability of d_g
    q: np.ndarray  # (G, 2^J - 1) pattern probabilities
    s2: float
    thresholds: np.ndarray  # (G, J, strata), NaN = NA
    m: np.ndarray  # (G, 3): feature-type, sex, race effects
    tau2: np.ndarray  # (G,) threshold prior precision
    pi_na: np.ndarray  # (G, J) probability a present feature has no threshold

    def copy(self) -> "ParameterState":
        return copy.deepcopy(self)

    @property
    def pattern_mask(self) -> np.ndarray:
        return pattern_masks(self.d.shape[1])[self.pattern]

    @property
    def active(self) -> np.ndarray:
        """(G, J) bool: features with a nonzero association parameter."""
        return self.group_in[:, None] & self.pattern_mask

    @property
    def alpha(self) -> np.ndarray:
        return np.where(self.active, self.tau * self.d, 0.0)

    def m0(self, spec: ModelSpec) -> np.ndarray:
        w1, w2 = spec.weights
        gv = np.array([f.gv for f in spec.factors])
        return constrained_intercept(gv, self.m[:, 1], self.m[:, 2], w1, w2)

    def check(self) -> None:
        """Assert the structural invariants."""
        act = self.active
        assert np.all(np.isnan(self.thresholds[~act])), "inactive feature has a threshold"
        assert np.all(self.tau >= 0), "negative feature magnitude"
        assert np.all(self.d[~self.group_in] == 0), "excluded group with nonzero direction"
        assert np.all(self.tau[~self.pattern_mask] == 0), "unselected feature with magnitude"
        assert np.allclose(self.D, self.D.T), "D not symmetric"
        np.linalg.cholesky(self.D)
        assert np.all(self.sigma2 > 0)

    def flat(self) -> dict[str, np.ndarray]:
        return {f.name: np.asarray(getattr(self, f.name)) for f in fields(self)}


def thresholds_shape(spec: ModelSpec) -> tuple[int, int, int]:
    return (spec.G, spec.J, N_STRATA)


def sample_prior(spec: ModelSpec, n: int, rng: np.random.Generator) -> ParameterState:
    """One draw of every parameter (and ``n`` random-effect vectors) from the prior."""
    from scipy import stats

    from .priors import dirichlet_concentration, sample_thresholds

    h = spec.hyper
    G, J, R, Q = spec.G, spec.J, spec.R, spec.Q
    bm, bs = spec.beta_prior()
    beta = rng.normal(bm, bs)
    sigma2 = h.sigma2_scale / rng.gamma(h.sigma2_shape, size=G)
    D = np.atleast_2d(stats.invwishart.rvs(df=spec.D_df, scale=spec.D_scale_matrix, random_state=rng))
    b = rng.multivariate_normal(np.zeros(R), D, size=n) if n else np.zeros((0, R))
    delta = rng.normal(0.0, h.delta_sd, size=len(spec.covariates))
    gamma0 = float(rng.normal(h.gamma0_mean, h.gamma0_sd))
    lam = float(rng.gamma(h.lambda_shape, 1.0 / h.lambda_rate))
    gammas = np.empty(Q)
    gammas[0] = rng.normal(0.0, h.spline_init_sd)
    if Q > 1:
        gammas[1] = gammas[0] + rng.normal(0.0, h.spline_init_sd)
    for q in range(2, Q):
        gammas[q] = 2 * gammas[q - 1] - gammas[q - 2] + rng.normal(0.0, 1.0 / np.sqrt(lam))
    s2 = float(1.0 / rng.gamma(1.0, h.t_scale))
    pi_group = rng.beta(h.beta_a, h.beta_b, size=G)
    group_in = rng.uniform(size=G) >= pi_group
    d = np.where(group_in[:, None], rng.normal(size=(G, J)), 0.0)
    conc = dirichlet_concentration(J, h.a_dirichlet)
    q = rng.dirichlet(conc, size=G)
    pattern = np.array([rng.choice(conc.size, p=q[g]) for g in range(G)])
    masks = pattern_masks(J)[pattern]
    tau = np.where(masks, np.abs(rng.normal(0.0, np.sqrt(s2), size=(G, J))), 0.0)
    sd = np.array([h.C * f.sd for f in spec.factors])
    m = rng.normal(0.0, sd[:, None], size=(G, 3))
    tau2 = rng.gamma(1.0, 1.0, size=G)
    pi_na = rng.beta(h.pi_na_a, h.pi_na_b, size=(G, J))
    thresholds = np.full(thresholds_shape(spec), np.nan)
    active = group_in[:, None] & masks
    for g in range(G):
        for j in range(J):
            if active[g, j]:
                thresholds[g, j] = sample_thresholds(rng, m, tau2, pi_na, spec, g, j)
    return ParameterState(beta, sigma2, b, D, delta, gamma0, gammas, lam, group_in, d, tau,
                          pattern, pi_group, q, s2, thresholds, m, tau2, pi_na)
