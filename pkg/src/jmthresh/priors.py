"""Prior log-densities: threshold hierarchy, bi-level sparse group selection
with a Dirichlet pattern prior, and the conventional priors for the remaining
joint-model parameters.

Point masses are handled by evaluating densities with respect to the natural
mixed dominating measure: a variable sitting at its spike contributes the log
spike probability and nothing else.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .features import FeatureType, is_na

LOG_2PI = math.log(2.0 * math.pi)


def compute_weights(data) -> tuple[float, float, np.ndarray]:
    """Empirical (sex, race) table and the marginal weights of the intercept
    constraint.

    Returns ``(w1, w2, p)`` with ``p[l, m] = P(sex=l, race=m)``,
    ``w1 = p[1,1] + p[1,0]`` and ``w2 = p[1,1] + p[0,1]``.
    """
    sex = np.asarray(data.sex if hasattr(data, "sex") else data[0], dtype=int)
    race = np.asarray(data.race if hasattr(data, "race") else data[1], dtype=int)
    if sex.size == 0:
        raise ValueError("cannot compute (sex, race) weights of an empty dataset")
    if not (np.isin(sex, (0, 1)).all() and np.isin(race, (0, 1)).all()):
        raise ValueError("sex and race must be coded 0/1")
    p = np.zeros((2, 2))
    np.add.at(p, (sex, race), 1.0)
    p /= sex.size
    return float(p[1, 1] + p[1, 0]), float(p[1, 1] + p[0, 1]), p


def constrained_intercept(gv, m_S, m_R, w1, w2):
    return gv - w1 * m_S - w2 * m_R


def log_normal_mass(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # reflect so the interval sits in the lower tail where log_ndtr is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        out = lhi + np.log1p(-np.exp(llo - lhi))
    return out if out.ndim else float(out)


def truncnorm_logpdf(x, mean, sd, lower, upper):
    x = np.asarray(x, dtype=float)
    z = (x - mean) / sd
    out = -0.5 * z * z - 0.5 * LOG_2PI - np.log(sd) - log_normal_mass((lower - mean) / sd,
                                                                      (upper - mean) / sd)
    out = np.where((x < lower) | (x > upper), -np.inf, out)
    return out if out.ndim else float(out)


def halfnormal_logpdf(x, s2):
    x = np.asarray(x, dtype=float)
    out = math.log(2.0) - 0.5 * LOG_2PI - 0.5 * np.log(s2) - 0.5 * x * x / s2
    out = np.where(x < 0, -np.inf, out)
    return out if out.ndim else float(out)


@dataclass
class ThresholdPriorParams:
    m_F: float
    m_S: float
    m_R: float
    tau_sq: float
    pi_na: float
    C: float
    gv: float
    sigma_g_sd: float
    w1: float = 0.5
    w2: float = 0.5
    lower: float = -math.inf
    upper: float = math.inf

    @property
    def m0(self) -> float:
        return constrained_intercept(self.gv, self.m_S, self.m_R, self.w1, self.w2)

    def mean(self, ft, sex, race):
        return self.m0 + self.m_F * ft + self.m_S * sex + self.m_R * race


def threshold_prior_logpdf(gamma, stratum, alpha_active: bool, tpp: ThresholdPriorParams) -> float:
    """Log prior of one stratum threshold; ``stratum = (FT, sex, race)``."""
    if not alpha_active:
        if not is_na(gamma):
            raise ValueError("a threshold cannot be real while its feature is excluded")
        return 0.0
    if is_na(gamma):
        return math.log(tpp.pi_na) if tpp.pi_na > 0 else -math.inf
    ft, sex, race = stratum
    sd = 1.0 / math.sqrt(tpp.tau_sq)
    with np.errstate(divide="ignore"):
        return float(np.log1p(-tpp.pi_na)) + truncnorm_logpdf(
            float(gamma), tpp.mean(ft, sex, race), sd, tpp.lower, tpp.upper)


def coefficient_prior_logpdf(tpp: ThresholdPriorParams) -> float:
    sd = tpp.C * tpp.sigma_g_sd
    m = np.array([tpp.m_F, tpp.m_S, tpp.m_R])
    out = float(np.sum(-0.5 * (m / sd) ** 2 - 0.5 * LOG_2PI - math.log(sd)))
    return out + float(stats.gamma.logpdf(tpp.tau_sq, a=1.0, scale=1.0))


@lru_cache(maxsize=None)
def _patterns(J: int) -> tuple[tuple[int, ...], ...]:
    return tuple(c for k in range(1, J + 1) for c in itertools.combinations(range(1, J + 1), k))


def enumerate_patterns(J: int, a=None):
    """Nonempty feature subsets ordered by size, and their Dirichlet concentrations.

    Features are numbered from 1.  ``a[k-1]`` is the concentration of every
    size-``k`` pattern; without ``a`` the sizes are returned instead.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    pats = [set(c) for c in _patterns(J)]
    sizes = np.array([len(c) for c in pats])
    if a is None:
        return pats, sizes
    a = np.asarray(a, dtype=float)
    if a.size != J:
        raise ValueError(f"need {J} concentration values, got {a.size}")
    return pats, a[sizes - 1]


@lru_cache(maxsize=None)
def pattern_masks(J: int) -> np.ndarray:
    """(2^J - 1, J) bool membership matrix of :func:`enumerate_patterns`."""
    masks = np.zeros((2 ** J - 1, J), dtype=bool)
    for c, pat in enumerate(_patterns(J)):
        masks[c, [j - 1 for j in pat]] = True
    masks.setflags(write=False)
    return masks


def dirichlet_concentration(J: int, a) -> np.ndarray:
    return enumerate_patterns(J, a)[1]


@dataclass
class BsgsdParams:
    d: np.ndarray  # (G, J)
    tau: np.ndarray  # (G, J)
    pattern: np.ndarray  # (G,) pattern index
    s_sq: float
    pi_group: np.ndarray  # (G,)
    q: np.ndarray  # (G, C)
    a_dirichlet: tuple
    beta_a: float = 1.0
    beta_b: float = 1.0
    t_scale: float = 10.0

    def __post_init__(self) -> None:
        self.d = np.atleast_2d(np.asarray(self.d, dtype=float))
        self.tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        self.pattern = np.atleast_1d(np.asarray(self.pattern, dtype=int))
        self.pi_group = np.atleast_1d(np.asarray(self.pi_group, dtype=float))
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))

    @property
    def alpha(self) -> np.ndarray:
        return self.tau * self.d


def slab_variance_logpdf(s_sq: float, t_scale: float) -> float:
    # 1/s^2 ~ Gamma(shape 1, scale t)  <=>  s^2 ~ InvGamma(shape 1, scale 1/t)
    if s_sq <= 0:
        return -math.inf
    return -math.log(t_scale) - 1.0 / (t_scale * s_sq) - 2.0 * math.log(s_sq)


def bsgsd_log_prior(bp: BsgsdParams) -> float:
    G, J = bp.d.shape
    if np.any(bp.tau < 0):
        raise ValueError("feature magnitudes must be non-negative")
    masks = pattern_masks(J)
    conc = dirichlet_concentration(J, bp.a_dirichlet)
    out = slab_variance_logpdf(bp.s_sq, bp.t_scale)
    for g in range(G):
        pi = bp.pi_group[g]
        if np.all(bp.d[g] == 0):
            out += math.log(pi) if pi > 0 else -math.inf
        else:
            out += (math.log1p(-pi) if pi < 1 else -math.inf) + float(
                np.sum(-0.5 * bp.d[g] ** 2) - 0.5 * J * LOG_2PI)
        mask = masks[bp.pattern[g]]
        if np.any(bp.tau[g, ~mask] != 0):
            return -math.inf
        out += math.log(bp.q[g, bp.pattern[g]])
        out += float(np.sum(halfnormal_logpdf(bp.tau[g, mask], bp.s_sq)))
        out += float(stats.beta.logpdf(pi, bp.beta_a, bp.beta_b))
        out += float(stats.dirichlet.logpdf(bp.q[g], conc))
    return out


def spline_rw2_logpdf(gammas: np.ndarray, lam: float, init_sd: float) -> float:
    """Second-order random walk with proper start: gamma_1 and its first
    difference are N(0, init_sd^2), later second differences N(0, 1/lam)."""
    g = np.asarray(gammas, dtype=float)
    out = -0.5 * (g[0] / init_sd) ** 2 - 0.5 * LOG_2PI - math.log(init_sd)
    if g.size > 1:
        out += -0.5 * ((g[1] - g[0]) / init_sd) ** 2 - 0.5 * LOG_2PI - math.log(init_sd)
    if g.size > 2:
        d2 = np.diff(g, 2)
        out += float(np.sum(-0.5 * lam * d2 ** 2)) + 0.5 * d2.size * (math.log(lam) - LOG_2PI)
    return float(out)


def misc_priors_logpdf(state, spec) -> float:
    """Priors on beta, sigma^2, D, delta, the spline coefficients and their penalty."""
    h = spec.hyper
    bm, bs = spec.beta_prior()
    out = float(np.sum(stats.norm.logpdf(state.beta, bm, bs)))
    out += float(np.sum(stats.invgamma.logpdf(state.sigma2, h.sigma2_shape, scale=h.sigma2_scale)))
    out += float(stats.invwishart.logpdf(state.D, df=spec.D_df, scale=spec.D_scale_matrix))
    out += float(np.sum(stats.norm.logpdf(state.delta, 0.0, h.delta_sd)))
    out += float(stats.norm.logpdf(state.gamma0, h.gamma0_mean, h.gamma0_sd))
    out += spline_rw2_logpdf(state.gammas, state.lam, h.spline_init_sd)
    out += float(stats.gamma.logpdf(state.lam, h.lambda_shape, scale=1.0 / h.lambda_rate))
    return out


def threshold_params(state, spec, g: int, j: int) -> ThresholdPriorParams:
    f = spec.factors[g]
    w1, w2 = spec.weights
    return ThresholdPriorParams(
        m_F=float(state.m[g, 0]), m_S=float(state.m[g, 1]), m_R=float(state.m[g, 2]),
        tau_sq=float(state.tau2[g]), pi_na=float(state.pi_na[g, j]), C=spec.hyper.C,
        gv=f.gv, sigma_g_sd=f.sd, w1=w1, w2=w2, lower=f.lower, upper=f.upper)


def threshold_block_logpdf(state, spec) -> float:
    """All threshold-hierarchy terms: stratum thresholds, their regression
    coefficients and precision, and the NA probabilities."""
    from .model import STRATA

    h = spec.hyper
    out = 0.0
    active = state.active
    for g in range(spec.G):
        out += coefficient_prior_logpdf(threshold_params(state, spec, g, 0))
        for j in range(spec.J):
            out += float(stats.beta.logpdf(state.pi_na[g, j], h.pi_na_a, h.pi_na_b))
            tpp = threshold_params(state, spec, g, j)
            ft = int(FeatureType.CURRENT_VALUE if j == 0 else FeatureType.AREA_ABOVE)
            for l, (sex, race) in enumerate(STRATA):
                gam = state.thresholds[g, j, l]
                out += threshold_prior_logpdf(None if np.isnan(gam) else gam, (ft, sex, race),
                                              bool(active[g, j]), tpp)
    return out


def bsgsd_from_state(state, spec) -> BsgsdParams:
    h = spec.hyper
    return BsgsdParams(state.d, state.tau, state.pattern, state.s2, state.pi_group, state.q,
                       h.a_dirichlet, h.beta_a, h.beta_b, h.t_scale)


def log_prior(state, spec) -> float:
    return (misc_priors_logpdf(state, spec) + bsgsd_log_prior(bsgsd_from_state(state, spec))
            + threshold_block_logpdf(state, spec))


def sample_truncnorm(rng: np.random.Generator, mean, sd, lower, upper):
    """Inverse-CDF draws from N(mean, sd^2) truncated to [lower, upper]."""
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    # work in the lower tail, where ndtr keeps its relative precision
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    plo = special.ndtr(lo)
    phi = special.ndtr(hi)
    u = rng.uniform(size=mean.shape)
    z = special.ndtri(plo + u * (phi - plo))
    z = np.clip(np.where(flip, -z, z), a, b)
    out = mean + sd * z
    return out if out.ndim else float(out)


def threshold_prior_means(m, spec) -> np.ndarray:
    """(G, J, strata) prior means of the stratum thresholds."""
    from .model import STRATA

    w1, w2 = spec.weights
    gv = np.array([f.gv for f in spec.factors])
    m0 = constrained_intercept(gv, m[:, 1], m[:, 2], w1, w2)
    ft = np.array([int(FeatureType.CURRENT_VALUE), int(FeatureType.AREA_ABOVE)])
    sex = np.array([s for s, _ in STRATA], dtype=float)
    race = np.array([r for _, r in STRATA], dtype=float)
    return (m0[:, None, None] + m[:, 0, None, None] * ft[None, :, None]
            + m[:, 1, None, None] * sex[None, None, :] + m[:, 2, None, None] * race[None, None, :])


def sample_thresholds(rng, m, tau2, pi_na, spec, g: int, j: int) -> np.ndarray:
    """Fresh stratum thresholds of feature (g, j) from their conditional prior."""
    f = spec.factors[g]
    mean = threshold_prior_means(m, spec)[g, j]
    real = sample_truncnorm(rng, mean, 1.0 / math.sqrt(tau2[g]), f.lower, f.upper)
    na = rng.uniform(size=mean.shape) < pi_na[g, j]
    return np.where(na, np.nan, real)
