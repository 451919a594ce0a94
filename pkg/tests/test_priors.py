from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from jmthresh.model import STRATA
from jmthresh.priors import (BsgsdParams, ThresholdPriorParams, bsgsd_log_prior, coefficient_prior_logpdf,
                             compute_weights, constrained_intercept, enumerate_patterns, halfnormal_logpdf,
                             log_normal_mass, misc_priors_logpdf, sample_truncnorm, spline_rw2_logpdf,
                             threshold_prior_logpdf, threshold_prior_means, truncnorm_logpdf)
from jmthresh.state import sample_prior


def _table(p11, p10, p01, p00, n=1000):
    counts = np.round(np.array([p11, p10, p01, p00]) * n).astype(int)
    sex = np.repeat([1, 1, 0, 0], counts)
    race = np.repeat([1, 0, 1, 0], counts)
    return sex, race


def test_weights_examples():
    w1, w2, p = compute_weights(_table(0.25, 0.25, 0.25, 0.25))
    assert (w1, w2) == (0.5, 0.5)
    w1, w2, p = compute_weights(_table(0.2, 0.3, 0.1, 0.4))
    assert abs(w1 - 0.5) < 1e-12 and abs(w2 - 0.3) < 1e-12


def test_weights_match_counts(small_data):
    w1, w2, p = compute_weights(small_data)
    assert abs(w1 - np.mean(small_data.sex == 1)) < 1e-15
    assert abs(w2 - np.mean(small_data.race == 1)) < 1e-15
    assert abs(p[0, 1] - np.mean((small_data.sex == 0) & (small_data.race == 1))) < 1e-15


def test_weights_reject_bad_codes():
    with pytest.raises(ValueError):
        compute_weights((np.array([0, 2]), np.array([1, 1])))


def test_constrained_intercept_examples():
    assert constrained_intercept(30, 0, 0, 0.5, 0.5) == 30
    assert constrained_intercept(120, 4, -2, 0.5, 0.5) == 119


def test_population_average_equals_guideline():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.dirichlet(np.ones(4)).reshape(2, 2)  # p[sex, race]
        w1, w2 = p[1].sum(), p[:, 1].sum()
        gv, mS, mR = rng.uniform(20, 200), rng.normal(0, 5), rng.normal(0, 5)
        m0 = constrained_intercept(gv, mS, mR, w1, w2)
        avg = sum(p[s, r] * (m0 + mS * s + mR * r) for s in (0, 1) for r in (0, 1))
        assert abs(avg - gv) < 1e-12 * gv


def _tpp(**kw):
    base = dict(m_F=0.0, m_S=0.0, m_R=0.0, tau_sq=1.0, pi_na=0.5, C=0.3, gv=30.0, sigma_g_sd=5.0)
    base.update(kw)
    return ThresholdPriorParams(**base)


def test_threshold_prior_examples():
    assert threshold_prior_logpdf(None, (1, 1, 1), False, _tpp()) == 0.0
    assert threshold_prior_logpdf(None, (1, 1, 1), True, _tpp(pi_na=0.5)) == math.log(0.5)
    got = threshold_prior_logpdf(30.0, (1, 1, 1), True, _tpp(pi_na=0.2, lower=0.0, upper=60.0))
    assert abs(got - (math.log(0.8) - 0.5 * math.log(2 * math.pi))) < 1e-12
    with pytest.raises(ValueError):
        threshold_prior_logpdf(30.0, (1, 1, 1), False, _tpp())


def test_truncated_density_normalizes():
    tpp = _tpp(m_F=0.7, m_S=-1.0, m_R=0.4, tau_sq=0.3, pi_na=0.0, lower=27.0, upper=33.5)
    val, _ = integrate.quad(lambda g: math.exp(threshold_prior_logpdf(g, (-1, 0, 1), True, tpp)),
                            27.0, 33.5, epsabs=1e-13)
    assert abs(val - 1.0) < 1e-9


def test_truncnorm_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m, s = rng.normal(0, 3), rng.uniform(0.1, 3)
        lo, hi = sorted(rng.normal(0, 4, 2))
        x = rng.uniform(lo, hi)
        want = stats.truncnorm.logpdf(x, (lo - m) / s, (hi - m) / s, loc=m, scale=s)
        assert abs(truncnorm_logpdf(x, m, s, lo, hi) - want) < 1e-9
    assert truncnorm_logpdf(5.0, 0.0, 1.0, -1.0, 1.0) == -math.inf


def test_log_normal_mass_far_tail():
    # upper tail far beyond where 1 - Phi loses precision
    got = log_normal_mass(30.0, 31.0)
    want = stats.norm.logsf(30.0) + math.log1p(-math.exp(stats.norm.logsf(31.0) - stats.norm.logsf(30.0)))
    assert abs(got - want) < 1e-9


def test_sample_truncnorm_distribution():
    rng = np.random.default_rng(2)
    x = sample_truncnorm(rng, np.full(20000, 1.0), 2.0, 0.5, 4.0)
    assert x.min() >= 0.5 and x.max() <= 4.0
    ks = stats.kstest(x, stats.truncnorm((0.5 - 1) / 2, (4 - 1) / 2, loc=1, scale=2).cdf)
    assert ks.pvalue > 0.01
    # a far tail stays inside the interval
    y = sample_truncnorm(rng, np.full(1000, 0.0), 1.0, 12.0, 13.0)
    assert np.all((y >= 12.0) & (y <= 13.0))


def test_coefficient_prior_examples():
    tpp = _tpp(C=1.0, sigma_g_sd=1.0, tau_sq=1.0)
    assert abs(coefficient_prior_logpdf(tpp) - (-1.5 * math.log(2 * math.pi) - 1.0)) < 1e-12
    m = np.array([0.3, -0.2, 0.5])
    base = coefficient_prior_logpdf(_tpp(m_F=m[0], m_S=m[1], m_R=m[2], C=1.0, sigma_g_sd=1.0))
    scaled = coefficient_prior_logpdf(_tpp(m_F=3 * m[0], m_S=3 * m[1], m_R=3 * m[2], C=3.0, sigma_g_sd=1.0))
    assert abs(scaled - base + 3 * math.log(3)) < 1e-12


def test_coefficient_prior_density_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m, C, sd, t2 = rng.normal(size=3), rng.uniform(0.1, 1), rng.uniform(1, 10), rng.gamma(1)
        tpp = _tpp(m_F=m[0], m_S=m[1], m_R=m[2], C=C, sigma_g_sd=sd, tau_sq=t2)
        want = stats.norm.logpdf(m, 0, C * sd).sum() + stats.expon.logpdf(t2)
        assert abs(coefficient_prior_logpdf(tpp) - want) < 1e-12


def test_enumerate_patterns():
    pats, conc = enumerate_patterns(2, (1.0, 0.5))
    assert pats == [{1}, {2}, {1, 2}]
    assert conc.tolist() == [1.0, 1.0, 0.5]
    pats, conc = enumerate_patterns(1, (2.0,))
    assert pats == [{1}] and conc.tolist() == [2.0]
    pats, sizes = enumerate_patterns(3)
    assert len(pats) == 7 and sorted(np.bincount(sizes)[1:].tolist()) == [1, 3, 3]


def test_dirichlet_prior_favours_small_patterns():
    conc = enumerate_patterns(2, (1.0, 0.5))[1]
    q = np.random.default_rng(4).dirichlet(conc, 20000)
    assert q[:, 2].mean() < q[:, 0].mean() and q[:, 2].mean() < q[:, 1].mean()


def _bp(**kw):
    base = dict(d=[[0.0, 0.0]], tau=[[0.0, 0.0]], pattern=[0], s_sq=0.5, pi_group=[0.5],
                q=[[0.4, 0.4, 0.2]], a_dirichlet=(1.0, 0.5))
    base.update(kw)
    return BsgsdParams(**base)


def _hyper_terms(bp):
    conc = np.array([1.0, 1.0, 0.5])
    out = -math.log(10) - 1 / (10 * bp.s_sq) - 2 * math.log(bp.s_sq)
    for g in range(bp.d.shape[0]):
        out += stats.beta.logpdf(bp.pi_group[g], 1, 1) + stats.dirichlet.logpdf(bp.q[g], conc)
    return out


def test_bsgsd_pure_spike():
    bp = _bp(d=[[0.0, 0.0], [0.0, 0.0]], tau=[[0.0, 0.0], [0.0, 0.0]], pattern=[0, 1],
             pi_group=[0.5, 0.5], q=[[0.4, 0.4, 0.2], [0.3, 0.5, 0.2]])
    want = 2 * math.log(0.5) + math.log(0.4) + math.log(0.5) + _hyper_terms(bp)
    # zero-valued taus in the pattern enter through the half-normal at 0
    want += halfnormal_logpdf(0.0, 0.5) * 2
    assert abs(bsgsd_log_prior(bp) - want) < 1e-12


def test_bsgsd_single_feature_half_normal():
    bp = _bp(d=[[0.7, -0.2]], tau=[[0.3, 0.0]], pattern=[0])
    want = (math.log(0.5) + stats.norm.logpdf([0.7, -0.2]).sum() + math.log(0.4)
            + math.log(2) + stats.norm.logpdf(0.3, 0, math.sqrt(0.5)) + _hyper_terms(bp))
    assert abs(bsgsd_log_prior(bp) - want) < 1e-12


def test_bsgsd_off_pattern_magnitude_is_impossible():
    assert bsgsd_log_prior(_bp(d=[[1.0, 1.0]], tau=[[0.3, 0.2]], pattern=[0])) == -math.inf
    with pytest.raises(ValueError):
        bsgsd_log_prior(_bp(tau=[[-0.1, 0.0]]))


def test_bsgsd_j1_is_plain_spike_and_slab():
    bp = BsgsdParams(d=[[0.8]], tau=[[0.4]], pattern=[0], s_sq=0.3, pi_group=[0.2], q=[[1.0]],
                     a_dirichlet=(1.0,))
    want = (math.log(0.8) + stats.norm.logpdf(0.8) + stats.halfnorm.logpdf(0.4, scale=math.sqrt(0.3))
            + stats.beta.logpdf(0.2, 1, 1) + stats.invgamma.logpdf(0.3, 1, scale=1 / 10))
    assert abs(bsgsd_log_prior(bp) - want) < 1e-12


def test_rw2_prior_oracle():
    rng = np.random.default_rng(5)
    g = rng.normal(size=6)
    lam = 3.0
    want = (stats.norm.logpdf(g[0], 0, 1.5) + stats.norm.logpdf(g[1] - g[0], 0, 1.5)
            + stats.norm.logpdf(np.diff(g, 2), 0, 1 / math.sqrt(lam)).sum())
    assert abs(spline_rw2_logpdf(g, lam, 1.5) - want) < 1e-12


def test_misc_priors_oracle(small_spec):
    st = sample_prior(small_spec, 0, np.random.default_rng(6))
    st.D = np.eye(2)
    h = small_spec.hyper
    want = (stats.norm.logpdf(st.beta, 0, 100).sum()
            + stats.invgamma.logpdf(st.sigma2, h.sigma2_shape, scale=h.sigma2_scale).sum()
            + stats.invwishart.logpdf(np.eye(2), df=4, scale=np.eye(2))
            + stats.norm.logpdf(st.delta, 0, 10).sum() + stats.norm.logpdf(st.gamma0, 0, 10)
            + spline_rw2_logpdf(st.gammas, st.lam, 1.0)
            + stats.gamma.logpdf(st.lam, h.lambda_shape, scale=1 / h.lambda_rate))
    assert abs(misc_priors_logpdf(st, small_spec) - want) < 1e-9
    before = misc_priors_logpdf(st, small_spec)
    d = st.delta.copy()
    st.delta = 2 * d
    assert abs(misc_priors_logpdf(st, small_spec) - before + 1.5 * (d @ d) / 100) < 1e-9


def test_all_logpdfs_finite_on_support(small_spec):
    from jmthresh.priors import log_prior

    rng = np.random.default_rng(7)
    for _ in range(30):
        assert np.isfinite(log_prior(sample_prior(small_spec, 0, rng), small_spec))


@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
       m=st.lists(st.floats(-20, 20), min_size=3, max_size=3), gv=st.floats(10, 300))
def test_prior_means_average_to_guideline(small_spec, p, m, gv):
    import copy

    spec = copy.deepcopy(small_spec)
    p = np.array(p) / sum(p)  # in STRATA order
    sex = np.array([s for s, _ in STRATA])
    race = np.array([r for _, r in STRATA])
    spec.weights = (float(p @ sex), float(p @ race))
    spec.factors[0].gv = gv
    means = threshold_prior_means(np.array([m]), spec)[0]  # (J, strata)
    # averaging over strata and the two paired feature types recovers gv
    assert abs(np.mean(means @ p) - gv) < 1e-10 * gv
    assert abs(means[0] @ p - means[1] @ p - 2 * m[0]) < 1e-9 * gv
