"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5 and 6 fit 40 simulated cohorts and take about two hours on one core.
"""
from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES, random_active_state
from jmthresh.cli import main
from jmthresh.features import TrajectoryParams, area_feature
from jmthresh.geweke import compare, forward_draws, geweke_design, geweke_spec, successive_draws
from jmthresh.io import dataset_frames, ingest, write_dataset
from jmthresh.likelihood import FitContext, cumulative_hazard, log_hazard_grid
from jmthresh.model import STRATA, Hyper, prepare_spec, stratum_index
from jmthresh.priors import compute_weights, threshold_prior_means
from jmthresh.sampler import SamplerConfig, init_state, run_chain, sample
from jmthresh.simulator import scenario, simulate_dataset
from jmthresh.spline import KnotVector, eval_basis
from jmthresh.summaries import summarize, threshold_difference
from test_features import riemann_area

GV = 30.0
VALUE, SEX_GAP = 0, (0, 2)  # Male-White vs Female-White thresholds of the value feature


def report(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})"


# ---- 1. numerical kernels ------------------------------------------------------

def aligned_riemann(s, st, spec, row, n=10 ** 6):
    """Midpoint sum of the hazard with n cells, split where the trajectory
    crosses a threshold so no cell straddles a jump."""
    a = st.beta[0, 0] + st.b[row, 0]
    c = st.beta[0, 1] + st.b[row, 1]
    cuts = [0.0, s.T]
    for x in st.thresholds[0, :, stratum_index(s.sex, s.race)]:
        if np.isfinite(x) and c != 0 and 0 < (x - a) / c < s.T:
            cuts.append((x - a) / c)
    cuts = np.unique(cuts)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        k = max(1, int(round(n * (hi - lo) / s.T)))
        h = (hi - lo) / k
        for start in range(0, k, 200_000):
            j = np.arange(start, min(start + 200_000, k))
            total += float(np.sum(np.exp(log_hazard_grid(s, lo + (j + 0.5) * h, st, spec, row)))) * h
    return total


def test_criterion_1_numerical_kernels():
    t0 = time.time()
    data = simulate_dataset(scenario("C"), 200, 11)
    spec = prepare_spec(data, {"BMI": GV})
    rng = np.random.default_rng(2024)
    haz_err = 0.0
    for _ in range(100):
        st = random_active_state(spec, data.n, rng, na_prob=0.0)
        i = int(rng.integers(data.n))
        s = data.subject(i)
        want = aligned_riemann(s, st, spec, i)
        haz_err = max(haz_err, abs(cumulative_hazard(s, st, spec, row=i) - want) / want)
    area_err = 0.0
    for _ in range(100):
        a, c = rng.uniform(20, 40), rng.normal(0, 1.5)
        gamma, t = rng.uniform(20, 40), rng.uniform(1, 20)
        want = riemann_area(a, c, gamma, t)
        got = area_feature(TrajectoryParams([a, c], [0, 0]), t, gamma)
        area_err = max(area_err, abs(got - want) / max(abs(want), 1.0))
    pou_err = 0.0
    for kv in (KnotVector(3, (5.0, 10.0), (0.0, 20.0)), KnotVector(3, (), (0.0, 1.0)),
               KnotVector(2, tuple(np.sort(rng.uniform(0, 7, 6))), (0.0, 7.0))):
        x = np.concatenate([rng.uniform(*kv.boundary, 10 ** 5), kv.boundary, kv.interior_knots])
        pou_err = max(pou_err, float(np.max(np.abs(eval_basis(x, kv).sum(axis=1) - 1))))
    runtime = time.time() - t0
    ok = haz_err < 1e-5 and area_err < 1e-6 and pou_err < 1e-12 and runtime < 60
    report(1, ok, f"hazard rel err {haz_err:.1e}, area {area_err:.1e}, partition {pou_err:.1e}, "
                  f"{runtime:.0f}s")
    assert ok


# ---- 2. prior constraint -------------------------------------------------------

def test_criterion_2_prior_constraint():
    rng = np.random.default_rng(7)
    base = scenario("B").spec
    worst_avg = worst_ft = 0.0
    for _ in range(10):
        n = int(rng.integers(50, 2000))
        cell = rng.choice(4, size=n, p=rng.dirichlet(np.ones(4)))
        sex = np.array([STRATA[l][0] for l in cell])
        race = np.array([STRATA[l][1] for l in cell])
        w1, w2, p = compute_weights((sex, race))
        spec = replace(base, weights=(w1, w2), hyper=Hyper(C=float(rng.uniform(0.1, 0.5))))
        sd = spec.hyper.C * spec.factors[0].sd
        m = rng.normal(0.0, sd, size=(10 ** 4, 3))  # prior draws of (m_F, m_S, m_R)
        means = threshold_prior_means(m, spec)  # (draws, feature type, stratum)
        cells = np.array([p[s, r] for s, r in STRATA])
        pop = means @ cells  # population average per draw and feature type
        worst_avg = max(worst_avg, float(np.max(np.abs(pop.mean(axis=1) - spec.factors[0].gv))))
        # the feature-type coding is +/-1, so the two deviations from gv cancel
        dev = pop - spec.factors[0].gv
        worst_ft = max(worst_ft, float(np.max(np.abs(dev[:, 0] + dev[:, 1]))))
        worst_ft = max(worst_ft, float(np.max(np.abs(dev[:, 0] - m[:, 0]))))
    ok = worst_avg < 1e-10 and worst_ft < 1e-10
    report(2, ok, f"max |average - gv| {worst_avg:.1e}, feature-type residual {worst_ft:.1e}")
    assert ok


# ---- 3. joint-distribution test ------------------------------------------------

def test_criterion_3_geweke():
    t0 = time.time()
    spec = geweke_spec()
    fwd = forward_draws(spec, 20, 2 * 10 ** 4, seed=1)
    suc = successive_draws(spec, geweke_design(20), 2 * 10 ** 4, seed=2, n_adapt=500)
    z = compare(fwd, suc)
    name, worst = max(z, key=lambda kv: abs(kv[1]))
    runtime = time.time() - t0
    ok = abs(worst) < 4 and runtime < 600
    report(3, ok, f"{len(z)} moments, max |z| {abs(worst):.2f} ({name}), {runtime:.0f}s")
    assert ok


# ---- 4. transdimensional kernels ------------------------------------------------

A_BINS = np.array([-np.inf, -0.02, 0.0, 0.02, np.inf])


def _cell(group_in, alpha, gamma):
    """0 = group excluded; otherwise 1 + 3 * alpha bin + (NA, <= gv, > gv)."""
    if not group_in:
        return 0
    a = int(np.searchsorted(A_BINS, alpha)) - 1
    return 1 + 3 * a + (0 if np.isnan(gamma) else 1 if gamma <= GV else 2)


def test_criterion_4_transdimensional():
    t0 = time.time()
    data = simulate_dataset(scenario("B"), 40, 21)
    W = data.W.copy()
    W[:, 0] = W[:, 1] = 1  # one (sex, race) stratum, so a single threshold enters
    data = replace(data, W=W)
    spec = prepare_spec(data, {"BMI": GV})
    rng = np.random.default_rng(0)
    st = init_state(spec, data, rng)
    st.b = rng.multivariate_normal(np.zeros(2), np.diag([4.0, 0.01]), size=data.n)
    st.pattern[:] = 0  # value feature only
    st.s2, st.tau = 0.03 ** 2, np.array([[0.03, 0.0]])
    st.pi_group[:], st.tau2[:], st.pi_na[:], st.m[:] = 0.5, 1 / 9.0, 0.3, 0.0
    # only inclusion, (tau, d) and threshold moves run; everything else is fixed
    cfg = SamplerConfig(n_iter=105_000, burn_in=5000,
                        moves=("group", "d_tau", "scale", "thr_jump", "thr_within"))
    dr = run_chain(spec, data, cfg, np.random.default_rng(1), state=st).draws
    alpha = dr["tau"][:, 0, 0] * dr["d"][:, 0, 0]
    cells = [_cell(g, a, x) for g, a, x in zip(dr["group_in"][:, 0], alpha, dr["thresholds"][:, 0, 0, 0])]
    emp = np.bincount(cells, minlength=13) / len(cells)

    # oracle: the posterior is (1 - pi) HN(tau) N(d) p(gamma) L(tau d, gamma) when
    # included and pi L(0) otherwise; tau, d and gamma are integrated on
    # equal-mass prior quantile grids, the likelihood is interpolated in alpha
    f = spec.factors[0]
    ctx = FitContext(data, spec)
    a_, c_ = ctx.trajectories(st.beta, st.b)
    eta = st.gamma0 + ctx.Wd @ st.delta

    def loglik(al, gam):
        thr = np.full((data.n, 1, 2), -np.inf)
        thr[:, 0, 0] = gam
        I, LH = ctx.survival_parts(None, a_, c_, np.array([[al, 0.0]]), thr, st.gammas)
        return float(np.sum(ctx.event * (eta + LH) - np.exp(eta) * I))

    u = (np.arange(300) + 0.5) / 300
    alphas = (math.sqrt(st.s2) * stats.halfnorm.ppf(u)[:, None] * stats.norm.ppf(u)[None, :]).ravel()
    ug = (np.arange(200) + 0.5) / 200
    sd = 1 / math.sqrt(st.tau2[0])
    gams = stats.truncnorm.ppf(ug, (f.lower - GV) / sd, (f.upper - GV) / sd, loc=GV, scale=sd)
    grid = np.linspace(alphas.min(), alphas.max(), 241)
    L = np.array([[loglik(a, g) for g in gams] for a in grid])
    L_na = np.array([loglik(a, -np.inf) for a in grid])
    L_out = loglik(0.0, -np.inf)
    ref = max(L.max(), L_na.max(), L_out)
    abin = np.searchsorted(A_BINS, alphas) - 1
    mass = np.zeros(13)
    mass[0] = st.pi_group[0] * math.exp(L_out - ref)
    p_in, p_na = 1 - st.pi_group[0], st.pi_na[0, 0]
    for k, g in enumerate(gams):
        w = np.exp(np.interp(alphas, grid, L[:, k]) - ref)
        np.add.at(mass, 1 + 3 * abin + (1 if g <= GV else 2), p_in * (1 - p_na) * w / (gams.size * alphas.size))
    w = np.exp(np.interp(alphas, grid, L_na) - ref)
    np.add.at(mass, 1 + 3 * abin, p_in * p_na * w / alphas.size)
    mass /= mass.sum()
    tv = 0.5 * float(np.abs(emp - mass).sum())
    runtime = time.time() - t0
    ok = tv < 0.05 and runtime < 300
    report(4, ok, f"TV {tv:.4f} over 13 cells, 10^5 sweeps, {runtime:.0f}s")
    assert ok


# ---- 5 and 6. simulation studies -------------------------------------------------

def _fit_summary(name, n, seed, n_iter, n_chains, hyper=None):
    data = simulate_dataset(scenario(name), n, seed)
    spec = prepare_spec(data, {"BMI": GV}, hyper=hyper)
    cfg = SamplerConfig(n_iter=n_iter, burn_in=n_iter // 2, n_chains=n_chains, rng_seed=seed)
    store = sample(spec, data, cfg)
    return summarize(store, spec), threshold_difference(store, *SEX_GAP, 0, VALUE)


@pytest.fixture(scope="module")
def scenario_b_fits():
    t0 = time.time()
    fits = [_fit_summary("B", 500, seed, 10 ** 4, 3) for seed in range(1, 21)]
    return fits, time.time() - t0


@pytest.mark.slow
def test_criterion_5_recovery(scenario_b_fits):
    fits, runtime = scenario_b_fits
    truth = scenario("B").state.thresholds[0, VALUE]
    covered = np.zeros(4, int)
    sel_ok = 0
    worst = [100.0, 0.0]
    for summ, _ in fits:
        rows = summ.thresholds[summ.thresholds.feature == "Value-BMI"]
        covered += ((rows["q2.5"].to_numpy() <= truth) & (truth <= rows["q97.5"].to_numpy()))
        sel = summ.selection.set_index("feature").selection_pct
        sel_ok += int(sel["Value-BMI"] > 90 and sel["Area-BMI"] < 50)
        worst = [min(worst[0], sel["Value-BMI"]), max(worst[1], sel["Area-BMI"])]
    ok = covered.min() >= 16 and sel_ok == len(fits) and runtime <= 7200
    report(5, ok, f"coverage per stratum {covered.tolist()}/20, selection pattern in {sel_ok}/20 "
                  f"(lowest value {worst[0]:.1f}%, highest area {worst[1]:.1f}%), {runtime / 60:.0f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_threshold_gaps(scenario_b_fits):
    b_fits, _ = scenario_b_fits
    c_diffs = [_fit_summary("C", 1000, seed, 4000, 2)[1] for seed in range(101, 121)]
    hits = sum(d.significant for d in c_diffs)
    quiet = sum(not d.significant for _, d in b_fits)
    ok = hits >= 12 and quiet >= 17
    report(6, ok, f"scenario C gap flagged in {hits}/20, scenario B no gap in {quiet}/20")
    assert ok


# ---- 7. stability across C -------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_stability_across_C():
    means = []
    for C in (0.2, 0.3, 0.4):
        summ, _ = _fit_summary("B", 500, 1, 6000, 2, hyper=Hyper(C=C))
        rows = summ.thresholds[summ.thresholds.feature == "Value-BMI"]
        means.append(rows["mean"].to_numpy())
    means = np.array(means)
    spread = float(np.max(means.max(axis=0) - means.min(axis=0)))
    ok = spread < 1.5
    report(7, ok, f"max spread of threshold means over C in 0.2-0.4: {spread:.3f}")
    assert ok


# ---- 8. reproducibility ------------------------------------------------------------

def test_criterion_8_reproducibility(tmp_path):
    import yaml

    sim = tmp_path / "sim"
    assert main(["simulate", "--scenario", "C", "--n", "60", "--seed", "4", "--out", str(sim), "-q"]) == 0
    cfg = yaml.safe_load((sim / "config.yaml").read_text())
    cfg["sampler"] = {"n_iter": 60, "burn_in": 20, "n_chains": 2}
    (sim / "run.yaml").write_text(yaml.safe_dump(cfg))
    main(["fit", "--config", str(sim / "run.yaml"), "--out", str(tmp_path / "a"), "-q"])
    main(["fit", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b"), "-q"])
    same_store = (tmp_path / "a" / "samples.zip").read_bytes() == (tmp_path / "b" / "samples.zip").read_bytes()
    data = ingest(sim / "longitudinal.csv", sim / "baseline.csv")
    lp, bp = write_dataset(data, tmp_path / "copy")
    same_files = (lp.read_bytes() == (sim / "longitudinal.csv").read_bytes()
                  and bp.read_bytes() == (sim / "baseline.csv").read_bytes())
    back = ingest(lp, bp)
    same_data = all(x.equals(y) for x, y in zip(dataset_frames(data), dataset_frames(back)))
    ok = same_store and same_files and same_data
    report(8, ok, f"store identical {same_store}, files identical {same_files}, "
                  f"data identical {same_data}")
    assert ok
