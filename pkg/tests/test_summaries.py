from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jmthresh.sampler import ChainDraws, SampleStore
from jmthresh.summaries import (EmptyStoreError, describe, diagnostics, ess, long_format, quantile7,
                                rhat, rhat_offenders, summarize, threshold_difference,
                                threshold_table)


def fake_chain(n, rng, thresholds=None, group_in=None, gamma0=None):
    """Draws of a G=1, J=2 model with both features selected."""
    draws = {
        "beta": rng.normal(30, 0.1, (n, 1, 2)), "sigma2": np.ones((n, 1)),
        "D": np.tile(np.eye(2), (n, 1, 1)), "delta": rng.normal(size=(n, 3)),
        "gamma0": rng.normal(size=n) if gamma0 is None else np.asarray(gamma0, float),
        "gammas": rng.normal(size=(n, 4)), "lam": np.ones(n),
        "group_in": np.ones((n, 1), bool) if group_in is None else np.asarray(group_in).reshape(n, 1),
        "d": np.ones((n, 1, 2)), "tau": np.full((n, 1, 2), 0.05), "pattern": np.full((n, 1), 2),
        "pi_group": np.full((n, 1), 0.5), "q": np.full((n, 1, 3), 1 / 3), "s2": np.ones(n),
        "thresholds": rng.normal(30, 1, (n, 1, 2, 4)) if thresholds is None else thresholds,
        "m": np.zeros((n, 1, 3)), "tau2": np.ones((n, 1)), "pi_na": np.full((n, 1, 2), 0.5),
    }
    draws["d"] = np.where(draws["group_in"][..., None], draws["d"], 0.0)
    draws["thresholds"] = np.where(draws["group_in"][..., None, None], draws["thresholds"], np.nan)
    return ChainDraws(draws, {"beta": {"accepted": 5.0, "proposed": 10.0}}, [0])


def fake_store(chains, C=0.3):
    return SampleStore(list(chains), {"hyper": {"C": C}}, {}, 0, ["BMI"], ["race", "sex", "smoking"])


def test_constant_chain():
    d = describe(np.full(50, 2.5))
    assert d["mean"] == d["median"] == d["q2.5"] == d["q97.5"] == 2.5 and d["sd"] == 0


def test_type7_quantiles():
    x = np.arange(1, 101)
    assert quantile7(x, 0.025) == pytest.approx(3.475, abs=1e-12)
    assert quantile7(x, 0.975) == pytest.approx(97.525, abs=1e-12)
    assert describe(x)["median"] == 50.5


def test_selection_percentage():
    rng = np.random.default_rng(0)
    g = np.zeros(100, bool)
    g[:47] = True
    s = summarize(fake_store([fake_chain(100, rng, group_in=g)]))
    assert list(s.selection.selection_pct) == [47.0, 47.0]
    # selection is the complement of the spike occupancy
    spike = 100.0 * (~g).mean()
    assert np.allclose(s.selection.selection_pct + spike, 100.0)
    na = s.thresholds.na_pct.to_numpy()
    assert np.allclose(na, 53.0)


def test_rhat_iid_chains():
    x = np.random.default_rng(1).normal(size=(4, 1000))
    assert 0.99 <= rhat(x) <= 1.02


def test_rhat_duplicated_and_shifted_chains():
    x = np.random.default_rng(2).normal(size=2000)
    assert 0.99 <= rhat(np.stack([x, x])) <= 1.02
    assert rhat(np.stack([x, x + 3])) > 1.5


def test_ess_iid_and_ar1():
    rng = np.random.default_rng(3)
    assert ess(rng.normal(size=(2, 5000))) == pytest.approx(10000, rel=0.1)
    rho, n = 0.9, 10 ** 5
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho ** 2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    want = (1 - rho) / (1 + rho)
    assert ess(x) / n == pytest.approx(want, rel=0.3)


def test_threshold_difference_identical_and_offset():
    rng = np.random.default_rng(4)
    thr = rng.normal(30, 1, (400, 1, 2, 4))
    thr[:, 0, 0, 1] = thr[:, 0, 0, 0]
    thr[:, 0, 0, 2] = thr[:, 0, 0, 0] + 5 + rng.normal(0, 0.5, 400)
    store = fake_store([fake_chain(400, rng, thresholds=thr)])
    same = threshold_difference(store, 0, 1, 0, 0)
    assert same.conclusive and same.mean == 0 and not same.significant
    off = threshold_difference(store, 2, 0, 0, 0)
    assert off.significant and off.mean == pytest.approx(5, abs=0.1) and off.n_used == 400


def test_threshold_difference_inconclusive():
    rng = np.random.default_rng(5)
    thr = rng.normal(30, 1, (200, 1, 2, 4))
    thr[:185, 0, 0, 3] = np.nan  # real in 7.5% of draws
    store = fake_store([fake_chain(200, rng, thresholds=thr)])
    r = threshold_difference(store, 0, 3, 0, 0)
    assert not r.conclusive and not r.significant
    assert threshold_difference(store, 0, 1, 0, 0).conclusive


@settings(max_examples=25, deadline=None)
@given(n1=st.integers(2, 30), n2=st.integers(2, 30), seed=st.integers(0, 10 ** 6))
def test_pooling_chains_equals_concatenation(n1, n2, seed):
    rng = np.random.default_rng(seed)
    a, b = fake_chain(n1, rng), fake_chain(n2, rng)
    joined = ChainDraws({k: np.concatenate([a.draws[k], b.draws[k]]) for k in a.draws}, {}, [0])
    s1, s2 = summarize(fake_store([a, b])), summarize(fake_store([joined]))
    np.testing.assert_allclose(s1.params[["mean", "q2.5", "q97.5"]], s2.params[["mean", "q2.5", "q97.5"]])
    np.testing.assert_allclose(s1.thresholds["mean"], s2.thresholds["mean"])


def test_threshold_table_rows():
    rng = np.random.default_rng(6)
    sums = [summarize(fake_store([fake_chain(50, rng)], C=c)) for c in (0.4, 0.2, 0.3)]
    t = threshold_table(sums)
    assert len(t) == 2 * 4 * 3
    assert list(t.feature[:12]) == ["Value-BMI"] * 12
    assert list(t.C[:3]) == [0.2, 0.3, 0.4]
    assert list(zip(t.sex, t.race))[::3][:4] == [("Male", "White"), ("Male", "Black"),
                                                  ("Female", "White"), ("Female", "Black")]
    assert {"mean", "median", "q2.5", "q97.5", "na_pct"} <= set(t.columns)


def test_table1_rows():
    s = summarize(fake_store([fake_chain(60, np.random.default_rng(7))]))
    t1 = s.table1()
    assert list(t1.term) == ["race", "sex", "smoking", "Value-BMI", "Area-BMI"]
    assert np.all(t1.selection_pct.iloc[3:] == 100.0)


def test_empty_store():
    with pytest.raises(EmptyStoreError):
        summarize(fake_store([]))
    with pytest.raises(EmptyStoreError):
        diagnostics(fake_store([fake_chain(0, np.random.default_rng(0))]))


def test_diagnostics_report():
    rng = np.random.default_rng(8)
    good = fake_store([fake_chain(200, rng), fake_chain(200, rng)])
    rep = diagnostics(good)
    assert not any(p.startswith("alpha[") for p in rep["convergence"].parameter)
    assert rhat_offenders(rep) == []
    assert list(rep["occupancy"].feature) == ["Value-BMI", "Area-BMI"]
    assert set(rep["acceptance"].rate) == {0.5}
    bad = fake_store([fake_chain(200, rng, gamma0=np.zeros(200)),
                      fake_chain(200, rng, gamma0=np.full(200, 5.0) + rng.normal(size=200))])
    assert rhat_offenders(diagnostics(bad)) == ["gamma0"]


def test_long_format():
    rng = np.random.default_rng(9)
    df = long_format(fake_store([fake_chain(10, rng), fake_chain(10, rng)]))
    assert set(df.columns) == {"chain", "draw", "parameter", "value"}
    assert len(df[df.parameter == "gamma0"]) == 20
