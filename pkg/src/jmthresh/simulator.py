"""Synthetic cohorts drawn from a known truth, and brute-force oracles.

Every subject has its own random stream, ``SeedSequence(seed, spawn_key=(i,))``,
so subject ``i`` of an ``n``-subject cohort is the same person in any larger
cohort drawn with the same seed.  Event times come from inverting the
cumulative hazard by bisection on ``[0, admin_end]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .likelihood import FitContext, log_hazard_grid
from .model import STRATA, Dataset, FactorSpec, Hyper, LongitudinalObs, ModelSpec, SubjectData
from .priors import pattern_masks
from .spline import KnotVector
from .state import ParameterState

DEFAULT_VISITS = (0.0, 3.0, 6.0, 9.0, 12.0, 21.0, 27.0)
BISECTION_TOL = 1e-8


@dataclass
class GroundTruth:
    """Truth used to generate a cohort.

    ``spec`` carries factor names, guideline values, covariate names and the
    truth's own baseline-hazard knots; ``state.b`` is ignored (random effects are
    drawn per subject from ``N(0, state.D)``).
    """

    spec: ModelSpec
    state: ParameterState
    horizon: float = 20.0
    visits: tuple = DEFAULT_VISITS  # scaled so the last visit falls on the horizon
    censor_range: tuple | None = None  # uniform censoring; default [horizon/2, horizon]
    strata_probs: tuple = (0.35, 0.10, 0.40, 0.15)  # in STRATA order
    smoking_prev: float = 0.25

    def __post_init__(self) -> None:
        p = np.asarray(self.strata_probs, float)
        if p.shape != (4,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("strata_probs must be four probabilities summing to one")
        if self.censor_range is None:
            self.censor_range = (0.5 * self.horizon, self.horizon)

    @property
    def visit_times(self) -> np.ndarray:
        v = np.asarray(self.visits, float)
        return v * (self.horizon / v.max()) if v.max() > 0 else v

    @property
    def admin_end(self) -> float:
        return float(self.horizon)

    def to_dict(self) -> dict:
        st = {k: (np.asarray(v).tolist() if not isinstance(v, float) else v)
              for k, v in self.state.flat().items() if k != "b"}
        st["thresholds"] = [[[None if np.isnan(x) else float(x) for x in row] for row in mat]
                            for mat in self.state.thresholds]
        return {"spec": self.spec.to_dict(), "state": st, "horizon": self.horizon,
                "visits": list(self.visits), "censor_range": list(self.censor_range),
                "strata_probs": list(self.strata_probs), "smoking_prev": self.smoking_prev}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        spec = ModelSpec.from_dict(d["spec"])
        st = dict(d["state"])
        st["thresholds"] = np.array([[[np.nan if x is None else x for x in row] for row in mat]
                                     for mat in st["thresholds"]], float)
        kinds = {"group_in": bool, "pattern": np.int64}
        args = {k: np.asarray(v, dtype=kinds.get(k, float)) for k, v in st.items()}
        for k in ("gamma0", "lam", "s2"):
            args[k] = float(args[k])
        args["b"] = np.zeros((0, spec.R))
        return cls(spec, ParameterState(**args), d["horizon"], tuple(d["visits"]),
                   tuple(d["censor_range"]), tuple(d["strata_probs"]), d["smoking_prev"])


def subject_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def _draw_subject_inputs(gt: GroundTruth, rng: np.random.Generator):
    spec, st = gt.spec, gt.state
    l = rng.choice(4, p=np.asarray(gt.strata_probs))
    sex, race = STRATA[l]
    smoking = int(rng.uniform() < gt.smoking_prev)
    b = rng.multivariate_normal(np.zeros(spec.R), st.D)
    u = rng.uniform()
    cens = rng.uniform(*gt.censor_range)
    noise = rng.normal(size=(spec.G, gt.visit_times.size))
    return {"race": race, "sex": sex, "smoking": smoking}, b, u, cens, noise


def event_times_by_bisection(ctx: FitContext, state: ParameterState, target: np.ndarray,
                             t_max: float, tol: float = BISECTION_TOL) -> np.ndarray:
    """Smallest t in [0, t_max] with H_i(t) = target_i; ``inf`` when H_i(t_max) < target_i."""
    n = target.size
    a, c = ctx.trajectories(state.beta, state.b)
    thr = ctx.subject_thresholds(state.thresholds)
    eta = state.gamma0 + ctx.Wd @ state.delta

    def H(t):
        I, _ = ctx.survival_parts(state, a, c, state.alpha, thr, state.gammas, upper=t)
        with np.errstate(over="ignore"):
            return np.exp(eta) * I

    lo = np.zeros(n)
    hi = np.full(n, float(t_max))
    beyond = H(hi) < target
    n_steps = max(1, int(math.ceil(math.log2(t_max / tol))))
    for _ in range(n_steps):
        mid = 0.5 * (lo + hi)
        up = H(mid) >= target
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return np.where(beyond, np.inf, hi)


def simulate_from_state(spec: ModelSpec, state: ParameterState, W: np.ndarray,
                        covariate_names, visit_times, uniforms, censor_times, noise,
                        admin_end: float, ids=None) -> Dataset:
    """Cohort from fixed inputs: covariates ``W``, random effects ``state.b``,
    survival uniforms, censoring times and standard-normal visit noise
    ``(n, G, visits)``.  Records at visits after the observed time are dropped."""
    n = W.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids)
    visit_times = np.asarray(visit_times, float)
    placeholder = Dataset(ids, list(covariate_names), W, np.full(n, admin_end), np.zeros(n, int),
                          [f.name for f in spec.factors],
                          [LongitudinalObs([], [], []) for _ in spec.factors])
    ctx = FitContext(placeholder, spec)
    t_star = event_times_by_bisection(ctx, state, -np.log(uniforms), admin_end)
    end = np.minimum(censor_times, admin_end)
    T = np.minimum(t_star, end)
    event = (t_star <= end).astype(np.int64)
    a, c = ctx.trajectories(state.beta, state.b)
    obs = []
    for g in range(spec.G):
        keep = visit_times[None, :] <= T[:, None]
        sd = math.sqrt(state.sigma2[g])
        y = a[:, g, None] + c[:, g, None] * visit_times[None, :] + sd * noise[:, g, :]
        rows, cols = np.nonzero(keep)
        obs.append(LongitudinalObs(rows, visit_times[cols], y[rows, cols]))
    return Dataset(ids, list(covariate_names), W, T, event, [f.name for f in spec.factors], obs)


def simulate_dataset(gt: GroundTruth, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be a positive number of subjects")
    names = ["race", "sex", "smoking"]
    W = np.empty((n, 3))
    b = np.empty((n, gt.spec.R))
    u = np.empty(n)
    cens = np.empty(n)
    noise = np.empty((n, gt.spec.G, gt.visit_times.size))
    for i in range(n):
        cov, b[i], u[i], cens[i], noise[i] = _draw_subject_inputs(gt, subject_rng(seed, i))
        W[i] = [cov[k] for k in names]
    state = gt.state.copy()
    state.b = b
    return simulate_from_state(gt.spec, state, W, names, gt.visit_times, u, cens, noise,
                               gt.admin_end)


def simulate_subject(gt: GroundTruth, rng: np.random.Generator, id=0) -> SubjectData:
    names = ["race", "sex", "smoking"]
    cov, b, u, cens, noise = _draw_subject_inputs(gt, rng)
    state = gt.state.copy()
    state.b = b[None, :]
    W = np.array([[cov[k] for k in names]], float)
    data = simulate_from_state(gt.spec, state, W, names, gt.visit_times, np.array([u]),
                               np.array([cens]), noise[None], gt.admin_end, ids=[id])
    return data.subject(0)


def brute_force_cumhaz(s: SubjectData, state: ParameterState, spec: ModelSpec,
                       n_steps: int = 10 ** 6, upper: float | None = None, row: int = 0) -> float:
    """Midpoint Riemann sum of the hazard on a uniform grid over [0, T]."""
    if n_steps < 10 ** 4:
        raise ValueError("n_steps must be at least 10^4")
    T = s.T if upper is None else upper
    if T <= 0:
        return 0.0
    h = T / n_steps
    total = 0.0
    chunk = 200_000
    for start in range(0, n_steps, chunk):
        k = np.arange(start, min(start + chunk, n_steps))
        total += float(np.sum(np.exp(log_hazard_grid(s, (k + 0.5) * h, state, spec, row))))
    return total * h


# ---- benchmark scenarios ---------------------------------------------------

def _truth_state(G: int, *, group_in: bool, pattern_feats: tuple, tau, d, thresholds,
                 gamma0: float) -> ParameterState:
    masks = pattern_masks(2)
    pattern = [i for i, m in enumerate(masks) if tuple(np.flatnonzero(m)) == pattern_feats][0] \
        if pattern_feats else 0
    D = np.array([[16.0, 0.06], [0.06, 0.0225]])  # intercept sd 4, slope sd 0.15, corr 0.1
    thr = np.full((G, 2, 4), np.nan)
    for j, row in thresholds.items():
        thr[0, j] = row
    return ParameterState(
        beta=np.array([[28.0, 0.10]]), sigma2=np.array([1.5 ** 2]), b=np.zeros((0, 2)), D=D,
        delta=np.array([-0.2, 0.3, 0.5]), gamma0=gamma0, gammas=np.array([0.0, 0.1, 0.2, 0.3, 0.4]),
        lam=200.0, group_in=np.array([group_in]), d=np.array([d], float) if group_in else np.zeros((1, 2)),
        tau=np.array([tau], float), pattern=np.array([pattern]), pi_group=np.array([0.5]),
        q=np.array([[0.4, 0.4, 0.2]]), s2=0.01, thresholds=thr, m=np.zeros((G, 3)),
        tau2=np.ones(G), pi_na=np.full((G, 2), 0.5))


def _truth_spec(horizon: float) -> ModelSpec:
    knots = KnotVector(3, (0.5 * horizon,), (0.0, horizon))
    return ModelSpec([FactorSpec("BMI", 30.0, 5.0, 15.0, 50.0)], ["race", "sex", "smoking"],
                     knots, Hyper())


def make_benchmark_scenarios(horizon: float = 20.0) -> list[tuple[str, GroundTruth]]:
    """Four BMI-like cohorts (guideline value 30).

    A: no feature affects the hazard.
    B: current value above 33 (guideline + 3) in every stratum, area excluded.
    C: value thresholds 35 for men and 30 for women, area above 31 everywhere.
    D: current value enters linearly (NA threshold), area excluded.
    """
    spec = _truth_spec(horizon)
    out = []
    s_a = _truth_state(1, group_in=False, pattern_feats=(0,), tau=(0.0, 0.0), d=(0, 0),
                       thresholds={}, gamma0=-3.8)
    out.append(("A", GroundTruth(spec, s_a, horizon)))
    s_b = _truth_state(1, group_in=True, pattern_feats=(0,), tau=(0.04, 0.0), d=(1.0, 0.0),
                       thresholds={0: [33.0] * 4}, gamma0=-3.8)
    out.append(("B", GroundTruth(spec, s_b, horizon)))
    s_c = _truth_state(1, group_in=True, pattern_feats=(0, 1), tau=(0.04, 0.002), d=(1.0, 1.0),
                       thresholds={0: [35.0, 35.0, 30.0, 30.0], 1: [31.0] * 4}, gamma0=-4.0)
    out.append(("C", GroundTruth(spec, s_c, horizon)))
    s_d = _truth_state(1, group_in=True, pattern_feats=(0,), tau=(0.03, 0.0), d=(1.0, 0.0),
                       thresholds={0: [np.nan] * 4}, gamma0=-4.6)
    out.append(("D", GroundTruth(spec, s_d, horizon)))
    return out


def scenario(name: str, horizon: float = 20.0) -> GroundTruth:
    found = dict(make_benchmark_scenarios(horizon))
    if name not in found:
        raise KeyError(f"unknown scenario '{name}'; available: {sorted(found)}")
    return found[name]
