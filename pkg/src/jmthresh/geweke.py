"""Joint-distribution ("getting it right") test of the sampler.

Marginal-conditional draws take theta from the prior.  Successive-conditional
draws alternate one sampler sweep given the current data with fresh data given
the current theta.  Both target p(theta), so every monitored function has the
same first two moments under the two schemes unless a kernel is wrong.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import STRATA, Dataset, FactorSpec, Hyper, ModelSpec
from .sampler import Chain, SamplerConfig
from .simulator import simulate_from_state
from .spline import KnotVector
from .state import ParameterState, sample_prior

COVARIATES = ["race", "sex", "smoking"]


def geweke_spec(C: float = 0.3) -> ModelSpec:
    """A small model with tight priors so prior draws give well-behaved data."""
    df = 20.0
    hyper = Hyper(
        C=C, t_scale=100.0, beta_mean=[1.0, 0.05], beta_sd=[0.3, 0.02],
        sigma2_shape=20.0, sigma2_scale=20.0 * 0.25,
        D_scale=[(df - 3) * 0.25, (df - 3) * 0.0025], D_df=df,
        delta_sd=0.3, gamma0_mean=-2.5, gamma0_sd=0.3, spline_init_sd=0.3,
        lambda_shape=5.0, lambda_rate=0.05)
    knots = KnotVector(3, (5.0,), (0.0, 10.0))
    return ModelSpec([FactorSpec("X", 1.0, 1.0, -1.0, 3.0)], list(COVARIATES), knots, hyper,
                     weights=(0.5, 0.5))


@dataclass
class GewekeDesign:
    W: np.ndarray
    visits: np.ndarray
    censor_range: tuple = (5.0, 10.0)
    admin_end: float = 10.0


def geweke_design(n: int = 20, seed: int = 0) -> GewekeDesign:
    rng = np.random.default_rng(seed)
    strata = np.arange(n) % 4  # every (sex, race) cell populated
    W = np.array([[STRATA[l][1], STRATA[l][0], rng.uniform() < 0.3] for l in strata], float)
    return GewekeDesign(W, np.array([0.0, 2.0, 4.0, 6.0, 8.0, 10.0]))


def simulate_data(spec: ModelSpec, state: ParameterState, design: GewekeDesign,
                  rng: np.random.Generator) -> Dataset:
    n = design.W.shape[0]
    u = rng.uniform(size=n)
    cens = rng.uniform(*design.censor_range, size=n)
    noise = rng.normal(size=(n, spec.G, design.visits.size))
    return simulate_from_state(spec, state, design.W, COVARIATES, design.visits, u, cens, noise,
                               design.admin_end)


def monitored(state: ParameterState) -> dict[str, float]:
    """Scalar functions of theta compared between the two schemes."""
    out = {
        "beta0": state.beta[0, 0], "beta1": state.beta[0, 1], "log_sigma2": np.log(state.sigma2[0]),
        "D00": state.D[0, 0], "D01": state.D[0, 1], "D11": state.D[1, 1],
        "gamma0": state.gamma0, "log_lam": np.log(state.lam), "group_in": float(state.group_in[0]),
        "pi_group": state.pi_group[0], "log_s2": np.log(state.s2), "log_tau2": np.log(state.tau2[0]),
        "b00": state.b[0, 0], "b01": state.b[0, 1],
    }
    for k, v in enumerate(state.delta):
        out[f"delta{k}"] = v
    for k, v in enumerate(state.gammas):
        out[f"spline{k}"] = v
    for j in range(2):
        out[f"d{j}"] = state.d[0, j]
        out[f"tau{j}"] = state.tau[0, j]
        out[f"pi_na{j}"] = state.pi_na[0, j]
        out[f"alpha{j}"] = state.alpha[0, j]
    for c in range(3):
        out[f"pattern{c}"] = float(state.pattern[0] == c)
        out[f"q{c}"] = state.q[0, c]
        out[f"m{c}"] = state.m[0, c]
    for j in range(2):
        for l in range(4):
            x = state.thresholds[0, j, l]
            out[f"real{j}{l}"] = float(not np.isnan(x))
            out[f"thr{j}{l}"] = 0.0 if np.isnan(x) else x - 1.0
    return {k: float(v) for k, v in out.items()}


def forward_draws(spec: ModelSpec, n_subjects: int, n_draws: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    rows = [monitored(sample_prior(spec, n_subjects, rng)) for _ in range(n_draws)]
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


def successive_draws(spec: ModelSpec, design: GewekeDesign, n_draws: int, seed: int,
                     n_adapt: int = 1000, moves=None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    n = design.W.shape[0]
    state = sample_prior(spec, n, rng)
    data = simulate_data(spec, state, design, rng)
    cfg = SamplerConfig(n_iter=n_adapt + n_draws, burn_in=n_adapt,
                        **({"moves": tuple(moves)} if moves is not None else {}))
    chain = Chain(spec, data, cfg, rng, state)
    rows = []
    for it in range(n_adapt + n_draws):
        chain.adapting = it < n_adapt
        chain.sweep()
        data = simulate_data(spec, chain.s, design, rng)
        chain.set_data(data)
        if it >= n_adapt:
            rows.append(monitored(chain.s))
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


def batch_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of a chain mean by non-overlapping batch means."""
    m = x.size // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def compare(forward: dict, successive: dict) -> list[tuple[str, float]]:
    """z-scores of the differences in first and second moments."""
    out = []
    for k in forward:
        f, s = forward[k], successive[k]
        for power in (1, 2):
            fp, sp = f ** power, s ** power
            se = np.hypot(fp.std(ddof=1) / np.sqrt(fp.size), batch_se(sp))
            diff = sp.mean() - fp.mean()
            z = 0.0 if se == 0 and diff == 0 else diff / se if se > 0 else np.inf
            out.append((f"{k}^{power}", float(z)))
    return out
