"""Posterior summaries, selection percentages, threshold tables and diagnostics.

Quantiles use the type-7 (linear interpolation) rule.  Threshold summaries are
computed over the draws in which the threshold is real; how often it was NA is
reported next to them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .features import FEATURE_LABELS, FEATURE_TYPES
from .model import N_STRATA, STRATUM_LABELS
from .priors import pattern_masks

PROBS = (0.025, 0.975)
INCONCLUSIVE_FRACTION = 0.10


class EmptyStoreError(ValueError):
    """Summaries were requested from a store without draws."""


def quantile7(x, q):
    """Type-7 sample quantile (linear interpolation between order statistics)."""
    return np.quantile(np.asarray(x, float), q, method="linear")


def describe(x) -> dict:
    x = np.asarray(x, float)
    lo, hi = quantile7(x, PROBS)
    return {"mean": float(x.mean()), "median": float(quantile7(x, 0.5)),
            "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0, "q2.5": float(lo), "q97.5": float(hi)}


def feature_label(factor: str, j: int) -> str:
    return f"{FEATURE_LABELS[FEATURE_TYPES[j]]}-{factor}"


def active_mask(draws: dict) -> np.ndarray:
    """(n, G, J) bool: draws in which a feature's association is nonzero."""
    J = draws["d"].shape[-1]
    masks = pattern_masks(J)[draws["pattern"]]
    return draws["group_in"][..., None] & masks & (draws["tau"] * draws["d"] != 0)


def alpha_draws(draws: dict) -> np.ndarray:
    return np.where(active_mask(draws), draws["tau"] * draws["d"], 0.0)


def scalar_draws(draws: dict, factor_names, covariates) -> dict[str, np.ndarray]:
    """Every continuous scalar of the state, named, as 1-d arrays over draws."""
    out: dict[str, np.ndarray] = {}
    for g, f in enumerate(factor_names):
        out[f"beta0[{f}]"] = draws["beta"][:, g, 0]
        out[f"beta1[{f}]"] = draws["beta"][:, g, 1]
        out[f"sigma2[{f}]"] = draws["sigma2"][:, g]
    R = draws["D"].shape[-1]
    for r in range(R):
        for s in range(r, R):
            out[f"D[{r},{s}]"] = draws["D"][:, r, s]
    for k, c in enumerate(covariates):
        out[f"delta[{c}]"] = draws["delta"][:, k]
    out["gamma0"] = draws["gamma0"]
    for q in range(draws["gammas"].shape[-1]):
        out[f"gamma_h0[{q}]"] = draws["gammas"][:, q]
    out["lambda"] = draws["lam"]
    out["s2"] = draws["s2"]
    alpha = alpha_draws(draws)
    for g, f in enumerate(factor_names):
        for j in range(alpha.shape[-1]):
            out[f"alpha[{feature_label(f, j)}]"] = alpha[:, g, j]
            out[f"pi_na[{feature_label(f, j)}]"] = draws["pi_na"][:, g, j]
        out[f"pi_group[{f}]"] = draws["pi_group"][:, g]
        for k, name in enumerate(("m_F", "m_S", "m_R")):
            out[f"{name}[{f}]"] = draws["m"][:, g, k]
        out[f"tau2[{f}]"] = draws["tau2"][:, g]
    return out


def _merged(store) -> dict:
    if not store.chains or sum(c.n_draws for c in store.chains) == 0:
        raise EmptyStoreError("the sample store holds no draws")
    return {k: store.stacked(k) for k in store.chains[0].draws}


@dataclass
class PosteriorSummary:
    params: pd.DataFrame  # one row per continuous scalar
    selection: pd.DataFrame  # one row per (factor, feature)
    thresholds: pd.DataFrame  # one row per (factor, feature, sex, race)
    C: float
    n_draws: int
    extra: dict = field(default_factory=dict)

    def table1(self) -> pd.DataFrame:
        """Survival block: covariate effects and feature associations with selection."""
        rows = []
        for _, r in self.params[self.params.parameter.str.startswith("delta[")].iterrows():
            rows.append({"term": r.parameter[6:-1], "estimate": r["mean"], "sd": r["sd"],
                         "q2.5": r["q2.5"], "q97.5": r["q97.5"], "selection_pct": np.nan})
        for _, s in self.selection.iterrows():
            p = self.params.set_index("parameter").loc[f"alpha[{s.feature}]"]
            rows.append({"term": s.feature, "estimate": p["mean"], "sd": p["sd"],
                         "q2.5": p["q2.5"], "q97.5": p["q97.5"], "selection_pct": s.selection_pct})
        return pd.DataFrame(rows)


def summarize(store, spec=None) -> PosteriorSummary:
    """Pool all chains of ``store`` into parameter, selection and threshold tables."""
    draws = _merged(store)
    factors = list(store.factor_names)
    covs = list(store.covariates)
    n = draws["gamma0"].shape[0]
    params = pd.DataFrame([{"parameter": k, **describe(v)}
                           for k, v in scalar_draws(draws, factors, covs).items()])
    act = active_mask(draws)
    sel, thr_rows = [], []
    C = float((spec.hyper.C if spec is not None else store.spec["hyper"]["C"]))
    for g, f in enumerate(factors):
        for j in range(act.shape[-1]):
            label = feature_label(f, j)
            sel.append({"factor": f, "feature": label, "selection_pct": 100.0 * act[:, g, j].mean()})
            for l in range(N_STRATA):
                x = draws["thresholds"][:, g, j, l]
                real = x[~np.isnan(x)]
                row = {"factor": f, "feature": label, "sex": STRATUM_LABELS[l][0],
                       "race": STRATUM_LABELS[l][1], "C": C, "na_pct": 100.0 * (1 - real.size / n),
                       "n_real": int(real.size)}
                if real.size:
                    row.update(describe(real))
                else:
                    row.update({k: np.nan for k in ("mean", "median", "sd", "q2.5", "q97.5")})
                thr_rows.append(row)
    return PosteriorSummary(params, pd.DataFrame(sel), pd.DataFrame(thr_rows), C, n)


def threshold_table(summaries) -> pd.DataFrame:
    """Stack the threshold rows of fits made at different C values.

    Rows are ordered feature, sex, race, then C.
    """
    df = pd.concat([s.thresholds for s in summaries], ignore_index=True)
    strata = {lab: k for k, lab in enumerate(STRATUM_LABELS)}
    feats = {f: k for k, f in enumerate(dict.fromkeys(df.feature))}
    keys = pd.DataFrame({"_f": df.feature.map(feats),
                         "_l": [strata[(a, b)] for a, b in zip(df.sex, df.race)]})
    return (pd.concat([df, keys], axis=1).sort_values(["_f", "_l", "C"], kind="stable")
            .drop(columns=["_f", "_l"]).reset_index(drop=True))


@dataclass
class ThresholdDifference:
    conclusive: bool
    mean: float = np.nan
    q025: float = np.nan
    q975: float = np.nan
    n_used: int = 0
    significant: bool = False


def threshold_difference(store, stratum_a: int, stratum_b: int, g: int, j: int) -> ThresholdDifference:
    """Posterior of gamma(a) - gamma(b) over draws where both thresholds are real."""
    x = _merged(store)["thresholds"][:, g, j]
    a, b = x[:, stratum_a], x[:, stratum_b]
    n = a.size
    if min(np.isfinite(a).sum(), np.isfinite(b).sum()) < INCONCLUSIVE_FRACTION * n:
        return ThresholdDifference(False)
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        return ThresholdDifference(False)
    diff = a[both] - b[both]
    lo, hi = quantile7(diff, PROBS)
    return ThresholdDifference(True, float(diff.mean()), float(lo), float(hi), int(both.sum()),
                               bool(lo > 0 or hi < 0))


# ---- convergence diagnostics ----------------------------------------------

def split_chains(x) -> np.ndarray:
    """(chains, n) -> (2 * chains, n // 2), dropping the middle draw if n is odd."""
    x = np.atleast_2d(np.asarray(x, float))
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]])


def rhat(x) -> float:
    """Split R-hat of a (chains, n) array."""
    s = split_chains(x)
    m, n = s.shape
    if n < 2:
        return np.nan
    W = s.var(axis=1, ddof=1).mean()
    B = n * s.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    return np.fft.irfft(f * np.conj(f))[:n] / n


def ess(x) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    x = np.atleast_2d(np.asarray(x, float))
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = np.array([_autocov(c) for c in x])
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return float(m * n)
    B_over_n = x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = W * (n - 1) / n + B_over_n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive, enforcing monotone decrease
    total, prev = 0.0, np.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = -1.0 + 2.0 * total
    return float(m * n / max(tau, 1.0 / np.log10(m * n)))


def diagnostics(store) -> dict:
    """Split R-hat and ESS per continuous scalar, acceptance rates, inclusion occupancy."""
    _merged(store)
    chains = store.chains
    n = min(c.n_draws for c in chains)
    factors, covs = list(store.factor_names), list(store.covariates)
    per_chain = [scalar_draws({k: v[:n] for k, v in c.draws.items()}, factors, covs) for c in chains]
    rows = []
    act = [active_mask({k: v[:n] for k, v in c.draws.items()}) for c in chains]
    for name in per_chain[0]:
        # association magnitudes jump to zero; they are judged by their indicators instead
        if name.startswith("alpha["):
            continue
        x = np.stack([pc[name] for pc in per_chain])
        rows.append({"parameter": name, "rhat": rhat(x), "ess": ess(x)})
    occupancy = []
    for g, f in enumerate(factors):
        for j in range(act[0].shape[-1]):
            occ = [float(a[:, g, j].mean()) for a in act]
            occupancy.append({"feature": feature_label(f, j),
                              **{f"chain{k}": v for k, v in enumerate(occ)}})
    acceptance = []
    for k, c in enumerate(chains):
        for move, v in c.acceptance.items():
            acceptance.append({"chain": k, "move": move, "accepted": v["accepted"],
                               "proposed": v["proposed"],
                               "rate": v["accepted"] / v["proposed"] if v["proposed"] else np.nan})
    return {"convergence": pd.DataFrame(rows), "occupancy": pd.DataFrame(occupancy),
            "acceptance": pd.DataFrame(acceptance)}


def rhat_offenders(report: dict, limit: float = 1.2) -> list[str]:
    conv = report["convergence"]
    bad = conv[~(conv.rhat <= limit) & conv.rhat.notna()]
    return bad.parameter.tolist()


def long_format(store) -> pd.DataFrame:
    """Plot-ready (chain, draw, parameter, value) rows."""
    frames = []
    for k, c in enumerate(store.chains):
        sc = scalar_draws(c.draws, list(store.factor_names), list(store.covariates))
        for name, v in sc.items():
            frames.append(pd.DataFrame({"chain": k, "draw": np.arange(v.size), "parameter": name,
                                        "value": v}))
    return pd.concat(frames, ignore_index=True)
