"""Datasets, model declarations and prior hyperparameters."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .spline import KnotVector, build_knots

N_FEATURES = 2  # current value above threshold, area above threshold

# (sex, race) strata in reporting order; sex Male=1/Female=0, race White=1/Black=0
STRATA = ((1, 1), (1, 0), (0, 1), (0, 0))
STRATUM_LABELS = (("Male", "White"), ("Male", "Black"), ("Female", "White"), ("Female", "Black"))
N_STRATA = len(STRATA)

GUIDELINE_VALUES = {"BMI": 30.0, "SBP": 120.0, "DBP": 80.0, "glucose": 126.0, "TOTCHL": 230.0}


class ConfigError(ValueError):
    """Invalid model declaration or run configuration."""


def stratum_index(sex, race):
    """Map 0/1 sex and race codes to the row order of :data:`STRATA`."""
    sex = np.asarray(sex, dtype=int)
    race = np.asarray(race, dtype=int)
    return 2 * (1 - sex) + (1 - race)


@dataclass
class LongitudinalObs:
    subject: np.ndarray  # subject row index
    time: np.ndarray
    value: np.ndarray

    def __post_init__(self) -> None:
        self.subject = np.asarray(self.subject, dtype=np.int64)
        self.time = np.asarray(self.time, dtype=float)
        self.value = np.asarray(self.value, dtype=float)


@dataclass
class SubjectData:
    id: object
    w: np.ndarray
    obs: list[tuple[np.ndarray, np.ndarray]]
    T: float
    event: int
    sex: int
    race: int
    covariate_names: tuple[str, ...] = ("race", "sex", "smoking")


@dataclass
class Dataset:
    """Long-format longitudinal records plus one baseline row per subject."""

    ids: np.ndarray
    covariate_names: list[str]
    W: np.ndarray  # (n, p) baseline covariates
    T: np.ndarray
    event: np.ndarray
    factor_names: list[str]
    obs: list[LongitudinalObs]

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids)
        self.W = np.asarray(self.W, dtype=float).reshape(len(self.ids), len(self.covariate_names))
        self.T = np.asarray(self.T, dtype=float)
        self.event = np.asarray(self.event, dtype=np.int64)
        for name in ("sex", "race"):
            if name not in self.covariate_names:
                raise ConfigError(f"baseline covariate '{name}' is required")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def G(self) -> int:
        return len(self.factor_names)

    def covariate(self, name: str) -> np.ndarray:
        return self.W[:, self.covariate_names.index(name)]

    @property
    def sex(self) -> np.ndarray:
        return self.covariate("sex").astype(int)

    @property
    def race(self) -> np.ndarray:
        return self.covariate("race").astype(int)

    @property
    def stratum(self) -> np.ndarray:
        return stratum_index(self.sex, self.race)

    def subject(self, i: int) -> SubjectData:
        obs = []
        for o in self.obs:
            m = o.subject == i
            obs.append((o.time[m], o.value[m]))
        return SubjectData(self.ids[i], self.W[i].copy(), obs, float(self.T[i]),
                           int(self.event[i]), int(self.sex[i]), int(self.race[i]),
                           tuple(self.covariate_names))

    @classmethod
    def from_subjects(cls, subjects: Sequence[SubjectData], covariate_names, factor_names) -> "Dataset":
        G = len(factor_names)
        cols = [([], [], []) for _ in range(G)]
        for i, s in enumerate(subjects):
            for g in range(G):
                t, y = s.obs[g]
                cols[g][0].extend([i] * len(t))
                cols[g][1].extend(np.asarray(t, float).tolist())
                cols[g][2].extend(np.asarray(y, float).tolist())
        return cls(
            ids=np.array([s.id for s in subjects]),
            covariate_names=list(covariate_names),
            W=np.array([s.w for s in subjects], dtype=float).reshape(len(subjects), len(covariate_names)),
            T=np.array([s.T for s in subjects], dtype=float),
            event=np.array([s.event for s in subjects], dtype=np.int64),
            factor_names=list(factor_names),
            obs=[LongitudinalObs(*c) for c in cols],
        )

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        remap = -np.ones(self.n, dtype=np.int64)
        remap[rows] = np.arange(rows.size)
        obs = []
        for o in self.obs:
            keep = remap[o.subject] >= 0
            obs.append(LongitudinalObs(remap[o.subject[keep]], o.time[keep], o.value[keep]))
        return Dataset(self.ids[rows], list(self.covariate_names), self.W[rows], self.T[rows],
                       self.event[rows], list(self.factor_names), obs)


@dataclass
class FactorSpec:
    """One longitudinal risk factor.

    ``sd`` scales the threshold-coefficient priors; ``lower``/``upper`` bound the
    threshold slab.  Both are normally read off the data by :func:`prepare_spec`.
    """

    name: str
    gv: float
    sd: float
    lower: float
    upper: float
    random_slope: bool = True

    @property
    def n_random(self) -> int:
        return 2 if self.random_slope else 1


@dataclass
class Hyper:
    C: float = 0.3
    beta_a: float = 1.0  # Beta(a, b) on the group spike probability
    beta_b: float = 1.0
    a_dirichlet: tuple[float, ...] = (1.0, 0.5)
    t_scale: float = 10.0  # 1/s^2 ~ Gamma(shape 1, scale t)
    pi_na_a: float = 1.0
    pi_na_b: float = 1.0
    beta_mean: float | list = 0.0
    beta_sd: float | list = 100.0
    sigma2_shape: float = 0.01
    sigma2_scale: float = 0.01
    D_scale: float | list = 1.0  # inverse-Wishart scale matrix is diag(D_scale)
    D_df: float | None = None  # defaults to dim + 2
    delta_sd: float = 10.0
    gamma0_mean: float = 0.0
    gamma0_sd: float = 10.0
    spline_init_sd: float = 1.0  # first coefficient and first difference of the RW2 prior
    lambda_shape: float = 1.0
    lambda_rate: float = 0.005

    def __post_init__(self) -> None:
        self.a_dirichlet = tuple(float(a) for a in self.a_dirichlet)
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if any(a <= 0 for a in self.a_dirichlet) or any(
            x <= y for x, y in zip(self.a_dirichlet, self.a_dirichlet[1:])
        ):
            raise ConfigError("Dirichlet concentrations must be positive and strictly decreasing")


@dataclass
class ModelSpec:
    factors: list[FactorSpec]
    covariates: list[str]
    knots: KnotVector
    hyper: Hyper = field(default_factory=Hyper)
    weights: tuple[float, float] = (0.5, 0.5)  # P(sex=1), P(race=1)
    n_gl: int = 15

    @property
    def G(self) -> int:
        return len(self.factors)

    @property
    def J(self) -> int:
        return N_FEATURES

    @property
    def re_slices(self) -> list[slice]:
        out, start = [], 0
        for f in self.factors:
            out.append(slice(start, start + f.n_random))
            start += f.n_random
        return out

    @property
    def R(self) -> int:
        return sum(f.n_random for f in self.factors)

    @property
    def Q(self) -> int:
        return self.knots.n_basis

    @property
    def D_df(self) -> float:
        return float(self.hyper.D_df) if self.hyper.D_df is not None else float(self.R + 2)

    @property
    def D_scale_matrix(self) -> np.ndarray:
        return np.diag(np.broadcast_to(np.asarray(self.hyper.D_scale, float), (self.R,)).copy())

    def beta_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """Prior mean and sd arrays of shape (G, 2) for the fixed effects."""
        mean = np.broadcast_to(np.asarray(self.hyper.beta_mean, float), (self.G, 2)).copy()
        sd = np.broadcast_to(np.asarray(self.hyper.beta_sd, float), (self.G, 2)).copy()
        return mean, sd

    def to_dict(self) -> dict:
        return {
            "factors": [asdict(f) for f in self.factors],
            "covariates": list(self.covariates),
            "knots": self.knots.to_dict(),
            "hyper": asdict(self.hyper),
            "weights": list(self.weights),
            "n_gl": self.n_gl,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            factors=[FactorSpec(**f) for f in d["factors"]],
            covariates=list(d["covariates"]),
            knots=KnotVector.from_dict(d["knots"]),
            hyper=Hyper(**d["hyper"]),
            weights=tuple(d["weights"]),
            n_gl=int(d.get("n_gl", 15)),
        )


def prepare_spec(
    data: Dataset,
    gv: dict[str, float],
    covariates: Sequence[str] = ("race", "sex", "smoking"),
    hyper: Hyper | None = None,
    Q: int = 5,
    degree: int = 3,
    random_slope: bool = True,
) -> ModelSpec:
    """Freeze the data-derived pieces of a model: factor scales, threshold
    ranges, spline knots and the (sex, race) weights."""
    from .priors import compute_weights

    factors = []
    for g, name in enumerate(data.factor_names):
        if name not in gv:
            raise ConfigError(f"no guideline value for risk factor '{name}'")
        vals = data.obs[g].value
        if vals.size < 2:
            raise ConfigError(f"risk factor '{name}' has fewer than two observations")
        factors.append(FactorSpec(name, float(gv[name]), float(np.std(vals, ddof=1)),
                                  float(vals.min()), float(vals.max()), random_slope))
    for c in covariates:
        if c not in data.covariate_names:
            raise ConfigError(f"unknown baseline covariate '{c}'")
    ev = data.T[data.event == 1]
    knots = build_knots(ev if ev.size else data.T, Q, degree, t_max=float(data.T.max()))
    w1, w2, _ = compute_weights(data)
    return ModelSpec(factors, list(covariates), knots, hyper or Hyper(), (w1, w2))
