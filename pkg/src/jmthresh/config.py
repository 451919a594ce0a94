"""Run configuration read from a single YAML file.

Key schema (unknown keys are errors)::

    seed: 1
    data:
      longitudinal: longitudinal.csv   # relative to the config file
      baseline: baseline.csv
    model:
      factors:                         # name -> guideline value
        BMI: 30
      covariates: [race, sex, smoking]
      spline: {Q: 5, degree: 3}
      random_slope: true
    priors:                            # any prior hyperparameter, e.g.
      C: 0.3
      a_dirichlet: [1.0, 0.5]
    sampler:
      n_iter: 2000
      burn_in: 1000
      thin: 1
      n_chains: 2

A fit manifest (``manifest.json``) is accepted wherever a config is: its
``config`` entry is used.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .model import ConfigError, Hyper
from .sampler import SamplerConfig

TOP_KEYS = {"seed", "data", "model", "priors", "sampler"}
MODEL_KEYS = {"factors", "covariates", "spline", "random_slope"}
SAMPLER_KEYS = {f.name for f in fields(SamplerConfig)} - {"rng_seed"}
HYPER_KEYS = {f.name for f in fields(Hyper)}


@dataclass
class RunConfig:
    raw: dict  # normalized config with absolute data paths
    seed: int
    longitudinal: Path
    baseline: Path
    gv: dict
    covariates: list
    Q: int
    degree: int
    random_slope: bool
    hyper: Hyper
    sampler: SamplerConfig

    @property
    def factor_names(self) -> list[str]:
        return list(self.gv)

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"'{where}' must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in '{where}'; allowed: {sorted(allowed)}")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    if isinstance(raw, dict) and "config" in raw and "config_hash" in raw:
        raw = raw["config"]
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw, base_dir=".") -> RunConfig:
    raw = copy.deepcopy(raw)
    _check_keys(raw, TOP_KEYS, "config")
    for key in ("data", "model"):
        if key not in raw:
            raise ConfigError(f"missing section '{key}'")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    data = raw["data"]
    _check_keys(data, {"longitudinal", "baseline"}, "data")
    paths = {}
    for key in ("longitudinal", "baseline"):
        if key not in data:
            raise ConfigError(f"missing data path '{key}'")
        p = Path(data[key])
        p = p if p.is_absolute() else (Path(base_dir) / p)
        p = p.resolve()
        if not p.is_file():
            raise ConfigError(f"data file {p} does not exist")
        paths[key] = p
        data[key] = str(p)

    model = raw["model"]
    _check_keys(model, MODEL_KEYS, "model")
    factors = model.get("factors")
    if not isinstance(factors, dict) or not factors:
        raise ConfigError("model.factors must map each risk factor name to its guideline value")
    gv = {}
    for name, v in factors.items():
        if v is None or isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"risk factor '{name}' needs a numeric guideline value")
        gv[str(name)] = float(v)
    covariates = list(model.get("covariates", ["race", "sex", "smoking"]))
    spline = model.get("spline", {}) or {}
    _check_keys(spline, {"Q", "degree"}, "model.spline")

    priors = raw.get("priors", {}) or {}
    _check_keys(priors, HYPER_KEYS, "priors")
    try:
        hyper = Hyper(**priors)
    except TypeError as e:
        raise ConfigError(f"priors: {e}") from None

    samp = raw.get("sampler", {}) or {}
    _check_keys(samp, SAMPLER_KEYS, "sampler")
    sampler = SamplerConfig(**samp, rng_seed=seed)

    return RunConfig(raw, seed, paths["longitudinal"], paths["baseline"], gv, covariates,
                     int(spline.get("Q", 5)), int(spline.get("degree", 3)),
                     bool(model.get("random_slope", True)), hyper, sampler)
