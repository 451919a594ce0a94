"""Reading and writing datasets, truth files and sample stores.

Data schema (time unit: years since study entry):

``longitudinal.csv``  subject_id, factor_name, time, value
``baseline.csv``      subject_id, sex, race, smoking, obs_time, event

``sex`` (male=1), ``race`` (white=1), ``smoking`` and ``event`` are 0/1
integers; anything else is rejected rather than recoded.  Extra baseline columns
are kept as additional covariates.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .model import Dataset, LongitudinalObs
from .sampler import ChainDraws, SampleStore

LONG_COLUMNS = ("subject_id", "factor_name", "time", "value")
BASE_COLUMNS = ("subject_id", "sex", "race", "smoking", "obs_time", "event")
BINARY_COLUMNS = ("sex", "race", "smoking", "event")
ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class IngestError(ValueError):
    """A data file violates the schema; names the file, line and rule."""

    def __init__(self, path, line: int | None, rule: str):
        self.path, self.line, self.rule = str(path), line, rule
        where = f"{self.path}" + (f", line {line}" if line is not None else "")
        super().__init__(f"{where}: {rule}")


def _line(idx: int) -> int:
    # header is line 1
    return int(idx) + 2


def _read(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise IngestError(path, None, "file does not exist")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestError(path, None, "file is empty") from None


def _require(df: pd.DataFrame, path, columns) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise IngestError(path, 1, f"missing column(s) {missing}")


def _to_float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        return np.nan


def _numeric(df: pd.DataFrame, path, col: str) -> np.ndarray:
    # float() rounds correctly, so written values read back bit for bit
    vals = np.array([_to_float(s) for s in df[col]], dtype=float)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise IngestError(path, _line(bad[0]), f"column '{col}' must be a finite number, got {df[col].iloc[bad[0]]!r}")
    return vals


def _binary(df: pd.DataFrame, path, col: str) -> np.ndarray:
    raw = df[col].str.strip()
    ok = raw.isin(["0", "1"])
    if not ok.all():
        i = int(np.flatnonzero(~ok.to_numpy())[0])
        raise IngestError(path, _line(i), f"column '{col}' must be 0 or 1, got {df[col].iloc[i]!r}")
    return raw.astype(int).to_numpy()


def ingest(longitudinal_path, baseline_path, factor_names=None) -> Dataset:
    """Read and validate the two data files.

    ``factor_names`` fixes the accepted risk factors and their order; by default
    they are taken in order of first appearance.
    """
    base = _read(baseline_path)
    _require(base, baseline_path, BASE_COLUMNS)
    ids = base["subject_id"].str.strip()
    dup = ids.duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise IngestError(baseline_path, _line(i), f"duplicated subject_id {ids.iloc[i]!r}")
    if (ids == "").any():
        i = int(np.flatnonzero((ids == "").to_numpy())[0])
        raise IngestError(baseline_path, _line(i), "empty subject_id")
    binaries = {c: _binary(base, baseline_path, c) for c in BINARY_COLUMNS}
    T = _numeric(base, baseline_path, "obs_time")
    if np.any(T <= 0):
        i = int(np.flatnonzero(T <= 0)[0])
        raise IngestError(baseline_path, _line(i), "obs_time must be positive")
    extra = [c for c in base.columns if c not in BASE_COLUMNS]
    covariate_names = ["race", "sex", "smoking"] + extra
    W = np.column_stack([binaries["race"], binaries["sex"], binaries["smoking"]]
                        + [_numeric(base, baseline_path, c) for c in extra])

    lon = _read(longitudinal_path)
    _require(lon, longitudinal_path, LONG_COLUMNS)
    sid = lon["subject_id"].str.strip()
    fac = lon["factor_name"].str.strip()
    t = _numeric(lon, longitudinal_path, "time")
    y = _numeric(lon, longitudinal_path, "value")
    row_of = {s: k for k, s in enumerate(ids)}
    rows = sid.map(row_of)
    if rows.isna().any():
        i = int(np.flatnonzero(rows.isna().to_numpy())[0])
        raise IngestError(longitudinal_path, _line(i), f"subject_id {sid.iloc[i]!r} is not in the baseline file")
    rows = rows.to_numpy(np.int64)
    if factor_names is None:
        factor_names = list(dict.fromkeys(fac))
    known = fac.isin(list(factor_names))
    if not known.all():
        i = int(np.flatnonzero(~known.to_numpy())[0])
        raise IngestError(longitudinal_path, _line(i),
                          f"unknown factor name {fac.iloc[i]!r}; expected one of {list(factor_names)}")
    if np.any(t < 0):
        i = int(np.flatnonzero(t < 0)[0])
        raise IngestError(longitudinal_path, _line(i), "negative measurement time")
    late = t > T[rows]
    if late.any():
        i = int(np.flatnonzero(late)[0])
        raise IngestError(longitudinal_path, _line(i),
                          f"measurement time {t[i]} is after the subject's obs_time {T[rows[i]]}")
    dup = pd.DataFrame({"s": sid, "f": fac, "t": t}).duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise IngestError(longitudinal_path, _line(i), "duplicated (subject, factor, time) record")
    obs = []
    for name in factor_names:
        m = (fac == name).to_numpy()
        order = np.lexsort((t[m], rows[m]))
        obs.append(LongitudinalObs(rows[m][order], t[m][order], y[m][order]))
    return Dataset(ids.to_numpy(object), covariate_names, W, T, binaries["event"],
                   list(factor_names), obs)


def dataset_frames(data: Dataset) -> tuple[pd.DataFrame, pd.DataFrame]:
    ids = np.asarray(data.ids).astype(str)
    parts = []
    for name, o in zip(data.factor_names, data.obs):
        parts.append(pd.DataFrame({"subject_id": ids[o.subject], "factor_name": name,
                                   "time": o.time, "value": o.value, "_row": o.subject}))
    lon = pd.concat(parts, ignore_index=True)
    lon = lon.sort_values(["_row", "factor_name", "time"], kind="stable").drop(columns="_row")
    base = pd.DataFrame({"subject_id": ids})
    for c in ("sex", "race", "smoking"):
        base[c] = data.covariate(c).astype(int)
    base["obs_time"] = data.T
    base["event"] = data.event.astype(int)
    for c in data.covariate_names:
        if c not in base.columns:
            base[c] = data.covariate(c)
    return lon, base


def write_dataset(data: Dataset, out_dir, prefix: str = "") -> tuple[Path, Path]:
    """Write ``longitudinal.csv`` and ``baseline.csv``; floats keep full precision."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lon, base = dataset_frames(data)
    lp, bp = out_dir / f"{prefix}longitudinal.csv", out_dir / f"{prefix}baseline.csv"
    lon.to_csv(lp, index=False, lineterminator="\n")
    base.to_csv(bp, index=False, lineterminator="\n")
    return lp, bp


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default, allow_nan=True)


def write_truth(gt, path) -> Path:
    path = Path(path)
    path.write_text(dumps(gt.to_dict()) + "\n")
    return path


def read_truth(path):
    from .simulator import GroundTruth

    return GroundTruth.from_dict(json.loads(Path(path).read_text()))


# ---- sample store ------------------------------------------------------------

def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_store(store: SampleStore, path) -> Path:
    """Write ``store`` as a zip of ``.npy`` arrays plus a JSON header.

    Member order, timestamps and permissions are fixed, so equal stores give
    byte-identical files.
    """
    path = Path(path)
    header = {
        "spec": store.spec, "config": store.config, "seed": store.seed,
        "factor_names": list(store.factor_names), "covariates": list(store.covariates),
        "chains": [{"acceptance": c.acceptance, "seed": c.seed, "fields": sorted(c.draws)}
                   for c in store.chains],
    }
    with zipfile.ZipFile(path, "w") as zf:
        _put(zf, "header.json", dumps(header).encode())
        for k, c in enumerate(store.chains):
            for name in sorted(c.draws):
                _put(zf, f"chain{k}/{name}.npy", _npy_bytes(c.draws[name]))
            if c.b_last is not None:
                _put(zf, f"chain{k}/_b_last.npy", _npy_bytes(c.b_last))
            if c.b_draws is not None:
                _put(zf, f"chain{k}/_b_draws.npy", _npy_bytes(c.b_draws))
    return path


def load_store(path) -> SampleStore:
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        names = set(zf.namelist())
        chains = []
        for k, meta in enumerate(header["chains"]):
            def arr(n):
                return np.load(io.BytesIO(zf.read(f"chain{k}/{n}.npy")), allow_pickle=False)
            draws = {n: arr(n) for n in meta["fields"]}
            b_last = arr("_b_last") if f"chain{k}/_b_last.npy" in names else None
            b_draws = arr("_b_draws") if f"chain{k}/_b_draws.npy" in names else None
            chains.append(ChainDraws(draws, meta["acceptance"], meta["seed"], b_last, b_draws))
    return SampleStore(chains, header["spec"], header["config"], header["seed"],
                       header["factor_names"], header["covariates"])


@dataclass
class SummaryFiles:
    params: Path
    selection: Path
    thresholds: Path
    table1: Path


def write_summary(summary, out_dir) -> SummaryFiles:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = SummaryFiles(out_dir / "summary_parameters.csv", out_dir / "selection.csv",
                         out_dir / "thresholds.csv", out_dir / "table1.csv")
    summary.params.to_csv(files.params, index=False, lineterminator="\n")
    summary.selection.to_csv(files.selection, index=False, lineterminator="\n")
    summary.thresholds.to_csv(files.thresholds, index=False, lineterminator="\n")
    summary.table1().to_csv(files.table1, index=False, lineterminator="\n")
    return files
