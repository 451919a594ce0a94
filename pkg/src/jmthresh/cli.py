"""Command-line entry point.

    jmthresh simulate --scenario NAME --n N --seed S --out DIR
    jmthresh fit --config FILE --out DIR
    jmthresh summarize --samples DIR [DIR ...]
    jmthresh diagnose --samples DIR

Exit status: 0 success, 1 validation error, 2 convergence warning (split R-hat
above 1.2 on a continuous parameter).  Inputs are validated before anything is
written.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import pandas as pd
import yaml

from . import __version__
from .config import load_config
from .io import IngestError, dumps, ingest, load_store, save_store, write_dataset, write_summary, write_truth
from .model import ConfigError, prepare_spec
from .sampler import InitializationError, sample
from .simulator import make_benchmark_scenarios, simulate_dataset
from .spline import KnotError
from .summaries import diagnostics, rhat_offenders, summarize, threshold_table

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 1, 2
RHAT_LIMIT = 1.2
STORE_NAME = "samples.zip"

log = logging.getLogger("jmthresh")


class UsageError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_simulate(args) -> int:
    found = dict(make_benchmark_scenarios())
    if args.scenario not in found:
        raise UsageError(f"unknown scenario '{args.scenario}'; available: {sorted(found)}")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    gt = found[args.scenario]
    data = simulate_dataset(gt, args.n, args.seed)
    out = Path(args.out)
    lp, bp = write_dataset(data, out)
    write_truth(gt, out / "truth.json")
    cfg = {"seed": args.seed,
           "data": {"longitudinal": lp.name, "baseline": bp.name},
           "model": {"factors": {f.name: f.gv for f in gt.spec.factors}}}
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    log.info("wrote %d subjects (%d events) to %s", data.n, int(data.event.sum()), out)
    return EXIT_OK


def _write_diagnostics(report: dict, out: Path) -> list[str]:
    report["convergence"].to_csv(out / "convergence.csv", index=False, lineterminator="\n")
    report["acceptance"].to_csv(out / "acceptance.csv", index=False, lineterminator="\n")
    report["occupancy"].to_csv(out / "occupancy.csv", index=False, lineterminator="\n")
    offenders = rhat_offenders(report, RHAT_LIMIT)
    lines = [f"chains: {len(report['occupancy'].columns) - 1}",
             f"max split R-hat: {report['convergence'].rhat.max():.4f}",
             f"min ESS: {report['convergence'].ess.min():.1f}"]
    if offenders:
        lines.append(f"R-hat > {RHAT_LIMIT}: {', '.join(offenders)}")
    (out / "diagnostics.txt").write_text("\n".join(lines) + "\n")
    return offenders


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    data = ingest(cfg.longitudinal, cfg.baseline, cfg.factor_names)
    spec = prepare_spec(data, cfg.gv, cfg.covariates, cfg.hyper, cfg.Q, cfg.degree, cfg.random_slope)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("fitting %d subjects, %d chain(s) x %d sweeps", data.n, cfg.sampler.n_chains,
             cfg.sampler.n_iter)
    store = sample(spec, data, cfg.sampler)
    store_path = save_store(store, out / STORE_NAME)
    write_summary(summarize(store, spec), out)
    offenders = _write_diagnostics(diagnostics(store), out)
    manifest = {
        "version": __version__, "seed": cfg.seed, "config_hash": cfg.config_hash(),
        "config": cfg.raw,
        "data_sha256": {"longitudinal": _sha256(cfg.longitudinal), "baseline": _sha256(cfg.baseline)},
        "samples_sha256": _sha256(store_path),
    }
    (out / "manifest.json").write_text(dumps(manifest) + "\n")
    if offenders:
        log.warning("split R-hat above %.1f for: %s", RHAT_LIMIT, ", ".join(offenders))
        return EXIT_CONVERGENCE
    return EXIT_OK


def _load_dirs(dirs) -> list:
    stores = []
    for d in dirs:
        p = Path(d) / STORE_NAME
        if not p.is_file():
            raise UsageError(f"no {STORE_NAME} in {d}")
        stores.append(load_store(p))
    return stores


def cmd_summarize(args) -> int:
    stores = _load_dirs(args.samples)
    sums = []
    for d, st in zip(args.samples, stores):
        s = summarize(st)
        write_summary(s, Path(d))
        sums.append(s)
    table2 = threshold_table(sums)
    table2.to_csv(Path(args.samples[0]) / "table2.csv", index=False, lineterminator="\n")
    with pd.option_context("display.width", 160, "display.max_columns", 20):
        print(sums[0].table1().round(4).to_string(index=False))
        print()
        cols = ["feature", "sex", "race", "C", "mean", "median", "q2.5", "q97.5", "na_pct"]
        print(table2[cols].round(3).to_string(index=False))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    (store,) = _load_dirs([args.samples])
    report = diagnostics(store)
    offenders = _write_diagnostics(report, Path(args.samples))
    print((Path(args.samples) / "diagnostics.txt").read_text(), end="")
    return EXIT_CONVERGENCE if offenders else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jmthresh", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate a benchmark cohort")
    s.add_argument("--scenario", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    f = sub.add_parser("fit", parents=[common], help="run the sampler")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)
    m = sub.add_parser("summarize", parents=[common], help="posterior tables from one or more fits")
    m.add_argument("--samples", required=True, nargs="+")
    m.set_defaults(func=cmd_summarize)
    d = sub.add_parser("diagnose", parents=[common], help="convergence diagnostics of a fit")
    d.add_argument("--samples", required=True)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError, KnotError, InitializationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
