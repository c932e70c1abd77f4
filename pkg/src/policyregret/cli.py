"""Command-line runner: ``policyregret run`` and ``policyregret rate``."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from ._backend import BACKEND
from .bandit import WorkingModel, run_design
from .core import ConfigurationError, RngStream
from .ratelab import RateExperiment, RateTable, fit_rate, run_rate_experiment

EMIT_KINDS = ("rate_table", "slope_report", "bandit_log", "diagnostics")
EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _error(kind: str, message: str, path: str | None = None) -> None:
    print(json.dumps({"error": kind, "path": path, "message": message}, sort_keys=True), file=sys.stderr)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def config_hash(exp: RateExperiment) -> str:
    return hashlib.sha256(json.dumps(exp.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path: str, out: str | None = None, threads: int | None = None, seed: int | None = None):
    """Parse and validate a run configuration; returns ``(experiment, output_dir, threads, emit)``."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError("config file not found", "config") from None
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"invalid JSON: {err}", "config") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError("must be an object", "config")
    unknown = set(cfg) - {"experiment", "output_dir", "threads", "emit"}
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)}", "config")
    if "experiment" not in cfg:
        raise ConfigurationError("missing field", "experiment")
    exp = RateExperiment.from_dict(cfg["experiment"])
    if seed is not None:
        exp = replace(exp, seed=seed)
    out_dir = out or cfg.get("output_dir")
    if not out_dir:
        raise ConfigurationError("missing field", "output_dir")
    n_threads = threads if threads is not None else cfg.get("threads", 1)
    if not isinstance(n_threads, int) or n_threads < 1:
        raise ConfigurationError("must be an integer of at least 1", "threads")
    emit = cfg.get("emit", ["rate_table", "slope_report"])
    bad = [e for e in emit if e not in EMIT_KINDS]
    if bad:
        raise ConfigurationError(f"unknown artifact kinds {bad}", "emit")
    return exp, out_dir, n_threads, emit


def slope_report(table: RateTable, statistic: str, chash: str | None) -> dict:
    fit = fit_rate(table, statistic)
    rep = {k: _clean(v) for k, v in fit.to_dict().items()}
    rep["config_hash"] = chash
    return rep


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def cmd_run(args) -> int:
    try:
        exp, out_dir, threads, emit = load_config(args.config, args.out, args.threads, args.seed)
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ConfigurationError("not writable", "output_dir")
    except ConfigurationError as err:
        _error("configuration", err.message, err.path)
        return EXIT_CONFIG
    try:
        table = run_rate_experiment(exp, threads)
        chash = config_hash(exp)
        table.to_csv(os.path.join(out_dir, "rate_table.csv"))
        if "slope_report" in emit:
            _write_json(os.path.join(out_dir, "slope_report.json"), slope_report(table, "median", chash))
        if "bandit_log" in emit and exp.estimator == "bandit-erm":
            idx = (len(exp.ns) - 1) * exp.reps
            log = run_design(exp.dgp, exp.schedule, WorkingModel(), exp.ns[-1], RngStream(exp.seed, idx).generator(0))
            log.to_csv(os.path.join(out_dir, "bandit_log.csv"), os.path.join(out_dir, "bandit_log.json"))
        if "diagnostics" in emit:
            rem = table.column("rem_n")
            ep = table.column("ep_n")
            diag = {
                "backend": BACKEND,
                "config_hash": chash,
                "failures": [{"n": r.n, "rep": r.rep, "error": r.error} for r in table.failures],
                "rem_n_max": _clean(float(np.nanmax(rem))) if np.isfinite(rem).any() else None,
                "ep_n_note": "finite-grid approximation at the smallest usable ball radius",
                "ep_n_median_scaled": {
                    str(n): _clean(float(np.nanmedian(np.abs(ep[table.column("n") == n]) * math.sqrt(n))))
                    for n in exp.ns
                } if np.isfinite(ep).any() else None,
            }
            _write_json(os.path.join(out_dir, "diagnostics.json"), diag)
    except ConfigurationError as err:
        _error("runtime", err.message, err.path)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 - reported as a machine-readable error
        _error("runtime", f"{type(err).__name__}: {err}")
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "rows": len(table), "failures": len(table.failures),
                      "output_dir": out_dir}, sort_keys=True))
    return 0


def cmd_rate(args) -> int:
    try:
        table = RateTable.from_csv(args.inp)
        if len(table) == 0:
            raise ConfigurationError("table has no rows", "csv")
        report = slope_report(table, args.statistic, None)
    except FileNotFoundError:
        _error("configuration", "file not found", "in")
        return EXIT_CONFIG
    except ConfigurationError as err:
        _error("configuration", err.message, err.path)
        return EXIT_CONFIG
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="policyregret", description="Regret-rate experiments for policy learning.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--threads", type=int)
    run.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
    run.set_defaults(func=cmd_run)
    rate = sub.add_parser("rate", help="fit the log-log slope of an existing rate table")
    rate.add_argument("--in", dest="inp", required=True)
    rate.add_argument("--statistic", choices=("median", "mean"), default="median")
    rate.add_argument("--out", help="also write the report to this path")
    rate.set_defaults(func=cmd_rate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
