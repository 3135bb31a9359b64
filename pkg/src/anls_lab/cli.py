"""Command-line front end: ``anls-lab {gen-data,train,diagnose,construct}``.

Every run writes plain CSV/JSON artifacts into an output directory
(``--out``, else ``$ANLS_LAB_OUT``, else ``./anls_out``). Floats are written
in shortest round-trip form so artifacts diff cleanly between runs.

Exit codes: 0 ok, 2 bad configuration or input, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import flowdiag
from .construct import Partition, build_fully_trained, verify_lsq_stationary
from .linalg import InvalidInputError
from .model import (
    ReluNetwork,
    TrainingSet,
    activation_pattern,
    evaluate,
    load_dataset,
    load_network,
    macroscopic_data,
    save_dataset,
    save_network,
)
from .trainers import METHODS, OBJECTIVES, ConfigError, TrainConfig, TrainTrace, make_rng, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "ANLS_LAB_OUT"
DEFAULT_OUT = "anls_out"


def f2(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0 + 0.5 * x * np.cos(15 * np.pi * x), 0.5 * np.sin(5 * np.pi * x))


TARGETS = {
    "sin_pi": lambda x: np.sin(np.pi * np.asarray(x, dtype=np.float64)),
    "sin_5pi": lambda x: np.sin(5 * np.pi * np.asarray(x, dtype=np.float64)),
    "f2": f2,
}


@dataclass(frozen=True)
class DataSpec:
    target: str = "sin_pi"
    m: int = 100
    sampling: str = "equidistant"
    seed: int | None = None
    domain: tuple = (-1.0, 1.0)
    csv_path: str | None = None

    def __post_init__(self):
        if self.target == "csv":
            if not self.csv_path:
                raise ConfigError("target 'csv' needs --csv PATH")
            return
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}")
        if self.m < 2:
            raise ConfigError(f"need at least 2 points, got m={self.m}")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError(f"domain must be an ordered finite interval, got {self.domain!r}")
        if self.sampling not in ("equidistant", "uniform_random"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.sampling == "uniform_random" and self.seed is None:
            raise ConfigError("uniform_random sampling needs an explicit seed (--data-seed)")

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "m": self.m,
            "sampling": self.sampling,
            "seed": self.seed,
            "domain": list(self.domain),
            "csv_path": self.csv_path,
        }


def gen_data(spec: DataSpec) -> TrainingSet:
    if spec.target == "csv":
        return load_dataset(spec.csv_path)
    lo, hi = spec.domain
    if spec.sampling == "equidistant":
        xs = np.linspace(lo, hi, spec.m)
    else:
        xs = np.sort(make_rng(spec.seed).uniform(lo, hi, size=spec.m))
    return TrainingSet.from_unsorted(xs, TARGETS[spec.target](xs))


# output helpers

def out_dir(arg: str | None) -> str:
    path = arg or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(path, exist_ok=True)
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else None
    return v


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace(trace: TrainTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.columns)
        for row in trace.rows:
            w.writerow([_fmt(v) for v in row])


def stage_summary(trace: TrainTrace) -> dict:
    if not trace.stages:
        return {"count": 0}
    longest = max(trace.stages, key=lambda s: s.length)
    return {"count": len(trace.stages), "longest": longest.to_dict()}


def diagnostics(net: ReluNetwork, data: TrainingSet) -> dict:
    pattern = activation_pattern(net, data)
    gb, gc = flowdiag.gradient(net, data)
    rb = flowdiag.rate_bounds(net, pattern, data)
    return {
        "n": net.n,
        "m": data.m,
        "loss": flowdiag.loss(net, data),
        "stationarity_mse": flowdiag.stationarity_residual(net, data),
        "q0": flowdiag.q_zero(net, data),
        "u": pattern.u,
        "stage_rank": flowdiag.expected_rank(pattern.u),
        "gradient_norm": float(np.sqrt(gb @ gb + gc @ gc)),
        "gradient_all_zero": bool(not np.any(gb) and not np.any(gc)),
        "macroscopic_data": macroscopic_data(pattern, data).to_list(),
        "rate_bounds": vars(rb),
        "lsq_stationary": verify_lsq_stationary(net, data).to_dict(),
    }


# subcommands

def _data_spec(args) -> DataSpec:
    return DataSpec(
        target=args.target,
        m=args.m,
        sampling=args.sampling,
        seed=args.data_seed,
        domain=tuple(args.domain),
        csv_path=args.csv,
    )


def cmd_gen_data(args) -> int:
    spec = _data_spec(args)
    data = gen_data(spec)
    path = os.path.join(out_dir(args.out), args.name)
    save_dataset(data, path)
    print(path)
    return EXIT_OK


def _run_one(job):
    config, data, odir, suffix, spec_echo = job
    trace = train(config, data)
    paths = {
        "trace": os.path.join(odir, f"trace{suffix}.csv"),
        "network": os.path.join(odir, f"network{suffix}.json"),
        "summary": os.path.join(odir, f"summary{suffix}.json"),
    }
    write_trace(trace, paths["trace"])
    save_network(trace.network, paths["network"])
    record = {
        "data": spec_echo,
        "config": config.to_dict(),
        "final_loss": trace.final_loss,
        "iterations": trace.iterations,
        "termination": trace.termination,
        "wall_time": trace.wall_time,
        "stages": stage_summary(trace),
        "artifacts": paths,
    }
    write_json(record, paths["summary"])
    return record


def cmd_train(args) -> int:
    if args.data:
        data = load_dataset(args.data)
        spec_echo = {"csv_path": args.data}
    else:
        spec = _data_spec(args)
        data = gen_data(spec)
        spec_echo = spec.to_dict()
    seeds = args.seeds if args.seeds else [args.seed]
    configs = [
        TrainConfig(
            method=args.method,
            width=args.width,
            learning_rate=args.lr,
            max_iters=args.iters,
            seed=s,
            record_every=args.record_every,
            stop_loss=args.stop_loss,
            stop_stationarity=args.stop_stationarity,
            extended_trace=args.extended_trace,
            objective=args.objective,
        )
        for s in seeds
    ]
    odir = out_dir(args.out)
    save_dataset(data, os.path.join(odir, "data.csv"))
    jobs = [(c, data, odir, f"_seed{c.seed}" if len(configs) > 1 else "", spec_echo) for c in configs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    for rec in records:
        print(json.dumps({k: _jsonable(rec[k]) for k in ("final_loss", "iterations", "termination")} | {"seed": rec["config"]["seed"]}))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    net = load_network(args.network)
    data = load_dataset(args.data)
    report = diagnostics(net, data)
    if args.test_grid:
        if args.test_grid < 2:
            raise ConfigError("--test-grid needs at least 2 points")
        if args.target not in TARGETS:
            raise ConfigError("--test-grid needs a --target function to compare against")
        lo, hi = args.domain
        grid = np.linspace(lo, hi, args.test_grid)
        err = evaluate(net, grid) - TARGETS[args.target](grid)
        report["test_grid"] = {
            "points": args.test_grid,
            "target": args.target,
            "domain": [lo, hi],
            "mse": float(np.mean(err * err)),
            "max_abs": float(np.max(np.abs(err))),
        }
    path = os.path.join(out_dir(args.out), "diagnostics.json")
    write_json(report, path)
    print(json.dumps(_jsonable({k: report[k] for k in ("loss", "stationarity_mse", "q0", "gradient_all_zero")})))
    return EXIT_OK


def cmd_construct(args) -> int:
    data = load_dataset(args.data)
    net = build_fully_trained(Partition.equal_width(data, args.cells), data)
    odir = out_dir(args.out)
    paths = {
        "network": os.path.join(odir, "network.json"),
        "diagnostics": os.path.join(odir, "diagnostics.json"),
        "record": os.path.join(odir, "construct.json"),
    }
    save_network(net, paths["network"])
    report = diagnostics(net, data)
    write_json(report, paths["diagnostics"])
    record = {
        "data": args.data,
        "cells": args.cells,
        "width": net.n,
        "stationarity_mse": report["stationarity_mse"],
        "lsq_stationary_passed": report["lsq_stationary"]["passed"],
        "final_loss": report["loss"],
        "artifacts": paths,
    }
    write_json(record, paths["record"])
    print(json.dumps(_jsonable({k: record[k] for k in ("width", "stationarity_mse", "lsq_stationary_passed")})))
    return EXIT_OK


def _add_data_flags(p, with_csv=True):
    p.add_argument("--target", default="sin_pi", choices=sorted(TARGETS) + (["csv"] if with_csv else []))
    p.add_argument("--csv", help="dataset CSV when --target csv")
    p.add_argument("-m", type=int, default=100, help="number of training points")
    p.add_argument("--sampling", default="equidistant", choices=["equidistant", "uniform_random"])
    p.add_argument("--data-seed", type=int, default=None, help="seed for uniform_random sampling (required there)")
    p.add_argument("--domain", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anls-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a target function into a dataset CSV")
    _add_data_flags(p)
    p.add_argument("--name", default="data.csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network and write trace, summary and network files")
    _add_data_flags(p)
    p.add_argument("--data", help="dataset CSV (overrides the target flags)")
    p.add_argument("--method", default="anls", choices=METHODS)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--objective", default="half_sse", choices=OBJECTIVES,
                   help="loss the gradient methods descend on (traces always report 0.5*SSE)")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0, help="initialization seed")
    p.add_argument("--seeds", type=int, nargs="+", help="run several initialization seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes across seeds")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--stop-loss", type=float)
    p.add_argument("--stop-stationarity", type=float)
    p.add_argument("--extended-trace", action="store_true", help="add a per-iteration candidate count column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diagnose", help="plateau diagnostics of a saved network on a dataset")
    p.add_argument("--network", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-grid", type=int, default=0, help="also report error on this many equidistant points")
    p.add_argument("--target", choices=sorted(TARGETS), help="reference function for --test-grid")
    p.add_argument("--domain", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("construct", help="build the explicit fully trained network for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--cells", type=int, required=True, help="number of equal-width cells")
    p.add_argument("--out")
    p.set_defaults(func=cmd_construct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        if getattr(args, "cells", 1) < 1:
            raise ConfigError("--cells must be >= 1")
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
