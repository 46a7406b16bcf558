"""``tam`` command line: gen, sample, run, diagnose, bench, sweep.

Exit codes: 0 success, 1 usage or malformed input, 2 numerical failure,
3 sweep finished with failed cells.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import io
from ..core import TamConfig, derive_iteration_count, run_tam, run_vanilla_am
from ..diagnostics import bad_set, bad_set_bounds, error_term, incoherence_of
from ..errors import (
    InconsistencyError,
    InvalidInputError,
    InvalidParameterError,
    OutOfRangeError,
    TamError,
)
from ..graph_sampler import spectral_check
from ..linalg import orthonormal_basis
from .experiments import (
    ALGORITHMS,
    ExperimentConfig,
    make_config,
    make_instance,
    make_schedule,
    relative_error,
    run_sweep,
    runtime_scaling,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 1, 2, 3
USAGE_ERRORS = (InvalidParameterError, InvalidInputError, InconsistencyError,
                OutOfRangeError, FileNotFoundError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--out", help="output directory (or file for bench)")
    common.add_argument("--seed", type=_u64, default=0, help="root seed")
    common.add_argument("--threads", type=_positive, default=1)
    common.add_argument("--format", choices=("csv", "json"), default="json",
                        help="format of the summary printed to stdout")

    parser = _Parser(prog="tam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic ground truth")
    p.add_argument("--kind", choices=("flat", "adversarial"), default="flat")
    p.add_argument("--mode", choices=("signs", "gaussian", "ones"), default="signs")
    p.add_argument("--n", type=_positive)
    p.add_argument("--k", type=_positive)
    p.add_argument("--d", type=_positive, default=10, help="degree (adversarial only)")
    p.add_argument("--sigma", type=_floats, help="comma separated singular values")

    p = sub.add_parser("sample", parents=[common], help="sample RRG(d, n, N) on a truth")
    p.add_argument("--truth", help="ground-truth directory")
    p.add_argument("--d", type=_positive)
    p.add_argument("--N", type=_positive)
    p.add_argument("--epsilon", type=float, default=1e-3)

    p = sub.add_parser("run", parents=[common], help="run TAM or vanilla AM")
    p.add_argument("--truth", help="ground-truth directory")
    p.add_argument("--schedule", help="schedule directory (sampled from --truth if absent)")
    p.add_argument("--kind", choices=("flat", "adversarial"), default="flat",
                   help="instance to generate when --truth is absent")
    p.add_argument("--mode", choices=("signs", "gaussian", "ones"), default="signs")
    p.add_argument("--n", type=_positive)
    p.add_argument("--k", type=_positive)
    p.add_argument("--d", type=_positive)
    p.add_argument("--N", type=_positive)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--mu0", type=float)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="tam")
    p.add_argument("--svd-tol", type=float, default=1e-9)

    p = sub.add_parser("diagnose", parents=[common], help="diagnostics for a saved factor")
    p.add_argument("--schedule")
    p.add_argument("--factor", help="CSV of an n x k factor")
    p.add_argument("--t", type=int, default=1, help="index of the graph used by the update")
    p.add_argument("--side", choices=("right", "left"), default="right")
    p.add_argument("--truth", help="ground-truth directory (enables error terms)")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--mu0", type=float)
    p.add_argument("--indices", help="also write the bad-set indices to this file")

    p = sub.add_parser("bench", parents=[common], help="runtime against n")
    p.add_argument("--n", type=_ints, default=[1000, 2000, 4000])
    p.add_argument("--k", type=_ints, default=[2])
    p.add_argument("--d", type=_positive, default=20)
    p.add_argument("--N", type=_positive, default=5)
    p.add_argument("--reps", type=_positive, default=5)

    sub.add_parser("sweep", parents=[common], help="run a configured grid")
    parser.subcommands = sub.choices
    return parser


REQUIRED = {
    "gen": ("n", "k"),
    "sample": ("truth", "d"),
    "diagnose": ("schedule", "factor"),
}


def _parse(parser, argv):
    """Parse ``argv``; values in --config fill options not given on the
    command line (sweep reads its own config format)."""
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("tam: a subcommand is required")
    if args.config and args.command != "sweep":
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise InvalidParameterError("--config must hold a JSON object")
        sub = parser.subcommands[args.command]
        raw = {key.replace("-", "_"): value for key, value in raw.items()}
        unknown = set(raw) - set(vars(args))
        if unknown:
            raise InvalidParameterError(f"unknown options {sorted(unknown)} in --config")
        sub.set_defaults(**raw)
        args = parser.parse_args(argv)
    missing = [name for name in REQUIRED.get(args.command, ()) if getattr(args, name) is None]
    if missing:
        raise UsageError(f"tam {args.command}: missing " + ", ".join("--" + m for m in missing))
    return args


def _emit(summary: dict, fmt: str, stream=None):
    stream = stream or sys.stdout
    if fmt == "json":
        stream.write(json.dumps(summary, indent=2, sort_keys=True, default=io._json_default))
        stream.write("\n")
    else:
        # scalars as key,value rows; each list of records as its own table
        w = csv.writer(stream, lineterminator="\n")
        tables = {k: v for k, v in summary.items()
                  if isinstance(v, list) and v and isinstance(v[0], dict)}
        w.writerow(["key", "value"])
        for key in sorted(set(summary) - set(tables)):
            w.writerow([key, summary[key]])
        for key in sorted(tables):
            fields = list(tables[key][0])
            stream.write(f"\n# {key}\n")
            w.writerow(fields)
            for row in tables[key]:
                w.writerow([row[f] for f in fields])


def _need_out(args):
    if not args.out:
        raise InvalidParameterError(f"{args.command} needs --out")
    return Path(args.out)


def cmd_gen(args):
    out = _need_out(args)
    truth = make_instance(args.kind, args.n, args.k, args.d, args.seed,
                          sigma=args.sigma, mode=args.mode)
    io.save_ground_truth(out, truth, seed=args.seed)
    return {"n": truth.n, "k": truth.k, "kind": args.kind, "mu0_actual": truth.mu0_actual,
            "kappa": truth.kappa, "seed": args.seed, "out": str(out)}


def cmd_sample(args):
    out = _need_out(args)
    truth = io.load_ground_truth(args.truth)
    N = args.N or derive_iteration_count(args.epsilon)
    schedule = make_schedule(truth, args.d, N, args.seed)
    io.save_schedule(out, schedule)
    # the manifest cannot hold a SeedSequence, so record the root seed
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["seed"] = args.seed
    io.atomic_write_json(out / "manifest.json", manifest)
    spectral = spectral_check(schedule.graphs[0], seed=args.seed)
    return {"n": schedule.n, "d": schedule.d, "N": N, "graphs": 2 * N + 1,
            "sigma2_first_graph": spectral.sigma2, "seed": args.seed, "out": str(out)}


def _run_inputs(args):
    truth = io.load_ground_truth(args.truth) if args.truth else None
    schedule = io.load_schedule(args.schedule) if args.schedule else None
    if truth is None and schedule is None:
        if None in (args.n, args.k, args.d):
            raise InvalidParameterError("run needs --truth, --schedule or all of --n --k --d")
        truth = make_instance(args.kind, args.n, args.k, args.d, args.seed, mode=args.mode)
    k = truth.k if truth is not None else args.k
    if k is None:
        raise InvalidParameterError("--k is required when no truth is given")
    d = schedule.d if schedule is not None else args.d
    if d is None:
        raise InvalidParameterError("--d is required when no schedule is given")
    kw = dict(N=schedule.N if schedule is not None else args.N, beta=args.beta,
              delta=args.delta, epsilon=args.epsilon, svd_tol=args.svd_tol)
    if args.mu0 is not None:
        kw["mu0"] = args.mu0
    if truth is not None:
        config = make_config(truth, d, args.seed, **kw)
    else:
        kw.setdefault("mu0", 1.0)
        config = TamConfig(k=k, d=d, seed=args.seed, **kw)
    if schedule is None:
        schedule = make_schedule(truth, d, config.N, args.seed)
    return truth, schedule, config


def cmd_run(args):
    truth, schedule, config = _run_inputs(args)
    run = run_tam if args.algorithm == "tam" else run_vanilla_am
    result = run(schedule, config, truth)
    summary = {
        "algorithm": args.algorithm,
        "n": schedule.n,
        "d": schedule.d,
        "config": config.to_dict(),
        "iterations": len(result.trace),
        "bad_total_V": sum(r.bad_count_V for r in result.trace),
        "bad_total_U": sum(r.bad_count_U for r in result.trace),
        "ill_conditioned": result.ill_conditioned,
        "relative_error": relative_error(truth, result) if truth is not None else None,
    }
    if args.out:
        io.save_result(args.out, result, {"relative_error": summary["relative_error"],
                                          "config": config.to_dict()})
    return summary


def cmd_diagnose(args):
    schedule = io.load_schedule(args.schedule)
    if not 0 <= args.t <= 2 * schedule.N:
        raise InvalidParameterError(f"--t must lie in [0, {2 * schedule.N}]")
    graph = schedule.graphs[args.t]
    W = orthonormal_basis(io.read_dense_csv(args.factor))
    if W.shape[0] != schedule.n:
        raise InconsistencyError("factor rows do not match the schedule's n")
    mu0 = args.mu0 if args.mu0 is not None else max(1.0, incoherence_of(W))
    report = bad_set(W, graph, args.beta, t=args.t, side=args.side, mu0=mu0)
    if args.indices:
        report.dump_indices(args.indices)
    out = {"t": args.t, "side": args.side, "mu0": mu0, "incoherence": incoherence_of(W),
           "bad_set": report.to_dict()}
    if args.truth:
        truth = io.load_ground_truth(args.truth)
        target = truth.Ustar if args.side == "right" else truth.Vstar
        out["bad_set_bounds"] = bad_set_bounds(W, target, graph, args.beta, args.delta,
                                               mu0, side=args.side)
        et = error_term(W, truth, graph, args.beta, args.epsilon, side=args.side)
        out["error_term"] = {
            "F_fro_over_sigmak": et.F_fro_over_sigmak,
            "bound": et.bound,
            "satisfied": et.satisfied,
            "dist": et.dist,
            "identity_residual": et.identity_residual,
        }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(args.out) / "diagnostics.json", out)
    return out


def cmd_bench(args):
    report = runtime_scaling(args.n, args.d, args.k, args.N, args.reps, args.seed)
    if args.out:
        out = Path(args.out)
        if out.suffix != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "bench.csv"
        report.write_csv(out)
    return report.to_dict()


def cmd_sweep(args):
    if not args.config:
        raise InvalidParameterError("sweep needs --config")
    config = ExperimentConfig.from_json(args.config)
    threads = args.threads if args.threads != 1 else config.threads
    report = run_sweep(config, out=args.out or config.out, threads=threads)
    summary = {
        "cells": len(report.rows),
        "failed": report.failures,
        "out": None if report.out is None else str(report.out),
        "summary": report.summary,
    }
    return summary, (EXIT_PARTIAL if report.failures else EXIT_OK)


COMMANDS = {
    "gen": cmd_gen,
    "sample": cmd_sample,
    "run": cmd_run,
    "diagnose": cmd_diagnose,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        out = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except USAGE_ERRORS as exc:
        print(f"tam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TamError as exc:
        print(f"tam: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    code = EXIT_OK
    if isinstance(out, tuple):
        out, code = out
    _emit(out, args.format)
    return code


if __name__ == "__main__":
    sys.exit(main())
