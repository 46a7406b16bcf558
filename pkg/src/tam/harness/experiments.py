"""Seeded instances, single runs, grid sweeps and runtime scaling.

Seed derivation.  Every artifact of a run is a function of one root seed
``s`` (a non-negative integer):

* ground truth:   ``SeedSequence(s, spawn_key=(0,))``
* sampling graphs: ``SeedSequence(s, spawn_key=(1,))``, spawned into
  2N+1 children, child ``t`` drives graph ``t``
* SVD start block: ``SeedSequence(s, spawn_key=(2,))``, drawn inside
  :mod:`tam.core` from ``TamConfig.seed = s``

so a cell can be replayed in isolation, in any process, in any order.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import TamConfig, run_tam, run_vanilla_am, top_singular_vectors
from ..diagnostics import error_term
from ..errors import InconsistencyError, InvalidParameterError
from ..graph_sampler import observe, sample_bipartite_regular, sample_rrg_schedule, spawn_generators
from ..io import FLOAT_FMT, atomic_write_json, load_ground_truth
from ..regularizers import IncoherenceParams, truncate_and_orthonormalize
from ..synthgen import GroundTruth, gen_adversarial_gramian, gen_flat

INSTANCE, SCHEDULE, INIT = 0, 1, 2
ALGORITHMS = ("tam", "vanilla_am")
INSTANCE_KINDS = ("flat", "adversarial")


def seed_sequence(seed: int, branch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(branch,))


# --- error measurement --------------------------------------------------

def _factors(result, U=None, V_tilde=None):
    if result is not None:
        U, V_tilde = result.U_final, result.V_tilde_final
    return np.asarray(U, dtype=float), np.asarray(V_tilde, dtype=float)


def relative_error(truth: GroundTruth, result=None, *, U=None, V_tilde=None) -> float:
    """||M - U Vt^T||_F / ||M||_F without forming an n x n matrix.

    The difference is P Q^T with P = [U* Sigma, -U] and Q = [V*, Vt].
    With Q = Q1 R1 (thin QR, Q1 orthonormal columns) the norm equals
    ||P R1^T||_F, an n x 2k product, so the cost is O(n k^2) and there is
    no cancellation when the error is tiny.
    """
    U, Vt = _factors(result, U, V_tilde)
    n, k = truth.n, truth.k
    if U.shape != (n, k) or Vt.shape != (n, k):
        raise InconsistencyError(
            f"factors {U.shape}, {Vt.shape} do not match the {n} x {n} rank-{k} truth"
        )
    P = np.hstack([truth.Ustar * truth.sigma, -U])
    Q = np.hstack([truth.Vstar, Vt])
    R = np.linalg.qr(Q, mode="r")
    return float(np.linalg.norm(P @ R.T) / truth.fro_norm)


def relative_error_dense(truth: GroundTruth, result=None, *, U=None, V_tilde=None) -> float:
    """Same quantity by materializing both matrices; small n only."""
    U, Vt = _factors(result, U, V_tilde)
    M = truth.dense()
    if U.shape[0] != M.shape[0] or Vt.shape[0] != M.shape[1]:
        raise InconsistencyError("factor shapes do not match the truth")
    return float(np.linalg.norm(M - U @ Vt.T) / np.linalg.norm(M))


def contraction_factors(result, epsilon: float) -> np.ndarray:
    """Half-step factors dist(next) / max{dist(previous), epsilon/2}.

    The chain is U^0, V^1, U^1, V^2, ...; requires a run with ground truth.
    """
    chain = [result.init_dist]
    for rec in result.trace:
        chain.extend([rec.dist_V, rec.dist_U])
    chain = np.asarray(chain, dtype=float)
    if np.any(np.isnan(chain)):
        raise InvalidParameterError("contraction factors need a run with ground truth")
    return chain[1:] / np.maximum(chain[:-1], epsilon / 2.0)


# --- instances and single runs -------------------------------------------

def default_sigma(k: int) -> np.ndarray:
    """Linearly spaced from 2 down to 1, so kappa = 2 for k >= 2."""
    return np.linspace(2.0, 1.0, k) if k > 1 else np.ones(1)


def make_instance(kind: str, n: int, k: int, d: int, seed: int, sigma=None,
                  mode: str = "signs") -> GroundTruth:
    """Ground truth for ``kind`` in {flat, adversarial} or a saved directory."""
    sigma = default_sigma(k) if sigma is None else sigma
    rng = np.random.default_rng(seed_sequence(seed, INSTANCE))
    if kind == "flat":
        return gen_flat(n, k, sigma, rng=rng, mode=mode)
    if kind == "adversarial":
        return gen_adversarial_gramian(n, k, d, rng=rng, sigma=sigma)
    path = Path(kind)
    if path.is_dir():
        truth = load_ground_truth(path)
        if (truth.n, truth.k) != (n, k):
            raise InconsistencyError(f"{path} holds an n={truth.n}, k={truth.k} truth")
        return truth
    raise InvalidParameterError(f"unknown instance {kind!r}")


def _mu0(truth):
    return max(1.0, truth.mu0_actual)


def make_config(truth: GroundTruth, d: int, seed: int, **kw) -> TamConfig:
    kw.setdefault("mu0", _mu0(truth))
    return TamConfig(k=truth.k, d=d, seed=int(seed), **kw)


def make_schedule(truth: GroundTruth, d: int, N: int, seed: int):
    return sample_rrg_schedule(truth.n, d, N, truth.entry, rng=seed_sequence(seed, SCHEDULE))


@dataclass
class RunOutcome:
    truth: GroundTruth
    config: TamConfig
    schedule: object
    result: object
    rel_error: float
    sample_seconds: float


def run_instance(n: int, k: int, d: int, seed: int, *, kind: str = "flat",
                 algorithm: str = "tam", truth: GroundTruth | None = None,
                 schedule=None, keep_iterates: bool = False, **config_kw) -> RunOutcome:
    """Build (or reuse) the instance and schedule for ``seed`` and run once."""
    if algorithm not in ALGORITHMS:
        raise InvalidParameterError(f"unknown algorithm {algorithm!r}")
    truth = make_instance(kind, n, k, d, seed) if truth is None else truth
    config = make_config(truth, d, seed, **config_kw)
    t0 = time.perf_counter()
    if schedule is None:
        schedule = make_schedule(truth, d, config.N, seed)
    sample_seconds = time.perf_counter() - t0
    run = run_tam if algorithm == "tam" else run_vanilla_am
    result = run(schedule, config, truth, keep_iterates=keep_iterates)
    return RunOutcome(truth, config, schedule, result, relative_error(truth, result),
                      sample_seconds)


def first_error_term(truth: GroundTruth, d: int, seed: int, **config_kw):
    """Error term of the first V update, sampling only graphs 0 and 1.

    Graphs are drawn from the same child generators a full schedule would
    use, so the numbers agree with iteration 0 of :func:`run_instance`.
    """
    config = make_config(truth, d, seed, **config_kw)
    children = spawn_generators(seed_sequence(seed, SCHEDULE), 2 * config.N + 1)[:2]
    g0, g1 = (sample_bipartite_regular(truth.n, d, c) for c in children)
    Ubar = top_singular_vectors(g0, observe(g0, truth.entry), config)
    U0 = truncate_and_orthonormalize(Ubar, IncoherenceParams(config.mu0, truth.k, truth.n))
    return error_term(U0, truth, g1, config.beta, config.epsilon)


def choose_degree(n: int, k: int, ladder, pilot_seeds, *, rule: str = "contraction",
                  epsilon: float = 1e-3, max_factor: float = 0.6, kind: str = "flat"):
    """First degree on ``ladder`` where the pilot seeds meet ``rule``.

    ``"contraction"``: median half-step factor <= ``max_factor`` and every
    pilot run ends with relative error <= ``epsilon``.
    ``"error_term"``: the first-update error-term bound holds for a strict
    majority of the pilot seeds.
    Returns ``(d, log)`` with one log entry per degree tried; ``d`` is None
    when no degree qualifies.
    """
    log = []
    for d in ladder:
        if rule == "contraction":
            outs = [run_instance(n, k, d, s, kind=kind, epsilon=epsilon) for s in pilot_seeds]
            factors = np.concatenate([contraction_factors(o.result, epsilon) for o in outs])
            errors = [o.rel_error for o in outs]
            ok = bool(np.median(factors) <= max_factor and max(errors) <= epsilon)
            log.append({"d": d, "median_factor": float(np.median(factors)),
                        "max_error": max(errors), "ok": ok})
        elif rule == "error_term":
            reps = [first_error_term(make_instance(kind, n, k, d, s), d, s, epsilon=epsilon)
                    for s in pilot_seeds]
            held = sum(r.satisfied for r in reps)
            ok = 2 * held > len(reps)
            log.append({"d": d, "held": held, "ok": ok,
                        "ratios": [r.F_fro_over_sigmak / r.bound for r in reps]})
        else:
            raise InvalidParameterError(f"unknown rule {rule!r}")
        if ok:
            return d, log
    return None, log


# --- sweeps ----------------------------------------------------------------

def _as_list(value, name, cast):
    values = value if isinstance(value, (list, tuple)) else [value]
    if not values:
        raise InvalidParameterError(f"grid axis {name!r} is empty")
    try:
        return [cast(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"bad value on axis {name!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    n: list
    k: list
    d: list
    epsilon: list
    seeds: list
    instance: str = "flat"
    algorithms: list = field(default_factory=lambda: ["tam"])
    out: str | None = None
    threads: int = 1
    beta: float = 0.5
    delta: float = 0.1

    def __post_init__(self):
        self.n = _as_list(self.n, "n", int)
        self.k = _as_list(self.k, "k", int)
        self.d = _as_list(self.d, "d", int)
        self.epsilon = _as_list(self.epsilon, "epsilon", float)
        self.seeds = _as_list(self.seeds, "seeds", int)
        self.algorithms = _as_list(self.algorithms, "algorithms", str)
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidParameterError("seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise InvalidParameterError("seeds must be non-negative")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise InvalidParameterError(f"unknown algorithms {sorted(bad)}")
        if self.instance not in INSTANCE_KINDS and not Path(self.instance).is_dir():
            raise InvalidParameterError(
                f"instance must be flat, adversarial or a ground-truth directory, "
                f"got {self.instance!r}"
            )
        if int(self.threads) < 1:
            raise InvalidParameterError("threads must be >= 1")
        self.threads = int(self.threads)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise InvalidParameterError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise InvalidParameterError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidParameterError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list[dict]:
        grid = itertools.product(self.n, self.k, self.d, self.epsilon, self.seeds,
                                 self.algorithms)
        return [dict(zip(("n", "k", "d", "epsilon", "seed", "algorithm"), c)) for c in grid]


RESULT_FIELDS = (
    "n", "k", "d", "epsilon", "seed", "algorithm", "N", "mu0", "status",
    "rel_error", "final_dist_U", "bad_total_V", "bad_total_U", "ill_conditioned",
    "message",
)


def run_cell(cell: dict, instance: str = "flat", beta: float = 0.5,
             delta: float = 0.1) -> tuple[dict, dict]:
    """One grid cell; failures are caught and recorded, never raised."""
    row = {f: "" for f in RESULT_FIELDS}
    row.update(cell)
    timing = {key: cell[key] for key in ("n", "k", "d", "epsilon", "seed", "algorithm")}
    t0 = time.perf_counter()
    try:
        out = run_instance(cell["n"], cell["k"], cell["d"], cell["seed"], kind=instance,
                           algorithm=cell["algorithm"], epsilon=cell["epsilon"],
                           beta=beta, delta=delta)
        trace = out.result.trace
        row.update(
            N=out.config.N,
            mu0=out.config.mu0,
            status="ok",
            rel_error=out.rel_error,
            final_dist_U=trace[-1].dist_U,
            bad_total_V=sum(r.bad_count_V for r in trace),
            bad_total_U=sum(r.bad_count_U for r in trace),
            ill_conditioned=out.result.ill_conditioned,
        )
        timing.update(sample_seconds=out.sample_seconds, run_seconds=out.result.seconds)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        row.update(status="failed", message=f"{type(exc).__name__}: {exc}")
        timing.update(sample_seconds=float("nan"), run_seconds=float("nan"))
    timing["total_seconds"] = time.perf_counter() - t0
    return row, timing


def _run_cell_args(args):
    return run_cell(*args)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_rows(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def summarize(rows) -> list[dict]:
    """Median final error per (n, k, d, epsilon, algorithm): the plot data."""
    groups = {}
    for r in rows:
        key = (r["n"], r["k"], r["d"], r["epsilon"], r["algorithm"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        errs = [m["rel_error"] for m in members if m["status"] == "ok"]
        out.append({
            **dict(zip(("n", "k", "d", "epsilon", "algorithm"), key)),
            "cells": len(members),
            "failed": len(members) - len(errs),
            "median_rel_error": float(np.median(errs)) if errs else float("nan"),
            "max_rel_error": float(np.max(errs)) if errs else float("nan"),
        })
    return out


SUMMARY_FIELDS = ("n", "k", "d", "epsilon", "algorithm", "cells", "failed",
                  "median_rel_error", "max_rel_error")
TIMING_FIELDS = ("n", "k", "d", "epsilon", "seed", "algorithm", "sample_seconds",
                 "run_seconds", "total_seconds")


@dataclass
class SweepReport:
    rows: list
    timings: list
    summary: list
    failures: int
    out: Path | None


def run_sweep(config: ExperimentConfig, out=None, threads: int | None = None) -> SweepReport:
    """Run every cell; write results.csv, summary.csv, timings.csv, index.json.

    Results are collected in grid order whatever the worker count, so
    ``results.csv`` and ``summary.csv`` do not depend on parallelism.
    Wall times live only in ``timings.csv``.
    """
    threads = config.threads if threads is None else int(threads)
    cells = config.cells()
    args = [(c, config.instance, config.beta, config.delta) for c in cells]
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(_run_cell_args, args))
    else:
        pairs = [run_cell(*a) for a in args]
    rows = [p[0] for p in pairs]
    timings = [p[1] for p in pairs]
    summary = summarize(rows)
    failures = sum(r["status"] != "ok" for r in rows)
    out = config.out if out is None else out
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "results.csv", rows, RESULT_FIELDS)
        write_rows(out / "summary.csv", summary, SUMMARY_FIELDS)
        write_rows(out / "timings.csv", timings, TIMING_FIELDS)
        atomic_write_json(out / "index.json", {
            "config": config.to_dict(),
            "cells": len(cells),
            "failed": failures,
            "failed_cells": [
                {k: r[k] for k in ("n", "k", "d", "epsilon", "seed", "algorithm", "message")}
                for r in rows if r["status"] != "ok"
            ],
            "files": ["results.csv", "summary.csv", "timings.csv"],
        })
    return SweepReport(rows, timings, summary, failures, out)


# --- runtime scaling -------------------------------------------------------

def _slope(ns, ts):
    if len(set(ns)) < 2:
        return None
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


@dataclass
class ScalingReport:
    """Wall times per (n, k).

    ``iterate_seconds`` covers the N alternating iterations, whose cost is
    linear in n; ``total_seconds`` adds the initial truncated SVD, whose
    sweep count follows the random spectral gap of the sampled matrix.
    Exponents are least-squares slopes of log time on log n at the first
    k, None when fewer than two distinct n were timed.
    """

    rows: list
    exponent: float | None
    exponent_total: float | None
    k_ratio: float | None = None

    def to_dict(self) -> dict:
        na = lambda v: "n/a" if v is None else v  # noqa: E731
        return {"rows": self.rows, "exponent": na(self.exponent),
                "exponent_total": na(self.exponent_total), "k_ratio": self.k_ratio}

    def write_csv(self, path) -> None:
        write_rows(path, self.rows, SCALING_FIELDS)

    def ratio(self, n_small: int, n_large: int, which: str = "iterate_seconds") -> float:
        t = {r["n"]: r[which] for r in self.rows}
        return t[n_large] / t[n_small]


SCALING_FIELDS = ("n", "k", "d", "N", "reps", "iterate_seconds", "total_seconds")


def runtime_scaling(ns, d: int, k=2, N: int = 5, reps: int = 5, seed: int = 0,
                    kind: str = "flat") -> ScalingReport:
    """Median wall times of ``run_tam`` over ``reps`` repetitions for each
    n and k; sampling is excluded.  ``k_ratio`` compares the iteration
    time at the largest k to the smallest, at the first n."""
    ns = _as_list(ns, "n", int)
    ks = _as_list(k, "k", int)
    rows = []
    for kk in ks:
        for n in ns:
            truth = make_instance(kind, n, kk, d, seed)
            config = make_config(truth, d, seed, N=N)
            schedule = make_schedule(truth, d, N, seed)
            run_tam(schedule, config)  # warm caches and BLAS threads
            total, loop = [], []
            for _ in range(reps):
                t0 = time.perf_counter()
                res = run_tam(schedule, config)
                total.append(time.perf_counter() - t0)
                loop.append(sum(r.seconds for r in res.trace))
            rows.append({"n": n, "k": kk, "d": d, "N": N, "reps": reps,
                         "iterate_seconds": float(np.median(loop)),
                         "total_seconds": float(np.median(total))})
    first = [r for r in rows if r["k"] == ks[0]]
    xs = [r["n"] for r in first]
    k_ratio = None
    if len(set(ks)) >= 2:
        at_n = {r["k"]: r["iterate_seconds"] for r in rows if r["n"] == ns[0]}
        k_ratio = at_n[max(ks)] / at_n[min(ks)]
    return ScalingReport(rows, _slope(xs, [r["iterate_seconds"] for r in first]),
                         _slope(xs, [r["total_seconds"] for r in first]), k_ratio)
