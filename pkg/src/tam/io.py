"""Flat-file formats for graphs, observed values, schedules, dense
matrices, ground truths and TAM results."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import InconsistencyError, InvalidInputError
from .graph_sampler import BipartiteRegularGraph, SampleSchedule
from .synthgen import GroundTruth

FLOAT_FMT = "%.17g"


def write_graph(path, graph: BipartiteRegularGraph) -> None:
    """Header ``n d``, then one line of right neighbours per left vertex."""
    with open(path, "w") as fh:
        fh.write(f"{graph.n} {graph.d}\n")
        for row in graph.left_adj:
            fh.write(" ".join(map(str, row.tolist())) + "\n")


def read_graph(path) -> BipartiteRegularGraph:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise InvalidInputError(f"{path}: expected header 'n d'")
        n, d = int(header[0]), int(header[1])
        adj = np.loadtxt(fh, dtype=np.int64, ndmin=2) if n else np.zeros((0, d), np.int64)
    if adj.shape != (n, d):
        raise InvalidInputError(f"{path}: expected {n} rows of {d} neighbours, got {adj.shape}")
    rows = np.repeat(np.arange(n), d)
    return BipartiteRegularGraph.from_edges(n, d, rows, adj.ravel())


def write_values(path, graph: BipartiteRegularGraph, values) -> None:
    """Triplet CSV ``i,j,value`` in left-vertex order."""
    values = np.asarray(values, dtype=float)
    rows, cols = graph.edges()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i, j, v in zip(rows.tolist(), cols.tolist(), values.ravel().tolist()):
            w.writerow([i, j, FLOAT_FMT % v])


def read_values(path, graph: BipartiteRegularGraph) -> np.ndarray:
    """Read a triplet CSV and align it with ``graph.left_adj``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != graph.n * graph.d:
        raise InconsistencyError(
            f"{path}: {data.shape[0]} triplets for {graph.n * graph.d} edges"
        )
    i = data[:, 0].astype(np.int64)
    j = data[:, 1].astype(np.int64)
    order = np.lexsort((j, i))
    rows, cols = graph.edges()
    if not (np.array_equal(i[order], rows) and np.array_equal(j[order], cols)):
        raise InconsistencyError(f"{path}: triplets do not match the graph's edges")
    return data[order, 2].reshape(graph.n, graph.d)


def save_schedule(directory, schedule: SampleSchedule) -> Path:
    """Write every graph and value file plus ``manifest.json``; return its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    graph_files, value_files = [], []
    for t, (g, v) in enumerate(zip(schedule.graphs, schedule.values)):
        gname, vname = f"graph_{t:03d}.txt", f"values_{t:03d}.csv"
        write_graph(directory / gname, g)
        write_values(directory / vname, g, v)
        graph_files.append(gname)
        value_files.append(vname)
    manifest = {
        "n": schedule.n,
        "d": schedule.d,
        "N": schedule.N,
        "seed": schedule.seed,
        "graphs": graph_files,
        "values": value_files,
    }
    path = directory / "manifest.json"
    write_json(path, manifest)
    return path


def load_schedule(manifest_path) -> SampleSchedule:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    base = manifest_path.parent
    with open(manifest_path) as fh:
        m = json.load(fh)
    if len(m["graphs"]) != 2 * m["N"] + 1 or len(m["values"]) != len(m["graphs"]):
        raise InconsistencyError("manifest must list 2N + 1 graphs and value files")
    graphs = tuple(read_graph(base / g) for g in m["graphs"])
    for g in graphs:
        if g.n != m["n"] or g.d != m["d"]:
            raise InconsistencyError("graph size does not match the manifest")
    values = tuple(read_values(base / v, g) for v, g in zip(m["values"], graphs))
    return SampleSchedule(m["n"], m["d"], m["N"], graphs, values, m.get("seed"))


def write_dense_csv(path, A) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(A, dtype=float)), delimiter=",", fmt=FLOAT_FMT)


def read_dense_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_dense_bin(path, A) -> None:
    """Two little-endian uint64 (rows, cols) followed by row-major float64."""
    A = np.atleast_2d(np.asarray(A, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(np.array(A.shape, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(A).tobytes())


def read_dense_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise InvalidInputError(f"{path}: truncated header")
    rows, cols = np.frombuffer(raw[:16], dtype="<u8")
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != rows * cols:
        raise InvalidInputError(f"{path}: expected {rows * cols} values, found {body.size}")
    return body.reshape(int(rows), int(cols)).astype(float)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def atomic_write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    write_json(tmp, obj)
    os.replace(tmp, path)


def save_ground_truth(directory, gt: GroundTruth, seed=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_dense_csv(directory / "Ustar.csv", gt.Ustar)
    write_dense_csv(directory / "Vstar.csv", gt.Vstar)
    meta = {k: v for k, v in gt.meta.items() if k not in ("u_cluster", "v_cluster")}
    write_json(directory / "truth.json", {
        "n": gt.n,
        "k": gt.k,
        "sigma": gt.sigma.tolist(),
        "mu0_actual": gt.mu0_actual,
        "kappa": gt.kappa,
        "seed": seed,
        "meta": meta,
    })


def load_ground_truth(directory) -> GroundTruth:
    directory = Path(directory)
    with open(directory / "truth.json") as fh:
        info = json.load(fh)
    U = read_dense_csv(directory / "Ustar.csv")
    V = read_dense_csv(directory / "Vstar.csv")
    meta = dict(info.get("meta", {}))
    meta["seed"] = info.get("seed")
    return GroundTruth(U, V, np.array(info["sigma"]), meta)


TRACE_FIELDS = (
    "t", "bad_count_V", "bad_count_U", "dist_U_prev", "dist_Vbar", "dist_V",
    "dist_Ubar", "dist_U", "gram_min", "gram_max", "inverted_min", "ill_conditioned",
)


def write_trace(path, trace) -> None:
    """One row per iteration.  Wall times are left out so that the file
    is reproducible byte for byte; see :func:`write_timings`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for rec in trace:
            row = asdict(rec)
            w.writerow([_fmt(row[f]) for f in TRACE_FIELDS])


def write_timings(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "seconds"])
        for rec in trace:
            w.writerow([rec.t, f"{rec.seconds:.6f}"])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("t", "bad_count_V", "bad_count_U", "ill_conditioned")
                 else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _fmt(v):
    return FLOAT_FMT % v if isinstance(v, float) else str(v)


def save_result(directory, result, summary: dict | None = None) -> None:
    """Factor CSVs, ``trace.csv``, ``timings.csv`` and ``summary.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_dense_csv(directory / "U_final.csv", result.U_final)
    write_dense_csv(directory / "V_tilde_final.csv", result.V_tilde_final)
    write_trace(directory / "trace.csv", result.trace)
    write_timings(directory / "timings.csv", result.trace)
    info = {
        "algorithm": result.algorithm,
        "iterations": len(result.trace),
        "bad_total_V": sum(r.bad_count_V for r in result.trace),
        "bad_total_U": sum(r.bad_count_U for r in result.trace),
        "ill_conditioned": result.ill_conditioned,
        "init_dist": result.init_dist,
        "seconds": result.seconds,
    }
    info.update(summary or {})
    write_json(directory / "summary.json", info)


def load_factors(directory):
    directory = Path(directory)
    return (read_dense_csv(directory / "U_final.csv"),
            read_dense_csv(directory / "V_tilde_final.csv"))
