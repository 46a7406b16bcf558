import json

import numpy as np
import pytest

from tam.core import TamConfig, run_tam
from tam.errors import InconsistencyError, InvalidInputError
from tam.graph_sampler import sample_bipartite_regular, sample_rrg_schedule
from tam.io import (
    atomic_write_json,
    load_factors,
    load_ground_truth,
    load_schedule,
    read_dense_bin,
    read_dense_csv,
    read_graph,
    read_trace,
    read_values,
    save_ground_truth,
    save_result,
    save_schedule,
    write_dense_bin,
    write_dense_csv,
    write_graph,
    write_values,
)
from tam.synthgen import gen_flat


def test_graph_roundtrip(tmp_path):
    g = sample_bipartite_regular(25, 4, 0)
    write_graph(tmp_path / "g.txt", g)
    assert read_graph(tmp_path / "g.txt") == g
    (tmp_path / "bad.txt").write_text("3 2\n0 1\n")
    with pytest.raises(InvalidInputError):
        read_graph(tmp_path / "bad.txt")


def test_values_roundtrip_exact(tmp_path, rng):
    g = sample_bipartite_regular(20, 3, 1)
    v = rng.standard_normal((20, 3))
    write_values(tmp_path / "v.csv", g, v)
    assert np.array_equal(read_values(tmp_path / "v.csv", g), v)
    with pytest.raises(InconsistencyError):
        read_values(tmp_path / "v.csv", sample_bipartite_regular(20, 3, 2))


def test_schedule_roundtrip(tmp_path):
    gt = gen_flat(30, 2, [2.0, 1.0], rng=0)
    s = sample_rrg_schedule(30, 4, 2, gt.entry, rng=3)
    path = save_schedule(tmp_path / "s", s)
    assert load_schedule(path) == s
    assert load_schedule(tmp_path / "s") == s
    m = json.loads(path.read_text())
    m["graphs"] = m["graphs"][:-1]
    path.write_text(json.dumps(m))
    with pytest.raises(InconsistencyError):
        load_schedule(path)


def test_dense_formats(tmp_path, rng):
    A = rng.standard_normal((7, 3))
    write_dense_csv(tmp_path / "a.csv", A)
    assert np.array_equal(read_dense_csv(tmp_path / "a.csv"), A)
    write_dense_bin(tmp_path / "a.bin", A)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:16] == np.array([7, 3], dtype="<u8").tobytes()
    assert np.array_equal(read_dense_bin(tmp_path / "a.bin"), A)
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(InvalidInputError):
        read_dense_bin(tmp_path / "cut.bin")


def test_ground_truth_roundtrip(tmp_path):
    gt = gen_flat(40, 2, [3.0, 1.0], rng=2)
    save_ground_truth(tmp_path, gt, seed=2)
    back = load_ground_truth(tmp_path)
    assert np.array_equal(back.Ustar, gt.Ustar) and np.array_equal(back.sigma, gt.sigma)
    assert back.meta["seed"] == 2
    assert json.loads((tmp_path / "truth.json").read_text())["kappa"] == 3.0


def test_result_roundtrip(tmp_path):
    gt = gen_flat(100, 1, [2.0], rng=1)
    cfg = TamConfig(k=1, d=20, epsilon=0.1)
    s = sample_rrg_schedule(100, 20, cfg.N, gt.entry, rng=1)
    res = run_tam(s, cfg, gt)
    save_result(tmp_path, res, {"rel_error": 0.5})
    U, V = load_factors(tmp_path)
    assert np.array_equal(U, res.U_final) and np.array_equal(V, res.V_tilde_final)
    trace = read_trace(tmp_path / "trace.csv")
    assert [r["t"] for r in trace] == list(range(cfg.N))
    assert trace[-1]["dist_U"] == res.trace[-1].dist_U
    assert "seconds" not in trace[0]
    assert json.loads((tmp_path / "summary.json").read_text())["rel_error"] == 0.5


def test_atomic_json(tmp_path):
    atomic_write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(2)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": 1.5, "b": [0, 1]}
    assert not (tmp_path / "x.json.tmp").exists()
