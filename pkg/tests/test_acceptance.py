"""Acceptance criteria, one test per criterion (criterion 1 is split by
degree).  Each test prints a single PASS/FAIL line, collected again in
the terminal summary.  Seed lists are fixed in advance; degree choices
come from pilot seeds that are disjoint from the measured ones."""

import math
import time

import numpy as np
import pytest

from conftest import random_orthonormal, record_acceptance
from oracles import dense_bad_set
from tam.core import TamConfig, run_tam, threshold_blocks, update_factor
from tam.diagnostics import bad_set, error_term, f_bound, q_set_size_check
from tam.errors import ConvergenceError
from tam.graph_sampler import (
    apply_sampling_operator,
    sample_bipartite_regular,
    sample_rrg_schedule,
    spectral_check,
)
from tam.harness.experiments import (
    SCHEDULE,
    choose_degree,
    contraction_factors,
    first_error_term,
    make_config,
    make_instance,
    relative_error,
    relative_error_dense,
    run_instance,
    runtime_scaling,
    seed_sequence,
)
from tam.linalg import subspace_dist, truncated_svd_sparse
from tam.regularizers import IncoherenceParams, t1_matrix, t2
from tam.synthgen import gen_adversarial_gramian, gen_flat

EPS = 1e-3
SEEDS = list(range(20))
PILOT = [100, 101, 102]
LADDER = (20, 40, 80, 160, 320, 640, 1280)
N_BIG, K_BIG = 2000, 2


# --- 1: exact recovery on the flat instance --------------------------------

FLAT_CASES = [
    pytest.param(n, d, marks=pytest.mark.xfail(
        strict=True, reason="a 2-regular graph is a union of cycles, so the top "
                            "singular value of the sampled matrix is repeated"))
    if d == 2 else (n, d)
    for n in (256, 1024) for d in (2, 5, 10)
]


@pytest.mark.parametrize("n,d", FLAT_CASES)
def test_criterion_1_flat_exact(n, d):
    c = 3.0
    truth = gen_flat(n, 1, [c], mode="ones")
    t0 = time.perf_counter()
    schedule = sample_rrg_schedule(n, d, 2, truth.entry, rng=seed_sequence(0, SCHEDULE))
    try:
        result = run_tam(schedule, TamConfig(k=1, d=d, epsilon=0.5, svd_tol=1e-13))
    except ConvergenceError as exc:
        record_acceptance(f"criterion 1 (n={n}, d={d})", False, f"{type(exc).__name__}: {exc}")
        raise
    seconds = time.perf_counter() - t0
    err = relative_error(truth, result)
    ok = err <= 1e-10 and len(result.trace) <= 2 and seconds < 1.0
    record_acceptance(f"criterion 1 (n={n}, d={d})", ok,
                      f"rel_error={err:.2e} iterations={len(result.trace)} time={seconds:.2f}s")
    assert ok


# --- 2: deterministic identities --------------------------------------------

def test_criterion_2_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        k = int(rng.integers(1, min(5, n - 1) + 1))
        X, Y = random_orthonormal(n, k, rng), random_orthonormal(n, k, rng)
        d = subspace_dist(X, Y)
        s_min = np.linalg.svd(X.T @ Y, compute_uv=False)[-1]
        R = random_orthonormal(k, k, rng)
        worst = max(worst, abs(d - subspace_dist(Y, X)), abs(s_min ** 2 + d ** 2 - 1),
                    abs(subspace_dist(X @ R, Y) - d), max(0.0, d - 1.0))
    ky_fan = 0
    for _ in range(100):
        m, n = rng.integers(2, 13, size=2)
        A, B = rng.standard_normal((m, n)), rng.standard_normal((m, n))
        p = min(m, n)
        r = int(rng.integers(0, p))
        t = int(rng.integers(0, p - r))
        sa, sb, sab = (np.linalg.svd(M, compute_uv=False) for M in (A, B, A + B))
        ky_fan += sab[r + t] <= sa[r] + sb[t] + 1e-10
    qsize, cases = 0, 0
    for seed in range(6):
        for truth in (gen_flat(300, 2, [2.0, 1.0], rng=seed),
                      gen_flat(300, 3, [3.0, 2.0, 1.0], rng=seed, mode="gaussian"),
                      gen_adversarial_gramian(300, 2, 5, rng=seed)):
            for scale in (1e-6, 1e-3, 0.05, 0.3):
                Ut = np.linalg.qr(truth.Ustar + scale * rng.standard_normal(truth.Ustar.shape))[0]
                for tau in (0.1, 0.5, 0.9):
                    qsize += q_set_size_check(Ut, truth.Ustar, tau)["holds"]
                    cases += 1
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-10 and ky_fan == 100 and qsize == cases and seconds < 10
    record_acceptance("criterion 2", ok,
                      f"identity_max_dev={worst:.1e} ky_fan={ky_fan}/100 "
                      f"qsize={qsize}/{cases} time={seconds:.1f}s")
    assert ok


# --- 3: operator contracts --------------------------------------------------

def test_criterion_3_operator_fuzz():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    failures = []
    for case in range(500):
        n = int(rng.integers(8, 200))
        k = int(rng.integers(1, 5))
        d = int(rng.integers(k, min(n, 30) + 1))
        beta = float(rng.uniform(0.05, 0.95))
        mu0 = float(rng.uniform(1.0, max(1.0, min(3.0, n / k))))
        params = IncoherenceParams(mu0, k, n)
        U = rng.standard_normal((n, k)) * rng.uniform(0.01, 1.0, size=(n, 1)) / math.sqrt(n)
        U[rng.integers(n)] *= rng.uniform(1, 50)
        once = t1_matrix(U, params)
        if not np.array_equal(t1_matrix(once, params), once):
            failures.append((case, "T1 idempotence"))
        if np.any(np.linalg.norm(once, axis=1) > params.threshold):
            failures.append((case, "T1 length"))
        A = rng.standard_normal((d, k)) * rng.uniform(1e-4, 10) * math.sqrt(d / n)
        out = t2(A, beta, n)
        s = np.linalg.svd(out, compute_uv=False) * math.sqrt(n / d)
        if np.any(s < math.sqrt(beta) - 1e-10) or np.any(s > math.sqrt(2 - beta) + 1e-10):
            failures.append((case, "T2 containment"))
        if np.linalg.norm(t2(out, beta, n) - out) > 1e-10 * np.linalg.norm(out):
            failures.append((case, "T2 fixed point"))
        W = np.linalg.qr(U)[0]
        g = sample_bipartite_regular(n, d, rng)
        blocks = W[g.right_adj]
        _, _, _, G = threshold_blocks(blocks, beta, n)
        if np.min(np.linalg.eigvalsh(G)) < beta * d / n * (1 - 1e-10):
            failures.append((case, "inverted sigma_min"))
    seconds = time.perf_counter() - t0
    ok = not failures and seconds < 30
    record_acceptance("criterion 3", ok,
                      f"cases=500 failures={len(failures)} {failures[:3]} time={seconds:.1f}s")
    assert ok


# --- 4, 5, 6: flat instances at n = 2000 -------------------------------------

@pytest.fixture(scope="module")
def decay_runs():
    t0 = time.perf_counter()
    d, log = choose_degree(N_BIG, K_BIG, LADDER, PILOT, rule="contraction", epsilon=EPS)
    assert d is not None, log
    outs = [run_instance(N_BIG, K_BIG, d, s, epsilon=EPS, keep_iterates=True) for s in SEEDS]
    return {"d": d, "log": log, "outs": outs, "seconds": time.perf_counter() - t0}


def test_criterion_4_geometric_decay(decay_runs):
    outs = decay_runs["outs"]
    factors = np.concatenate([contraction_factors(o.result, EPS) for o in outs])
    med = float(np.median(factors))
    hits = sum(o.rel_error <= EPS for o in outs)
    mu0 = [o.truth.mu0_actual for o in outs]
    kappa = outs[0].truth.kappa
    ok = med <= 0.6 and hits >= 18 and decay_runs["seconds"] < 300
    record_acceptance("criterion 4", ok,
                      f"d={decay_runs['d']} kappa={kappa:g} mu0 in [{min(mu0):.3f}, {max(mu0):.3f}] "
                      f"median_factor={med:.2e} recovered={hits}/20 "
                      f"time={decay_runs['seconds']:.0f}s")
    assert ok


def test_criterion_5_bad_set():
    t0 = time.perf_counter()
    fractions = np.zeros((len(LADDER), len(SEEDS)))
    bounds = np.zeros_like(fractions)
    for a, d in enumerate(LADDER):
        for b, seed in enumerate(SEEDS):
            truth = make_instance("flat", N_BIG, K_BIG, d, seed)
            rep = first_error_term(truth, d, seed, epsilon=EPS)
            mu0 = make_config(truth, d, seed).mu0
            fractions[a, b] = rep.bad_count / N_BIG
            bounds[a, b] = 1.5 * f_bound(d, 5 * mu0, 0.5, K_BIG)
    medians = np.median(fractions, axis=1)
    monotone = bool(np.all(np.diff(medians) <= 0))
    live = bounds < 1
    bound_ok = bool(np.all(fractions[live] <= bounds[live]))
    seconds = time.perf_counter() - t0
    ok = monotone and bound_ok and live.any() and seconds < 300
    record_acceptance("criterion 5", ok,
                      "median |S_b|/n by d: "
                      + " ".join(f"{d}:{m:.4f}" for d, m in zip(LADDER, medians))
                      + f" nonvacuous_checks={int(live.sum())} time={seconds:.0f}s")
    assert ok


def test_criterion_6_error_term(decay_runs):
    t0 = time.perf_counter()
    d6, log = choose_degree(N_BIG, K_BIG, LADDER, PILOT, rule="error_term", epsilon=EPS)
    assert d6 is not None, log
    held = total = first = 0
    worst = 0.0

    def check(outs):
        nonlocal held, total, worst
        for o in outs:
            its, cfg = o.result.iterates, o.config
            for t in range(cfg.N):
                rep = error_term(its["U"][t], o.truth, o.schedule.graphs[t + 1], cfg.beta,
                                 EPS, V_tilde=its["V_tilde"][t])
                worst = max(worst, rep.identity_residual)
                yield t, rep.satisfied

    # the identity is checked on the criterion 4 runs as well
    for _ in check(decay_runs["outs"]):
        pass
    for s in SEEDS:
        o = run_instance(N_BIG, K_BIG, d6, s, epsilon=EPS, keep_iterates=True)
        for t, sat in check([o]):
            held += sat
            total += 1
            first += sat and t == 0
    seconds = time.perf_counter() - t0
    budget = seconds + decay_runs["seconds"]
    ok = held >= 0.9 * total and worst <= 1e-8 and budget < 300
    record_acceptance("criterion 6", ok,
                      f"d={d6} bound_held={held}/{total} ({held / total:.1%}, first update "
                      f"{first}/{len(SEEDS)}) "
                      f"identity_max_residual={worst:.1e} time_with_c4={budget:.0f}s")
    assert ok


# --- 7: thresholding against vanilla AM ---------------------------------------

def _adversarial_medians(n, k, d, seeds):
    tam, van, ill = [], [], []
    for s in seeds:
        a = run_instance(n, k, d, s, kind="adversarial", epsilon=EPS)
        b = run_instance(n, k, d, s, kind="adversarial", epsilon=EPS, algorithm="vanilla_am",
                         truth=a.truth, schedule=a.schedule)
        tam.append(a.rel_error)
        van.append(b.rel_error)
        ill.append(b.result.ill_conditioned)
    return float(np.median(tam)), float(np.median(van)), ill


def test_criterion_7_thresholding_earns_its_keep():
    t0 = time.perf_counter()
    seeds = range(10)
    tam, van, ill = _adversarial_medians(2000, 2, 2, seeds)
    ratio = van / tam
    # context only: at a degree where TAM recovers the gap is modest
    tam20, van20, ill20 = _adversarial_medians(2000, 2, 20, seeds)
    seconds = time.perf_counter() - t0
    ok = min(ill) >= 1 and ratio >= 10 and seconds < 120
    record_acceptance("criterion 7", ok,
                      f"d=2: median tam={tam:.3g} vanilla={van:.3g} ratio={ratio:.3g} "
                      f"min_ill_conditioned={min(ill)}; d=20 (not asserted): tam={tam20:.2e} "
                      f"vanilla={van20:.2e} ratio={van20 / tam20:.2e} time={seconds:.0f}s")
    assert ok


# --- 8: spectral properties ------------------------------------------------------

def test_criterion_8_spectral():
    t0 = time.perf_counter()
    sigma1_ok = flat_ok = True
    sigma2_hits = total = 0
    worst1 = worst_flat = 0.0
    for d in (3, 5, 10):
        for seed in range(20):
            rep = spectral_check(sample_bipartite_regular(500, d, seed), seed=seed)
            worst1 = max(worst1, abs(rep.sigma1 - d))
            worst_flat = max(worst_flat, rep.top_vector_flatness)
            sigma2_hits += rep.sigma2 <= 7 * math.sqrt(d) / 3
            total += 1
    sigma1_ok = worst1 <= 1e-8
    flat_ok = worst_flat <= 1e-8
    seconds = time.perf_counter() - t0
    ok = sigma1_ok and flat_ok and sigma2_hits >= 0.95 * total and seconds < 60
    record_acceptance("criterion 8", ok,
                      f"max|sigma1-d|={worst1:.1e} sigma2_bound={sigma2_hits}/{total} "
                      f"max_flatness={worst_flat:.1e} time={seconds:.1f}s")
    assert ok


# --- 9: linear-time scaling ----------------------------------------------------

def test_criterion_9_linear_scaling():
    t0 = time.perf_counter()
    rep = runtime_scaling([2000, 4000], 20, k=2, N=5, reps=5)
    ratio = rep.ratio(2000, 4000)
    total = rep.ratio(2000, 4000, "total_seconds")
    seconds = time.perf_counter() - t0
    ok = 1.6 <= ratio <= 2.6 and seconds < 180
    record_acceptance("criterion 9", ok,
                      f"iteration-phase ratio={ratio:.2f} (whole run incl. initial SVD "
                      f"{total:.2f}) time={seconds:.0f}s")
    assert ok


# --- 10: cross-oracle equivalence ----------------------------------------------

def test_criterion_10_cross_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    svd_dev = err_dev = 0.0
    for n, d, k in ((60, 4, 1), (120, 6, 2), (200, 10, 3)):
        truth = gen_flat(n, k, np.linspace(2, 1, k) if k > 1 else [1.0], rng=n)
        g = sample_bipartite_regular(n, d, n)
        A = apply_sampling_operator(g, truth.entry(*g.edges()).reshape(n, d)) * (n / d)
        U, S, V = truncated_svd_sparse(A, k, tol=1e-12, max_iter=5000, rng=0)
        Ud, Sd, Vdt = np.linalg.svd(A.toarray())
        svd_dev = max(svd_dev, float(np.max(np.abs(S - Sd[:k]) / Sd[0])),
                      subspace_dist(U, Ud[:, :k]), subspace_dist(V, Vdt[:k].T))
    set_equal = True
    compared = nonempty = 0
    for kind, d, beta in (("flat", 6, 0.5), ("flat", 12, 0.3), ("adversarial", 4, 0.4)):
        truth = make_instance(kind, 200, 2, d, 7)
        cfg = make_config(truth, d, 7, epsilon=0.1, beta=beta)
        out = run_instance(200, 2, d, 7, kind=kind, truth=truth, keep_iterates=True,
                           epsilon=0.1, beta=beta)
        its = out.result.iterates
        for t in range(cfg.N):
            g = out.schedule.graphs[t + 1]
            W = its["U"][t]
            _, in_loop = update_factor(W, g, out.schedule.values[t + 1], beta)
            diag = bad_set(W, g, beta).indices
            oracle = dense_bad_set(W, g.right_adj, beta)
            set_equal &= np.array_equal(in_loop, diag) and np.array_equal(diag, oracle)
            set_equal &= in_loop.size == out.result.trace[t].bad_count_V
            compared += 1
            nonempty += in_loop.size > 0
        for scale in (0.0, 1e-8, 1e-2):
            Up = out.result.U_final + scale * rng.standard_normal((200, 2))
            err_dev = max(err_dev, abs(relative_error(truth, U=Up, V_tilde=out.result.V_tilde_final)
                                       - relative_error_dense(truth, U=Up,
                                                              V_tilde=out.result.V_tilde_final)))
    seconds = time.perf_counter() - t0
    ok = svd_dev <= 1e-6 and err_dev <= 1e-10 and set_equal and nonempty > 0 and seconds < 60
    record_acceptance("criterion 10", ok,
                      f"svd_dev={svd_dev:.1e} rel_error_dev={err_dev:.1e} "
                      f"bad_sets_equal={set_equal} ({compared} updates, {nonempty} nonempty) "
                      f"time={seconds:.1f}s")
    assert ok
