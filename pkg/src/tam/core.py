"""Thresholded alternating minimization and its unregularized baseline."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, InternalInvariantError, InvalidParameterError
from .graph_sampler import BipartiteRegularGraph, SampleSchedule, apply_sampling_operator
from .linalg import subspace_dist, svd_batched, thin_qr, truncated_svd_sparse
from .regularizers import IncoherenceParams, clamp_singular_values, truncate_and_orthonormalize

RIGHT = "right"  # solve for the rows indexed by right vertices (the V update)
LEFT = "left"  # solve for the rows indexed by left vertices (the U update)


def derive_iteration_count(epsilon: float) -> int:
    """Smallest N with N >= 1 + ceil(log(2/epsilon) / log 4)."""
    if not 0.0 < epsilon < 2.0 / 3.0:
        raise InvalidParameterError(f"epsilon must lie in (0, 2/3), got {epsilon}")
    return 1 + math.ceil(math.log(2.0 / epsilon) / math.log(4.0))


@dataclass
class TamConfig:
    k: int
    d: int
    N: int | None = None
    beta: float = 0.5
    delta: float = 0.1
    epsilon: float = 1e-3
    mu0: float = 1.0
    svd_tol: float = 1e-9
    svd_max_iter: int = 2000
    qr_tol: float = 1e-12
    seed: int = 0
    # baseline only: Gramians with condition number above this are counted
    ill_cond: float = 1e6
    time_budget: float | None = None

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise InvalidParameterError("k and d must be positive")
        if self.d < self.k:
            raise InvalidParameterError(f"need d >= k, got d={self.d}, k={self.k}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.beta < 1.0 - self.delta:
            raise InvalidParameterError(
                f"beta must lie in (0, 1 - delta) = (0, {1 - self.delta}), got {self.beta}"
            )
        if not 0.0 < self.epsilon < 2.0 / 3.0:
            raise InvalidParameterError(f"epsilon must lie in (0, 2/3), got {self.epsilon}")
        if self.mu0 < 1.0:
            raise InvalidParameterError("mu0 must be >= 1")
        if self.N is None:
            self.N = derive_iteration_count(self.epsilon)
        if self.N < 2:
            raise InvalidParameterError(f"N must be >= 2, got {self.N}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class IterationRecord:
    t: int
    bad_count_V: int
    bad_count_U: int
    dist_U_prev: float = float("nan")
    dist_Vbar: float = float("nan")
    dist_V: float = float("nan")
    dist_Ubar: float = float("nan")
    dist_U: float = float("nan")
    gram_min: float = float("nan")
    gram_max: float = float("nan")
    inverted_min: float = float("nan")
    ill_conditioned: int = 0
    seconds: float = 0.0


@dataclass
class TamResult:
    U_final: np.ndarray
    V_tilde_final: np.ndarray
    trace: list
    algorithm: str = "tam"
    init_dist_bar: float = float("nan")
    init_dist: float = float("nan")
    iterates: dict | None = None
    seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    def entry(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        out = np.einsum("...l,...l->...", self.U_final[i], self.V_tilde_final[j])
        return float(out) if out.ndim == 0 else out

    def materialize(self, max_n: int = 5000) -> np.ndarray:
        n = self.U_final.shape[0]
        if n > max_n:
            raise InvalidParameterError(f"refusing to materialize an {n} x {n} matrix")
        return self.U_final @ self.V_tilde_final.T

    @property
    def ill_conditioned(self) -> int:
        return sum(r.ill_conditioned for r in self.trace)

    @property
    def bad_counts(self) -> list:
        return [(r.bad_count_V, r.bad_count_U) for r in self.trace]


class HalfStep(NamedTuple):
    tilde: np.ndarray
    bad_set: np.ndarray
    gram_min: float
    gram_max: float
    inverted_min: float
    ill_conditioned: int


def neighbour_blocks(W, graph: BipartiteRegularGraph, values, side: str):
    """Stack the ``d x k`` row blocks of W seen by every target vertex.

    Returns ``(blocks, observed)`` with shapes ``(n, d, k)`` and ``(n, d)``;
    ``values`` is aligned with ``graph.left_adj``.
    """
    values = np.asarray(values, dtype=float)
    if side == RIGHT:
        nbrs = graph.right_adj
        observed = values.ravel()[graph.right_edge]
    elif side == LEFT:
        nbrs = graph.left_adj
        observed = values
    else:
        raise InvalidParameterError(f"side must be 'left' or 'right', got {side!r}")
    return np.asarray(W)[nbrs], observed


def threshold_blocks(blocks: np.ndarray, beta: float, n: int):
    """Apply T2(., beta) to every block whose normalized Gramian leaves
    ``[beta, 2 - beta]``.

    The check uses the eigenvalues of the k x k Gramians; only the bad
    blocks go through an SVD, whose singular values and vectors are then
    clamped and reused.  Returns the (partly) hatted blocks, the boolean
    bad mask, the normalized Gramian spectra of the raw blocks (ascending)
    and the Gramians of the returned blocks.
    """
    d = blocks.shape[1]
    G = np.swapaxes(blocks, -1, -2) @ blocks
    spectra = (n / d) * np.linalg.eigvalsh(G)
    bad = (spectra[:, 0] < beta) | (spectra[:, -1] > 2.0 - beta)
    hatted = blocks
    if bad.any():
        hatted = blocks.copy()
        U, S, V = svd_batched(blocks[bad])
        S_hat = clamp_singular_values(S, beta, n, d)
        hatted[bad] = (U * S_hat[:, None, :]) @ np.swapaxes(V, -1, -2)
        G = G.copy()
        G[bad] = np.swapaxes(hatted[bad], -1, -2) @ hatted[bad]
    return hatted, bad, spectra, G


def _tam_half(W, graph, values, beta, side) -> HalfStep:
    n, d = graph.n, graph.d
    blocks, observed = neighbour_blocks(W, graph, values, side)
    hatted, bad, spectra, G = threshold_blocks(blocks, beta, n)
    rhs = (np.swapaxes(hatted, -1, -2) @ observed[..., None])[..., 0]
    inverted = (n / d) * np.linalg.eigvalsh(G)
    try:
        tilde = np.linalg.solve(G, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise InternalInvariantError("a thresholded Gramian was singular") from exc
    if inverted.min() < beta - 1e-8:
        raise InternalInvariantError(
            f"inverted Gramian with normalized sigma_min {inverted.min():.3e} < beta"
        )
    return HalfStep(
        tilde,
        np.flatnonzero(bad),
        float(spectra.min()),
        float(spectra.max()),
        float(inverted.min()),
        0,
    )


def _vanilla_half(W, graph, values, side, ill_cond) -> HalfStep:
    n, d = graph.n, graph.d
    blocks, observed = neighbour_blocks(W, graph, values, side)
    Bt = np.swapaxes(blocks, -1, -2)
    G, rhs = Bt @ blocks, (Bt @ observed[..., None])[..., 0]
    eig = np.linalg.eigvalsh(G)
    top = np.maximum(eig[:, -1], np.finfo(float).tiny)
    ill = eig[:, 0] <= top / ill_cond
    tilde = np.empty_like(rhs)
    ok = ~ill
    if ok.any():
        tilde[ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
    if ill.any():
        tilde[ill] = (np.linalg.pinv(G[ill]) @ rhs[ill][..., None])[..., 0]
    spectra = (n / d) * eig
    return HalfStep(
        tilde,
        np.flatnonzero(ill),
        float(spectra.min()),
        float(spectra.max()),
        float(spectra[:, 0].min()),
        int(ill.sum()),
    )


def update_factor(W, graph: BipartiteRegularGraph, values, beta: float, side: str = RIGHT):
    """One thresholded least-squares half step.

    ``side="right"`` computes the rows of V-tilde (one per right vertex,
    using its left neighbours' rows of ``W``); ``side="left"`` the rows of
    U-tilde.  Returns ``(tilde, bad_set)`` where ``bad_set`` holds the
    indices at which T2 was applied.
    """
    step = _tam_half(W, graph, values, beta, side)
    return step.tilde, step.bad_set


def _check_schedule(schedule: SampleSchedule, config: TamConfig):
    if schedule.d != config.d or schedule.N != config.N:
        raise InvalidParameterError(
            f"schedule (d={schedule.d}, N={schedule.N}) does not match "
            f"config (d={config.d}, N={config.N})"
        )
    if config.k >= schedule.n:
        raise InvalidParameterError("k must be smaller than n")
    if config.mu0 * config.k > schedule.n:
        raise InvalidParameterError("mu0 * k exceeds n")


def _params(config, n):
    return IncoherenceParams(config.mu0, config.k, n)


def _top_singular_vectors(schedule, config):
    return top_singular_vectors(schedule.graphs[0], schedule.values[0], config)


def top_singular_vectors(graph: BipartiteRegularGraph, values, config: TamConfig):
    """Top-k left singular vectors of (n/d) P_Omega(M) on one graph."""
    n, d = graph.n, graph.d
    A = apply_sampling_operator(graph, values) * (n / d)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2,)))
    return truncated_svd_sparse(A, config.k, tol=config.svd_tol,
                                max_iter=config.svd_max_iter, rng=rng).U


def initialize(schedule: SampleSchedule, config: TamConfig, *, return_raw: bool = False):
    """Top-k left singular vectors of (n/d) P_Omega0(M), truncated and
    re-orthonormalized."""
    _check_schedule(schedule, config)
    Ubar = _top_singular_vectors(schedule, config)
    U0 = truncate_and_orthonormalize(Ubar, _params(config, schedule.n))
    return (U0, Ubar) if return_raw else U0


def _dist(X, Y):
    try:
        return subspace_dist(X, Y)
    except Exception:  # noqa: BLE001 - diagnostics only
        return float("nan")


def _run(schedule, config, ground_truth, keep_iterates, vanilla):
    _check_schedule(schedule, config)
    start = time.perf_counter()
    n, N = schedule.n, config.N
    params = _params(config, n)
    Ustar = Vstar = None
    if ground_truth is not None:
        Ustar, Vstar = ground_truth.Ustar, ground_truth.Vstar
        if Ustar.shape != (n, config.k):
            raise InvalidParameterError("ground truth shape does not match the schedule")

    Ubar = _top_singular_vectors(schedule, config)
    U = thin_qr(Ubar).Q if vanilla else truncate_and_orthonormalize(Ubar, params)
    result = TamResult(None, None, [], "vanilla_am" if vanilla else "tam")
    if Ustar is not None:
        result.init_dist_bar = _dist(Ubar, Ustar)
        result.init_dist = _dist(U, Ustar)
    its = {"U": [U], "V": [], "V_tilde": [], "U_tilde": []} if keep_iterates else None

    def half(W, t, side):
        g, v = schedule.graphs[t], schedule.values[t]
        if vanilla:
            return _vanilla_half(W, g, v, side, config.ill_cond)
        return _tam_half(W, g, v, config.beta, side)

    def orthonormalize(tilde):
        bar = thin_qr(tilde).Q
        if vanilla:
            return bar, bar
        return bar, truncate_and_orthonormalize(bar, params)

    for t in range(N):
        t0 = time.perf_counter()
        with np.errstate(all="ignore"):
            hv = half(U, t + 1, RIGHT)
            Vbar, V = orthonormalize(_finite(hv.tilde))
            hu = half(V, N + t + 1, LEFT)
            Ubar_next, U_next = orthonormalize(_finite(hu.tilde))
        rec = IterationRecord(
            t=t,
            bad_count_V=int(hv.bad_set.size),
            bad_count_U=int(hu.bad_set.size),
            gram_min=min(hv.gram_min, hu.gram_min),
            gram_max=max(hv.gram_max, hu.gram_max),
            inverted_min=min(hv.inverted_min, hu.inverted_min),
            ill_conditioned=hv.ill_conditioned + hu.ill_conditioned,
        )
        if Ustar is not None:
            rec.dist_U_prev = _dist(U, Ustar)
            rec.dist_Vbar = _dist(Vbar, Vstar)
            rec.dist_V = _dist(V, Vstar)
            rec.dist_Ubar = _dist(Ubar_next, Ustar)
            rec.dist_U = _dist(U_next, Ustar)
        if its is not None:
            its["V_tilde"].append(hv.tilde)
            its["V"].append(V)
            its["U_tilde"].append(hu.tilde)
            its["U"].append(U_next)
        if t == N - 1:
            result.U_final = U
            result.V_tilde_final = hv.tilde
        U = U_next
        rec.seconds = time.perf_counter() - t0
        result.trace.append(rec)
        if config.time_budget is not None and time.perf_counter() - start > config.time_budget:
            if t < N - 1:
                result.U_final, result.V_tilde_final = U, None
                raise ConvergenceError(
                    f"time budget {config.time_budget}s exceeded after iteration {t}",
                    best=result,
                )
    result.iterates = its
    result.seconds = time.perf_counter() - start
    return result


def _finite(tilde):
    # the baseline can overflow; keep QR well defined and let the error show
    if np.all(np.isfinite(tilde)):
        return tilde
    out = np.where(np.isfinite(tilde), tilde, 0.0)
    return out if np.any(out) else np.ones_like(tilde)


def run_tam(schedule: SampleSchedule, config: TamConfig, ground_truth=None,
            keep_iterates: bool = False) -> TamResult:
    """Run TAM and return U^{N-1}, V-tilde^N and a per-iteration trace.

    Subspace distances are filled in only when ``ground_truth`` (anything
    with ``Ustar`` and ``Vstar`` attributes) is supplied.
    """
    return _run(schedule, config, ground_truth, keep_iterates, vanilla=False)


def run_vanilla_am(schedule: SampleSchedule, config: TamConfig, ground_truth=None,
                   keep_iterates: bool = False) -> TamResult:
    """Same loop without T1/T2; singular Gramians use the pseudo-inverse.

    Gramians whose condition number exceeds ``config.ill_cond`` are
    counted in ``IterationRecord.ill_conditioned`` and solved with the
    pseudo-inverse.
    """
    if config.k >= schedule.n:
        raise InvalidParameterError("k must be smaller than n")
    return _run(schedule, config, ground_truth, keep_iterates, vanilla=True)
