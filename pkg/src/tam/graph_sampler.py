"""Random bipartite d-regular graphs and the sampling schedule built from them.

Graphs are generated with the configuration model: each of the ``2n``
vertices is replicated ``d`` times, the ``dn`` left replicas are matched
uniformly at random to the ``dn`` right replicas, and the matching is
projected to a bipartite multigraph.  Two ways of getting rid of parallel
edges are offered:

``"rejection"``
    resample the whole matching until it projects to a simple graph.  The
    result is exactly uniform, but the acceptance probability decays like
    ``exp(-(d-1)**2 / 2)``, so this is only practical for small ``d``.
``"switch"``
    keep the first matching and remove each parallel edge by a random
    degree-preserving double-edge switch, optionally followed by
    ``mix_sweeps * n * d`` further random switches.  Practical for any
    ``d``; the law is close to, but not exactly, uniform.

``"auto"`` (the default) picks rejection whenever its expected number of
attempts is small.  For ``d > n/2`` (and ``n`` small enough for an ``n x n``
table) both ``"auto"`` and ``"switch"`` sample the complementary
``(n - d)``-regular graph and return its complement; complementation is a
bijection, so the law carries over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .errors import (
    ConvergenceError,
    InconsistencyError,
    InvalidParameterError,
    SamplingFailureError,
)

DEFAULT_MAX_ATTEMPTS = 10_000

# expected rejection attempts above which "auto" switches method
_AUTO_REJECTION_LIMIT = 1_000.0
_DENSE_TABLE_LIMIT = 1 << 24  # n*n multiplicity table used by the fast repair


def as_generator(rng) -> np.random.Generator:
    """Coerce a seed, SeedSequence or Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def spawn_generators(rng, count: int) -> list[np.random.Generator]:
    """Derive ``count`` independent child generators deterministically.

    Children depend only on the parent seed (or the parent generator's
    state), never on how many workers later consume them.
    """
    if isinstance(rng, np.random.Generator):
        return rng.spawn(count)
    if not isinstance(rng, np.random.SeedSequence):
        rng = np.random.SeedSequence(rng)
    return [np.random.default_rng(s) for s in rng.spawn(count)]


@dataclass(frozen=True, eq=False)
class BipartiteRegularGraph:
    """One sample of G_d(n, n).

    ``left_adj[i]`` lists the right neighbours of left vertex ``i`` and
    ``right_adj[j]`` the left neighbours of right vertex ``j``; both are
    sorted.  Edges are numbered in left order, edge ``i*d + r`` being
    ``(i, left_adj[i, r])``; ``right_edge[j, r]`` is the number of the edge
    ``(right_adj[j, r], j)``.  All arrays are read-only.
    """

    n: int
    d: int
    left_adj: np.ndarray
    right_adj: np.ndarray
    right_edge: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n: int, d: int, rows, cols) -> "BipartiteRegularGraph":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if not 1 <= d <= n:
            raise InvalidParameterError(f"need 1 <= d <= n, got d={d}, n={n}")
        if rows.shape != (n * d,) or cols.shape != (n * d,):
            raise InconsistencyError(f"expected {n * d} edges, got {rows.size}")
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n:
            raise InconsistencyError("edge endpoint out of range")
        # stable sorts of small integers use radix sort, far cheaper than
        # sorting combined keys
        small = np.int16 if n < 2**15 else np.int64
        if np.any(rows[1:] < rows[:-1]):
            order = np.argsort(rows.astype(small), kind="stable")
            rows, cols = rows[order], cols[order]
        if np.any(np.bincount(rows, minlength=n) != d):
            raise InconsistencyError("left degrees are not all equal to d")
        if np.any(np.bincount(cols, minlength=n) != d):
            raise InconsistencyError("right degrees are not all equal to d")
        left_adj = np.sort(cols.reshape(n, d), axis=1)
        if d > 1 and np.any(np.diff(left_adj, axis=1) == 0):
            raise InconsistencyError("graph has parallel edges")
        by_right = np.argsort(left_adj.ravel().astype(small), kind="stable")
        right_adj = (by_right // d).reshape(n, d)
        right_edge = by_right.reshape(n, d)
        for a in (left_adj, right_adj, right_edge):
            a.setflags(write=False)
        return cls(n, d, left_adj, right_adj, right_edge)

    @property
    def num_edges(self) -> int:
        return self.n * self.d

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of all edges, in left order."""
        return np.repeat(np.arange(self.n), self.d), self.left_adj.ravel()

    def biadjacency(self) -> sp.csr_matrix:
        rows, cols = self.edges()
        data = np.ones(rows.size)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def left_degrees(self) -> np.ndarray:
        return np.array([len(set(r)) for r in self.left_adj.tolist()])

    def right_degrees(self) -> np.ndarray:
        return np.array([len(set(r)) for r in self.right_adj.tolist()])

    def has_edge(self, i: int, j: int) -> bool:
        row = self.left_adj[i]
        pos = np.searchsorted(row, j)
        return bool(pos < self.d and row[pos] == j)

    def __eq__(self, other):
        if not isinstance(other, BipartiteRegularGraph):
            return NotImplemented
        return (self.n, self.d) == (other.n, other.d) and np.array_equal(
            self.left_adj, other.left_adj
        )

    __hash__ = None


def _pairing(n: int, d: int, gen: np.random.Generator):
    rows = np.repeat(np.arange(n, dtype=np.int64), d)
    cols = gen.permutation(rows)
    return rows, cols


def _is_simple(n: int, rows: np.ndarray, cols: np.ndarray) -> bool:
    keys = rows * n + cols
    return np.unique(keys).size == keys.size


def _switch(rows, cols, present, extra, e, f, n) -> bool:
    """Try the switch (a,b),(c,g) -> (a,g),(c,b); return success.

    ``present`` holds every distinct edge key, ``extra`` the number of
    surplus copies of each repeated key.
    """
    a, b = rows[e], cols[e]
    c, g = rows[f], cols[f]
    if a == c or b == g:
        return False
    k_new1, k_new2 = a * n + g, c * n + b
    if k_new1 in present or k_new2 in present:
        return False
    for k_old in (a * n + b, c * n + g):
        surplus = extra.get(k_old, 0)
        if surplus > 1:
            extra[k_old] = surplus - 1
        elif surplus == 1:
            del extra[k_old]
        else:
            present.discard(k_old)
    present.add(k_new1)
    present.add(k_new2)
    cols[e], cols[f] = g, b
    return True


def _surplus_edges(keys, candidates, counts):
    # of the candidate edges sharing a key, keep count - 1 (the surplus copies)
    if candidates.size == 0:
        return candidates
    ck = keys[candidates]
    order = np.argsort(ck, kind="stable")
    ck = ck[order]
    start = np.r_[0, np.flatnonzero(ck[1:] != ck[:-1]) + 1]
    rank = np.arange(ck.size) - np.repeat(start, np.diff(np.r_[start, ck.size]))
    keep = rank < counts[ck] - 1
    return np.sort(candidates[order][keep])


def _repair_dense(n, d, rows, cols, gen, max_attempts):
    """Vectorized switching with an n*n multiplicity table.

    Every round proposes one random partner per surplus edge and applies
    the proposals that touch disjoint edges and create no parallel edge.
    """
    m = n * d
    cols = cols.copy()
    keys = rows * n + cols
    counts = np.bincount(keys, minlength=n * n).astype(np.int32)
    pending = _surplus_edges(keys, np.flatnonzero(counts[keys] > 1), counts)
    busy = np.zeros(m, dtype=bool)
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > max_attempts:
            raise SamplingFailureError(
                f"could not remove parallel edges after {max_attempts} switch rounds"
            )
        e = pending
        f = gen.integers(0, m, size=e.size)
        a, b, c, g = rows[e], cols[e], rows[f], cols[f]
        new1, new2 = a * n + g, c * n + b
        busy[e] = True
        ok = (a != c) & (b != g) & (counts[new1] == 0) & (counts[new2] == 0) & ~busy[f]
        busy[e] = False
        idx = np.flatnonzero(ok)
        # one switch per partner edge, and no key created twice in a round
        _, first = np.unique(f[idx], return_index=True)
        idx = idx[np.sort(first)]
        created = np.concatenate([new1[idx], new2[idx]])
        uniq, cnt = np.unique(created, return_counts=True)
        clash = np.isin(new1[idx], uniq[cnt > 1]) | np.isin(new2[idx], uniq[cnt > 1])
        idx = idx[~clash]
        np.subtract.at(counts, keys[e[idx]], 1)
        np.subtract.at(counts, keys[f[idx]], 1)
        counts[new1[idx]] += 1
        counts[new2[idx]] += 1
        cols[e[idx]] = g[idx]
        cols[f[idx]] = b[idx]
        keys[e[idx]] = new1[idx]
        keys[f[idx]] = new2[idx]
        moved = np.zeros(e.size, dtype=bool)
        moved[idx] = True
        rest = e[~moved]
        # a key can lose copies through partner moves, so re-check surplus
        pending = rest[counts[keys[rest]] > 1]
    return rows, cols


def _repair_by_switching(n, d, rows, cols, gen, max_attempts, mix_sweeps):
    if n * n <= _DENSE_TABLE_LIMIT and not mix_sweeps:
        return _repair_dense(n, d, rows, cols, gen, max_attempts)
    m = n * d
    keys = rows * n + cols
    order = np.argsort(keys, kind="stable")
    repeated = np.zeros(m, dtype=bool)
    repeated[order[1:]] = keys[order[1:]] == keys[order[:-1]]
    # every copy of an edge after the first must be switched away
    pending = np.flatnonzero(repeated).tolist()
    uniq, counts = np.unique(keys, return_counts=True)
    present = set(uniq.tolist())
    extra = dict(zip(uniq[counts > 1].tolist(), (counts[counts > 1] - 1).tolist()))
    rows = rows.tolist()
    cols = cols.tolist()
    # draw candidate partners in batches to keep the Python loop cheap
    batch = gen.integers(0, m, size=max(64, 4 * len(pending)))
    pos = 0
    for e in pending:
        tries = 0
        # the edge may already have been moved off its repeated key
        while rows[e] * n + cols[e] in extra:
            if pos == batch.size:
                batch = gen.integers(0, m, size=batch.size)
                pos = 0
            f = int(batch[pos])
            pos += 1
            tries += 1
            if tries > max_attempts:
                raise SamplingFailureError(
                    f"could not remove a parallel edge after {max_attempts} switches"
                )
            _switch(rows, cols, present, extra, e, f, n)
    n_mix = int(mix_sweeps * m)
    if n_mix:
        pairs = gen.integers(0, m, size=(n_mix, 2))
        for e, f in pairs.tolist():
            _switch(rows, cols, present, extra, e, f, n)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def _choose_method(d: int, max_attempts: int) -> str:
    expected = math.exp(min((d - 1) ** 2 / 2.0, 700.0))
    limit = min(_AUTO_REJECTION_LIMIT, max_attempts / 10)
    return "rejection" if expected <= limit else "switch"


def sample_bipartite_regular(
    n: int,
    d: int,
    rng=None,
    *,
    method: str = "auto",
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    mix_sweeps: float = 0.0,
) -> BipartiteRegularGraph:
    """Sample a simple bipartite d-regular graph on n + n vertices.

    Raises InvalidParameterError unless ``1 <= d <= n`` and
    SamplingFailureError when ``max_attempts`` is exhausted (whole
    matchings for rejection, partner draws per parallel edge for switching).
    """
    if not (isinstance(n, (int, np.integer)) and isinstance(d, (int, np.integer))):
        raise InvalidParameterError("n and d must be integers")
    if not 1 <= d <= n:
        raise InvalidParameterError(f"need 1 <= d <= n, got d={d}, n={n}")
    gen = as_generator(rng)
    rows, cols = _sample_edges(n, d, gen, method, max_attempts, mix_sweeps)
    return BipartiteRegularGraph.from_edges(n, d, rows, cols)


def _sample_edges(n, d, gen, method, max_attempts, mix_sweeps):
    if d == n:
        return np.repeat(np.arange(n), n), np.tile(np.arange(n), n)
    if 2 * d > n and n * n <= _DENSE_TABLE_LIMIT and method in ("auto", "switch"):
        # complementation is a bijection between d- and (n-d)-regular graphs
        r, c = _sample_edges(n, n - d, gen, method, max_attempts, mix_sweeps)
        mask = np.ones((n, n), dtype=bool)
        mask[r, c] = False
        return np.nonzero(mask)
    if method == "auto":
        method = _choose_method(d, max_attempts)
    if method == "rejection":
        for _ in range(max_attempts):
            rows, cols = _pairing(n, d, gen)
            if _is_simple(n, rows, cols):
                return rows, cols
        raise SamplingFailureError(
            f"no simple graph in {max_attempts} matchings (n={n}, d={d})"
        )
    if method == "switch":
        rows, cols = _pairing(n, d, gen)
        return _repair_by_switching(n, d, rows, cols, gen, max_attempts, mix_sweeps)
    raise InvalidParameterError(f"unknown method {method!r}")


def _evaluate_oracle(oracle: Callable, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Evaluate an entry oracle on index arrays.

    Oracles are tried vectorised first; scalar-only callables fall back to
    an elementwise loop.
    """
    try:
        out = np.asarray(oracle(rows, cols), dtype=float)
        return np.broadcast_to(out, rows.shape).copy()
    except (TypeError, ValueError):
        return np.array([float(oracle(int(i), int(j))) for i, j in zip(rows, cols)])


@dataclass(frozen=True, eq=False)
class SampleSchedule:
    """The 2N+1 graphs of RRG(d, n, N) and the observed entries on each.

    ``values[t]`` is an ``(n, d)`` array aligned with
    ``graphs[t].left_adj``: ``values[t][i, r]`` is M at
    ``(i, graphs[t].left_adj[i, r])``.
    """

    n: int
    d: int
    N: int
    graphs: tuple
    values: tuple
    seed: object = None

    def __post_init__(self):
        if len(self.graphs) != 2 * self.N + 1 or len(self.values) != 2 * self.N + 1:
            raise InconsistencyError("schedule must hold exactly 2N+1 graphs")
        for g, v in zip(self.graphs, self.values):
            if (g.n, g.d) != (self.n, self.d):
                raise InconsistencyError("graph size does not match schedule")
            if np.shape(v) != (self.n, self.d):
                raise InconsistencyError("values not aligned with graph edges")

    def value_map(self, t: int) -> dict:
        rows, cols = self.graphs[t].edges()
        return dict(zip(zip(rows.tolist(), cols.tolist()), self.values[t].ravel().tolist()))

    def left_values(self, t: int) -> np.ndarray:
        """Values indexed like ``graphs[t].left_adj``."""
        return self.values[t]

    def right_values(self, t: int) -> np.ndarray:
        """Values indexed like ``graphs[t].right_adj``."""
        return self.values[t].ravel()[self.graphs[t].right_edge]

    def __eq__(self, other):
        if not isinstance(other, SampleSchedule):
            return NotImplemented
        return (
            (self.n, self.d, self.N) == (other.n, other.d, other.N)
            and all(a == b for a, b in zip(self.graphs, other.graphs))
            and all(np.array_equal(a, b) for a, b in zip(self.values, other.values))
        )

    __hash__ = None


def observe(graph: BipartiteRegularGraph, matrix_oracle: Callable) -> np.ndarray:
    rows, cols = graph.edges()
    vals = _evaluate_oracle(matrix_oracle, rows, cols).reshape(graph.n, graph.d)
    vals.setflags(write=False)
    return vals


def sample_rrg_schedule(
    n: int,
    d: int,
    N: int,
    matrix_oracle: Callable,
    rng=None,
    **sampler_kw,
) -> SampleSchedule:
    """Sample RRG(d, n, N) and record ``matrix_oracle`` on every edge.

    Each graph gets its own child generator spawned from ``rng``, so graph
    ``t`` depends only on the root seed and ``t``.
    """
    if N < 1:
        raise InvalidParameterError(f"N must be >= 1, got {N}")
    children = spawn_generators(rng, 2 * N + 1)
    graphs = tuple(sample_bipartite_regular(n, d, g, **sampler_kw) for g in children)
    values = tuple(observe(g, matrix_oracle) for g in graphs)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    return SampleSchedule(n, d, N, graphs, values, seed)


def apply_sampling_operator(graph: BipartiteRegularGraph, values) -> sp.csr_matrix:
    """P_Omega: observed values at the graph's edges, structural zeros elsewhere.

    ``values`` is either an ``(n, d)`` array aligned with ``left_adj`` or a
    mapping ``(i, j) -> value`` over exactly the edge set.
    """
    n, d = graph.n, graph.d
    rows, cols = graph.edges()
    if isinstance(values, Mapping):
        arr = np.empty(n * d)
        seen = 0
        for (i, j), v in values.items():
            if not (0 <= i < n and 0 <= j < n) or not graph.has_edge(i, j):
                raise InconsistencyError(f"({i}, {j}) is not an edge of the graph")
            pos = int(np.searchsorted(graph.left_adj[i], j))
            arr[i * d + pos] = v
            seen += 1
        if seen != n * d:
            raise InconsistencyError("values do not cover every edge")
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape != (n, d):
            raise InconsistencyError(f"values have shape {arr.shape}, expected {(n, d)}")
        arr = arr.ravel()
    return sp.csr_matrix((arr, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class SpectralReport:
    sigma1: float
    sigma2: float
    top_vector_flatness: float


def spectral_check(
    graph: BipartiteRegularGraph,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 0,
) -> SpectralReport:
    """Estimate the two largest singular values of the bi-adjacency matrix.

    sigma1 and its right singular vector come from power iteration on
    G^T G; sigma2 from a Lanczos solve on G^T G deflated by that vector.
    Flatness is the largest deviation of the top vector's entries from
    1/sqrt(n), after fixing the global sign.
    """
    G = graph.biadjacency()
    n = graph.n
    gen = np.random.default_rng(seed)
    x = gen.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    converged = False
    for _ in range(max_iter):
        y = G.T @ (G @ x)
        lam = float(x @ y)
        y /= np.linalg.norm(y)
        step = np.linalg.norm(y - x)
        x = y
        # vector error is ~ step / (1 - gap ratio); stop well below tol
        if step <= 1e-2 * tol:
            converged = True
            break
    sigma1 = math.sqrt(max(lam, 0.0))
    if x.sum() < 0:
        x = -x
    flat = float(np.max(np.abs(x - 1.0 / math.sqrt(n))))
    if not converged:
        raise ConvergenceError(
            "power iteration for sigma1 did not converge",
            best=SpectralReport(sigma1, float("nan"), flat),
        )
    if n == 1:
        return SpectralReport(sigma1, 0.0, flat)

    def deflated(v):
        v = v - x * (x @ v)
        w = G.T @ (G @ v)
        return w - x * (x @ w)

    op = LinearOperator((n, n), matvec=deflated, dtype=float)
    v0 = gen.standard_normal(n)
    try:
        if n <= 3:
            dense = op @ np.eye(n)
            lam2 = float(np.linalg.eigvalsh((dense + dense.T) / 2)[-1])
        else:
            lam2 = float(eigsh(op, k=1, which="LA", tol=tol, maxiter=max_iter, v0=v0,
                               return_eigenvectors=False)[0])
    except ArpackNoConvergence as exc:
        vals = exc.eigenvalues
        best = math.sqrt(max(float(vals[-1]), 0.0)) if len(vals) else float("nan")
        raise ConvergenceError(
            "Lanczos iteration for sigma2 did not converge",
            best=SpectralReport(sigma1, best, flat),
        ) from exc
    sigma2 = math.sqrt(max(lam2, 0.0))
    return SpectralReport(sigma1, min(sigma2, sigma1), flat)


def sample_erdos_renyi_bipartite(n: int, p: float, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Each of the n*n pairs is kept independently with probability p.

    Returns sorted ``(rows, cols)`` index arrays.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"p must lie in [0, 1], got {p}")
    gen = as_generator(rng)
    total = n * n
    m = int(gen.binomial(total, p))
    flat = np.sort(gen.choice(total, size=m, replace=False))
    return flat // n, flat % n
