"""Analysis-side quantities: incoherence, the restricted-isometry Monte
Carlo test, bad sets, the row-deviation set Q, the bad-set bounds and the
error term of one V update."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import LEFT, RIGHT, neighbour_blocks, threshold_blocks
from .errors import InvalidInputError, InvalidParameterError, OutOfRangeError
from .graph_sampler import BipartiteRegularGraph, as_generator
from .linalg import is_orthonormal, subspace_dist, svd_batched


def _require_orthonormal(W, tol=1e-8):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or not is_orthonormal(W, tol):
        raise InvalidInputError("expected an orthonormal n x k matrix")
    return W


def incoherence_of(W) -> float:
    """(n/k) max_i ||w_i||^2 for an orthonormal W."""
    W = _require_orthonormal(W)
    n, k = W.shape
    return float(n / k * np.max(np.einsum("ij,ij->i", W, W)))


def _isometry_gap(blocks, n):
    # ||(n/d) B^T B - I||_2 for a stack of d x k blocks
    d, k = blocks.shape[-2:]
    G = (n / d) * np.einsum("...dk,...dl->...kl", blocks, blocks) - np.eye(k)
    return np.max(np.abs(np.linalg.eigvalsh(G)), axis=-1)


def isometry_failure_rate(W, d: int, delta: float, trials: int, rng=None,
                     batch: int = 256) -> float:
    """Fraction of uniform d-subsets S with ||(n/d) W_S^T W_S - I||_2 > delta."""
    W = _require_orthonormal(W)
    n = W.shape[0]
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    if not 1 <= d <= n:
        raise InvalidParameterError(f"need 1 <= d <= n, got d={d}")
    gen = as_generator(rng)
    failures = 0
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        idx = np.stack([gen.choice(n, d, replace=False) for _ in range(m)])
        failures += int(np.sum(_isometry_gap(W[idx], n) > delta))
        done += m
    return failures / trials


def f_bound(d, mu, a, k) -> float:
    """3k sqrt(pi d) exp(-(a^2/2) d / (mu k + mu k a / 3))."""
    if d < 1 or mu <= 0 or k < 1:
        raise InvalidParameterError("need d >= 1, mu > 0, k >= 1")
    rate = (a * a / 2.0) / (mu * k + mu * k * a / 3.0)
    return float(3.0 * k * math.sqrt(math.pi * d) * math.exp(-rate * d))


def alpha_rho(beta, delta, mu0, k, gamma_t):
    """alpha = (1-beta-delta)/(12 mu0 k) and
    rho = 2k / ((1-beta-delta)^2/(24 mu0 k) - 3 gamma^2 mu0 k)."""
    gap = 1.0 - beta - delta
    if gap <= 0:
        raise InvalidParameterError("need beta + delta < 1")
    alpha = gap / (12.0 * mu0 * k)
    denom = gap * gap / (24.0 * mu0 * k) - 3.0 * gamma_t * gamma_t * mu0 * k
    if denom <= 0:
        raise OutOfRangeError(f"gamma_t = {gamma_t} makes the rho denominator {denom:.3e} <= 0")
    return alpha, 2.0 * k / denom


@dataclass
class BadSetReport:
    t: int
    indices: np.ndarray
    fraction: float
    bound_a: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "indices": [int(i) for i in self.indices],
            "fraction": self.fraction,
            "bound_a": self.bound_a,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def dump_indices(self, path) -> None:
        with open(path, "w") as fh:
            fh.writelines(f"{int(i)}\n" for i in self.indices)


def load_indices(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def bad_set(W, graph: BipartiteRegularGraph, beta: float, *, t: int = 0,
            side: str = RIGHT, mu0: float | None = None, zeta: float = 0.5) -> BadSetReport:
    """Indices j with ||(n/d) sum_{i in S_j} w_i w_i^T - I||_2 > 1 - beta.

    Works from the spectral norm of the centred Gramian rather than the
    interval test on the raw spectrum used inside the TAM update, so the
    two can be compared.  ``bound_a`` is filled in when ``mu0`` is given.
    """
    W = _require_orthonormal(W)
    if not 0.0 < beta < 1.0:
        raise InvalidParameterError("beta must lie in (0, 1)")
    blocks, _ = neighbour_blocks(W, graph, np.zeros((graph.n, graph.d)), side)
    gap = _isometry_gap(blocks, graph.n)
    idx = np.flatnonzero(gap > 1.0 - beta)
    bound = float("nan")
    if mu0 is not None:
        bound = (1.0 + zeta) * f_bound(graph.d, 5.0 * mu0, 1.0 - beta, W.shape[1])
    return BadSetReport(t, idx, idx.size / graph.n, bound)


def align_basis(Ut, Ustar) -> np.ndarray:
    """Rotate Ut within its span so that Ustar^T (Ut R) is symmetric PSD."""
    W1, _, W2 = svd_batched(np.asarray(Ustar).T @ np.asarray(Ut))
    return np.asarray(Ut) @ (W2 @ W1.T)


def rank_two_norms(A, B) -> np.ndarray:
    """Row-wise ||a a^T - b b^T||_2 in closed form.

    The difference has eigenvalues
    (|a|^2 - |b|^2)/2 +- sqrt((|a|^2 + |b|^2)^2/4 - (a.b)^2).
    """
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    ab = np.einsum("ij,ij->i", A, B)
    root = np.sqrt(np.maximum(0.25 * (aa + bb) ** 2 - ab * ab, 0.0))
    return np.abs(aa - bb) / 2.0 + root


def q_set(Ut, Ustar, tau: float, align: bool = False) -> np.ndarray:
    """Rows i with ||u_i u_i^T - u*_i u*_i^T||_2 > tau / n."""
    if not 0.0 < tau < 1.0:
        raise InvalidParameterError("tau must lie in (0, 1)")
    Ut = np.asarray(Ut, dtype=float)
    Ustar = np.asarray(Ustar, dtype=float)
    if Ut.shape != Ustar.shape:
        raise InvalidParameterError("shape mismatch")
    if align:
        Ut = align_basis(Ut, Ustar)
    n = Ut.shape[0]
    return np.flatnonzero(rank_two_norms(Ut, Ustar) > tau / n)


def q_set_size_check(Ut, Ustar, tau: float, mu0: float | None = None, slack: float = 1e-6) -> dict:
    """Evaluate (tau^2/(6 mu0 k) - 3 g^2 mu0 k)|Q| <= 2 k g^2 n + slack n.

    ``Ut`` is first aligned to ``Ustar``; ``mu0`` defaults to the measured
    incoherence of ``Ustar``.
    """
    Ustar = _require_orthonormal(Ustar)
    Ut = align_basis(_require_orthonormal(Ut), Ustar)
    n, k = Ustar.shape
    mu0 = incoherence_of(Ustar) if mu0 is None else mu0
    gamma = subspace_dist(Ut, Ustar)
    q = q_set(Ut, Ustar, tau)
    lhs = (tau * tau / (6.0 * mu0 * k) - 3.0 * gamma * gamma * mu0 * k) * q.size
    rhs = 2.0 * k * gamma * gamma * n
    return {"gamma": gamma, "q_size": int(q.size), "lhs": lhs, "rhs": rhs,
            "holds": bool(lhs <= rhs + slack * n)}


@dataclass
class ErrorTermReport:
    F_fro_over_sigmak: float
    bound: float
    satisfied: bool
    dist: float
    identity_residual: float
    bad_count: int

    # name used by the public interface
    @property
    def theorem2_bound(self) -> float:
        return self.bound

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def error_term_matrix(Ut, ground_truth, graph: BipartiteRegularGraph, beta: float,
                      side: str = RIGHT):
    """F^t and the update it belongs to.

    With ``side="right"`` this is the V update: B-hat^j and C-hat^j are
    built from the (possibly thresholded) neighbour blocks of ``Ut`` and
    ``F^t`` has rows v*_j^T Sigma (D^T B-hat^j - C-hat^{j,T}) (B-hat^j)^{-1},
    D = Ut^T U*.  For ``side="left"`` the roles of the two factors swap.
    Returns ``(F, tilde, bad_mask)`` where ``tilde`` is the
    Sigma-weighted reconstruction (B-hat^j)^{-1} C-hat^j Sigma v*_j.
    """
    Ustar, Vstar = ground_truth.Ustar, ground_truth.Vstar
    if side == LEFT:
        Ustar, Vstar = Vstar, Ustar
    sigma = np.asarray(ground_truth.sigma)
    n, d = graph.n, graph.d
    blocks, _ = neighbour_blocks(Ut, graph, np.zeros((n, d)), side)
    star_blocks, _ = neighbour_blocks(Ustar, graph, np.zeros((n, d)), side)
    hatted, bad, _, G = threshold_blocks(blocks, beta, n)
    B = (n / d) * G
    C = (n / d) * (np.swapaxes(hatted, -1, -2) @ star_blocks)
    D = Ut.T @ Ustar
    sv = Vstar * sigma  # rows v*_j^T Sigma
    Binv = np.linalg.inv(B)
    diff = D.T[None] @ B - np.swapaxes(C, -1, -2)
    F = np.einsum("jk,jkl,jlm->jm", sv, diff, Binv)
    tilde = np.einsum("jkl,jlm,jm->jk", Binv, C, sv)
    return F, tilde, bad


def error_term(Ut, ground_truth, graph: BipartiteRegularGraph, beta: float,
               epsilon: float, k: int | None = None, *, side: str = RIGHT,
               V_tilde=None) -> ErrorTermReport:
    """||F^t / sigma_k||_F against (1/(5 sqrt(10k))) max{dist(Ut, U*), eps/2}.

    When ``V_tilde`` (the update actually produced by the algorithm) is
    passed, ``identity_residual`` is the largest row-wise deviation from
    V* Sigma U*^T Ut - F^t; otherwise the reconstruction from B-hat, C-hat
    is used.
    """
    k = ground_truth.k if k is None else k
    Ustar = ground_truth.Vstar if side == LEFT else ground_truth.Ustar
    Vstar = ground_truth.Ustar if side == LEFT else ground_truth.Vstar
    F, tilde, bad = error_term_matrix(Ut, ground_truth, graph, beta, side)
    sigma = np.asarray(ground_truth.sigma)
    main = (Vstar * sigma) @ (Ustar.T @ Ut)
    target = tilde if V_tilde is None else np.asarray(V_tilde)
    resid = float(np.max(np.linalg.norm(target - (main - F), axis=1)))
    dist = subspace_dist(Ut, Ustar)
    bound = max(dist, epsilon / 2.0) / (5.0 * math.sqrt(10.0 * k))
    value = float(np.linalg.norm(F) / sigma[-1])
    return ErrorTermReport(value, bound, bool(value <= bound), dist, resid, int(bad.sum()))


def bad_set_bounds(Ut, Ustar, graph: BipartiteRegularGraph, beta: float, delta: float,
                   mu0: float, zeta: float = 0.5, side: str = RIGHT) -> dict:
    """Measured bad fraction against the three bad-set bounds.

    Bound (a) is always evaluated; (b) and (c) need the rho denominator
    to be positive at gamma = dist(Ut, Ustar) and are reported as None
    otherwise.
    """
    Ut = _require_orthonormal(Ut)
    k = Ut.shape[1]
    d = graph.d
    rep = bad_set(Ut, graph, beta, side=side, mu0=mu0, zeta=zeta)
    gamma = subspace_dist(Ut, Ustar)
    out = {
        "fraction": rep.fraction,
        "gamma": gamma,
        "bound_a": rep.bound_a,
        "holds_a": bool(rep.fraction <= rep.bound_a),
        "bound_b": None,
        "holds_b": None,
        "bound_c": None,
        "holds_c": None,
    }
    try:
        alpha, rho = alpha_rho(beta, delta, mu0, k, gamma)
    except OutOfRangeError:
        return out
    with np.errstate(over="ignore"):
        first = 1.1 * math.e * (math.e ** 2 * rho * gamma ** 2 / alpha) ** (alpha * d)
    out["bound_b"] = first + (1.0 + zeta) * f_bound(d, mu0, delta, k)
    out["bound_c"] = first + zeta
    out["holds_b"] = bool(rep.fraction <= out["bound_b"])
    out["holds_c"] = bool(rep.fraction <= out["bound_c"])
    return out


# names used by the public interface
assumption2_test = isometry_failure_rate
theorem4_check = bad_set_bounds
