"""Dense and sparse kernels used throughout: thin QR, small SVDs, a
randomized sparse truncated SVD and the subspace distance."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, InvalidParameterError, InvalidSubspaceError

ORTHONORMAL_TOL = 1e-10


class QRResult(NamedTuple):
    Q: np.ndarray
    R: np.ndarray
    rank_deficient: bool


class SmallSVD(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


class TruncatedSVD(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def thin_qr(A, rank_tol: float = 1e-12) -> QRResult:
    """Householder thin QR with a nonnegative diagonal on R.

    ``rank_deficient`` is set when some ``|R_ll|`` falls below
    ``rank_tol * ||A||_F``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise InvalidParameterError(f"thin_qr needs n >= k, got shape {A.shape}")
    Q, R = np.linalg.qr(A, mode="reduced")
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q = Q * signs
    R = R * signs[:, None]
    scale = np.linalg.norm(A)
    deficient = bool(np.any(np.abs(np.diag(R)) <= rank_tol * scale)) if scale > 0 else True
    return QRResult(Q, R, deficient)


def _fix_signs(U, V):
    # largest-magnitude entry of each left singular vector made positive
    idx = np.argmax(np.abs(U), axis=-2)
    picked = np.take_along_axis(U, idx[..., None, :], axis=-2)
    signs = np.where(picked < 0, -1.0, 1.0)
    return U * signs, V * signs


def svd_batched(A) -> SmallSVD:
    """Thin SVD of a matrix or a stack of matrices ``(..., d, k)``.

    Singular values are descending; the sign of each singular pair is
    fixed so that the largest-magnitude entry of the left vector is
    positive.  ``V`` holds right singular vectors as columns.
    """
    A = np.asarray(A, dtype=float)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    U, V = _fix_signs(U, np.swapaxes(Vt, -1, -2))
    return SmallSVD(U, S, V)


def small_svd(A) -> SmallSVD:
    """Thin SVD of a small dense matrix with a deterministic sign convention."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidParameterError("small_svd expects a 2-d array")
    return svd_batched(A)


def _orth(Y):
    return np.linalg.qr(Y, mode="reduced")[0]


def truncated_svd_sparse(
    A,
    k: int,
    tol: float = 1e-9,
    max_iter: int = 1000,
    rng=None,
    oversample: int | None = None,
) -> TruncatedSVD:
    """Top-k singular triplets of a sparse (or dense) square matrix.

    Randomized block subspace iteration with ``k + oversample`` columns
    (default oversampling ``2k``), re-orthonormalised after both products
    of every sweep, followed by a Rayleigh-Ritz step.  Each sweep costs
    O(k nnz(A)).  Stops once ``||A V - U S||_F <= tol * S[0]``; otherwise
    raises ConvergenceError carrying the last iterate.
    """
    n = A.shape[0]
    if not 1 <= k < min(A.shape):
        raise InvalidParameterError(f"need 1 <= k < n, got k={k}")
    p = 2 * k if oversample is None else oversample
    b = min(k + p, min(A.shape))
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    Q = _orth(A @ gen.standard_normal((A.shape[1], b)))
    best = None
    for _ in range(max_iter):
        Z = _orth(A.T @ Q)
        Q = _orth(A @ Z)
        W = A.T @ Q  # = (Q^T A)^T
        Vw, S, Uwt = np.linalg.svd(W, full_matrices=False)
        U = Q @ Uwt.T[:, :k]
        V = Vw[:, :k]
        S = S[:k]
        U, V = _fix_signs(U, V)
        resid = np.linalg.norm(A @ V - U * S)
        best = TruncatedSVD(U, S, V)
        if S[0] == 0 or resid <= tol * S[0]:
            return best
    raise ConvergenceError(
        f"truncated SVD did not reach tol={tol} in {max_iter} sweeps "
        f"(n={n}, k={k})",
        best=best,
    )


def is_orthonormal(X, tol: float = ORTHONORMAL_TOL) -> bool:
    X = np.asarray(X)
    k = X.shape[1]
    return bool(np.max(np.abs(X.T @ X - np.eye(k))) <= tol)


def orthonormal_basis(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if is_orthonormal(X):
        return X
    Q, _, deficient = thin_qr(X)
    if deficient:
        raise InvalidSubspaceError("input does not have full column rank")
    return Q


def subspace_dist(X, Y) -> float:
    """Sine of the largest principal angle between span(X) and span(Y).

    Equal to ``||X_perp^T Y||_2`` for orthonormal bases, evaluated as
    ``sqrt(1 - sigma_min(X^T Y)^2)`` so the complement is never formed.
    """
    Xh = orthonormal_basis(X)
    Yh = orthonormal_basis(Y)
    if Xh.shape != Yh.shape:
        raise InvalidParameterError(f"shape mismatch {Xh.shape} vs {Yh.shape}")
    s_min = np.linalg.svd(Xh.T @ Yh, compute_uv=False)[-1]
    # cancellation near s_min ~ 1: use the residual norm there instead
    if s_min > 0.9:
        resid = Yh - Xh @ (Xh.T @ Yh)
        return float(min(1.0, np.linalg.norm(resid, 2)))
    return float(np.sqrt(max(0.0, 1.0 - s_min * s_min)))
