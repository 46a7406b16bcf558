"""Row truncation (T1), singular value clamping (T2) and the
truncate-then-orthonormalize step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTruncationError, InvalidInputError, InvalidParameterError
from .linalg import is_orthonormal, svd_batched, thin_qr

DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class IncoherenceParams:
    mu0: float
    k: int
    n: int

    def __post_init__(self):
        if self.mu0 < 1 or self.k < 1 or self.n < 1:
            raise InvalidParameterError("need mu0 >= 1 and positive k, n")
        if self.mu0 * self.k > self.n:
            raise InvalidParameterError(
                f"mu0*k = {self.mu0 * self.k} exceeds n = {self.n}"
            )

    @property
    def row_norm(self) -> float:
        """sqrt(mu0 k / n), the length a truncated row is scaled to."""
        return math.sqrt(self.mu0 * self.k / self.n)

    @property
    def threshold(self) -> float:
        """Rows at least this long are truncated."""
        return 2.0 * self.row_norm


def t1_row(u, params: IncoherenceParams) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    length = np.linalg.norm(u)
    if length >= params.threshold:
        return u * (params.row_norm / length)
    return u.copy()


def t1_matrix(U, params: IncoherenceParams) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    lengths = np.linalg.norm(U, axis=1)
    long_rows = lengths >= params.threshold
    out = U.copy()
    out[long_rows] *= (params.row_norm / lengths[long_rows])[:, None]
    return out


def clamp_singular_values(S, a: float, n: int, d: int) -> np.ndarray:
    """Clamp ``S * sqrt(n/d)`` into ``[sqrt(a), sqrt(2-a)]`` and rescale back."""
    scale = math.sqrt(d / n)
    return np.clip(np.asarray(S) / scale, math.sqrt(a), math.sqrt(2.0 - a)) * scale


def t2(A, a: float, n: int) -> np.ndarray:
    """Clamp the normalized spectrum of a ``d x k`` block (or a stack of them).

    The block's own row count is the degree ``d``.  Null directions are
    lifted along the singular vectors chosen by :func:`svd_batched`.
    """
    if not 0.0 < a < 1.0:
        raise InvalidParameterError(f"a must lie in (0, 1), got {a}")
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    d = A.shape[-2]
    if d < A.shape[-1]:
        raise InvalidParameterError("t2 needs at least as many rows as columns")
    U, S, V = svd_batched(A)
    S_hat = clamp_singular_values(S, a, n, d)
    return (U * S_hat[..., None, :]) @ np.swapaxes(V, -1, -2)


def truncate_and_orthonormalize(Ubar, params: IncoherenceParams) -> np.ndarray:
    """Apply T1 row-wise, then return the Q factor of a thin QR."""
    Ubar = np.asarray(Ubar, dtype=float)
    if not is_orthonormal(Ubar, 1e-8):
        raise InvalidInputError("truncate_and_orthonormalize expects orthonormal input")
    T = t1_matrix(Ubar, params)
    s = np.linalg.svd(T, compute_uv=False)
    if s[-1] < DEGENERATE_TOL:
        raise DegenerateTruncationError(
            f"sigma_k of the truncated factor is {s[-1]:.3e}"
        )
    return thin_qr(T).Q
