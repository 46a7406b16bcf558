"""Synthetic rank-k ground truths with measured incoherence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .graph_sampler import as_generator
from .linalg import thin_qr


def incoherence(W) -> float:
    """(n/k) max_i ||w_i||^2, without an orthonormality check."""
    W = np.asarray(W)
    n, k = W.shape
    return float(n / k * np.max(np.einsum("ij,ij->i", W, W)))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """M = Ustar diag(sigma) Vstar^T, accessed by entry."""

    Ustar: np.ndarray
    Vstar: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or np.any(sigma <= 0) or np.any(np.diff(sigma) > 0):
            raise InvalidParameterError("sigma must be positive and non-increasing")
        if self.Ustar.shape != self.Vstar.shape or self.Ustar.shape[1] != sigma.size:
            raise InvalidParameterError("factor shapes do not match sigma")
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.Ustar.shape[0]

    @property
    def k(self) -> int:
        return self.sigma.size

    @property
    def mu0_actual(self) -> float:
        return max(incoherence(self.Ustar), incoherence(self.Vstar))

    @property
    def kappa(self) -> float:
        return float(self.sigma[0] / self.sigma[-1])

    @property
    def fro_norm(self) -> float:
        return float(np.linalg.norm(self.sigma))

    def entry(self, i, j):
        """M_ij; ``i`` and ``j`` may be broadcastable index arrays."""
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        # column by column: gathers from contiguous vectors are much cheaper
        # than gathering whole rows for millions of entries
        left = np.ascontiguousarray((self.Ustar * self.sigma).T)
        right = np.ascontiguousarray(self.Vstar.T)
        out = left[0][i] * right[0][j]
        for a, b in zip(left[1:], right[1:]):
            out += a[i] * b[j]
        return float(out) if out.ndim == 0 else out

    __call__ = entry

    def dense(self) -> np.ndarray:
        return (self.Ustar * self.sigma) @ self.Vstar.T


def _sign_factor(n, k, gen):
    if k >= n:
        raise InvalidParameterError(f"need k < n, got k={k}, n={n}")
    S = gen.choice([-1.0, 1.0], size=(n, k))
    Q = thin_qr(S).Q
    # a Haar rotation keeps the row lengths, so flatness survives
    R = thin_qr(gen.standard_normal((k, k))).Q
    return Q @ R


def _gaussian_factor(n, k, gen):
    if k >= n:
        raise InvalidParameterError(f"need k < n, got k={k}, n={n}")
    return thin_qr(gen.standard_normal((n, k))).Q


def _check_sigma(sigma, k):
    sigma = np.sort(np.asarray(sigma, dtype=float).ravel())[::-1]
    if sigma.size != k:
        raise InvalidParameterError(f"expected {k} singular values, got {sigma.size}")
    if np.any(sigma <= 0):
        raise InvalidParameterError("singular values must be positive")
    return sigma


def gen_flat(n: int, k: int, sigma, rng=None, mode: str = "signs") -> GroundTruth:
    """Ground truth with near-flat factors.

    ``mode``: ``"signs"`` orthonormalised random-sign columns (rows of
    almost equal length), ``"gaussian"`` Haar-random orthonormal factors,
    ``"ones"`` the deterministic all-ones factor (k = 1 only).
    """
    sigma = _check_sigma(sigma, k)
    gen = as_generator(rng)
    if mode == "ones":
        if k != 1:
            raise InvalidParameterError("mode 'ones' is only defined for k = 1")
        if n < 2:
            raise InvalidParameterError("need n >= 2")
        U = np.full((n, 1), 1.0 / np.sqrt(n))
        V = U.copy()
    elif mode == "signs":
        U, V = _sign_factor(n, k, gen), _sign_factor(n, k, gen)
    elif mode == "gaussian":
        U, V = _gaussian_factor(n, k, gen), _gaussian_factor(n, k, gen)
    else:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    return GroundTruth(U, V, sigma, {"kind": "flat", "mode": mode})


def _clustered_factor(n, k, gen):
    # a random half of the rows lies on one line, the rest in the
    # orthogonal (k-1)-dimensional subspace
    perm = gen.permutation(n)
    cluster, rest = perm[: n // 2], perm[n // 2:]
    F = np.zeros((n, k))
    F[cluster, 0] = gen.choice([-1.0, 1.0], size=cluster.size)
    F[cluster, 0] /= np.linalg.norm(F[cluster, 0])
    block = gen.choice([-1.0, 1.0], size=(rest.size, k - 1))
    F[rest, 1:] = thin_qr(block).Q
    R = thin_qr(gen.standard_normal((k, k))).Q
    return F @ R, np.sort(cluster)


def gen_adversarial_gramian(n: int, k: int, d: int, rng=None, sigma=None) -> GroundTruth:
    """Incoherent ground truth whose sampled Gramians are often singular.

    In each factor half of the rows are parallel, so any vertex whose d
    neighbours all fall in that half (probability about ``2**-d``) sees a
    rank-one Gramian.  Default singular values decrease linearly from 2
    to 1.
    """
    if k < 2:
        raise InvalidParameterError("adversarial instances need k >= 2")
    if not 1 <= d <= n or 2 * k > n:
        raise InvalidParameterError(f"bad sizes n={n}, k={k}, d={d}")
    sigma = np.linspace(2.0, 1.0, k) if sigma is None else _check_sigma(sigma, k)
    gen = as_generator(rng)
    U, cu = _clustered_factor(n, k, gen)
    V, cv = _clustered_factor(n, k, gen)
    meta = {"kind": "adversarial", "u_cluster": cu.tolist(), "v_cluster": cv.tolist()}
    return GroundTruth(U, V, sigma, meta)
