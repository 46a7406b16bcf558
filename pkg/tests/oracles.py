"""Reference implementations used only by the tests.

Each one computes the same quantity as a library routine by a different
route, so agreement is evidence rather than tautology.
"""

import math

import numpy as np
from scipy.linalg import null_space


def mgs_qr(A):
    """Modified Gram-Schmidt with a nonnegative R diagonal."""
    A = np.array(A, dtype=float)
    n, k = A.shape
    Q = A.copy()
    R = np.zeros((k, k))
    for j in range(k):
        for i in range(j):
            R[i, j] = Q[:, i] @ Q[:, j]
            Q[:, j] -= R[i, j] * Q[:, i]
        R[j, j] = np.linalg.norm(Q[:, j])
        Q[:, j] /= R[j, j]
    return Q, R


def charpoly_singular_values(A):
    """Singular values as square roots of the roots of det(tI - A^T A)."""
    G = A.T @ A
    coeffs = np.poly(G)
    roots = np.sort(np.real(np.roots(coeffs)))[::-1]
    return np.sqrt(np.maximum(roots, 0.0))


def complement_dist(X, Y):
    """||X_perp^T Y||_2 with the complement formed explicitly."""
    Xq = np.linalg.qr(X)[0]
    Yq = np.linalg.qr(Y)[0]
    Xp = null_space(Xq.T)
    return float(np.linalg.norm(Xp.T @ Yq, 2))


def projector_dist(X, Y):
    Xq = np.linalg.qr(X)[0]
    Yq = np.linalg.qr(Y)[0]
    return float(np.linalg.norm(Xq @ Xq.T - Yq @ Yq.T, 2))


def row_rank_two_norms(A, B):
    return np.array([np.linalg.norm(np.outer(a, a) - np.outer(b, b), 2) for a, b in zip(A, B)])


def spike_failure_probability(n, d):
    """P(index 0 not in a uniform d-subset of [n]) = C(n-1, d) / C(n, d)."""
    return math.comb(n - 1, d) / math.comb(n, d)


def dense_bad_set(W, adjacency_by_target, beta):
    """Bad indices from the spectral norm of the centred Gramian, one at a time."""
    n, k = W.shape
    out = []
    for j, nbrs in enumerate(adjacency_by_target):
        B = W[list(nbrs)]
        G = (n / len(nbrs)) * B.T @ B
        if np.linalg.norm(G - np.eye(k), 2) > 1 - beta:
            out.append(j)
    return np.array(out, dtype=int)
