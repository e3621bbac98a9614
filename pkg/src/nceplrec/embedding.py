"""Depopularized item embeddings.

Observed interactions are rescaled to the dot products that maximize the
popularity-contrastive logistic objective, then factorized with a randomized
truncated SVD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .numkit import as_sparse, col_nnz

OVERSAMPLES = 10
DEFAULT_POWER_ITERATIONS = 7


class EmptyMatrixError(ValueError):
    """The interaction matrix has no observed entries."""


@dataclass(frozen=True)
class PopularityProfile:
    counts: np.ndarray
    total: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


@dataclass(frozen=True)
class TruncatedFactorization:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    power_iterations: int
    seed: int

    @property
    def rank(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class EmbeddingPair:
    users: np.ndarray
    items: np.ndarray


def item_popularity(r: sp.spmatrix) -> PopularityProfile:
    counts = col_nnz(sp.csr_matrix(r))
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrixError("no interactions")
    return PopularityProfile(counts=counts, total=total)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def nce_gradient(d, popularity_prob):
    """Derivative of the per-entry contrastive objective with respect to ``d``."""
    return sigmoid(-d) - popularity_prob * sigmoid(d)


def nce_transform(r: sp.spmatrix, beta: float = 1.0) -> sp.csr_matrix:
    """Replace each observed entry by ``max(log T - beta * log c_j, 0)``.

    ``T`` is the total interaction count and ``c_j`` the count of the entry's
    item. Entries clamped to zero are dropped from the pattern.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    r = as_sparse(r)
    pop = item_popularity(r)
    with np.errstate(divide="ignore"):
        log_counts = np.log(pop.counts.astype(np.float64))
    values = np.maximum(np.log(float(pop.total)) - beta * log_counts[r.indices], 0.0)
    d = sp.csr_matrix((values, r.indices.copy(), r.indptr.copy()), shape=r.shape)
    d.eliminate_zeros()
    return d


def _orthonormal(y: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(y, mode="reduced")
    return q


def randomized_truncated_svd(
    s: sp.spmatrix | np.ndarray,
    k: int,
    power_iterations: int = DEFAULT_POWER_ITERATIONS,
    seed: int = 0,
    oversamples: int = OVERSAMPLES,
) -> TruncatedFactorization:
    """Rank-``k`` SVD via a Gaussian range finder with subspace iteration.

    The sketch is re-orthonormalized between every multiplication. Each
    singular pair is sign-flipped so the largest-magnitude entry of the right
    vector is positive.
    """
    m, n = s.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for a {m}x{n} matrix")
    if power_iterations < 0:
        raise ValueError("power_iterations must be nonnegative")
    if sp.issparse(s):
        s = sp.csr_matrix(s, dtype=np.float64)
    else:
        s = np.asarray(s, dtype=np.float64)
    st = s.T.tocsr() if sp.issparse(s) else s.T

    width = min(k + oversamples, min(m, n))
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, width))
    q = _orthonormal(np.asarray(s @ omega))
    for _ in range(power_iterations):
        z = _orthonormal(np.asarray(st @ q))
        q = _orthonormal(np.asarray(s @ z))

    b = np.asarray(st @ q).T  # width x n, equals q.T @ s
    ub, sigma, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :k]
    v = vt[:k].T.copy()
    sigma = sigma[:k].copy()

    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    u *= signs
    v *= signs
    return TruncatedFactorization(
        u=np.ascontiguousarray(u),
        s=sigma,
        v=np.ascontiguousarray(v),
        power_iterations=power_iterations,
        seed=seed,
    )


def scale_embeddings(f: TruncatedFactorization) -> EmbeddingPair:
    root = np.sqrt(f.s)
    return EmbeddingPair(users=f.u * root, items=f.v * root)
