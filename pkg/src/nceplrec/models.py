"""Projected linear recommenders and their SVD / popularity ablations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .embedding import (
    DEFAULT_POWER_ITERATIONS,
    EmptyMatrixError,
    nce_transform,
    randomized_truncated_svd,
    scale_embeddings,
)
from .numkit import as_sparse, cholesky, col_nnz, gram, sparse_dense_matmul, spd_solve


class Kind(str, enum.Enum):
    NCE_PLREC = "NCE-PLRec"
    NCE_PLREC_W = "NCE-PLRec-W"
    PLREC = "PLRec"
    PURESVD = "PureSVD"
    NCE_SVD = "NCE-SVD"
    POP = "POP"

    @property
    def has_weights(self) -> bool:
        return self in (Kind.NCE_PLREC, Kind.NCE_PLREC_W, Kind.PLREC)

    @property
    def has_embedding(self) -> bool:
        return self is not Kind.POP


class ColdStartUnsupported(ValueError):
    pass


class InvalidHyperparameters(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    k: int = 50
    beta: float = 1.0
    alpha: float = 0.0
    lam: float = 1.0
    power_iterations: int = DEFAULT_POWER_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidHyperparameters(f"k must be >= 1, got {self.k}")
        if not self.beta > 0:
            raise InvalidHyperparameters(f"beta must be > 0, got {self.beta}")
        if not self.alpha >= -1:
            raise InvalidHyperparameters(f"alpha must be >= -1, got {self.alpha}")
        if not self.lam > 0:
            raise InvalidHyperparameters(f"lambda must be > 0, got {self.lam}")
        if self.power_iterations < 0:
            raise InvalidHyperparameters("power_iterations must be >= 0")


@dataclass
class TrainedModel:
    """A fitted recommender.

    ``user_factor`` holds one latent row per training user: the projection
    ``R @ item_embedding`` for the regression models, the left factor for the
    SVD models. Scores are ``user_factor @ weights.T`` or
    ``user_factor @ item_embedding.T`` respectively.
    """

    kind: Kind
    hyper: Hyperparameters
    pop_counts: np.ndarray
    item_embedding: np.ndarray | None = None
    weights: np.ndarray | None = None
    user_factor: np.ndarray | None = None
    user_ids: list[str] | None = None
    item_ids: list[str] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if self.kind.has_embedding != (self.item_embedding is not None):
            raise ValueError(f"{self.kind.value}: item embedding presence mismatch")
        if self.kind.has_weights != (self.weights is not None):
            raise ValueError(f"{self.kind.value}: weights presence mismatch")
        if self.kind.has_embedding != (self.user_factor is not None):
            raise ValueError(f"{self.kind.value}: user factor presence mismatch")
        if self.weights is not None and self.weights.shape[1] != self.item_embedding.shape[1]:
            raise ValueError("weights and item embedding disagree on k")

    @property
    def n_items(self) -> int:
        return self.pop_counts.shape[0]

    @property
    def n_users(self) -> int | None:
        return None if self.user_factor is None else self.user_factor.shape[0]


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: np.ndarray
    scores: np.ndarray


def _checked(r) -> sp.csr_matrix:
    r = as_sparse(r)
    if r.nnz == 0:
        raise EmptyMatrixError("no interactions")
    return r


def _check_rank(r, hyper: Hyperparameters):
    if hyper.k > min(r.shape):
        raise InvalidHyperparameters(f"k={hyper.k} exceeds min{r.shape}")


def global_ridge(q: np.ndarray, r: sp.spmatrix, lam: float) -> np.ndarray:
    """Item weights ``W`` (n x k) solving ``(Q'Q + lam I) W' = Q'R``."""
    a = gram(q) + lam * np.eye(q.shape[1])
    qtr = sparse_dense_matmul(sp.csr_matrix(r).T.tocsr(), q).T
    return np.ascontiguousarray(spd_solve(a, qtr).T)


def weighted_ridge(q: np.ndarray, r: sp.spmatrix, alpha: float, lam: float) -> np.ndarray:
    """Per-item ridge with entry weights ``1 + alpha * r_ij``.

    ``Q' C_j Q`` is the shared Gram matrix plus ``alpha`` times the Gram of
    the rows that observed item ``j``, so only those rows are touched.
    """
    if not alpha >= -1:
        raise InvalidHyperparameters(f"alpha must be >= -1, got {alpha}")
    k = q.shape[1]
    base = gram(q) + lam * np.eye(k)
    rc = sp.csc_matrix(r)
    rc.sort_indices()
    w = np.empty((rc.shape[1], k))
    for j in range(rc.shape[1]):
        rows = rc.indices[rc.indptr[j]:rc.indptr[j + 1]]
        vals = rc.data[rc.indptr[j]:rc.indptr[j + 1]]
        qj = q[rows]
        a = base + alpha * gram(qj * np.sqrt(vals)[:, None]) if rows.size else base
        b = (qj * (vals * (1.0 + alpha * vals))[:, None]).sum(axis=0)
        w[j] = scipy.linalg.cho_solve(cholesky(a), b)
    return w


def _nce_embedding(r, hyper):
    d = nce_transform(r, hyper.beta)
    if d.nnz == 0:
        raise EmptyMatrixError("depopularized matrix is empty; lower beta")
    f = randomized_truncated_svd(d, hyper.k, hyper.power_iterations, hyper.seed)
    return scale_embeddings(f)


def train_nce_plrec(r, hyper: Hyperparameters) -> TrainedModel:
    r = _checked(r)
    _check_rank(r, hyper)
    v = _nce_embedding(r, hyper).items
    q = sparse_dense_matmul(r, v)
    return TrainedModel(
        Kind.NCE_PLREC, hyper, col_nnz(r), item_embedding=v,
        weights=global_ridge(q, r, hyper.lam), user_factor=q,
    )


def train_nce_plrec_weighted(r, hyper: Hyperparameters) -> TrainedModel:
    r = _checked(r)
    _check_rank(r, hyper)
    v = _nce_embedding(r, hyper).items
    q = sparse_dense_matmul(r, v)
    return TrainedModel(
        Kind.NCE_PLREC_W, hyper, col_nnz(r), item_embedding=v,
        weights=weighted_ridge(q, r, hyper.alpha, hyper.lam), user_factor=q,
    )


def train_plrec(r, hyper: Hyperparameters) -> TrainedModel:
    # projects through the unscaled right singular vectors of R itself
    r = _checked(r)
    _check_rank(r, hyper)
    v = randomized_truncated_svd(r, hyper.k, hyper.power_iterations, hyper.seed).v
    q = sparse_dense_matmul(r, v)
    return TrainedModel(
        Kind.PLREC, hyper, col_nnz(r), item_embedding=v,
        weights=global_ridge(q, r, hyper.lam), user_factor=q,
    )


def train_puresvd(r, hyper: Hyperparameters) -> TrainedModel:
    r = _checked(r)
    _check_rank(r, hyper)
    f = randomized_truncated_svd(r, hyper.k, hyper.power_iterations, hyper.seed)
    return TrainedModel(
        Kind.PURESVD, hyper, col_nnz(r), item_embedding=f.v, user_factor=f.u * f.s,
    )


def train_nce_svd(r, hyper: Hyperparameters) -> TrainedModel:
    r = _checked(r)
    _check_rank(r, hyper)
    e = _nce_embedding(r, hyper)
    return TrainedModel(
        Kind.NCE_SVD, hyper, col_nnz(r), item_embedding=e.items, user_factor=e.users,
    )


def train_pop(r, hyper: Hyperparameters | None = None) -> TrainedModel:
    r = _checked(r)
    return TrainedModel(Kind.POP, hyper or Hyperparameters(), col_nnz(r))


TRAINERS = {
    Kind.NCE_PLREC: train_nce_plrec,
    Kind.NCE_PLREC_W: train_nce_plrec_weighted,
    Kind.PLREC: train_plrec,
    Kind.PURESVD: train_puresvd,
    Kind.NCE_SVD: train_nce_svd,
    Kind.POP: train_pop,
}


def train(kind: Kind | str, r, hyper: Hyperparameters) -> TrainedModel:
    return TRAINERS[Kind(kind)](r, hyper)


def score_users(model: TrainedModel, users=None) -> np.ndarray:
    """Score matrix for ``users`` (all training users when ``None``)."""
    if model.kind is Kind.POP:
        count = 1 if users is None else len(np.atleast_1d(users))
        return np.tile(model.pop_counts.astype(np.float64), (count, 1))
    rows = model.user_factor if users is None else model.user_factor[np.atleast_1d(users)]
    right = model.weights if model.kind.has_weights else model.item_embedding
    return rows @ right.T


def score_user(model: TrainedModel, user: int) -> np.ndarray:
    if model.kind is not Kind.POP and not 0 <= user < model.n_users:
        raise IndexError(f"unknown user index {user}")
    return score_users(model, [user])[0]


def coldstart_scores(model: TrainedModel, rows) -> np.ndarray:
    """Scores for users unseen in training, from their interaction rows.

    Accepts a single row (1-D) or a sparse/dense matrix of rows.
    """
    if not model.kind.has_weights:
        raise ColdStartUnsupported(f"cold-start unsupported for this model ({model.kind.value})")
    single = not sp.issparse(rows) and np.ndim(rows) == 1
    if single:
        rows = np.asarray(rows, dtype=np.float64)[None, :]
    if rows.shape[1] != model.n_items:
        raise ValueError(f"row length {rows.shape[1]} != {model.n_items} items")
    q = rows @ model.item_embedding
    scores = np.asarray(q) @ model.weights.T
    return scores[0] if single else scores


def _ranking(scores: np.ndarray, pop: np.ndarray) -> np.ndarray:
    # score desc, then popularity desc, then index asc
    idx = np.broadcast_to(np.arange(scores.shape[-1]), scores.shape)
    negpop = np.broadcast_to(-np.asarray(pop, dtype=np.float64), scores.shape)
    return np.lexsort((idx, negpop, -scores), axis=-1)


def recommend_topk(scores, k: int, exclude=(), pop=None, user: int = -1) -> RecommendationList:
    if k < 1:
        raise ValueError("K must be >= 1")
    scores = np.array(scores, dtype=np.float64)
    pop = np.zeros(scores.shape[0]) if pop is None else pop
    excluded = np.zeros(scores.shape[0], dtype=bool)
    excluded[np.asarray(list(exclude), dtype=np.int64)] = True
    scores[excluded] = -np.inf
    order = _ranking(scores, pop)[: min(k, int((~excluded).sum()))]
    return RecommendationList(user, order, scores[order])


def topk_matrix(scores: np.ndarray, k: int, exclude: sp.spmatrix | None, pop) -> list[np.ndarray]:
    """Row-wise :func:`recommend_topk` returning item indices per row."""
    scores = np.array(scores, dtype=np.float64)
    allowed = np.full(scores.shape[0], scores.shape[1])
    if exclude is not None:
        ex = sp.csr_matrix(exclude)
        rr, cc = ex.nonzero()
        scores[rr, cc] = -np.inf
        allowed -= np.diff(ex.indptr)
    order = _ranking(scores, pop)[:, :k]
    return [order[i, : min(k, allowed[i])] for i in range(order.shape[0])]
