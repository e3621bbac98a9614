"""Splitting, ranking metrics and the experimental protocol around them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .models import Hyperparameters, TrainedModel, score_users, topk_matrix
from .numkit import from_triples

log = logging.getLogger(__name__)

DEFAULT_KS = (5, 10, 20, 50)
DEFAULT_NDCG_DEPTH = 50
SPLIT_RATIOS = (0.5, 0.2, 0.3)
Z_95 = 1.96

DEFAULT_GRID = {
    "k": [50, 100, 200, 500],
    "alpha": [-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 1.0, 10.0, 100.0],
    "beta": [0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3],
    "lam": [0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
}


@dataclass(frozen=True)
class Interactions:
    """Binary interactions as parallel index arrays over a fixed shape."""

    users: np.ndarray
    items: np.ndarray
    shape: tuple[int, int]
    timestamps: np.ndarray | None = None
    dropped: int = 0

    def __len__(self):
        return self.users.shape[0]

    def matrix(self, mask=None) -> sp.csr_matrix:
        u, i = (self.users, self.items) if mask is None else (self.users[mask], self.items[mask])
        return from_triples(u, i, np.ones(u.shape[0]), self.shape)


@dataclass(frozen=True)
class EvalSplit:
    train: sp.csr_matrix
    valid: sp.csr_matrix
    test: sp.csr_matrix
    mode: str
    ratios: tuple[float, float, float] = SPLIT_RATIOS


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci_half_width: float
    user_count: int
    degenerate: bool = False


@dataclass
class MetricsReport:
    metrics: dict[str, MetricSummary]
    users: np.ndarray
    per_user: dict[str, np.ndarray] = field(repr=False)


def binarize(ratings: np.ndarray, threshold: float) -> np.ndarray:
    """Mask of ratings strictly above ``threshold``."""
    return np.asarray(ratings, dtype=np.float64) > threshold


def _cut_sizes(counts: np.ndarray, ratios) -> tuple[np.ndarray, np.ndarray]:
    train_frac = Fraction(str(ratios[0]))
    valid_frac = Fraction(str(ratios[1]))
    n_train = counts * train_frac.numerator // train_frac.denominator
    n_valid = counts * valid_frac.numerator // valid_frac.denominator
    return n_train, n_valid


def _split_by_order(inter: Interactions, order: np.ndarray, mode: str, ratios) -> EvalSplit:
    users = inter.users[order]
    m = inter.shape[0]
    counts = np.bincount(users, minlength=m)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    position = np.arange(users.shape[0]) - starts[users]
    n_train, n_valid = _cut_sizes(counts, ratios)
    part = np.where(position < n_train[users], 0, np.where(position < (n_train + n_valid)[users], 1, 2))
    sorted_inter = Interactions(users, inter.items[order], inter.shape)
    return EvalSplit(
        train=sorted_inter.matrix(part == 0),
        valid=sorted_inter.matrix(part == 1),
        test=sorted_inter.matrix(part == 2),
        mode=mode,
        ratios=tuple(ratios),
    )


def chronological_split(inter: Interactions, ratios=SPLIT_RATIOS) -> EvalSplit:
    """Per user, the earliest share goes to train, the next to valid, the rest to test.

    Timestamp ties are ordered by item index.
    """
    if inter.timestamps is None:
        raise ValueError("chronological split requires timestamps")
    order = np.lexsort((inter.items, inter.timestamps, inter.users))
    return _split_by_order(inter, order, "chronological", ratios)


def random_split(inter: Interactions, seed: int = 0, ratios=SPLIT_RATIOS) -> EvalSplit:
    keys = np.random.default_rng(seed).random(len(inter))
    order = np.lexsort((keys, inter.users))
    return _split_by_order(inter, order, "random", ratios)


def metric_names(ks: Sequence[int]) -> list[str]:
    names = ["NDCG", "R-Precision"]
    names += [f"Precision@{k}" for k in ks]
    names += [f"Recall@{k}" for k in ks]
    return names


def _metrics_from_hits(hits: np.ndarray, lengths: np.ndarray, n_relevant: np.ndarray, ks, depth) -> dict[str, np.ndarray]:
    """Metrics from a users x L boolean hit matrix (padded with False)."""
    out = {}
    if hits.shape[1] == 0:
        hits = np.zeros((hits.shape[0], 1), dtype=bool)
    width = hits.shape[1]
    cum = np.cumsum(hits, axis=1)

    def hits_at(cut):
        cut = np.minimum(cut, width)
        return np.where(cut > 0, cum[np.arange(hits.shape[0]), np.maximum(cut, 1) - 1], 0)

    # sequential sums so results match a plain loop bit for bit
    discounts = np.array([1.0 / math.log2(pos + 1) for pos in range(1, depth + 1)])
    d = min(depth, width)
    dcg = np.cumsum(np.where(hits[:, :d], discounts[:d], 0.0), axis=1)[:, -1]
    ideal_cum = np.concatenate([[0.0], np.cumsum(discounts)])
    idcg = ideal_cum[np.minimum(n_relevant, depth)]
    out["NDCG"] = dcg / idcg

    r_cap = np.minimum(n_relevant, lengths)
    out["R-Precision"] = np.where(r_cap > 0, hits_at(r_cap) / np.maximum(r_cap, 1), 0.0)
    for k in ks:
        h = hits_at(np.full(hits.shape[0], k))
        out[f"Precision@{k}"] = h / k
        out[f"Recall@{k}"] = h / n_relevant
    return out


def rank_metrics(ranked: Sequence[int], relevant: Iterable[int], ks=DEFAULT_KS, ndcg_depth=DEFAULT_NDCG_DEPTH) -> dict[str, float] | None:
    """Per-user metrics; ``None`` when the user has nothing relevant (skipped)."""
    relevant = set(relevant)
    if not relevant:
        return None
    ranked = list(ranked)
    hits = np.array([[item in relevant for item in ranked]], dtype=bool).reshape(1, len(ranked))
    values = _metrics_from_hits(
        hits, np.array([len(ranked)]), np.array([len(relevant)]), list(ks), ndcg_depth
    )
    return {name: float(v[0]) for name, v in values.items()}


def aggregate(values) -> MetricSummary:
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n == 0:
        raise ValueError("no users to aggregate")
    mean = math.fsum(values) / n
    if n == 1:
        return MetricSummary(mean, 0.0, 1, degenerate=True)
    sd = math.sqrt(math.fsum((values - mean) ** 2) / (n - 1))
    return MetricSummary(mean, Z_95 * sd / math.sqrt(n), n)


def evaluate_scores(
    scores: np.ndarray,
    target: sp.spmatrix,
    exclude: sp.spmatrix | None,
    pop: np.ndarray,
    ks=DEFAULT_KS,
    ndcg_depth=DEFAULT_NDCG_DEPTH,
    users: np.ndarray | None = None,
) -> MetricsReport:
    """Rank each row of ``scores`` and compare it with the same row of ``target``.

    Rows of ``target`` with no entries are skipped. ``users`` labels the rows.
    """
    target = sp.csr_matrix(target)
    n_rel = np.diff(target.indptr)
    keep = np.flatnonzero(n_rel > 0)
    users = np.arange(scores.shape[0]) if users is None else np.asarray(users)
    if keep.size == 0:
        raise ValueError("no evaluable users")
    ks = list(ks)
    width = max(max(ks), ndcg_depth, int(n_rel.max()))
    ex = None if exclude is None else sp.csr_matrix(exclude)[keep]
    lists = topk_matrix(scores[keep], width, ex, pop)
    hits = np.zeros((keep.size, width), dtype=bool)
    lengths = np.empty(keep.size, dtype=np.int64)
    tk = target[keep]
    for row, items in enumerate(lists):
        lengths[row] = items.size
        rel = tk.indices[tk.indptr[row]:tk.indptr[row + 1]]
        hits[row, : items.size] = np.isin(items, rel)
    per_user = _metrics_from_hits(hits, lengths, n_rel[keep], ks, ndcg_depth)
    per_user = {name: per_user[name] for name in metric_names(ks)}
    return MetricsReport(
        metrics={name: aggregate(v) for name, v in per_user.items()},
        users=users[keep],
        per_user=per_user,
    )


def evaluate(
    model: TrainedModel,
    train: sp.spmatrix,
    target: sp.spmatrix,
    extra_exclude: sp.spmatrix | None = None,
    ks=DEFAULT_KS,
    ndcg_depth=DEFAULT_NDCG_DEPTH,
    batch: int = 2048,
) -> MetricsReport:
    """Warm-start evaluation of ``model`` on ``target``.

    Training items (plus ``extra_exclude``) are never recommended. Users with
    an empty training row or an empty target row are skipped.
    """
    train = sp.csr_matrix(train)
    exclude = train if extra_exclude is None else (train + sp.csr_matrix(extra_exclude))
    has_train = np.diff(train.indptr) > 0
    target = sp.csr_matrix(target).multiply(has_train[:, None]).tocsr()
    target.eliminate_zeros()
    reports = []
    for lo in range(0, train.shape[0], batch):
        rows = np.arange(lo, min(lo + batch, train.shape[0]))
        if np.diff(target[rows].indptr).sum() == 0:
            continue
        reports.append(
            evaluate_scores(
                score_users(model, rows), target[rows], exclude[rows], model.pop_counts,
                ks, ndcg_depth, users=rows,
            )
        )
    return merge_reports(reports)


def merge_reports(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ValueError("no evaluable users")
    names = list(reports[0].per_user)
    per_user = {n: np.concatenate([r.per_user[n] for r in reports]) for n in names}
    return MetricsReport(
        metrics={n: aggregate(v) for n, v in per_user.items()},
        users=np.concatenate([r.users for r in reports]),
        per_user=per_user,
    )


@dataclass
class Bucket:
    index: int
    upper_edge: float
    users: np.ndarray
    mean: dict[str, float]
    std: dict[str, float]


def user_buckets(train_counts, per_user: dict[str, np.ndarray], quantiles=(0.25, 0.5, 0.75, 1.0)) -> list[Bucket]:
    """Group users by quantile of their training-interaction count.

    A user falls in the first bucket whose upper quantile edge is at least
    its count, so the buckets partition the users.
    """
    counts = np.asarray(train_counts, dtype=np.float64)
    edges = np.quantile(counts, quantiles)
    which = np.searchsorted(edges, counts, side="left")
    buckets = []
    for b, edge in enumerate(edges):
        members = np.flatnonzero(which == b)
        mean, std = {}, {}
        for name, values in per_user.items():
            v = np.asarray(values)[members]
            mean[name] = float(v.mean()) if v.size else math.nan
            std[name] = float(v.std(ddof=0)) if v.size else math.nan
        buckets.append(Bucket(b, float(edge), members, mean, std))
    return buckets


@dataclass
class PopularityDistribution:
    values: np.ndarray
    median: float
    quantiles: dict[str, float]


def top1_popularity_distribution(top1: dict[str, np.ndarray], pop_counts) -> dict[str, PopularityDistribution]:
    """Training popularity of each user's first recommended item, per model."""
    pop_counts = np.asarray(pop_counts)
    out = {}
    for name, items in top1.items():
        values = pop_counts[np.asarray(items, dtype=np.int64)]
        qs = np.quantile(values, [0.1, 0.25, 0.5, 0.75, 0.9])
        out[name] = PopularityDistribution(
            values=values,
            median=float(np.median(values)),
            quantiles={f"q{int(round(p * 100)):02d}": float(x) for p, x in zip([0.1, 0.25, 0.5, 0.75, 0.9], qs)},
        )
    return out


def top1_items(model: TrainedModel, train: sp.spmatrix, users=None) -> np.ndarray:
    train = sp.csr_matrix(train)
    users = np.flatnonzero(np.diff(train.indptr) > 0) if users is None else np.asarray(users)
    lists = topk_matrix(score_users(model, users), 1, train[users], model.pop_counts)
    return np.array([lst[0] for lst in lists], dtype=np.int64)


@dataclass
class GridPoint:
    hyper: Hyperparameters
    value: float | None
    error: str | None = None


@dataclass
class GridResult:
    best: Hyperparameters
    best_value: float
    points: list[GridPoint]

    def beta_curve(self) -> list[tuple[float, float]]:
        """Best validation value per distinct beta, in first-seen order."""
        curve: dict[float, float] = {}
        for p in self.points:
            if p.value is None:
                continue
            b = p.hyper.beta
            curve[b] = max(curve.get(b, -math.inf), p.value)
        return list(curve.items())


def expand_grid(base: Hyperparameters, grid: dict[str, Sequence]) -> list[Hyperparameters]:
    names = list(grid)
    points = []
    for combo in product(*(grid[n] for n in names)):
        points.append(replace(base, **dict(zip(names, combo))))
    return points


def grid_search(
    train_fn: Callable[[Hyperparameters], TrainedModel],
    grid: Sequence[Hyperparameters],
    valid_metric: Callable[[TrainedModel], float],
) -> GridResult:
    """Pick the point with the highest validation value.

    Ties go to smaller k, then smaller lambda, then earlier position. Points
    that fail to train are recorded with their error and skipped.
    """
    if not grid:
        raise ValueError("empty grid")
    points = []
    best_key, best = None, None
    for pos, hyper in enumerate(grid):
        try:
            value = float(valid_metric(train_fn(hyper)))
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
            log.warning("grid point %s failed: %s", hyper, exc)
            points.append(GridPoint(hyper, None, f"{type(exc).__name__}: {exc}"))
            continue
        points.append(GridPoint(hyper, value))
        key = (-value, hyper.k, hyper.lam, pos)
        if best_key is None or key < best_key:
            best_key, best = key, points[-1]
    if best is None:
        raise RuntimeError("every grid point failed")
    return GridResult(best.hyper, best.value, points)
