"""End-to-end protocol: tune on valid, report on test, popularity and cold-start studies."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, replace

import numpy as np
import scipy.sparse as sp

from .dataio import RatingsFormat, build_matrix, load_ratings
from .eval import (
    DEFAULT_KS,
    DEFAULT_NDCG_DEPTH,
    DEFAULT_GRID,
    EvalSplit,
    GridResult,
    chronological_split,
    evaluate,
    evaluate_scores,
    expand_grid,
    grid_search,
    random_split,
    top1_items,
    top1_popularity_distribution,
)
from .models import Hyperparameters, Kind, coldstart_scores, train
from .numkit import col_nnz

log = logging.getLogger(__name__)

TUNED = {
    Kind.NCE_PLREC: ("k", "beta", "lam"),
    Kind.NCE_PLREC_W: ("k", "alpha", "beta", "lam"),
    Kind.PLREC: ("k", "lam"),
    Kind.PURESVD: ("k",),
    Kind.NCE_SVD: ("k", "beta"),
    Kind.POP: (),
}


def prepare_split(path, fmt: RatingsFormat, threshold: float, mode: str = "chronological", seed: int = 0):
    table = load_ratings(path, fmt, require_timestamps=mode == "chronological")
    inter, maps = build_matrix(table, threshold)
    if mode == "chronological":
        return chronological_split(inter), maps
    if mode == "random":
        return random_split(inter, seed), maps
    raise ValueError(f"unknown split mode {mode!r}")


def kind_grid(kind: Kind | str, grid: dict | None = None, base: Hyperparameters | None = None) -> list[Hyperparameters]:
    """Grid points for ``kind``, varying only the hyperparameters it uses."""
    kind = Kind(kind)
    grid = DEFAULT_GRID if grid is None else grid
    base = base or Hyperparameters()
    sub = {name: grid[name] for name in TUNED[kind] if name in grid}
    return expand_grid(base, sub)


def tune(kind, split: EvalSplit, grid=None, seed: int = 0, metric: str = "NDCG",
         ks=DEFAULT_KS, ndcg_depth=DEFAULT_NDCG_DEPTH) -> GridResult:
    kind = Kind(kind)
    points = kind_grid(kind, grid, Hyperparameters(seed=seed))
    max_k = min(split.train.shape)
    points = [p for p in points if p.k <= max_k] or points

    def valid_metric(model):
        return evaluate(model, split.train, split.valid, ks=ks, ndcg_depth=ndcg_depth).metrics[metric].mean

    return grid_search(lambda h: train(kind, split.train, h), points, valid_metric)


def test_report(model, split: EvalSplit, ks=DEFAULT_KS, ndcg_depth=DEFAULT_NDCG_DEPTH):
    """Metrics on the test split; train and validation items are excluded."""
    return evaluate(model, split.train, split.test, split.valid, ks=ks, ndcg_depth=ndcg_depth)


def grid_document(kind: Kind, result: GridResult) -> dict:
    return {
        "kind": kind.value,
        "best": asdict(result.best),
        "best_value": result.best_value,
        "points": [
            {"hyper": asdict(p.hyper), "value": p.value, "error": p.error} for p in result.points
        ],
        "beta_curve": [{"beta": b, "value": v} for b, v in result.beta_curve()],
    }


def metrics_document(report) -> dict:
    return {name: asdict(s) for name, s in report.metrics.items()}


def time_training(kind, r, hyper: Hyperparameters, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall-clock training seconds."""
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        train(kind, r, hyper)
        best = min(best, time.perf_counter() - start)
    return best


def holdout_users(train_matrix: sp.spmatrix, target: sp.spmatrix, fraction: float, seed: int) -> np.ndarray:
    """Random ``fraction`` of the users that have both training and target items."""
    eligible = np.flatnonzero(
        (np.diff(sp.csr_matrix(train_matrix).indptr) > 0) & (np.diff(sp.csr_matrix(target).indptr) > 0)
    )
    count = max(1, int(round(fraction * eligible.size)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(eligible, size=count, replace=False))


def drop_rows(matrix: sp.spmatrix, rows) -> sp.csr_matrix:
    keep = np.ones(matrix.shape[0])
    keep[np.asarray(rows, dtype=np.int64)] = 0.0
    out = sp.diags(keep) @ sp.csr_matrix(matrix)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    return out


def coldstart_study(split: EvalSplit, hypers: dict, heldout=None, fraction: float = 0.05,
                    seed: int = 0, k: int = 50, bins: int = 21) -> dict:
    """Train each model without the held-out users, then score those users cold.

    Held-out users' training rows are the inputs and their test items the
    targets. Returns per-user Recall@``k`` for every model and, for exactly
    two models, the per-user difference (first minus second) with histogram.
    """
    if heldout is None:
        heldout = holdout_users(split.train, split.test, fraction, seed)
    heldout = np.asarray(heldout, dtype=np.int64)
    retained = drop_rows(split.train, heldout)
    inputs = split.train[heldout]
    target = split.test[heldout]
    metric = f"Recall@{k}"
    per_user, summary = {}, {}
    users = None
    for kind, hyper in hypers.items():
        kind = Kind(kind)
        model = train(kind, retained, hyper)
        scores = coldstart_scores(model, inputs)
        report = evaluate_scores(scores, target, inputs, model.pop_counts, ks=[k], users=heldout)
        per_user[kind.value] = report.per_user[metric]
        summary[kind.value] = asdict(report.metrics[metric])
        users = report.users
    doc = {
        "metric": metric,
        "heldout_users": heldout,
        "evaluated_users": users,
        "per_user": per_user,
        "summary": summary,
    }
    names = list(per_user)
    if len(names) == 2:
        diff = per_user[names[0]] - per_user[names[1]]
        counts, edges = np.histogram(diff, bins=bins, range=(-1.0, 1.0))
        doc["difference"] = {
            "minuend": names[0],
            "subtrahend": names[1],
            "values": diff,
            "mean": float(diff.mean()),
            "positive": int((diff > 0).sum()),
            "negative": int((diff < 0).sum()),
            "histogram": {"counts": counts, "edges": edges},
        }
    return doc


MODELS = (Kind.POP, Kind.PLREC, Kind.PURESVD, Kind.NCE_SVD, Kind.NCE_PLREC)


def reproduce(split: EvalSplit, seed: int = 0, grid=None, models=MODELS,
              coldstart_fraction: float = 0.05, ks=DEFAULT_KS, ndcg_depth=DEFAULT_NDCG_DEPTH) -> dict:
    """Tune every model on valid, then gather test metrics, top-1 popularity and cold-start reports."""
    grids, test, best, trained = {}, {}, {}, {}
    for kind in models:
        result = tune(kind, split, grid, seed, ks=ks, ndcg_depth=ndcg_depth)
        log.info("%s best %s (valid NDCG %.4f)", kind.value, result.best, result.best_value)
        grids[kind.value] = grid_document(kind, result)
        best[kind] = result.best
        trained[kind] = train(kind, split.train, result.best)
        test[kind.value] = metrics_document(test_report(trained[kind], split, ks, ndcg_depth))

    pop = col_nnz(split.train)
    top1 = {kind.value: top1_items(model, split.train) for kind, model in trained.items()}
    popularity = {
        "max_item_count": int(pop.max()),
        "models": top1_popularity_distribution(top1, pop),
    }
    coldstart = None
    if Kind.NCE_PLREC in best and Kind.PLREC in best:
        coldstart = coldstart_study(
            split, {Kind.NCE_PLREC: best[Kind.NCE_PLREC], Kind.PLREC: best[Kind.PLREC]},
            fraction=coldstart_fraction, seed=seed,
        )
    return {
        "seed": seed,
        "best": {kind.value: asdict(h) for kind, h in best.items()},
        "grid": grids,
        "test": test,
        "popularity": popularity,
        "coldstart": coldstart,
    }


def timing_comparison(r, hyper: Hyperparameters, alpha: float = 10.0, repeats: int = 3) -> dict:
    """Training seconds of the global form against the weighted form with ``alpha``."""
    return {
        Kind.NCE_PLREC.value: time_training(Kind.NCE_PLREC, r, replace(hyper, alpha=0.0), repeats),
        Kind.NCE_PLREC_W.value: time_training(Kind.NCE_PLREC_W, r, replace(hyper, alpha=alpha), repeats),
    }
