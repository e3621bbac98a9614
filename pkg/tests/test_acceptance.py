"""Acceptance criteria. Each test appends one PASS/FAIL line shown in the terminal summary."""

import time

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import ACCEPTANCE_LINES, random_binary
from oracles import brute_force_metrics
from nceplrec.dataio import dumps_report
from nceplrec.datasets import fetch_ml100k, ml100k_format
from nceplrec.embedding import item_popularity, nce_gradient, nce_transform, randomized_truncated_svd
from nceplrec.eval import rank_metrics
from nceplrec.experiment import prepare_split, reproduce, timing_comparison
from nceplrec.models import (
    Hyperparameters,
    Kind,
    topk_matrix,
    score_users,
    train_nce_plrec,
    train_nce_plrec_weighted,
    train_plrec,
    train_puresvd,
)
from nceplrec.numkit import deterministic

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
BUDGET_10_MIN = 600.0


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] #{number:<2} {title}: {detail}")
    assert ok, detail


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_01_closed_form_optimality():
    rng = np.random.default_rng(1)
    worst = 0.0
    with Clock() as clock:
        for _ in range(100):
            m, n = int(rng.integers(2, 201)), int(rng.integers(2, 101))
            r = random_binary(rng, m, n, density=float(rng.uniform(0.01, 0.5)))
            d = nce_transform(r, 1.0).tocoo()
            p = item_popularity(r).probabilities[d.col]
            positive = d.data > 0
            if positive.any():
                worst = max(worst, float(np.abs(nce_gradient(d.data[positive], p[positive])).max()))
    ok = worst <= 1e-10 and clock.seconds < 10
    record(1, "closed-form optimality", ok, f"max |grad|={worst:.2e} (<=1e-10), {clock.seconds:.2f}s (<10s)")


def test_02_alpha_zero_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    with Clock() as clock:
        for k in (2, 5, 10):
            for i in range(20):
                r = random_binary(rng, 50, 30)
                hyper = Hyperparameters(k=k, lam=float(rng.uniform(0.01, 10)), seed=i)
                a = train_nce_plrec(r, hyper).weights
                b = train_nce_plrec_weighted(r, hyper).weights
                worst = max(worst, float(np.abs(a - b).max()))
    ok = worst <= 1e-8 and clock.seconds < 30
    record(2, "alpha=0 equivalence", ok, f"max |dW|={worst:.2e} (<=1e-8), {clock.seconds:.2f}s (<30s)")


def test_03_plrec_degeneracy():
    rng = np.random.default_rng(3)
    worst, mismatched = 0.0, 0
    with Clock() as clock:
        for k in (1, 2, 3, 5, 8):
            for _ in range(4):
                r = sp.csr_matrix(rng.random((40, k)) @ rng.random((k, 30)))
                hyper = Hyperparameters(k=k, lam=1e-12)
                plrec, puresvd = train_plrec(r, hyper), train_puresvd(r, hyper)
                w, v = plrec.weights, plrec.item_embedding
                signs = np.sign(np.sum(w * v, axis=0))
                worst = max(worst, float(np.abs(w * signs - v).max()))
                a = topk_matrix(score_users(plrec), 10, None, plrec.pop_counts)
                b = topk_matrix(score_users(puresvd), 10, None, puresvd.pop_counts)
                mismatched += sum(not np.array_equal(x, y) for x, y in zip(a, b))
    ok = worst <= 1e-6 and mismatched == 0 and clock.seconds < 10
    record(3, "PLRec degeneracy", ok,
           f"max |W-V|={worst:.2e} (<=1e-6), differing top-10 lists={mismatched}, {clock.seconds:.2f}s (<10s)")


def test_04_randomized_svd_vs_dense():
    rng = np.random.default_rng(4)
    worst_rel, worst_tail, worst_orth = 0.0, 0.0, 0.0
    with Clock() as clock:
        for _ in range(50):
            m, n = int(rng.integers(2, 61)), int(rng.integers(2, 41))
            rank = int(rng.integers(1, min(m, n) + 1))
            a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
            k = int(rng.integers(rank, min(m, n) + 1))
            f = randomized_truncated_svd(sp.csr_matrix(a), k, power_iterations=7, seed=int(rng.integers(2**31)))
            oracle = np.linalg.svd(a, compute_uv=False)[:k]
            worst_rel = max(worst_rel, float(np.max(np.abs(f.s[:rank] - oracle[:rank]) / oracle[:rank])))
            if k > rank:
                worst_tail = max(worst_tail, float(np.abs(f.s[rank:] - oracle[rank:]).max() / oracle[0]))
            for basis in (f.u[:, :rank], f.v[:, :rank], f.v):
                worst_orth = max(worst_orth, float(np.abs(basis.T @ basis - np.eye(basis.shape[1])).max()))
    ok = worst_rel <= 1e-6 and worst_tail <= 1e-6 and worst_orth <= 1e-6 and clock.seconds < 30
    record(4, "randomized SVD vs dense oracle", ok,
           f"rel sigma err={worst_rel:.2e}, tail={worst_tail:.2e}, orth={worst_orth:.2e} (all <=1e-6), "
           f"{clock.seconds:.2f}s (<30s)")


def test_05_metric_oracle():
    rng = np.random.default_rng(5)
    mismatches = 0
    with Clock() as clock:
        hand = rank_metrics(["a", "x", "b", "y", "z"], {"a", "b"}, ks=[5], ndcg_depth=50)
        hand_ok = (hand["Precision@5"], hand["Recall@5"], hand["R-Precision"]) == (0.4, 1.0, 0.5)
        hand_ok = hand_ok and abs(hand["NDCG"] - 0.9197) < 5e-5
        hand_ok = hand_ok and hand == brute_force_metrics(["a", "x", "b", "y", "z"], {"a", "b"}, [5], 50)
        for _ in range(1000):
            n = int(rng.integers(1, 80))
            ranked = rng.permutation(n)[: int(rng.integers(1, n + 1))].tolist()
            relevant = set(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
            ks = sorted(set(rng.integers(1, 60, size=3).tolist()))
            depth = int(rng.integers(1, 60))
            if rank_metrics(ranked, relevant, ks, depth) != brute_force_metrics(ranked, relevant, ks, depth):
                mismatches += 1
    ok = hand_ok and mismatches == 0 and clock.seconds < 10
    record(5, "metric oracle equivalence", ok,
           f"hand example {'ok' if hand_ok else 'WRONG'} (NDCG={hand['NDCG']:.4f}), "
           f"{mismatches}/1000 mismatches, {clock.seconds:.2f}s (<10s)")


def test_06_weighted_regression_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    with Clock() as clock:
        for alpha in (-0.5, 1.0, 10.0):
            for i in range(10):
                r = random_binary(rng, 30, 20)
                hyper = Hyperparameters(k=5, alpha=alpha, lam=float(rng.uniform(0.1, 5)), seed=i)
                model = train_nce_plrec_weighted(r, hyper)
                q, dense = model.user_factor, r.toarray()
                for j in range(dense.shape[1]):
                    c = np.diag(1.0 + alpha * dense[:, j])
                    w = np.linalg.solve(q.T @ c @ q + hyper.lam * np.eye(q.shape[1]), q.T @ c @ dense[:, j])
                    worst = max(worst, float(np.abs(model.weights[j] - w).max()))
    ok = worst <= 1e-8 and clock.seconds < 30
    record(6, "weighted-regression oracle", ok, f"max |dw_j|={worst:.2e} (<=1e-8), {clock.seconds:.2f}s (<30s)")


# -- MovieLens-100K -------------------------------------------------------------

@pytest.fixture(scope="session")
def movielens():
    path = fetch_ml100k()
    split, _ = prepare_split(path, ml100k_format(path), threshold=3.0, mode="chronological")
    return split


@pytest.fixture(scope="session")
def runs(movielens):
    out = {}
    for seed in SEEDS:
        with deterministic(True), Clock() as clock:
            report = reproduce(movielens, seed=seed)
        out[seed] = (report, clock.seconds)
    return out


def ndcg(report, kind):
    return report["test"][kind.value]["NDCG"]["mean"]


def test_07_movielens_direction(runs):
    details, ok = [], True
    for seed, (report, seconds) in runs.items():
        nce, plrec, pop = (ndcg(report, k) for k in (Kind.NCE_PLREC, Kind.PLREC, Kind.POP))
        seed_ok = nce > plrec > pop and nce >= 1.05 * plrec and seconds < BUDGET_10_MIN
        ok = ok and seed_ok
        details.append(f"seed {seed}: NCE-PLRec {nce:.4f} PLRec {plrec:.4f} POP {pop:.4f} "
                       f"ratio {nce / plrec:.3f} (>=1.05) {seconds:.0f}s")
    record(7, "MovieLens directional reproduction", ok, "; ".join(details))


def test_08_popularity_spread(runs, movielens):
    details, ok = [], True
    train = movielens.train
    pop = np.asarray(train.sum(axis=0)).ravel()
    users = np.flatnonzero(np.diff(train.indptr) > 0)
    # largest count among items each user has not already interacted with
    unseen_max = np.array([np.delete(pop, train[u].indices).max() for u in users])
    for seed, (report, _) in runs.items():
        dist = report["popularity"]["models"]
        medians = {k: dist[k.value].median for k in (Kind.NCE_SVD, Kind.NCE_PLREC, Kind.POP)}
        pop_top = np.array_equal(dist[Kind.POP.value].values, unseen_max)
        seed_ok = medians[Kind.NCE_SVD] < medians[Kind.NCE_PLREC] < medians[Kind.POP] and pop_top
        ok = ok and seed_ok
        details.append(f"seed {seed}: medians NCE-SVD {medians[Kind.NCE_SVD]:.0f} < NCE-PLRec "
                       f"{medians[Kind.NCE_PLREC]:.0f} < POP {medians[Kind.POP]:.0f}, POP top-1 max "
                       f"{'yes' if pop_top else 'NO'}")
    record(8, "popularity spread", ok, "; ".join(details))


def test_09_coldstart_benefit(runs):
    details, ok = [], True
    for seed, (report, seconds) in runs.items():
        diff = report["coldstart"]["difference"]
        seed_ok = diff["mean"] > 0 and seconds < BUDGET_10_MIN
        ok = ok and seed_ok
        details.append(f"seed {seed}: mean dRecall@50 {diff['mean']:+.4f} "
                       f"(+{diff['positive']}/-{diff['negative']} of {len(diff['values'])})")
    record(9, "cold-start benefit", ok, "; ".join(details))


def test_10_timing_ordering(runs, movielens):
    hyper = Hyperparameters(**runs[0][0]["best"][Kind.NCE_PLREC.value])
    times = timing_comparison(movielens.train, hyper, alpha=10.0)
    fast, slow = times[Kind.NCE_PLREC.value], times[Kind.NCE_PLREC_W.value]
    record(10, "timing ordering", fast < slow,
           f"k={hyper.k}: NCE-PLRec {fast:.4f}s < NCE-PLRec-W(alpha=10) {slow:.4f}s")


def test_11_determinism(runs, movielens, tmp_path):
    first = dumps_report(runs[0][0])
    with deterministic(True):
        second = dumps_report(reproduce(movielens, seed=0))
    (tmp_path / "a.json").write_text(first)
    (tmp_path / "b.json").write_text(second)
    same = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    record(11, "determinism", same, f"seed 0 report files byte-identical: {'yes' if same else 'NO'} "
           f"({len(first)} bytes)")
