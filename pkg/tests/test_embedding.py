import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nceplrec.embedding import (
    EmptyMatrixError,
    TruncatedFactorization,
    item_popularity,
    nce_gradient,
    nce_transform,
    randomized_truncated_svd,
    scale_embeddings,
)

from conftest import random_binary

# counts [3, 1]: item 0 seen by users 0-2, item 1 by user 0
COUNTS_31 = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 0.0]]))


def test_popularity_counts():
    pop = item_popularity(COUNTS_31)
    np.testing.assert_array_equal(pop.counts, [3, 1])
    assert pop.total == 4
    np.testing.assert_allclose(pop.probabilities, [0.75, 0.25])


def test_popularity_single_item_and_symmetry():
    assert item_popularity(sp.csr_matrix(np.ones((5, 1)))).probabilities.tolist() == [1.0]
    eq = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert item_popularity(eq).probabilities.tolist() == [0.5, 0.5]


def test_popularity_empty():
    with pytest.raises(EmptyMatrixError, match="no interactions"):
        item_popularity(sp.csr_matrix((3, 2)))


def test_nce_transform_beta_one():
    d = nce_transform(COUNTS_31, 1.0).toarray()
    # ln(4/3) and ln(4), evaluated by hand
    assert d[1, 0] == pytest.approx(0.2876820724517809, abs=1e-12)
    assert d[0, 1] == pytest.approx(1.3862943611198906, abs=1e-12)
    assert d[2, 1] == 0.0


def test_nce_transform_clamp_drops_entries():
    d = nce_transform(COUNTS_31, 2.0)
    # ln 4 - 2 ln 3 < 0: item 0 entries vanish from the pattern
    assert d.nnz == 1
    assert d[0, 1] == pytest.approx(math.log(4.0))


def test_nce_transform_single_item_is_empty():
    assert nce_transform(sp.csr_matrix(np.ones((4, 1))), 1.0).nnz == 0


@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_nce_transform_rejects_nonpositive_beta(beta):
    with pytest.raises(ValueError):
        nce_transform(COUNTS_31, beta)


@pytest.mark.parametrize(
    "d, p, expected",
    [(0.0, 1.0, 0.0), (math.log(4 / 3), 0.75, 0.0), (0.0, 0.25, 0.375)],
)
def test_nce_gradient_examples(d, p, expected):
    assert nce_gradient(d, p) == pytest.approx(expected, abs=1e-12)


def test_nce_gradient_matches_finite_difference():
    # per-entry objective: log sigmoid(d) + p * log sigmoid(-d)
    def objective(d, p):
        return -np.log1p(np.exp(-d)) - p * np.log1p(np.exp(d))

    h = 1e-6
    for d in np.linspace(-4, 4, 17):
        for p in (0.1, 0.5, 0.9):
            fd = (objective(d + h, p) - objective(d - h, p)) / (2 * h)
            assert nce_gradient(d, p) == pytest.approx(fd, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(2, 25), st.floats(0.05, 0.8), st.integers(0, 2**32 - 1))
def test_transform_is_stationary_point(m, n, density, seed):
    r = random_binary(np.random.default_rng(seed), m, n, density)
    pop = item_popularity(r)
    d = nce_transform(r, 1.0).tocoo()
    grads = nce_gradient(d.data, pop.probabilities[d.col])
    assert np.all(np.abs(grads) <= 1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_transform_bounds_and_monotone_in_beta(m, n, seed):
    r = random_binary(np.random.default_rng(seed), m, n, 0.4)
    pop = item_popularity(r)
    mask = r.toarray() > 0
    previous = None
    for beta in (0.5, 0.8, 1.0, 1.3, 2.0):
        d = nce_transform(r, beta).toarray()
        assert d.min() >= 0.0
        assert d.max() <= math.log(pop.total) + 1e-15
        assert np.all(d[~mask] == 0.0)
        if previous is not None:
            popular = mask & (pop.counts[None, :] >= 2)
            assert np.all(d[popular] <= previous[popular])
        previous = d


def test_svd_diagonal_examples():
    f = randomized_truncated_svd(sp.csr_matrix(np.array([[2.0, 0.0], [0.0, 0.0]])), 1, seed=3)
    assert f.s[0] == pytest.approx(2.0)
    np.testing.assert_allclose(np.abs(f.u[:, 0]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(f.v[:, 0], [1.0, 0.0], atol=1e-12)
    f = randomized_truncated_svd(sp.csr_matrix(np.diag([3.0, 1.0])), 1)
    assert f.s[0] == pytest.approx(3.0)


def test_svd_exact_low_rank_against_dense_oracle(rng):
    a = rng.standard_normal((20, 4)) @ rng.standard_normal((4, 15))
    f = randomized_truncated_svd(sp.csr_matrix(a), 4, power_iterations=7, seed=0)
    recon = f.u @ np.diag(f.s) @ f.v.T
    assert np.linalg.norm(a - recon) <= 1e-6 * np.linalg.norm(a)
    np.testing.assert_allclose(f.s, np.linalg.svd(a, compute_uv=False)[:4], rtol=1e-6)


def test_svd_sign_convention(rng):
    f = randomized_truncated_svd(random_binary(rng, 30, 20), 5)
    pivots = np.argmax(np.abs(f.v), axis=0)
    assert np.all(f.v[pivots, np.arange(5)] > 0)


def test_svd_rank_out_of_range():
    with pytest.raises(ValueError):
        randomized_truncated_svd(sp.csr_matrix(np.eye(3)), 4)
    with pytest.raises(ValueError):
        randomized_truncated_svd(sp.csr_matrix(np.eye(3)), 0)


def test_svd_zero_matrix():
    f = randomized_truncated_svd(sp.csr_matrix((6, 4)), 3)
    np.testing.assert_array_equal(f.s, 0.0)
    np.testing.assert_allclose(f.u.T @ f.u, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(f.v.T @ f.v, np.eye(3), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 50), st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_svd_orthonormal_and_sorted(m, n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, min(m, n) + 1))
    f = randomized_truncated_svd(random_binary(rng, m, n, 0.3), k, seed=seed)
    assert np.abs(f.u.T @ f.u - np.eye(k)).max() <= 1e-6
    assert np.abs(f.v.T @ f.v - np.eye(k)).max() <= 1e-6
    assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)


def test_svd_same_seed_bitwise(rng):
    s = random_binary(rng, 40, 30)
    a = randomized_truncated_svd(s, 6, seed=9)
    b = randomized_truncated_svd(s, 6, seed=9)
    assert a.u.tobytes() == b.u.tobytes()
    assert a.s.tobytes() == b.s.tobytes()
    assert a.v.tobytes() == b.v.tobytes()


def test_svd_dense_and_sparse_inputs_agree(rng):
    s = random_binary(rng, 25, 18)
    a = randomized_truncated_svd(s, 5, seed=1)
    b = randomized_truncated_svd(s.toarray(), 5, seed=1)
    np.testing.assert_allclose(a.s, b.s, rtol=1e-12)
    np.testing.assert_allclose(a.v, b.v, atol=1e-10)


def test_svd_general_matrices_loose():
    # flat spectra converge slowly; only a loose bound holds in general
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.standard_normal((60, 40))
        f = randomized_truncated_svd(a, 5, seed=int(rng.integers(1 << 31)))
        exact = np.linalg.svd(a, compute_uv=False)[:5]
        assert np.max(np.abs(f.s - exact)) <= 1e-3 * exact[0]


@pytest.mark.parametrize(
    "s, u, v, u_star, v_star",
    [
        ([4.0], [[1.0], [0.5]], [[1.0]], [[2.0], [1.0]], [[2.0]]),
        ([1.0, 1.0], [[1.0, 2.0]], [[3.0, 4.0]], [[1.0, 2.0]], [[3.0, 4.0]]),
        ([9.0, 4.0], [[1.0, 1.0]], [[1.0, 1.0]], [[3.0, 2.0]], [[3.0, 2.0]]),
    ],
)
def test_scale_embeddings(s, u, v, u_star, v_star):
    f = TruncatedFactorization(np.array(u), np.array(s), np.array(v), 7, 0)
    e = scale_embeddings(f)
    np.testing.assert_allclose(e.users, u_star)
    np.testing.assert_allclose(e.items, v_star)
