import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from jointchar.errors import DegenerateRow, InvalidConfig
from jointchar.tsne import (
    AffinityMatrix,
    TsneConfig,
    _exact_grad_kernel,
    bh_interaction_counts,
    compute_affinities,
    conditional_affinities,
    embedding_metadata,
    kl_divergence,
    kl_gradient_bh,
    kl_gradient_exact,
    neighbor_affinities,
    pairwise_squared_distances,
    read_metadata,
    run_tsne,
    student_t_affinities,
    symmetrize_affinities,
    write_embedding_csv,
    write_metadata,
)


def naive_sqdist(X):
    n = len(X)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = sum((X[i, k] - X[j, k]) ** 2 for k in range(X.shape[1]))
    return D


def entropy_bits(p):
    p = p[p > 0]
    return -np.sum(p * np.log2(p))


def kl_of_layout(P, y):
    q, _ = student_t_affinities(y)
    return kl_divergence(P, q)


def finite_difference_gradient(P, y, h=1e-5):
    g = np.zeros_like(y)
    for i in range(y.shape[0]):
        for d in range(2):
            yp = y.copy()
            ym = y.copy()
            yp[i, d] += h
            ym[i, d] -= h
            g[i, d] = (kl_of_layout(P, yp) - kl_of_layout(P, ym)) / (2 * h)
    return g


def random_problem(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(4, 21))
    X = rng.normal(size=(n, 4))
    P, _ = compute_affinities(X, perplexity=min(3.0, n - 1.5))
    y = rng.normal(size=(n, 2))
    return P, y


class TestDistances:
    def test_distance_three(self):
        D = pairwise_squared_distances(np.array([[0.0, 0.0], [3.0, 0.0]]))
        assert D[0, 1] == D[1, 0] == 9.0

    def test_duplicates_are_zero(self):
        D = pairwise_squared_distances(np.array([[1.5, 2.0], [1.5, 2.0], [0.0, 1.0]]))
        assert D[0, 1] == 0.0

    def test_matches_double_loop(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        D = pairwise_squared_distances(X)
        np.testing.assert_allclose(D, naive_sqdist(X), atol=1e-10)
        assert np.all(np.diag(D) == 0) and np.all(D >= 0) and np.array_equal(D, D.T)


class TestConditionalAffinities:
    def test_two_points(self):
        P, _ = conditional_affinities(np.array([[0.0, 4.0], [4.0, 0.0]]), 1.5)
        np.testing.assert_array_equal(P, [[0.0, 1.0], [1.0, 0.0]])

    def test_equidistant_rows_uniform_and_clamped(self):
        n = 5
        D2 = pairwise_squared_distances(np.eye(n))
        P, sigmas = conditional_affinities(D2, 2.0)
        off = ~np.eye(n, dtype=bool)
        np.testing.assert_allclose(P[off], 1.0 / (n - 1), rtol=1e-12)
        # entropy is log2(4) at every sigma, above the 1-bit target
        assert np.all(sigmas < 1e-15)

    def test_unit_square_matches_sigma_grid(self):
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        D2 = pairwise_squared_distances(square)
        perplexity = 2.5
        _, sigmas = conditional_affinities(D2, perplexity)

        # oracle: entropy of the (1, 1, 2) squared-distance row on a dense grid
        grid = np.linspace(0.2, 3.0, 2_800_001)
        w = np.exp(-np.array([1.0, 1.0, 2.0])[None, :] / (2 * grid[:, None] ** 2))
        p = w / w.sum(axis=1, keepdims=True)
        h = -np.sum(p * np.log2(p), axis=1)
        best = grid[np.argmin(np.abs(h - math.log2(perplexity)))]
        np.testing.assert_allclose(sigmas, best, atol=1e-4)

    def test_unit_square_perplexity_two_reaches_entropy(self):
        # log2(2) is only reached as sigma -> 0 (two equidistant nearest
        # neighbours); the search stops once within tolerance
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        P, _ = conditional_affinities(pairwise_squared_distances(square), 2.0)
        for row in P:
            assert abs(entropy_bits(row) - 1.0) <= 1e-5

    def test_random_rows_hit_target_entropy(self):
        X = np.random.default_rng(1).normal(size=(60, 5))
        P, _ = conditional_affinities(pairwise_squared_distances(X), 10.0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-7)
        assert np.all(np.diag(P) == 0)
        for row in P:
            assert abs(entropy_bits(row) - math.log2(10.0)) <= 1e-5

    def test_degenerate_row(self):
        with pytest.raises(DegenerateRow):
            conditional_affinities(np.zeros((3, 3)), 1.5)

    def test_perplexity_bounds(self):
        D2 = pairwise_squared_distances(np.eye(3))
        with pytest.raises(InvalidConfig):
            conditional_affinities(D2, 0.0)
        with pytest.raises(InvalidConfig):
            conditional_affinities(D2, 3.0)


class TestSymmetrize:
    def test_two_points(self):
        P = symmetrize_affinities(np.array([[0.0, 1.0], [1.0, 0.0]])).p
        np.testing.assert_allclose(P, [[0.0, 0.5], [0.5, 0.0]])

    def test_symmetric_input(self):
        n = 4
        C = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(C, 0.0)
        np.testing.assert_allclose(symmetrize_affinities(C).p, C / n, atol=1e-12)

    def test_random_conditionals(self):
        rng = np.random.default_rng(2)
        C = rng.random((9, 9))
        np.fill_diagonal(C, 0.0)
        C /= C.sum(axis=1, keepdims=True)
        P = symmetrize_affinities(C).p
        assert abs(sum(P.ravel().tolist()) - 1.0) < 1e-9
        assert np.array_equal(P, P.T) and np.all(np.diag(P) == 0) and np.all(P >= 0)

    def test_sparse_matches_dense_when_complete(self):
        X = np.random.default_rng(3).normal(size=(12, 3))
        Pc_sparse, _ = neighbor_affinities(X, 3.0, n_neighbors=11)
        Pc_dense, _ = conditional_affinities(pairwise_squared_distances(X), 3.0)
        np.testing.assert_allclose(Pc_sparse.toarray(), Pc_dense, atol=1e-12)
        Ps = symmetrize_affinities(Pc_sparse).p.toarray()
        Pd = symmetrize_affinities(Pc_dense).p
        np.testing.assert_allclose(Ps, Pd, atol=1e-12)

    def test_affinity_matrix_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            AffinityMatrix(np.ones((2, 2)))


class TestStudentT:
    def test_coincident_pair(self):
        q, Z = student_t_affinities(np.zeros((2, 2)))
        np.testing.assert_array_equal(q, [[0.0, 0.5], [0.5, 0.0]])
        assert Z == 2.0

    def test_equilateral(self):
        y = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        q, _ = student_t_affinities(y)
        np.testing.assert_allclose(q[~np.eye(3, dtype=bool)], 1 / 6, atol=1e-15)

    def test_matches_naive(self):
        y = np.random.default_rng(4).normal(size=(8, 2))
        q, Z = student_t_affinities(y)
        num = np.zeros((8, 8))
        for i in range(8):
            for j in range(8):
                if i != j:
                    num[i, j] = 1 / (1 + (y[i, 0] - y[j, 0]) ** 2 + (y[i, 1] - y[j, 1]) ** 2)
        np.testing.assert_allclose(Z, num.sum(), rtol=1e-12)
        np.testing.assert_allclose(q, num / num.sum(), atol=1e-10)


class TestKl:
    def test_identical(self):
        q, _ = student_t_affinities(np.random.default_rng(5).normal(size=(6, 2)))
        assert kl_divergence(q, q) == 0.0

    def test_two_cell(self):
        expected = 0.7 * math.log(0.7 / 0.5) + 0.3 * math.log(0.3 / 0.5)
        assert kl_divergence(np.array([0.7, 0.3]), np.array([0.5, 0.5])) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.0823, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gibbs(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.random(10)
        q = rng.random(10)
        assert kl_divergence(p / p.sum(), q / q.sum()) >= 0.0

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(6)
        P, y = random_problem(6, n=15)
        base = kl_of_layout(P, y)
        for _ in range(10):
            a = rng.uniform(0, 2 * np.pi)
            R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
            if rng.random() < 0.5:
                R = R @ np.diag([1.0, -1.0])
            moved = y @ R.T + rng.normal(size=2) * 10
            assert abs(kl_of_layout(P, moved) - base) < 1e-9


class TestExactGradient:
    def test_stationary_when_p_equals_q(self):
        y = np.random.default_rng(7).normal(size=(7, 2))
        q, _ = student_t_affinities(y)
        np.testing.assert_allclose(kl_gradient_exact(q, y), 0.0, atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        P, y = random_problem(seed)
        g = kl_gradient_exact(P, y)
        fd = finite_difference_gradient(P, y)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4

    def test_translation(self):
        P, y = random_problem(30, n=12)
        g = kl_gradient_exact(P, y)
        np.testing.assert_allclose(kl_gradient_exact(P, y + [3.0, -7.0]), g, atol=1e-14)
        assert np.max(np.abs(g.sum(axis=0))) < 1e-8

    def test_kernel_matches_reference(self):
        P, y = random_problem(31, n=40)
        g = np.empty_like(y)
        _exact_grad_kernel(np.ascontiguousarray(P.p), y, 1.0, g)
        np.testing.assert_allclose(g, kl_gradient_exact(P, y), atol=1e-14)


class TestBarnesHut:
    def test_theta_zero_is_exact(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(200, 4))
        P, _ = compute_affinities(X, 10.0)
        y = rng.normal(size=(200, 2)) * 3
        gb = kl_gradient_bh(sparse.csr_matrix(P.p), y, theta=0.0)
        np.testing.assert_allclose(gb, kl_gradient_exact(P, y), atol=1e-10)

    def test_duplicates_theta_zero(self):
        rng = np.random.default_rng(9)
        y = np.repeat(rng.normal(size=(10, 2)), 3, axis=0)
        P, _ = compute_affinities(rng.normal(size=(30, 3)), 5.0)
        np.testing.assert_allclose(kl_gradient_bh(P.p, y, 0.0), kl_gradient_exact(P, y), atol=1e-10)

    def test_theta_half_aggregate_accuracy(self):
        rng = np.random.default_rng(10)
        P, _ = compute_affinities(rng.normal(size=(500, 10)), 30.0, sparse_neighbors=True)
        y = rng.normal(size=(500, 2))
        ge = kl_gradient_exact(P, y)
        gb = kl_gradient_bh(P, y, 0.5)
        assert np.linalg.norm(gb - ge) / np.linalg.norm(ge) < 5e-2

    def test_far_point_sees_cluster_as_one_cell(self):
        rng = np.random.default_rng(11)
        cluster = rng.normal(size=(50, 2)) * 0.5
        y = np.vstack([cluster, [[100.0, 100.0]]])
        counts = bh_interaction_counts(y, 0.5)
        assert counts[-1] == 1
        # with theta = 0 every other point is visited individually
        assert bh_interaction_counts(y, 0.0)[-1] == 50

    def test_bad_theta(self):
        with pytest.raises(InvalidConfig):
            kl_gradient_bh(np.eye(2) / 2, np.zeros((2, 2)), theta=1.5)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(perplexity=0), dict(perplexity=-1), dict(iterations=0), dict(theta=1.2), dict(learning_rate=0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            TsneConfig(**kwargs).validate(100)

    def test_perplexity_below_n(self):
        with pytest.raises(InvalidConfig):
            TsneConfig(perplexity=10).validate(10)

    def test_auto_theta(self):
        assert TsneConfig().resolved_theta(5000) == 0.0
        assert TsneConfig().resolved_theta(5001) == 0.5


def clustered_data(seed=0, n_per=30):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]], dtype=float)
    X = np.vstack([c + rng.normal(size=(n_per, 3)) for c in centers])
    return X, np.repeat(np.arange(4), n_per)


class TestRunTsne:
    def test_deterministic_and_seed_sensitive(self):
        X, _ = clustered_data()
        cfg = TsneConfig(perplexity=10, iterations=300, seed=3)
        a = run_tsne(X, cfg)
        b = run_tsne(X, cfg)
        assert a.y.tobytes() == b.y.tobytes()
        c = run_tsne(X, TsneConfig(perplexity=10, iterations=300, seed=4))
        assert not np.array_equal(a.y, c.y)

    def test_kl_decreases_and_clusters_separate(self):
        X, labels = clustered_data()
        emb = run_tsne(X, TsneConfig(perplexity=10, iterations=500, seed=0))
        assert np.all(np.isfinite(emb.y))
        assert 0 <= emb.final_kl <= emb.initial_kl
        cent = np.array([emb.y[labels == k].mean(axis=0) for k in range(4)])
        within = max(np.linalg.norm(emb.y[labels == k] - cent[k], axis=1).max() for k in range(4))
        between = min(np.linalg.norm(cent[a] - cent[b]) for a in range(4) for b in range(a + 1, 4))
        assert within < between

    def test_duplicates_spread_out(self):
        X = np.repeat(np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 1.0]]), 20, axis=0)
        emb = run_tsne(X, TsneConfig(perplexity=5, iterations=300, seed=1))
        assert len(np.unique(emb.y.round(12), axis=0)) == 60

    def test_barnes_hut_path(self):
        X, labels = clustered_data(n_per=40)
        emb = run_tsne(X, TsneConfig(perplexity=10, iterations=300, seed=0, theta=0.5))
        assert emb.theta == 0.5
        assert np.all(np.isfinite(emb.y))
        assert emb.final_kl <= emb.initial_kl

    def test_warns_when_small(self):
        X, _ = clustered_data(n_per=5)
        with pytest.warns(UserWarning):
            run_tsne(X, TsneConfig(perplexity=15, iterations=20))


def test_embedding_outputs(tmp_path):
    X, _ = clustered_data(n_per=5)
    emb = run_tsne(X, TsneConfig(perplexity=5, iterations=50, seed=9))
    idx = np.column_stack([np.arange(20), np.zeros(20, dtype=int)])
    write_embedding_csv(tmp_path / "e.csv", idx, emb)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "pixel_row,pixel_col,tsne1,tsne2"
    assert len(lines) == 21
    write_metadata(tmp_path / "e.meta.txt", embedding_metadata(emb))
    meta = read_metadata(tmp_path / "e.meta.txt")
    assert meta["seed"] == "9" and float(meta["perplexity"]) == 5.0
    assert float(meta["final_kl"]) == pytest.approx(emb.final_kl, rel=1e-8)
