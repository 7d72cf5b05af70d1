import numpy as np
import pytest

from staog import ArgumentError, kmeans, qp_solve, spectral_cluster


class TestKmeans:
    def test_each_vector_its_own_centroid(self, rng):
        vectors = rng.normal(size=(6, 3))
        result = kmeans(vectors, 6, seed=0)
        assert result.inertia == pytest.approx(0.0, abs=1e-12)
        assert sorted(map(tuple, result.centroids)) == sorted(map(tuple, vectors))

    def test_two_separated_clusters_exact_means(self):
        vectors = [[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]
        result = kmeans(vectors, 2, seed=0)
        assert sorted(map(tuple, result.centroids)) == [(0.0, 0.5), (10.0, 10.5)]
        assert result.assignment[0] == result.assignment[1]
        assert result.assignment[2] == result.assignment[3]

    def test_planted_gaussians_recovered(self, rng):
        a = rng.normal(0, 0.1, size=(20, 4))
        b = rng.normal(0, 0.1, size=(20, 4)) + 8.0
        result = kmeans(np.vstack([a, b]), 2, seed=1)
        first, second = set(result.assignment[:20]), set(result.assignment[20:])
        assert len(first) == 1 and len(second) == 1 and first != second

    def test_inertia_history_non_increasing(self, rng):
        vectors = rng.normal(size=(60, 5))
        result = kmeans(vectors, 4, seed=2)
        hist = result.history
        assert len(hist) >= 1
        assert all(hist[i + 1] <= hist[i] + 1e-9 for i in range(len(hist) - 1))

    def test_deterministic_given_seed(self, rng):
        vectors = rng.normal(size=(30, 3))
        r1 = kmeans(vectors, 3, seed=7)
        r2 = kmeans(vectors, 3, seed=7)
        assert np.array_equal(r1.centroids, r2.centroids)
        assert np.array_equal(r1.assignment, r2.assignment)

    def test_k_out_of_range(self, rng):
        vectors = rng.normal(size=(5, 2))
        with pytest.raises(ArgumentError):
            kmeans(vectors, 0, seed=0)
        with pytest.raises(ArgumentError):
            kmeans(vectors, 6, seed=0)

    def test_ragged_input_rejected(self):
        with pytest.raises(ArgumentError):
            kmeans([[1.0, 2.0], [1.0]], 1, seed=0)


class TestSpectral:
    def test_identical_vectors_single_cluster(self):
        vectors = np.tile([1.0, 2.0, 3.0], (6, 1))
        result = spectral_cluster(vectors, 4, seed=0)
        assert result.n_clusters == 1
        assert set(result.assignment) == {0}

    def test_single_vector_single_cluster(self):
        result = spectral_cluster(np.ones((1, 3)), 4, seed=0)
        assert result.n_clusters == 1

    @pytest.mark.parametrize("sizes", [(10, 10), (13, 7), (6, 6)])
    def test_planted_two_clusters(self, rng, sizes):
        a = rng.normal(0, 0.05, size=(sizes[0], 6)) + np.eye(6)[0] * 4
        b = rng.normal(0, 0.05, size=(sizes[1], 6)) + np.eye(6)[3] * 4
        result = spectral_cluster(np.vstack([a, b]), 4, seed=1)
        assert result.n_clusters == 2
        first, second = set(result.assignment[: sizes[0]]), set(result.assignment[sizes[0]:])
        assert len(first) == 1 and len(second) == 1 and first != second

    def test_cluster_count_capped(self, rng):
        vectors = rng.normal(size=(15, 4))
        for cap in (1, 2, 3):
            result = spectral_cluster(vectors, cap, seed=3)
            assert result.n_clusters <= cap

    def test_deterministic_given_seed(self, rng):
        vectors = rng.normal(size=(12, 4))
        r1 = spectral_cluster(vectors, 4, seed=9)
        r2 = spectral_cluster(vectors, 4, seed=9)
        assert np.array_equal(r1.assignment, r2.assignment)


class TestQpSolve:
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])

    def test_no_constraints_zero_weights(self):
        w, alpha = qp_solve([], 1.0, dim=4)
        assert np.array_equal(w, np.zeros(4))
        assert alpha.size == 0

    def test_single_constraint_analytic(self):
        # alpha* = min(C, loss / ||coef||^2)
        w, alpha = qp_solve([(self.e1, 1.0)], 10.0)
        assert np.allclose(w, self.e1, atol=1e-6)
        assert alpha[0] == pytest.approx(1.0, abs=1e-6)
        w, alpha = qp_solve([(self.e1, 1.0)], 0.5)
        assert np.allclose(w, 0.5 * self.e1, atol=1e-6)

    def test_two_constraints_distinct_groups(self):
        w, _ = qp_solve([(self.e1, 1.0), (self.e2, 1.0)], 10.0, [0, 1])
        assert np.allclose(w, self.e1 + self.e2, atol=1e-6)

    def test_two_constraints_shared_group_cap(self):
        # symmetric rows share the group budget equally: alpha = (C/2, C/2)
        w, alpha = qp_solve([(self.e1, 1.0), (self.e2, 1.0)], 1.0, [0, 0])
        assert np.allclose(w, [0.5, 0.5, 0.0], atol=1e-6)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-9)

    def test_dominated_row_gets_no_mass(self):
        w, alpha = qp_solve([(self.e1, 1.0), (self.e1, 0.5)], 10.0, [0, 0])
        assert np.allclose(w, self.e1, atol=1e-6)
        assert alpha[1] == pytest.approx(0.0, abs=1e-6)

    def test_dual_objective_non_decreasing(self, rng):
        rows = [(rng.normal(size=6), float(rng.uniform(0, 1))) for _ in range(12)]
        groups = [i % 4 for i in range(12)]
        history: list[float] = []
        qp_solve(rows, 0.5, groups, history=history)
        assert all(history[i + 1] >= history[i] - 1e-9 for i in range(len(history) - 1))

    def test_gap_and_kkt_at_termination(self, rng):
        rows = [(rng.normal(size=5), float(rng.uniform(0, 2))) for _ in range(20)]
        groups = [i % 5 for i in range(20)]
        c = 0.3
        w, alpha = qp_solve(rows, c, groups)
        coef = np.asarray([r[0] for r in rows])
        loss = np.asarray([r[1] for r in rows])
        assert (alpha >= -1e-9).all()
        sums = np.zeros(5)
        np.add.at(sums, np.asarray(groups), alpha)
        assert (sums <= c + 1e-9).all()
        viol = loss - coef @ w
        slack = np.zeros(5)
        np.maximum.at(slack, np.asarray(groups), viol)
        np.maximum(slack, 0.0, out=slack)
        primal = 0.5 * w @ w + c * slack.sum()
        dual = loss @ alpha - 0.5 * w @ w
        assert primal - dual <= 1e-6

    def test_warm_start_matches_cold(self, rng):
        rows = [(rng.normal(size=4), float(rng.uniform(0, 1))) for _ in range(8)]
        groups = [i % 2 for i in range(8)]
        w_cold, alpha = qp_solve(rows, 0.7, groups)
        w_warm, _ = qp_solve(rows, 0.7, groups, alpha0=alpha)
        assert np.allclose(w_cold, w_warm, atol=1e-5)
