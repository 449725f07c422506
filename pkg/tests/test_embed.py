import numpy as np
import pytest

from services import embed_service as es
from services.errors import ConfigurationError, InsufficientDataError


@pytest.fixture
def clusters(rng):
    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
    return np.vstack([c + rng.normal(0.0, 0.3, size=(8, 3)) for c in centers])


class TestAffinities:
    def test_equilateral_points(self):
        # every pair equidistant: p_{j|i} = 1/2, so P_ij = 1/6 off the diagonal
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        aff = es.pairwise_affinities(X, perplexity=2.0)
        expected = np.full((3, 3), 1.0 / 6.0)
        np.fill_diagonal(expected, 0.0)
        np.testing.assert_allclose(aff.P, expected, atol=1e-12)

    def test_symmetric_and_normalized(self, clusters):
        aff = es.pairwise_affinities(clusters, perplexity=5.0)
        np.testing.assert_allclose(aff.P, aff.P.T)
        assert aff.P.sum() == pytest.approx(1.0)
        assert np.all(np.diag(aff.P) == 0.0)

    def test_bandwidth_search_hits_target(self, clusters):
        aff = es.pairwise_affinities(clusters, perplexity=5.0)
        np.testing.assert_allclose(aff.achieved, 5.0, atol=1e-3)
        assert aff.converged.all()
        assert (aff.sigmas > 0).all()

    def test_perplexity_out_of_range(self, clusters):
        with pytest.raises(ConfigurationError):
            es.pairwise_affinities(clusters, perplexity=len(clusters))
        with pytest.raises(ConfigurationError):
            es.pairwise_affinities(clusters, perplexity=1.0)

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            es.pairwise_affinities(np.zeros((2, 2)), perplexity=1.5)

    @pytest.mark.parametrize('n, requested, expected', [
        (100, 30.0, 30.0),
        (31, 30.0, 10.0),
        (3, 30.0, 1.5),
    ])
    def test_effective_perplexity(self, n, requested, expected):
        assert es.effective_perplexity(n, requested) == expected


class TestGradient:
    def test_matches_finite_differences(self, clusters, rng):
        P = es.pairwise_affinities(clusters, perplexity=5.0).P
        Y = rng.normal(0.0, 1.0, size=(clusters.shape[0], 2))
        grad = es.kl_gradient(P, Y)
        h = 1e-6
        numeric = np.zeros_like(Y)
        for i in range(Y.shape[0]):
            for k in range(2):
                up, down = Y.copy(), Y.copy()
                up[i, k] += h
                down[i, k] -= h
                numeric[i, k] = (es.kl_divergence(P, up) - es.kl_divergence(P, down)) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_kl_is_nonnegative(self, clusters, rng):
        P = es.pairwise_affinities(clusters, perplexity=5.0)
        assert es.kl_divergence(P, rng.normal(size=(clusters.shape[0], 2))) >= 0.0


class TestTsne:
    def test_separates_clusters(self, clusters):
        emb = es.tsne(clusters, perplexity=5.0, iterations=500, seed=20)
        labels = np.repeat([0, 1, 2], 8)
        Y = emb.Y
        centers = np.array([Y[labels == k].mean(axis=0) for k in range(3)])
        within = np.mean([np.linalg.norm(Y[labels == k] - centers[k], axis=1).mean()
                          for k in range(3)])
        between = min(np.linalg.norm(centers[a] - centers[b])
                      for a in range(3) for b in range(a + 1, 3))
        assert between > 2.0 * within

    def test_deterministic_and_centered(self, clusters):
        a = es.tsne(clusters, perplexity=5.0, iterations=300, seed=20)
        b = es.tsne(clusters, perplexity=5.0, iterations=300, seed=20)
        np.testing.assert_array_equal(a.Y, b.Y)
        np.testing.assert_allclose(a.Y.mean(axis=0), 0.0, atol=1e-9)
        assert a.iterations_run == 300
        assert [it for it, _ in a.kl_trace] == [50, 100, 150, 200, 250, 300]

    def test_kl_decreases_after_exaggeration(self, clusters):
        emb = es.tsne(clusters, perplexity=5.0, iterations=600, seed=20)
        trace = dict(emb.kl_trace)
        assert trace[600] <= trace[300]
        assert emb.kl_final == pytest.approx(trace[600])


class TestHellinger:
    def test_square_root(self):
        np.testing.assert_allclose(es.hellinger([[0.25, 0.75]]), [[0.5, np.sqrt(0.75)]])

    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            es.hellinger([[-0.1, 1.1]])

    def test_embedding_frame(self):
        emb = es.Embedding2D(Y=np.array([[1.0, 2.0], [3.0, 4.0]]), kl_final=0.0,
                             iterations_run=1)
        frame = es.embedding_frame(['a', 'b'], emb, [1, 2])
        assert list(frame.columns) == ['id', 'x', 'y', 'weight']
        assert frame['y'].tolist() == [2.0, 4.0]
