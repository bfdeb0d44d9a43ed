"""Exact t-SNE: perplexity calibration, cluster separation, loss trace."""

import numpy as np
import pytest

from myofiber.tsne import (
    conditional_probabilities,
    read_tsne_csv,
    tsne_2d,
    write_tsne_csv,
)


def _two_clusters(n=50, sep=50.0, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, dim))
    b = rng.normal(size=(n, dim))
    b[:, 0] += sep
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


def test_perplexity_binary_search_hits_target():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    for perp in (5.0, 15.0):
        P, entropies = conditional_probabilities(X, perp, tol=1e-5)
        np.testing.assert_allclose(entropies, np.log2(perp), atol=1e-4)
        # rows are stochastic with zero self-affinity
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(np.diag(P) == 0.0)


def test_tsne_separates_two_clusters():
    X, labels = _two_clusters()
    Y = tsne_2d(X, perplexity=25.0, iterations=800, seed=0)
    a, b = Y[labels == 0], Y[labels == 1]

    def diameter(pts):
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    gap = float(np.sqrt((((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min()))
    assert gap > diameter(a)
    assert gap > diameter(b)


def test_tsne_kl_divergence_settles():
    X, _ = _two_clusters(n=30, sep=20.0)
    _, history = tsne_2d(X, perplexity=15.0, iterations=600, seed=0, return_history=True)
    # after early exaggeration ends, the loss is non-increasing up to jitter
    tail = history[len(history) // 2 :]
    assert np.all(np.diff(tail) <= 1e-6)
    assert tail[-1] <= tail[0]


def test_tsne_deterministic_under_seed():
    X, _ = _two_clusters(n=20, sep=10.0)
    Y1 = tsne_2d(X, perplexity=5.0, iterations=100, seed=3)
    Y2 = tsne_2d(X, perplexity=5.0, iterations=100, seed=3)
    np.testing.assert_array_equal(Y1, Y2)
    Y3 = tsne_2d(X, perplexity=5.0, iterations=100, seed=4)
    assert not np.array_equal(Y1, Y3)


def test_tsne_rejects_tiny_inputs():
    with pytest.raises(ValueError, match="too small"):
        tsne_2d(np.zeros((10, 3)), perplexity=5.0)


def test_tsne_csv_round_trip(tmp_path):
    ids = np.array([3, 1, 4])
    coords = np.array([[0.5, -1.25], [2.0, 3.5], [-0.125, 0.0]])
    path = tmp_path / "t.csv"
    write_tsne_csv(path, ids, coords)
    ids2, coords2 = read_tsne_csv(path)
    np.testing.assert_array_equal(ids, ids2)
    np.testing.assert_allclose(coords, coords2, atol=1e-8)
