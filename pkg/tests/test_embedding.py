"""Embedding fusion, PCA against a covariance-eigendecomposition oracle, IO."""

import numpy as np
import pytest

from myofiber.embedding import (
    EmbeddingMatrix,
    fuse,
    pca_fit,
    pca_fit_transform,
    read_embedding,
    write_embedding,
)


def _covariance_ratios(X):
    """Independent oracle: eigenvalues of the sample covariance matrix."""
    X = np.asarray(X, dtype=float)
    c = np.cov(X, rowvar=False, bias=False)
    w = np.sort(np.linalg.eigvalsh(c))[::-1]
    return w / w.sum()


def test_embedding_matrix_validation():
    with pytest.raises(ValueError, match="2-D"):
        EmbeddingMatrix(np.zeros(3), np.arange(3))
    with pytest.raises(ValueError, match="length"):
        EmbeddingMatrix(np.zeros((3, 2)), np.arange(4))
    with pytest.raises(ValueError, match="non-finite"):
        EmbeddingMatrix(np.array([[1.0, np.inf]]), np.arange(1))


def test_fuse_concatenates_aligned_rows():
    ids = np.arange(4)
    a = EmbeddingMatrix(np.ones((4, 512)), ids, provenance="blstm")
    b = EmbeddingMatrix(np.zeros((4, 128)), ids, provenance="tae")
    fused = fuse(a, b)
    assert fused.dim == 640  # 512 + 128
    assert fused.provenance == "fused"
    with pytest.raises(ValueError, match="misaligned"):
        fuse(a, EmbeddingMatrix(np.zeros((4, 128)), ids + 1))
    with pytest.raises(ValueError, match="row counts"):
        fuse(a, EmbeddingMatrix(np.zeros((3, 128)), np.arange(3)))


def test_pca_matches_covariance_oracle():
    rng = np.random.default_rng(0)
    # anisotropic cloud with known structure
    X = rng.normal(size=(200, 12)) @ np.diag(np.linspace(3.0, 0.1, 12))
    model = pca_fit(X, variance_target=None, fixed_k=12)
    oracle = _covariance_ratios(X)
    np.testing.assert_allclose(
        np.cumsum(model.explained_variance_ratio), np.cumsum(oracle), atol=1e-8
    )
    # components are orthonormal
    np.testing.assert_allclose(model.components.T @ model.components, np.eye(12), atol=1e-9)


def test_pca_variance_target_minimal_k():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 8)) @ np.diag([5.0, 3.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01])
    target = 0.95
    model = pca_fit(X, variance_target=target)
    cum = np.cumsum(model.explained_variance_ratio)
    assert cum[model.k - 1] >= target - 1e-12
    if model.k > 1:
        assert cum[model.k - 2] < target  # one fewer component would miss it


def test_pca_isotropic_cloud_flat_spectrum():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20000, 5))
    model = pca_fit(X, variance_target=None, fixed_k=5)
    np.testing.assert_allclose(model.explained_variance_ratio, 0.2, atol=0.01)


def test_pca_reconstruction_residual_matches_ratio():
    # Eckart-Young: residual variance after k components = 1 - cumulative ratio
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 10)) @ np.diag(np.linspace(2.0, 0.1, 10))
    for k in (1, 3, 7):
        model = pca_fit(X, variance_target=None, fixed_k=k)
        Z = model.transform(X)
        recon = Z @ model.components.T + model.mean
        resid = ((X - recon) ** 2).sum()
        total = ((X - X.mean(axis=0)) ** 2).sum()
        expected = 1.0 - np.cumsum(model.explained_variance_ratio)[k - 1]
        assert resid / total == pytest.approx(expected, abs=1e-9)


def test_pca_degenerate_inputs():
    with pytest.raises(ValueError, match="at least 2"):
        pca_fit(np.zeros((1, 4)))
    with pytest.raises(ValueError, match="zero-variance"):
        pca_fit(np.ones((5, 4)), variance_target=0.95)


def test_pca_fit_transform_preserves_ids():
    rng = np.random.default_rng(4)
    emb = EmbeddingMatrix(rng.normal(size=(30, 6)), np.arange(30) * 2)
    model, reduced = pca_fit_transform(emb, variance_target=0.9)
    assert reduced.provenance == "pca"
    np.testing.assert_array_equal(reduced.fiber_ids, emb.fiber_ids)
    assert reduced.dim == model.k


def test_emb_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    emb = EmbeddingMatrix(rng.normal(size=(7, 3)).astype(np.float32), np.arange(7), "tae")
    path = tmp_path / "e.emb"
    write_embedding(path, emb)
    back = read_embedding(path)
    assert back.provenance == "tae"
    np.testing.assert_array_equal(back.data, emb.data)
    np.testing.assert_array_equal(back.fiber_ids, emb.fiber_ids)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError, match="truncated"):
        read_embedding(path)
