"""Fiber embedding matrices: fusion, PCA reduction, and the .emb file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EmbeddingMatrix:
    """n_fibers x dim matrix with fiber-id alignment and provenance."""

    data: np.ndarray
    fiber_ids: np.ndarray
    provenance: str = "unknown"  # blstm | tae | fused | pca

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.fiber_ids = np.asarray(self.fiber_ids, dtype=int)
        if self.data.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        if len(self.fiber_ids) != len(self.data):
            raise ValueError("fiber_ids length must match row count")
        if not np.isfinite(self.data).all():
            raise ValueError("embedding contains non-finite entries")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


def fuse(a: EmbeddingMatrix, b: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise concatenation of two aligned embedding matrices."""
    if a.n != b.n:
        raise ValueError(f"row counts differ: {a.n} vs {b.n}")
    if not np.array_equal(a.fiber_ids, b.fiber_ids):
        raise ValueError("fiber ids are misaligned")
    return EmbeddingMatrix(
        np.concatenate([a.data, b.data], axis=1), a.fiber_ids, provenance="fused"
    )


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (dim, k), orthonormal columns
    explained_variance_ratio: np.ndarray  # all dims, non-increasing

    @property
    def k(self):
        return self.components.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }


def pca_fit(
    X: np.ndarray, variance_target: float | None = 0.95, fixed_k: int | None = None
) -> PcaModel:
    """PCA via singular value decomposition of the centered data matrix.

    Either keep the smallest k whose cumulative explained-variance ratio
    reaches `variance_target`, or exactly `fixed_k` components.
    """
    X = np.asarray(X, dtype=float)
    n, dim = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2
    total = var.sum()
    if fixed_k is not None:
        k = min(fixed_k, len(s))
    else:
        if total <= 0:
            raise ValueError("zero-variance data: variance target is undefined")
        ratios_all = var / total
        cum = np.cumsum(ratios_all)
        k = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
        k = min(k, len(s))
    ratios = var / total if total > 0 else np.zeros_like(var)
    return PcaModel(mean=mean, components=vt[:k].T, explained_variance_ratio=ratios)


def pca_fit_transform(
    emb: EmbeddingMatrix, variance_target: float | None = 0.95, fixed_k: int | None = None
) -> tuple[PcaModel, EmbeddingMatrix]:
    model = pca_fit(emb.data, variance_target=variance_target, fixed_k=fixed_k)
    reduced = EmbeddingMatrix(model.transform(emb.data), emb.fiber_ids, provenance="pca")
    return model, reduced


# ---------------------------------------------------------------------------
# .emb file: JSON header line (rows, dims, provenance), then little-endian
# float32 rows.
# ---------------------------------------------------------------------------

def write_embedding(path, emb: EmbeddingMatrix):
    header = {
        "rows": emb.n,
        "dims": emb.dim,
        "provenance": emb.provenance,
        "fiber_ids": emb.fiber_ids.tolist(),
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        f.write(np.ascontiguousarray(emb.data, dtype="<f4").tobytes())


def read_embedding(path) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        rows, dims = int(header["rows"]), int(header["dims"])
        buf = f.read(rows * dims * 4)
        if len(buf) != rows * dims * 4:
            raise ValueError(f"{path}: truncated embedding payload")
        data = np.frombuffer(buf, dtype="<f4").reshape(rows, dims).astype(float)
    ids = np.asarray(header.get("fiber_ids", np.arange(rows)))
    return EmbeddingMatrix(data, ids, provenance=header.get("provenance", "unknown"))
