"""Cluster quality metrics, ground-truth agreement, and the parameter grid.

Internal indices (silhouette, Davies-Bouldin, Calinski-Harabasz) are computed
on non-noise points only; DBCV counts noise in its total-point normalization
per its own definition; noise fraction covers all points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterParams, ClusterResult, hdbscan


class DegenerateMetric(ValueError):
    """Metric undefined for this labeling (too few clusters, singleton, ...)."""


def _pairwise(X):
    s = (X * X).sum(axis=1)
    d2 = np.maximum(s[:, None] + s[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _split_nonnoise(X, labels):
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    keep = labels >= 0
    return X[keep], labels[keep]


def silhouette(X, labels) -> float:
    """Mean over non-noise points of (b - a) / max(a, b); singletons score 0."""
    Xn, ln = _split_nonnoise(X, labels)
    ids = np.unique(ln)
    if len(ids) < 2:
        raise DegenerateMetric("silhouette needs at least 2 clusters")
    d = _pairwise(Xn)
    scores = np.zeros(len(Xn))
    for i in range(len(Xn)):
        own = ln == ln[i]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, ln == c].mean() for c in ids if c != ln[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def davies_bouldin(X, labels) -> float:
    """(1/K) sum_i max_{j!=i} (S_i + S_j) / M_ij; inf when centroids coincide."""
    Xn, ln = _split_nonnoise(X, labels)
    ids = np.unique(ln)
    if len(ids) < 2:
        raise DegenerateMetric("Davies-Bouldin needs at least 2 clusters")
    cent = np.stack([Xn[ln == c].mean(axis=0) for c in ids])
    scatter = np.array(
        [np.linalg.norm(Xn[ln == c] - cent[k], axis=1).mean() for k, c in enumerate(ids)]
    )
    K = len(ids)
    worst = np.zeros(K)
    for i in range(K):
        ratios = []
        for j in range(K):
            if j == i:
                continue
            m = np.linalg.norm(cent[i] - cent[j])
            ratios.append(np.inf if m == 0 else (scatter[i] + scatter[j]) / m)
        worst[i] = max(ratios)
    return float(worst.mean())


def calinski_harabasz(X, labels) -> float:
    """[tr(B)/(K-1)] / [tr(W)/(n-K)]; inf when within-scatter vanishes."""
    Xn, ln = _split_nonnoise(X, labels)
    ids = np.unique(ln)
    K, n = len(ids), len(Xn)
    if K < 2 or n <= K:
        raise DegenerateMetric("Calinski-Harabasz needs K >= 2 and n > K")
    overall = Xn.mean(axis=0)
    tr_b = tr_w = 0.0
    for c in ids:
        pts = Xn[ln == c]
        cent = pts.mean(axis=0)
        tr_b += len(pts) * float(((cent - overall) ** 2).sum())
        tr_w += float(((pts - cent) ** 2).sum())
    if tr_w == 0.0:
        return math.inf
    return float((tr_b / (K - 1)) / (tr_w / (n - K)))


def dbcv(X, labels) -> float:
    """Density-based cluster validity in [-1, 1].

    All-points core distance apts(p) = ((1/(|C|-1)) sum_{q != p}
    (1/d(p,q))^dim)^(-1/dim); mutual reachability on apts; sparseness DSC =
    max internal MST edge; separation DSPC = min inter-cluster reachability;
    validity weighted by cluster size over ALL points including noise.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    N = len(labels)
    ids = [c for c in np.unique(labels) if c >= 0]
    if len(ids) < 2:
        raise DegenerateMetric("DBCV needs at least 2 non-noise clusters")
    dim = X.shape[1]
    members = {c: np.where(labels == c)[0] for c in ids}
    for c, m in members.items():
        if len(m) < 2:
            raise DegenerateMetric(f"cluster {c} has fewer than 2 points")

    d = _pairwise(X)
    apts = np.zeros(N)
    for c, m in members.items():
        sub = d[np.ix_(m, m)]
        # log-space evaluation: (1/d)^dim overflows for high dim otherwise
        with np.errstate(divide="ignore"):
            logd = np.log(sub)
        logd[np.isneginf(logd)] = np.log(1e-300)  # duplicate-point floor
        np.fill_diagonal(logd, np.inf)  # exclude self; exp(-inf) = 0
        shifted = -dim * logd
        mx = shifted.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(shifted - mx).sum(axis=1))
        apts[m] = np.exp((-1.0 / dim) * (lse - np.log(len(m) - 1)))

    def mreach(i_idx, j_idx):
        return np.maximum(
            np.maximum(apts[i_idx][:, None], apts[j_idx][None, :]),
            d[np.ix_(i_idx, j_idx)],
        )

    dsc = {}
    for c, m in members.items():
        w = mreach(m, m)
        dsc[c] = _max_mst_edge(w)
    validity = 0.0
    for c in ids:
        dspc_min = min(
            float(mreach(members[c], members[o]).min()) for o in ids if o != c
        )
        denom = max(dspc_min, dsc[c])
        v = 0.0 if denom == 0 else (dspc_min - dsc[c]) / denom
        validity += (len(members[c]) / N) * v
    return float(validity)


def _max_mst_edge(w: np.ndarray) -> float:
    """Largest edge of the MST of a dense symmetric weight matrix (Prim)."""
    n = len(w)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = w[0].copy()
    largest = 0.0
    for _ in range(n - 1):
        cand = np.where(~in_tree, best, np.inf)
        v = int(np.argmin(cand))
        largest = max(largest, float(best[v]))
        in_tree[v] = True
        np.minimum(best, w[v], out=best)
    return largest


def noise_fraction(labels) -> float:
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise ValueError("empty label array")
    return float((labels == -1).sum() / len(labels))


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected partition agreement from the contingency table."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if len(a) != len(b):
        raise ValueError("label arrays differ in length")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class MetricsRow:
    min_samples: int
    min_cluster_size: int
    n_clusters: int
    noise_fraction: float
    silhouette: float = math.nan
    davies_bouldin: float = math.nan
    calinski_harabasz: float = math.nan
    dbcv: float = math.nan
    ari: float = math.nan
    flags: str = ""

    def as_csv_row(self) -> str:
        def fmt(v):
            if isinstance(v, float):
                if math.isnan(v):
                    return "nan"
                if math.isinf(v):
                    return "inf" if v > 0 else "-inf"
                return f"{v:.6f}"
            return str(v)

        return ",".join(
            fmt(v)
            for v in (
                self.min_samples, self.min_cluster_size, self.n_clusters,
                self.noise_fraction, self.silhouette, self.davies_bouldin,
                self.calinski_harabasz, self.dbcv, self.ari, self.flags,
            )
        )


METRICS_CSV_HEADER = (
    "min_samples,min_cluster_size,n_clusters,noise_fraction,"
    "silhouette,davies_bouldin,calinski_harabasz,dbcv,ari,flags"
)


def compute_metrics(
    X, result: ClusterResult, true_labels=None
) -> MetricsRow:
    labels = result.labels
    row = MetricsRow(
        min_samples=result.params.min_samples,
        min_cluster_size=result.params.min_cluster_size,
        n_clusters=result.n_clusters,
        noise_fraction=result.noise_fraction,
    )
    flags = []
    for name, fn in (
        ("silhouette", silhouette),
        ("davies_bouldin", davies_bouldin),
        ("calinski_harabasz", calinski_harabasz),
        ("dbcv", dbcv),
    ):
        try:
            setattr(row, name, fn(X, labels))
        except (DegenerateMetric, ValueError) as e:
            flags.append(f"{name}:{type(e).__name__}")
    if true_labels is not None:
        row.ari = adjusted_rand_index(true_labels, labels)
    row.flags = ";".join(flags)
    return row


def grid_search(
    X,
    min_samples_list,
    min_cluster_size_list,
    true_labels=None,
    allow_single_cluster: bool = False,
) -> list[MetricsRow]:
    """One hdbscan run + metrics per grid cell; rows sorted by DBCV descending
    (NaN DBCV last). Degenerate cells are flagged, never dropped."""
    if not min_samples_list or not min_cluster_size_list:
        raise ValueError("grids must be non-empty")
    rows = []
    for ms in min_samples_list:
        for mcs in min_cluster_size_list:
            params = ClusterParams(
                min_samples=ms, min_cluster_size=mcs,
                allow_single_cluster=allow_single_cluster,
            )
            try:
                result = hdbscan(X, params)
            except ValueError as e:
                row = MetricsRow(ms, mcs, 0, 1.0, flags=f"hdbscan:{e}")
                rows.append(row)
                continue
            rows.append(compute_metrics(X, result, true_labels))
    rows.sort(
        key=lambda r: (math.isnan(r.dbcv), -(r.dbcv if not math.isnan(r.dbcv) else 0.0))
    )
    return rows


def write_metrics_csv(path, rows: list[MetricsRow]):
    with open(path, "w", encoding="utf-8") as f:
        f.write(METRICS_CSV_HEADER + "\n")
        for row in rows:
            f.write(row.as_csv_row() + "\n")
