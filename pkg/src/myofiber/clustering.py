"""Hierarchical density-based clustering (HDBSCAN) from first principles.

Stages: k-nearest core distances -> mutual-reachability minimum spanning tree
(Prim, O(n^2)) -> single-linkage hierarchy -> condensed tree at a minimum
cluster size -> excess-of-mass cluster extraction with noise labeling.
Every stage breaks ties by point index so partitions are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterParams:
    min_samples: int = 5
    min_cluster_size: int = 10
    allow_single_cluster: bool = False

    def __post_init__(self):
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")

    def to_dict(self):
        return {
            "min_samples": self.min_samples,
            "min_cluster_size": self.min_cluster_size,
            "allow_single_cluster": self.allow_single_cluster,
        }


@dataclass
class CondensedTree:
    """Edges (parent, child, lambda=1/distance, child size) plus stabilities.

    Cluster ids start at n (the root); ids below n are points. Lambda is
    non-decreasing along any root-to-leaf path.
    """

    n_points: int
    edges: list[tuple[int, int, float, int]]
    stability: dict[int, float]

    def children_of(self, cluster: int) -> list[tuple[int, float, int]]:
        return [(c, lam, size) for p, c, lam, size in self.edges if p == cluster]

    def cluster_ids(self) -> list[int]:
        ids = {self.n_points}
        for _, child, _, size in self.edges:
            if size > 1 or child >= self.n_points:
                ids.add(child)
        for parent, _, _, _ in self.edges:
            ids.add(parent)
        return sorted(ids)


@dataclass
class ClusterResult:
    labels: np.ndarray  # -1 noise, else 0..K-1
    stabilities: dict[int, float]  # by output label
    params: ClusterParams
    n_clusters: int = field(init=False)
    noise_fraction: float = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.n_clusters = int(self.labels.max() + 1) if (self.labels >= 0).any() else 0
        self.noise_fraction = float((self.labels == -1).sum() / len(self.labels))


def core_distances(X: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest point, the point itself counting
    as its own first neighbor."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < min_samples:
        raise ValueError(f"n={n} < min_samples={min_samples}")
    d = _pairwise(X)
    part = np.sort(d, axis=1)
    return part[:, min_samples - 1]


def _pairwise(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = np.maximum(s[:, None] + s[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def mutual_reachability_mst(
    X: np.ndarray, core: np.ndarray
) -> list[tuple[int, int, float]]:
    """MST edges (i, j, weight) over d_mreach(a,b) = max(core_a, core_b, d(a,b)),
    sorted by (weight, i, j). Prim's algorithm on the dense graph; ties broken
    by lowest reachable index."""
    X = np.asarray(X, dtype=float)
    core = np.asarray(core, dtype=float)
    n = len(X)
    d = _pairwise(X)
    mreach = np.maximum(np.maximum(core[:, None], core[None, :]), d)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = mreach[0].copy()
    best_from = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(~in_tree, best, np.inf)
        v = int(np.argmin(cand))  # argmin returns lowest index on ties
        u = int(best_from[v])
        edges.append((min(u, v), max(u, v), float(best[v])))
        in_tree[v] = True
        better = mreach[v] < best
        better &= ~in_tree
        best[better] = mreach[v][better]
        best_from[better] = v
    edges.sort(key=lambda e: (e[2], e[0], e[1]))
    return edges


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        self.parent[self.find(a)] = self.find(b)


def single_linkage_tree(
    mst_edges: list[tuple[int, int, float]], n: int
) -> dict[int, tuple[int, int, float, int]]:
    """Dendrogram from sorted MST edges: node id >= n maps to
    (left child, right child, merge distance, subtree size)."""
    uf = _UnionFind(2 * n - 1)
    node_of = list(range(n))  # component representative -> dendrogram node
    sizes = {i: 1 for i in range(n)}
    children: dict[int, tuple[int, int, float, int]] = {}
    next_id = n
    for i, j, w in mst_edges:
        ri, rj = uf.find(i), uf.find(j)
        ni, nj = node_of[ri], node_of[rj]
        size = sizes[ni] + sizes[nj]
        children[next_id] = (ni, nj, w, size)
        sizes[next_id] = size
        uf.union(ri, rj)
        node_of[uf.find(ri)] = next_id
        next_id += 1
    return children


def build_condensed_tree(
    mst_edges: list[tuple[int, int, float]], min_cluster_size: int, n: int | None = None
) -> CondensedTree:
    """Condense the single-linkage hierarchy.

    A merge viewed top-down is a true split only when both sides hold at least
    min_cluster_size points; otherwise the small side's points fall out of the
    surviving cluster at that level's lambda. Stabilities accumulate
    size * (lambda_leave - lambda_birth) over every departing child.
    """
    if n is None:
        n = len(mst_edges) + 1
    children = single_linkage_tree(mst_edges, n)
    root_sl = 2 * n - 2 if n > 1 else 0

    def leaves(node):
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                l, r, _, _ = children[x]
                stack.extend((l, r))
        return sorted(out)

    def subtree_size(node):
        return 1 if node < n else children[node][3]

    edges: list[tuple[int, int, float, int]] = []
    relabel = {root_sl: n}
    next_label = n + 1
    # top-down traversal; nodes whose subtree already fell out are skipped
    stack = [root_sl]
    while stack:
        node = stack.pop()
        if node < n:
            continue
        left, right, dist, _ = children[node]
        lam = 1.0 / dist if dist > 0 else np.inf
        parent = relabel[node]
        lsize, rsize = subtree_size(left), subtree_size(right)
        if lsize >= min_cluster_size and rsize >= min_cluster_size:
            for child, size in ((left, lsize), (right, rsize)):
                relabel[child] = next_label
                edges.append((parent, next_label, lam, size))
                next_label += 1
                stack.append(child)
        elif lsize < min_cluster_size and rsize < min_cluster_size:
            for child in (left, right):
                for p in leaves(child):
                    edges.append((parent, p, lam, 1))
        else:
            keep, drop = (left, right) if lsize >= min_cluster_size else (right, left)
            relabel[keep] = parent
            for p in leaves(drop):
                edges.append((parent, p, lam, 1))
            stack.append(keep)

    birth: dict[int, float] = {n: 0.0}
    for _, child, lam, size in edges:
        if size > 1 or child >= n:
            birth[child] = lam
    stability: dict[int, float] = {c: 0.0 for c in birth}
    for parent, child, lam, size in edges:
        if np.isfinite(lam):
            stability[parent] += (lam - birth[parent]) * size
    return CondensedTree(n_points=n, edges=edges, stability=stability)


def extract_clusters(
    tree: CondensedTree, allow_single_cluster: bool = False
) -> tuple[np.ndarray, dict[int, float]]:
    """Excess-of-mass selection: a cluster wins over its descendants when its
    own stability exceeds the sum of their selected stabilities. Returns
    (labels, stability by output label)."""
    n = tree.n_points
    children: dict[int, list[int]] = {}
    parent_of: dict[int, int] = {}
    for p, c, _, size in tree.edges:
        if size > 1 or c >= n:
            children.setdefault(p, []).append(c)
            parent_of[c] = p
    clusters = sorted(tree.stability)
    agg = dict(tree.stability)
    selected: dict[int, bool] = {}
    for c in sorted(clusters, reverse=True):  # children have larger ids
        subtree = sum(agg[ch] for ch in children.get(c, []))
        if c == n and not allow_single_cluster:
            selected[c] = False
            agg[c] = subtree
        elif children.get(c) and agg[c] < subtree:
            selected[c] = False
            agg[c] = subtree
        else:
            selected[c] = True
    # top-down sweep: the highest selected cluster on any path wins; nothing
    # below a chosen cluster may also be chosen
    chosen = []
    stack = [n]
    while stack:
        c = stack.pop()
        if selected.get(c):
            chosen.append(c)
        else:
            stack.extend(children.get(c, []))
    chosen.sort()
    label_of = {c: i for i, c in enumerate(chosen)}
    labels = np.full(n, -1, dtype=int)
    for parent, child, _, size in tree.edges:
        if size == 1 and child < n:
            c = parent
            while c is not None and c not in label_of:
                c = parent_of.get(c)
            if c is not None:
                labels[child] = label_of[c]
    stabilities = {label_of[c]: tree.stability[c] for c in chosen}
    return labels, stabilities


def hdbscan(X: np.ndarray, params: ClusterParams) -> ClusterResult:
    """Full pipeline. Exact duplicate rows are merged before tree construction
    (zero distances would send lambda to infinity) and relabeled afterwards."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < max(params.min_samples, params.min_cluster_size):
        raise ValueError("not enough points for the requested parameters")
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    if len(uniq) < n:
        if len(uniq) < max(params.min_samples, 2):
            return ClusterResult(np.zeros(n, dtype=int) - 1, {}, params)
        labels, stab = _hdbscan_run(uniq, params)
        return ClusterResult(labels[inverse], stab, params)
    labels, stab = _hdbscan_run(X, params)
    return ClusterResult(labels, stab, params)


def _hdbscan_run(X, params: ClusterParams):
    core = core_distances(X, params.min_samples)
    mst = mutual_reachability_mst(X, core)
    tree = build_condensed_tree(mst, params.min_cluster_size, n=len(X))
    return extract_clusters(tree, params.allow_single_cluster)


# ---------------------------------------------------------------------------
# labels CSV + stability sidecar
# ---------------------------------------------------------------------------

def write_labels_csv(path, fiber_ids, labels):
    with open(path, "w", encoding="utf-8") as f:
        f.write("fiber_id,label\n")
        for fid, lab in zip(fiber_ids, labels):
            f.write(f"{int(fid)},{int(lab)}\n")


def read_labels_csv(path):
    ids, labels = [], []
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            fid, lab = line.strip().split(",")
            ids.append(int(fid))
            labels.append(int(lab))
    return np.asarray(ids), np.asarray(labels)


def write_stabilities(path, result: ClusterResult):
    doc = {
        "params": result.params.to_dict(),
        "n_clusters": result.n_clusters,
        "noise_fraction": result.noise_fraction,
        "stabilities": {str(k): v for k, v in result.stabilities.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
