"""Independent quadratic reference for the density-clustering definitions.

Deliberately written with a different structure from the library code
(scipy MST, recursive top-down condensation over explicit point sets) so the
two implementations can only agree if both match the shared definitions.
Used exclusively as a test oracle.
"""

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform


def _component(start, points, edges):
    adj = {p: [] for p in points}
    for _, a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


def _condense(points, edges, lam_birth, mcs):
    """Recursively strip the heaviest tree edge; a split is real only when both
    sides reach min_cluster_size, otherwise the small side's points fall out."""
    node = {"points": frozenset(points), "stability": 0.0, "children": []}
    points = set(points)
    edges = sorted(edges)
    while edges:
        w, i, j = edges[-1]
        lam = 1.0 / w if w > 0 else np.inf
        rest = edges[:-1]
        side = _component(i, points, rest)
        other = points - side
        if len(side) >= mcs and len(other) >= mcs:
            if np.isfinite(lam):
                node["stability"] += len(points) * (lam - lam_birth)
            node["children"] = [
                _condense(side, [e for e in rest if e[1] in side and e[2] in side], lam, mcs),
                _condense(other, [e for e in rest if e[1] in other and e[2] in other], lam, mcs),
            ]
            return node
        if len(side) < mcs and len(other) < mcs:
            if np.isfinite(lam):
                node["stability"] += len(points) * (lam - lam_birth)
            return node
        small, big = (side, other) if len(side) < mcs else (other, side)
        if np.isfinite(lam):
            node["stability"] += len(small) * (lam - lam_birth)
        points = big
        edges = [e for e in rest if e[1] in big and e[2] in big]
    return node


def _select(node, is_root, allow_single):
    """Excess-of-mass: keep a cluster when its stability is at least the sum of
    its children's selected stabilities. Returns (selected nodes, mass)."""
    subs = [_select(ch, False, allow_single) for ch in node["children"]]
    flat = [c for sel, _ in subs for c in sel]
    subtree = sum(s for _, s in subs)
    if is_root and not allow_single:
        return flat, subtree
    if node["children"] and node["stability"] < subtree:
        return flat, subtree
    return [node], node["stability"]


def reference_hdbscan(X, min_samples, min_cluster_size, allow_single_cluster=False):
    """Returns (labels, sorted stabilities of the selected clusters)."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    D = squareform(pdist(X))
    core = np.sort(D, axis=1)[:, min_samples - 1]
    M = np.maximum(D, np.maximum.outer(core, core))
    mst = minimum_spanning_tree(M).tocoo()
    edges = [(float(w), int(a), int(b)) for w, a, b in zip(mst.data, mst.row, mst.col)]
    root = _condense(range(n), edges, 0.0, min_cluster_size)
    selected, _ = _select(root, True, allow_single_cluster)
    labels = np.full(n, -1, dtype=int)
    for k, node in enumerate(sorted(selected, key=lambda nd: min(nd["points"]))):
        for p in node["points"]:
            labels[p] = k
    return labels, sorted(node["stability"] for node in selected)


def reference_mst_weight(X, core):
    """Total mutual-reachability MST weight via scipy, for cross-checks."""
    D = squareform(pdist(np.asarray(X, dtype=float)))
    M = np.maximum(D, np.maximum.outer(core, core))
    return float(minimum_spanning_tree(M).sum())
