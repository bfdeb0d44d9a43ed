"""Exact t-SNE: perplexity binary search, early exaggeration, momentum descent.

Quadratic-cost implementation (full pairwise affinities); fine for the fiber
counts this pipeline handles. Deterministic for a fixed seed.
"""

from __future__ import annotations

import numpy as np

MACHINE_EPS = 1e-12


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_probabilities(
    X: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200
) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P(j|i) whose Shannon entropy (bits) matches
    log2(perplexity) within tol, via per-point binary search on the Gaussian
    precision. Returns (P, achieved entropies)."""
    n = len(X)
    d2 = _pairwise_sq_dists(X)
    target = np.log2(perplexity)
    P = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        row = np.delete(d2[i], i)
        for _ in range(max_iter):
            w = np.exp(-row * beta)
            total = w.sum()
            if total <= 0:
                h, p = 0.0, w
            else:
                p = w / total
                nz = p > 0
                h = -np.sum(p[nz] * np.log2(p[nz]))
            if abs(h - target) < tol:
                break
            if h > target:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
        entropies[i] = h
        P[i, np.arange(n) != i] = p
    return P, entropies


def tsne_2d(
    X: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    momentum: float = 0.8,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    return_history: bool = False,
):
    """Embed X into 2-D. Returns (n, 2) coordinates, plus the per-iteration
    KL-divergence trace when return_history is set."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n <= 3 * perplexity:
        raise ValueError(f"n={n} too small for perplexity {perplexity}")
    P_cond, _ = conditional_probabilities(X, perplexity)
    P = (P_cond + P_cond.T) / (2.0 * n)
    P = np.maximum(P, MACHINE_EPS)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    history = []
    for it in range(iterations):
        exag = early_exaggeration if it < exaggeration_iters else 1.0
        mom = 0.5 if it < exaggeration_iters else momentum
        d2 = _pairwise_sq_dists(Y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), MACHINE_EPS)
        PQ = (exag * P - Q) * num
        grad = 4.0 * ((np.diag(PQ.sum(axis=1)) - PQ) @ Y)
        update = mom * update - learning_rate * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if return_history:
            history.append(float(np.sum(P * np.log(P / Q))))
    if return_history:
        return Y, np.asarray(history)
    return Y


def write_tsne_csv(path, fiber_ids, coords):
    with open(path, "w", encoding="utf-8") as f:
        f.write("fiber_id,x,y\n")
        for fid, (x, y) in zip(fiber_ids, np.asarray(coords, dtype=float)):
            f.write(f"{int(fid)},{x:.8f},{y:.8f}\n")


def read_tsne_csv(path):
    ids, coords = [], []
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            fid, x, y = line.strip().split(",")
            ids.append(int(fid))
            coords.append((float(x), float(y)))
    return np.asarray(ids), np.asarray(coords)
