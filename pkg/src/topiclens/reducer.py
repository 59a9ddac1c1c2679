"""Dimensionality reduction of embeddings.

Builds a k-nearest-neighbor graph (exact below a size threshold, random
projection trees plus neighbor descent above), converts it to a fuzzy
weighted graph with smooth per-point kernel scales, and lays points out in
the target dimension by stochastic gradient descent on the graph
cross-entropy with negative sampling. PCA provides the initialization and a
plain linear fallback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit

from ._layout import optimize_epochs

__all__ = [
    "KnnGraph",
    "FuzzyGraph",
    "pca_project",
    "knn_graph",
    "fuzzy_graph",
    "fit_curve_params",
    "optimize_layout",
    "reduce_embeddings",
]

EXACT_KNN_THRESHOLD = 20_000
_SMOOTH_TOL = 1e-5
_SMOOTH_ITER = 64
_MIN_SIGMA = 1e-10


@dataclass(frozen=True)
class KnnGraph:
    """Per-point neighbor indices and distances, ascending, self excluded."""

    indices: np.ndarray  # (n, k) int64
    distances: np.ndarray  # (n, k) float64

    def __post_init__(self) -> None:
        if self.indices.shape != self.distances.shape:
            raise ValueError("indices and distances must have the same shape")
        if np.any(self.distances < 0):
            raise ValueError("negative neighbor distance")
        if np.any(np.diff(self.distances, axis=1) < 0):
            raise ValueError("neighbor distances must be ascending")
        if np.any(self.indices == np.arange(self.indices.shape[0])[:, None]):
            raise ValueError("self listed as neighbor")

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetrized fuzzy neighborhood graph: w_sym = a + b - a*b."""

    n_points: int
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray


def pca_project(X: np.ndarray, dim: int) -> np.ndarray:
    """Project onto the top principal components of mean-centered X.

    Components are ordered by descending variance; each component's sign is
    fixed so its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if not 1 <= dim <= min(n, d):
        raise ValueError(f"dim must be in [1, {min(n, d)}]")
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:dim]
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return centered @ components.T


def _pairwise_sq_block(block: np.ndarray, X: np.ndarray, sq: np.ndarray, sq_block: np.ndarray) -> np.ndarray:
    d2 = sq_block[:, None] + sq[None, :] - 2.0 * (block @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _exact_knn(X: np.ndarray, k: int, block: int = 1024) -> KnnGraph:
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=float)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = _pairwise_sq_block(X[start:stop], X, sq, sq[start:stop])
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        part_d = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(part_d, axis=1, kind="stable")
        indices[start:stop] = np.take_along_axis(part, order, axis=1)
        distances[start:stop] = np.sqrt(np.take_along_axis(part_d, order, axis=1))
    return KnnGraph(indices=indices, distances=distances)


def _rp_leaves(X: np.ndarray, rng: np.random.Generator, leaf_size: int) -> list[np.ndarray]:
    """Leaf index sets of one random-projection tree."""
    leaves: list[np.ndarray] = []
    stack = [np.arange(X.shape[0])]
    while stack:
        idx = stack.pop()
        if idx.size <= leaf_size:
            leaves.append(idx)
            continue
        pick = rng.choice(idx.size, size=2, replace=False)
        p, q = X[idx[pick[0]]], X[idx[pick[1]]]
        direction = q - p
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            direction = rng.standard_normal(X.shape[1])
            norm = np.linalg.norm(direction)
        direction /= norm
        proj = X[idx] @ direction
        threshold = 0.5 * float((p + q) @ direction)
        left = proj < threshold
        if not left.any() or left.all():
            # Degenerate hyperplane; fall back to a median split.
            order = np.argsort(proj, kind="stable")
            half = idx.size // 2
            stack.append(idx[order[:half]])
            stack.append(idx[order[half:]])
        else:
            stack.append(idx[left])
            stack.append(idx[~left])
    return leaves


def _update_row(
    X: np.ndarray, i: int, cand: np.ndarray, idx_row: np.ndarray, dist_row: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray, int]:
    d = np.sqrt(np.einsum("ij,ij->i", X[cand] - X[i], X[cand] - X[i]))
    all_idx = np.concatenate([idx_row, cand])
    all_d = np.concatenate([dist_row, d])
    order = np.argsort(all_d, kind="stable")
    seen: set[int] = set()
    new_idx = np.empty(k, dtype=np.int64)
    new_d = np.empty(k, dtype=float)
    filled = 0
    for o in order:
        cand_i = int(all_idx[o])
        if cand_i in seen:
            continue
        seen.add(cand_i)
        new_idx[filled] = cand_i
        new_d[filled] = all_d[o]
        filled += 1
        if filled == k:
            break
    changed = int(np.sum(new_idx != idx_row))
    return new_idx, new_d, changed


def _approx_knn(
    X: np.ndarray,
    k: int,
    seed: int,
    n_trees: int = 8,
    n_iters: int = 10,
) -> KnnGraph:
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    leaf_size = max(2 * k, 32)
    # Seed neighbor lists with random non-self picks, then refine.
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=float)
    for i in range(n):
        cand = rng.choice(n - 1, size=k, replace=False)
        cand = np.where(cand >= i, cand + 1, cand)
        d = np.sqrt(np.einsum("ij,ij->i", X[cand] - X[i], X[cand] - X[i]))
        order = np.argsort(d, kind="stable")
        indices[i] = cand[order]
        distances[i] = d[order]
    for _ in range(n_trees):
        for leaf in _rp_leaves(X, rng, leaf_size):
            for i in leaf:
                cand = leaf[leaf != i]
                if cand.size == 0:
                    continue
                indices[i], distances[i], _ = _update_row(
                    X, int(i), cand, indices[i], distances[i], k
                )
    for _ in range(n_iters):
        reverse: list[list[int]] = [[] for _ in range(n)]
        for i in range(n):
            for j in indices[i]:
                reverse[int(j)].append(i)
        total_changed = 0
        for i in range(n):
            local = np.unique(np.concatenate([indices[i], np.asarray(reverse[i], dtype=np.int64)]))
            cand = np.unique(np.concatenate([local, indices[local].ravel()]))
            cand = cand[cand != i]
            indices[i], distances[i], changed = _update_row(
                X, i, cand, indices[i], distances[i], k
            )
            total_changed += changed
        if total_changed <= max(1, int(0.001 * n * k)):
            break
    return KnnGraph(indices=indices, distances=distances)


def knn_graph(
    X: np.ndarray,
    k: int,
    method: str = "auto",
    seed: int = 0,
    exact_threshold: int = EXACT_KNN_THRESHOLD,
) -> KnnGraph:
    """Euclidean k-nearest neighbors: exact up to ``exact_threshold`` rows,
    approximate (RP-forest init plus neighbor-descent refinement) above."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of rows ({n})")
    if k < 1:
        raise ValueError("k must be positive")
    if method == "auto":
        method = "exact" if n <= exact_threshold else "approx"
    if method == "exact":
        return _exact_knn(X, k)
    if method == "approx":
        return _approx_knn(X, k, seed)
    raise ValueError(f"unknown method {method!r}")


def fuzzy_graph(knn: KnnGraph) -> FuzzyGraph:
    """Fuzzy neighborhood graph with smooth per-point scales.

    rho_i is the distance to the nearest neighbor; sigma_i is bisected so the
    kernel row sum hits log2(k), then directed memberships are symmetrized as
    a + b - a*b.
    """
    dist = knn.distances
    n, k = dist.shape
    rho = dist[:, 0].copy()
    target = math.log2(k)
    rel = np.maximum(dist - rho[:, None], 0.0)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    for _ in range(_SMOOTH_ITER):
        psum = np.exp(-rel / np.maximum(mid[:, None], _MIN_SIGMA)).sum(axis=1)
        err = psum - target
        done = np.abs(err) < _SMOOTH_TOL
        if done.all():
            break
        high = err > 0
        hi = np.where(high & ~done, mid, hi)
        lo = np.where(~high & ~done, mid, lo)
        unbounded = ~np.isfinite(hi)
        mid = np.where(done, mid, np.where(unbounded, mid * 2.0, 0.5 * (lo + hi)))
    sigma = np.maximum(mid, _MIN_SIGMA)
    weights = np.exp(-rel / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    cols = knn.indices.ravel()
    directed = scipy.sparse.coo_matrix(
        (weights.ravel(), (rows, cols)), shape=(n, n)
    ).tocsr()
    sym = directed + directed.T - directed.multiply(directed.T)
    coo = sym.tocoo()
    return FuzzyGraph(
        n_points=n,
        heads=coo.row.astype(np.int64),
        tails=coo.col.astype(np.int64),
        weights=coo.data.astype(float),
        rho=rho,
        sigma=sigma,
    )


_CURVE_CACHE: dict[tuple[float, float], tuple[float, float]] = {}


def fit_curve_params(min_dist: float = 0.1, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of the low-dimensional attraction curve 1/(1+a*x^(2b))
    to the target exp falloff beyond ``min_dist``."""
    key = (min_dist, spread)
    if key not in _CURVE_CACHE:
        xv = np.linspace(0, spread * 3, 300)
        yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
        params, _ = curve_fit(
            lambda x, a, b: 1.0 / (1.0 + a * x ** (2 * b)), xv, yv, p0=(1.0, 1.0)
        )
        _CURVE_CACHE[key] = (float(params[0]), float(params[1]))
    return _CURVE_CACHE[key]


def optimize_layout(
    fuzzy: FuzzyGraph,
    init: np.ndarray,
    epochs: int = 200,
    seed: int = 42,
    neg_samples: int = 5,
    min_dist: float = 0.1,
    spread: float = 1.0,
    initial_alpha: float = 1.0,
    repulsion: float = 1.0,
) -> np.ndarray:
    """SGD layout of the fuzzy graph starting from ``init``.

    Edges are visited in a fixed order on a single thread, so identical seeds
    give bitwise-identical layouts. epochs=0 returns the initialization.
    """
    if init.shape[0] != fuzzy.n_points:
        raise ValueError("init row count does not match the graph")
    Y = np.array(init, dtype=float, copy=True)
    if epochs == 0 or fuzzy.weights.size == 0:
        return Y
    a, b = fit_curve_params(min_dist, spread)
    w_max = float(fuzzy.weights.max())
    keep = fuzzy.weights >= w_max / max(epochs, 1)
    heads = fuzzy.heads[keep]
    tails = fuzzy.tails[keep]
    weights = fuzzy.weights[keep]
    epochs_per_sample = w_max / weights
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64((seed * 0x9E3779B97F4A7C15 + 1) & 0xFFFFFFFFFFFFFFFF) | np.uint64(1)
    optimize_epochs(
        Y,
        heads,
        tails,
        epochs_per_sample,
        float(a),
        float(b),
        int(epochs),
        int(neg_samples),
        float(initial_alpha),
        float(repulsion),
        state,
    )
    return Y


def reduce_embeddings(
    X: np.ndarray,
    dim: int = 5,
    n_neighbors: int = 15,
    epochs: int = 200,
    seed: int = 42,
    min_dist: float = 0.1,
    knn_method: str = "auto",
) -> np.ndarray:
    """Full reduction: PCA init scaled to [-10, 10], then graph layout."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 1:
        return np.zeros((1, dim))
    pca_dim = min(dim, n, X.shape[1])
    init = pca_project(X, pca_dim)
    if pca_dim < dim:
        init = np.hstack([init, np.zeros((n, dim - pca_dim))])
    max_abs = float(np.abs(init).max())
    if max_abs > 0:
        init *= 10.0 / max_abs
    k = min(n_neighbors, n - 1)
    graph = fuzzy_graph(knn_graph(X, k, method=knn_method, seed=seed))
    return optimize_layout(graph, init, epochs=epochs, seed=seed, min_dist=min_dist)
