"""Density-based topic clustering with validity-index tuning.

Implements the mutual-reachability clustering pipeline: core distances, a
minimum spanning tree over mutual-reachability distances, single-linkage
condensation with a minimum cluster size, excess-of-mass cluster extraction,
and the density-based validity score used to pick hyperparameters from a
grid.

Ties in mutual-reachability weights are broken by a canonical edge order
(weight, then endpoint indices) so the spanning tree, and therefore the
labeling, is uniquely determined by the input.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "TopicModel",
    "CondensedTree",
    "TuneCell",
    "TuneResult",
    "core_distances",
    "build_mst",
    "condense_and_extract",
    "hdbscan_labels",
    "dbcv_score",
    "tune_hdbscan",
    "pairwise_distances",
]

DEFAULT_GRID = (10, 25, 50, 100, 200)
_DENSE_CACHE_MAX = 8192  # precompute the full distance matrix below this size


@dataclass
class TopicModel:
    """Cluster labels over documents; -1 marks the noise cluster."""

    labels: np.ndarray
    min_samples: int
    min_cluster_size: int
    dbcv: float | None
    topic_count: int

    @property
    def noise_count(self) -> int:
        return int(np.sum(self.labels == -1))

    def topic_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels[self.labels >= 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass
class CondensedTree:
    """Condensed cluster hierarchy.

    ``cluster_rows`` are (parent, child, lambda, size) for cluster children;
    ``point_rows`` are (parent, point, lambda) for points leaving a cluster.
    Lambda is 1/distance; the root cluster is id 0 with birth lambda 0.
    """

    n_points: int
    cluster_rows: list[tuple[int, int, float, int]] = field(default_factory=list)
    point_rows: list[tuple[int, int, float]] = field(default_factory=list)

    def stability(self) -> dict[int, float]:
        births: dict[int, float] = {0: 0.0}
        for _, child, lam, _ in self.cluster_rows:
            births[child] = lam
        stab = {c: 0.0 for c in births}
        for parent, _, lam, size in self.cluster_rows:
            stab[parent] += size * (lam - births[parent])
        for parent, _, lam in self.point_rows:
            stab[parent] += lam - births[parent]
        return stab

    def children_of(self) -> dict[int, list[int]]:
        kids: dict[int, list[int]] = {}
        for parent, child, _, _ in self.cluster_rows:
            kids.setdefault(parent, []).append(child)
        return kids


def _block_rows(n: int, d: int) -> int:
    # Cap the (block, n, d) difference temporary near 160 MB.
    return max(1, int(20_000_000 // max(1, n * d)))


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix computed in row blocks.

    Uses the difference form rather than the Gram-matrix identity: clustering
    input is low-dimensional, and the difference form is free of cancellation
    so equal distances compare exactly equal.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    out = np.empty((n, n))
    for start in range(0, n, _block_rows(n, d)):
        stop = min(start + _block_rows(n, d), n)
        diff = X[start:stop, None, :] - X[None, :, :]
        out[start:stop] = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(out, 0.0)
    return out


def _distances_from(X: np.ndarray, i: int) -> np.ndarray:
    diff = X - X[i]
    return np.sqrt((diff * diff).sum(axis=1))


def core_distances(
    X: np.ndarray, min_samples: int, dists: np.ndarray | None = None
) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest neighbor (self excluded)."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if not 1 <= min_samples < n:
        raise ValueError(f"min_samples must be in [1, {n - 1}]")
    core = np.empty(n)
    if dists is not None:
        # Row includes self at distance 0, so the k-th excluding self sits at
        # partition index min_samples.
        core[:] = np.partition(dists, min_samples, axis=1)[:, min_samples]
        return core
    block = _block_rows(n, d)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = X[start:stop, None, :] - X[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        core[start:stop] = np.partition(dist, min_samples, axis=1)[:, min_samples]
    return core


def build_mst(
    X: np.ndarray, core: np.ndarray, dists: np.ndarray | None = None
) -> np.ndarray:
    """Minimum spanning tree over mutual-reachability distances, Prim O(n^2).

    Mutual reachability of (a, b) is max(core_a, core_b, d(a, b)). Weight
    ties resolve by canonical endpoint order so the tree is unique. Returns
    (n-1, 3) rows [u, v, weight] sorted by (weight, u, v) with u < v.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    core = np.asarray(core, dtype=float)
    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.int64)
    current = 0
    in_tree[0] = True
    edges = np.empty((n - 1, 3))
    for step in range(n - 1):
        d = dists[current] if dists is not None else _distances_from(X, current)
        w = np.maximum(d, np.maximum(core, core[current]))
        update = ~in_tree & ((w < best_w) | ((w == best_w) & (current < best_from)))
        best_w[update] = w[update]
        best_from[update] = current
        masked = np.where(in_tree, np.inf, best_w)
        m = masked.min()
        cand = np.flatnonzero(masked == m)
        if cand.size > 1:
            keys = [
                (min(int(best_from[c]), int(c)), max(int(best_from[c]), int(c)))
                for c in cand
            ]
            v = int(cand[min(range(cand.size), key=keys.__getitem__)])
        else:
            v = int(cand[0])
        u = int(best_from[v])
        edges[step] = (min(u, v), max(u, v), m)
        in_tree[v] = True
        current = v
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    return edges[order]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def _single_linkage(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Binary merge tree from sorted MST edges.

    Returns (children, weights): children[i] = (left node, right node) merged
    at step i into node n+i; node ids < n are points.
    """
    uf = _UnionFind(n)
    node_of_root: dict[int, int] = {i: i for i in range(n)}
    children = np.empty((n - 1, 2), dtype=np.int64)
    weights = np.empty(n - 1)
    for i, (u, v, w) in enumerate(edges):
        ru, rv = uf.find(int(u)), uf.find(int(v))
        children[i] = (node_of_root[ru], node_of_root[rv])
        weights[i] = w
        uf.union(ru, rv)
        node_of_root[uf.find(ru)] = n + i
    return children, weights


def _subtree_points(node: int, n: int, children: np.ndarray) -> list[int]:
    points = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            points.append(cur)
        else:
            stack.extend(children[cur - n])
    return points


def _node_sizes(n: int, children: np.ndarray) -> np.ndarray:
    sizes = np.ones(2 * n - 1, dtype=np.int64)
    for i in range(n - 1):
        sizes[n + i] = sizes[children[i, 0]] + sizes[children[i, 1]]
    return sizes


def _condense(
    children: np.ndarray, weights: np.ndarray, n: int, min_cluster_size: int
) -> CondensedTree:
    sizes = _node_sizes(n, children)
    tree = CondensedTree(n_points=n)
    if n == 1:
        return tree
    root = 2 * n - 2
    next_cluster = 1
    # (hierarchy node, condensed cluster id carrying it)
    stack: list[tuple[int, int]] = [(root, 0)]
    while stack:
        node, cluster = stack.pop()
        if node < n:
            continue
        merge_idx = node - n
        w = weights[merge_idx]
        lam = 1.0 / w if w > 0.0 else np.inf
        left, right = (int(c) for c in children[merge_idx])
        big_left = sizes[left] >= min_cluster_size
        big_right = sizes[right] >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                cid = next_cluster
                next_cluster += 1
                tree.cluster_rows.append((cluster, cid, lam, int(sizes[child])))
                stack.append((child, cid))
        elif big_left or big_right:
            keep, drop = (left, right) if big_left else (right, left)
            for p in _subtree_points(drop, n, children):
                tree.point_rows.append((cluster, p, lam))
            stack.append((keep, cluster))
        else:
            for p in _subtree_points(left, n, children):
                tree.point_rows.append((cluster, p, lam))
            for p in _subtree_points(right, n, children):
                tree.point_rows.append((cluster, p, lam))
    return tree


def _extract_eom(tree: CondensedTree) -> list[int]:
    """Excess-of-mass cluster selection over the condensed tree.

    A cluster beats its descendants iff its stability is at least the sum of
    its children's subtree stabilities. The root is never selected.
    """
    stability = tree.stability()
    kids = tree.children_of()
    nodes = sorted(stability, reverse=True)
    selected: dict[int, bool] = {}
    subtree_stab: dict[int, float] = {}
    for node in nodes:
        if node == 0:
            continue
        child_sum = sum(subtree_stab[c] for c in kids.get(node, []))
        if not kids.get(node) or stability[node] >= child_sum:
            selected[node] = True
            subtree_stab[node] = stability[node]
        else:
            selected[node] = False
            subtree_stab[node] = child_sum
    # Keep only the highest selected cluster along any root-to-leaf path.
    final: list[int] = []
    stack = list(kids.get(0, []))
    while stack:
        node = stack.pop()
        if selected.get(node, False):
            final.append(node)
        else:
            stack.extend(kids.get(node, []))
    return sorted(final)


def _labels_from_selection(tree: CondensedTree, final: list[int]) -> np.ndarray:
    labels = np.full(tree.n_points, -1, dtype=np.int64)
    kids = tree.children_of()
    points_of: dict[int, list[int]] = {}
    for parent, point, _ in tree.point_rows:
        points_of.setdefault(parent, []).append(point)
    for label, cluster in enumerate(final):
        stack = [cluster]
        while stack:
            node = stack.pop()
            for p in points_of.get(node, []):
                labels[p] = label
            stack.extend(kids.get(node, []))
    return labels


def condense_and_extract(
    mst_edges: np.ndarray, n: int, min_cluster_size: int
) -> tuple[np.ndarray, CondensedTree]:
    """Labels plus the condensed tree from a sorted mutual-reachability MST."""
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2")
    children, weights = _single_linkage(mst_edges, n)
    tree = _condense(children, weights, n, min_cluster_size)
    labels = _labels_from_selection(tree, _extract_eom(tree))
    return labels, tree


def hdbscan_labels(
    X: np.ndarray,
    min_samples: int,
    min_cluster_size: int,
    dists: np.ndarray | None = None,
) -> tuple[np.ndarray, CondensedTree]:
    """Full clustering pass for one (min_samples, min_cluster_size) pair."""
    X = np.asarray(X, dtype=float)
    core = core_distances(X, min_samples, dists=dists)
    edges = build_mst(X, core, dists=dists)
    return condense_and_extract(edges, X.shape[0], min_cluster_size)


# ---------------------------------------------------------------------------
# Density-based validity score


def _mst_on_matrix(M: np.ndarray) -> list[tuple[int, int, float]]:
    n = M.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    current = 0
    edges = []
    for _ in range(n - 1):
        w = M[current]
        update = ~in_tree & (w < best_w)
        best_w[update] = w[update]
        best_from[update] = current
        masked = np.where(in_tree, np.inf, best_w)
        v = int(np.argmin(masked))
        edges.append((int(best_from[v]), v, float(masked[v])))
        in_tree[v] = True
        current = v
    return edges


def _all_points_core(D: np.ndarray, dim: int) -> np.ndarray:
    """All-points core distance: inverse-distance mean raised to -1/dim."""
    n = D.shape[0]
    with np.errstate(divide="ignore", over="ignore"):
        inv = np.where(D > 0.0, 1.0 / D, np.inf) ** dim
    np.fill_diagonal(inv, 0.0)
    has_dup = (D + np.eye(n) == 0.0).any(axis=1)
    mean = inv.sum(axis=1) / (n - 1)
    with np.errstate(divide="ignore"):
        apts = np.where(np.isfinite(mean), mean ** (-1.0 / dim), 0.0)
    apts[has_dup] = 0.0
    return apts


def dbcv_score(X: np.ndarray, labels: np.ndarray) -> float:
    """Density-based cluster validity in [-1, 1].

    Per cluster: sparseness is the largest internal edge of its
    mutual-reachability MST (all edges when the tree has no internal edge);
    separation is the smallest mutual-reachability distance to any other
    cluster. Noise points are excluded from the geometry but count in the
    size weighting.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    ids = sorted(int(c) for c in np.unique(labels) if c >= 0)
    if len(ids) < 2:
        raise ValueError("validity needs at least 2 non-noise clusters")
    dim = X.shape[1]
    total = len(labels)
    members = {c: np.flatnonzero(labels == c) for c in ids}
    if any(m.size < 2 for m in members.values()):
        raise ValueError("every cluster needs at least 2 points")
    apts: dict[int, np.ndarray] = {}
    sparseness: dict[int, float] = {}
    for c in ids:
        pts = X[members[c]]
        D = pairwise_distances(pts)
        a = _all_points_core(D, dim)
        apts[c] = a
        M = np.maximum(D, np.maximum(a[:, None], a[None, :]))
        np.fill_diagonal(M, 0.0)
        edges = _mst_on_matrix(M)
        degree = np.zeros(pts.shape[0], dtype=int)
        for u, v, _ in edges:
            degree[u] += 1
            degree[v] += 1
        internal = [w for u, v, w in edges if degree[u] > 1 and degree[v] > 1]
        sparseness[c] = max(internal) if internal else max(w for _, _, w in edges)
    separation: dict[int, float] = {c: np.inf for c in ids}
    for i, ci in enumerate(ids):
        for cj in ids[i + 1 :]:
            A, B = X[members[ci]], X[members[cj]]
            d2 = (
                np.einsum("ij,ij->i", A, A)[:, None]
                + np.einsum("ij,ij->i", B, B)[None, :]
                - 2.0 * (A @ B.T)
            )
            np.maximum(d2, 0.0, out=d2)
            reach = np.maximum(np.sqrt(d2), np.maximum(apts[ci][:, None], apts[cj][None, :]))
            m = float(reach.min())
            separation[ci] = min(separation[ci], m)
            separation[cj] = min(separation[cj], m)
    score = 0.0
    for c in ids:
        denom = max(separation[c], sparseness[c])
        validity = 0.0 if denom == 0.0 else (separation[c] - sparseness[c]) / denom
        score += (members[c].size / total) * validity
    return float(score)


# ---------------------------------------------------------------------------
# Grid tuning


@dataclass(frozen=True)
class TuneCell:
    min_samples: int
    min_cluster_size: int
    topic_count: int
    noise_count: int
    dbcv: float | None
    note: str = ""


@dataclass
class TuneResult:
    model: TopicModel
    report: list[TuneCell]


def tune_hdbscan(
    X: np.ndarray,
    grid: Sequence[int] = DEFAULT_GRID,
    max_workers: int | None = None,
) -> TuneResult:
    """Grid search over (min_samples, min_cluster_size) pairs by validity score.

    Ties break toward the smaller min_cluster_size, then smaller min_samples.
    Cells whose clustering leaves fewer than 2 topics are recorded but cannot
    win. The spanning tree depends only on min_samples, so each grid row
    shares one tree; identical labelings share one validity evaluation.
    """
    X = np.asarray(X, dtype=float)
    if not grid:
        raise ValueError("grid must be non-empty")
    n = X.shape[0]
    values = sorted(set(int(g) for g in grid))
    dists = pairwise_distances(X) if n <= _DENSE_CACHE_MAX else None

    def run_row(ms: int) -> list[tuple[TuneCell, np.ndarray | None]]:
        out: list[tuple[TuneCell, np.ndarray | None]] = []
        if ms >= n:
            return [(TuneCell(ms, mcs, 0, n, None, "min_samples >= n"), None) for mcs in values]
        core = core_distances(X, ms, dists=dists)
        edges = build_mst(X, core, dists=dists)
        score_cache: dict[bytes, float] = {}
        for mcs in values:
            if mcs > n or mcs < 2:
                out.append((TuneCell(ms, mcs, 0, n, None, "min_cluster_size out of range"), None))
                continue
            labels, _ = condense_and_extract(edges, n, mcs)
            topic_count = int(labels.max()) + 1 if labels.max() >= 0 else 0
            noise = int(np.sum(labels == -1))
            if topic_count < 2:
                out.append((TuneCell(ms, mcs, topic_count, noise, None, "fewer than 2 topics"), labels))
                continue
            key = labels.tobytes()
            if key not in score_cache:
                score_cache[key] = dbcv_score(X, labels)
            out.append((TuneCell(ms, mcs, topic_count, noise, score_cache[key]), labels))
        return out

    workers = max_workers or min(4, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = [cell for row in pool.map(run_row, values) for cell in row]
    report = [cell for cell, _ in outcomes]
    scored = [
        (cell, labels)
        for cell, labels in outcomes
        if cell.dbcv is not None and labels is not None
    ]
    if not scored:
        raise ValueError("no grid cell produced a scorable clustering")
    best_cell, best_labels = min(
        scored, key=lambda cl: (-cl[0].dbcv, cl[0].min_cluster_size, cl[0].min_samples)
    )
    model = TopicModel(
        labels=best_labels,
        min_samples=best_cell.min_samples,
        min_cluster_size=best_cell.min_cluster_size,
        dbcv=best_cell.dbcv,
        topic_count=best_cell.topic_count,
    )
    return TuneResult(model=model, report=report)
