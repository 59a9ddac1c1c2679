"""Naive reference clustering used as the oracle in equivalence tests.

Everything is computed straight from the definitions with plain Python data
structures: brute-force mutual reachability, Kruskal over the complete edge
list (ties broken by the canonical (weight, u, v) order, matching the
production convention), recursive condensation, literal stability sums, and
recursive excess-of-mass selection. No shared code with the package
implementation.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def _mutual_reachability_edges(X: np.ndarray, min_samples: int):
    n = len(X)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            delta = X[i] - X[j]
            D[i, j] = np.sqrt((delta * delta).sum())
    core = [sorted(D[i])[min_samples] for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            edges.append((max(D[i, j], core[i], core[j]), i, j))
    edges.sort()
    return edges


def _kruskal_dendrogram(edges, n):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    trees = {i: {"leaf": i, "size": 1} for i in range(n)}
    merges = 0
    for w, i, j in edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        node = {
            "w": w,
            "left": trees[ri],
            "right": trees[rj],
            "size": trees[ri]["size"] + trees[rj]["size"],
        }
        parent[ri] = rj
        trees[rj] = node
        merges += 1
        if merges == n - 1:
            break
    return trees[find(0)]


def _subtree_points(node):
    if "leaf" in node:
        return [node["leaf"]]
    return _subtree_points(node["left"]) + _subtree_points(node["right"])


def _condense(root, min_cluster_size):
    counter = itertools.count()
    clusters = []

    def new_cluster(birth):
        c = {"id": next(counter), "birth": birth, "children": [], "points": []}
        clusters.append(c)
        return c

    def walk(node, cluster):
        if "leaf" in node:
            return
        lam = 1.0 / node["w"] if node["w"] > 0 else math.inf
        left, right = node["left"], node["right"]
        big_left = left["size"] >= min_cluster_size
        big_right = right["size"] >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                sub = new_cluster(lam)
                cluster["children"].append((sub["id"], lam, child["size"]))
                walk(child, sub)
        elif big_left or big_right:
            keep, drop = (left, right) if big_left else (right, left)
            for p in _subtree_points(drop):
                cluster["points"].append((p, lam))
            walk(keep, cluster)
        else:
            for p in _subtree_points(left) + _subtree_points(right):
                cluster["points"].append((p, lam))

    root_cluster = new_cluster(0.0)
    walk(root, root_cluster)
    return clusters


def _stability(cluster):
    s = sum(lam - cluster["birth"] for _, lam in cluster["points"])
    s += sum(size * (lam - cluster["birth"]) for _, lam, size in cluster["children"])
    return s


def _select_eom(clusters):
    by_id = {c["id"]: c for c in clusters}
    selected = set()

    def deselect_descendants(cid):
        for child_id, _, _ in by_id[cid]["children"]:
            selected.discard(child_id)
            deselect_descendants(child_id)

    def visit(cid):
        c = by_id[cid]
        child_ids = [k for k, _, _ in c["children"]]
        if not child_ids:
            selected.add(cid)
            return _stability(c)
        subtree = sum(visit(k) for k in child_ids)
        if _stability(c) >= subtree:
            deselect_descendants(cid)
            selected.add(cid)
            return _stability(c)
        return subtree

    for child_id, _, _ in clusters[0]["children"]:
        visit(child_id)
    return selected


def naive_hdbscan(X: np.ndarray, min_samples: int, min_cluster_size: int) -> np.ndarray:
    """Labels per the direct definition; -1 is noise."""
    n = len(X)
    edges = _mutual_reachability_edges(X, min_samples)
    root = _kruskal_dendrogram(edges, n)
    clusters = _condense(root, min_cluster_size)
    selected = _select_eom(clusters)
    parent_of = {}
    for c in clusters:
        for child_id, _, _ in c["children"]:
            parent_of[child_id] = c["id"]
    label_of = {cid: i for i, cid in enumerate(sorted(selected))}
    labels = np.full(n, -1, dtype=np.int64)
    for c in clusters:
        cur = c["id"]
        label = -1
        while True:
            if cur in selected:
                label = label_of[cur]
                break
            if cur not in parent_of:
                break
            cur = parent_of[cur]
        for p, _ in c["points"]:
            labels[p] = label
    return labels


def rand_index(a, b) -> float:
    """Unadjusted Rand index; noise labels count as their own group."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    cont = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(cont, (ai, bi), 1)

    def comb2(x):
        return (x * (x - 1) // 2).sum()

    agree_same = comb2(cont)
    sum_a = comb2(cont.sum(axis=1))
    sum_b = comb2(cont.sum(axis=0))
    total = n * (n - 1) // 2
    return (total + 2 * agree_same - sum_a - sum_b) / total
