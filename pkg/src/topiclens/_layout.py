"""Numba kernel for the layout optimizer.

Kept in its own module so the compiled artifact caches to disk and the main
reducer module stays importable without triggering compilation.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_U13 = np.uint64(13)
_U7 = np.uint64(7)
_U17 = np.uint64(17)


@njit(cache=True)
def _next_rand(state):
    x = state[0]
    x ^= x << _U13
    x ^= x >> _U7
    x ^= x << _U17
    state[0] = x
    return x


@njit(cache=True)
def optimize_epochs(
    Y,
    head,
    tail,
    epochs_per_sample,
    a,
    b,
    n_epochs,
    neg_samples,
    initial_alpha,
    repulsion,
    state,
):
    """Sequential SGD over the edge list: attraction per scheduled edge plus
    ``neg_samples`` random repulsions. Single-threaded on purpose so a fixed
    seed reproduces the layout bitwise."""
    n_vertices = Y.shape[0]
    dim = Y.shape[1]
    n_edges = head.shape[0]
    clip = 4.0
    epoch_of_next = epochs_per_sample.copy()
    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for k in range(dim):
                diff = Y[i, k] - Y[j, k]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (1.0 + a * d2**b)
                for k in range(dim):
                    g = coeff * (Y[i, k] - Y[j, k])
                    if g > clip:
                        g = clip
                    elif g < -clip:
                        g = -clip
                    Y[i, k] += alpha * g
                    Y[j, k] -= alpha * g
            for _ in range(neg_samples):
                r = _next_rand(state)
                jn = np.int64(r % np.uint64(n_vertices))
                if jn == i:
                    continue
                d2 = 0.0
                for k in range(dim):
                    diff = Y[i, k] - Y[jn, k]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = (2.0 * repulsion * b) / ((0.001 + d2) * (1.0 + a * d2**b))
                    for k in range(dim):
                        g = coeff * (Y[i, k] - Y[jn, k])
                        if g > clip:
                            g = clip
                        elif g < -clip:
                            g = -clip
                        Y[i, k] += alpha * g
                else:
                    for k in range(dim):
                        Y[i, k] += alpha * clip
            epoch_of_next[e] += epochs_per_sample[e]
    return Y
