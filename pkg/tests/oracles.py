"""Independent reference computations used by the tests.

Each oracle takes the slow, obvious route (grid search, explicit loops,
direct formula evaluation) so it shares no code with the library.
"""

from __future__ import annotations

import numpy as np


def simplex_grid(m: int, step: float) -> np.ndarray:
    """All points of the probability simplex in R^m on a lattice of spacing ``step``."""
    n = int(round(1.0 / step))
    if m == 1:
        return np.ones((1, 1))
    pts = []
    def rec(prefix, left):
        if len(prefix) == m - 1:
            pts.append(prefix + [left])
            return
        for i in range(left + 1):
            rec(prefix + [i], left - i)
    rec([], n)
    return np.array(pts, dtype=np.float64) / n


_GRID_CACHE: dict = {}


def grid_search_objective(a: np.ndarray, b: np.ndarray, step: float = 0.005) -> float:
    """Smallest ``0.5 * |A w - b|^2`` over a simplex lattice."""
    key = (a.shape[1], step)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = simplex_grid(a.shape[1], step)
    grid = _GRID_CACHE[key]
    r = a @ grid.T - b[:, None]
    return float(0.5 * np.min(np.einsum("ij,ij->j", r, r)))


def oracle_vector_loops(blocks: np.ndarray, truth) -> np.ndarray:
    """Uniform-vote oracle by explicit loops over points, labels and modalities."""
    k, l, m = blocks.shape
    b = np.zeros(k * l)
    for i in range(k):
        for mod in range(m):
            best = max(range(l), key=lambda j: (blocks[i, j, mod], -j))
            if best == truth[i]:
                b[i * l + truth[i]] += 1.0 / m
    return b


def adjust_formula(w, missing_idx):
    """Sequential trust redistribution written straight from the update rule."""
    w = [float(x) for x in w]
    for n in sorted(missing_idx):
        total, wn = sum(w), w[n]
        w = [0.0 if i == n else w[i] * (1.0 + abs(wn - w[i]) / total) for i in range(len(w))]
    s = sum(w)
    return [x / s for x in w]
