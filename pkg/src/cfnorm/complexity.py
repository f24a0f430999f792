"""Classifier-independent measures of class-boundary complexity (Euclidean geometry)."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


class ComplexityError(ValueError):
    pass


def _prepare(points, labels, standardize: bool = False, min_per_class: int = 1):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels)
    if len(x) != len(y):
        raise ComplexityError("points and labels differ in length")
    if not np.isfinite(x).all():
        raise ComplexityError("non-finite coordinates")
    classes = np.unique(y)
    if len(classes) != 2:
        raise ComplexityError(f"expected two classes, found {len(classes)}")
    counts = [(y == c).sum() for c in classes]
    if min(counts) < min_per_class:
        raise ComplexityError(f"each class needs at least {min_per_class} points")
    if standardize:
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        x = (x - x.mean(axis=0)) / sd
    return x, y == classes[1]


def max_fisher_ratio(points, labels, standardize: bool = False) -> float:
    """max over features of (mu1 - mu2)^2 / (var1 + var2), sample variances."""
    x, pos = _prepare(points, labels, standardize, min_per_class=2)
    a, b = x[~pos], x[pos]
    gap = (a.mean(axis=0) - b.mean(axis=0)) ** 2
    spread = a.var(axis=0, ddof=1) + b.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(spread > 0, gap / np.where(spread > 0, spread, 1.0), np.where(gap > 0, np.inf, 0.0))
    return float(ratio.max())


def minimum_spanning_tree(points) -> list[tuple[int, int, float]]:
    """Dense Prim on Euclidean distances.

    Ties: the lowest-index vertex joins first, and a vertex keeps the
    earliest tree vertex that reached its current key.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        raise ComplexityError("MST needs at least two points")
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    key = np.sqrt(((x - x[0]) ** 2).sum(axis=1))
    parent = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        masked = np.where(in_tree, np.inf, key)
        v = int(np.argmin(masked))  # argmin returns the first minimum
        edges.append((int(parent[v]), v, float(key[v])))
        in_tree[v] = True
        d = np.sqrt(((x - x[v]) ** 2).sum(axis=1))
        better = (d < key) & ~in_tree
        key[better] = d[better]
        parent[better] = v
    return edges


def mst_boundary_fraction(points, labels, standardize: bool = False) -> float:
    """Share of points touching an MST edge that joins the two classes."""
    x, pos = _prepare(points, labels, standardize)
    boundary = np.zeros(len(x), dtype=bool)
    for a, b, _ in minimum_spanning_tree(x):
        if pos[a] != pos[b]:
            boundary[a] = boundary[b] = True
    return float(boundary.mean())


def nn_distance_ratio(points, labels, standardize: bool = False) -> float:
    """Mean nearest same-class distance over mean nearest other-class distance."""
    x, pos = _prepare(points, labels, standardize, min_per_class=2)
    intra = np.empty(len(x))
    inter = np.empty(len(x))
    for cls in (False, True):
        own = x[pos == cls]
        other = x[pos != cls]
        d_own = cdist(own, own)
        np.fill_diagonal(d_own, np.inf)
        intra[pos == cls] = d_own.min(axis=1)
        inter[pos == cls] = cdist(own, other).min(axis=1)
    return float(intra.mean() / inter.mean())


def metrics_row(points, labels, standardize: bool = False) -> dict[str, float]:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return {
        "fisher": max_fisher_ratio(x, labels, standardize),
        "mst": mst_boundary_fraction(x, labels, standardize),
        "distance_ratio": nn_distance_ratio(x, labels, standardize),
        "n": len(x),
        "d": x.shape[1],
    }
