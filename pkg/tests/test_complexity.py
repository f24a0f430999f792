import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist, squareform

from cfnorm.complexity import (
    ComplexityError,
    max_fisher_ratio,
    metrics_row,
    minimum_spanning_tree,
    mst_boundary_fraction,
    nn_distance_ratio,
)


def kruskal_weight(points):
    d = squareform(pdist(points))
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    total = 0.0
    for w, i, j in sorted((d[i, j], i, j) for i in range(n) for j in range(i + 1, n)):
        a, b = find(i), find(j)
        if a != b:
            parent[a] = b
            total += w
    return total


def random_labeled(seed, n=40, d=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    y[2:4] = [0, 1]
    return x, y


# ---------------------------------------------------------------- hand examples

def test_fisher_examples():
    assert max_fisher_ratio([0, 2, 4, 6], [0, 0, 1, 1]) == 4.0
    assert max_fisher_ratio([0, 2, 0, 2], [0, 0, 1, 1]) == 0.0
    assert max_fisher_ratio([[1, 0], [1, 1], [3, 5], [3, 9]], [0, 0, 1, 1]) == np.inf
    with pytest.raises(ComplexityError):
        max_fisher_ratio([0, 1, 2], [0, 1, 1])


def test_fisher_takes_max_over_features():
    x = np.array([[0, 0], [2, 0.1], [4, 10], [6, 10.1]])
    assert max_fisher_ratio(x, [0, 0, 1, 1]) == pytest.approx(100 / 0.01)


def test_mst_examples():
    clusters = [[0, 0], [0, 0.1], [10, 0], [10, 0.1]]
    assert mst_boundary_fraction(clusters, [0, 0, 1, 1]) == 0.5
    assert mst_boundary_fraction([0, 1, 2, 3], [0, 1, 0, 1]) == 1.0
    assert mst_boundary_fraction([0, 0, 0, 5], [0, 1, 1, 1]) > 0
    with pytest.raises(ComplexityError):
        mst_boundary_fraction([[0.0]], [0])


def test_mst_tie_break_is_lowest_index():
    # unit square, all sides tie: 1 joins before 3, and 3 keeps its first parent 0
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    edges = minimum_spanning_tree(square)
    assert [(a, b) for a, b, _ in edges] == [(0, 1), (1, 2), (0, 3)]


def test_distance_ratio_examples():
    assert nn_distance_ratio([0, 1, 10, 11], [0, 0, 1, 1]) == pytest.approx(1 / 9.5)
    assert nn_distance_ratio([0, 0, 5, 5], [0, 0, 1, 1]) == 0.0
    with pytest.raises(ComplexityError):
        nn_distance_ratio([0, 1, 2], [0, 0, 1])


def test_input_faults():
    with pytest.raises(ComplexityError):
        metrics_row([0, 1, np.nan, 3], [0, 0, 1, 1])
    with pytest.raises(ComplexityError):
        metrics_row([0, 1, 2, 3], [0, 0, 0, 0])
    with pytest.raises(ComplexityError):
        metrics_row([0, 1, 2], [0, 1])


def test_metrics_row_keys():
    row = metrics_row(*random_labeled(0))
    assert list(row) == ["fisher", "mst", "distance_ratio", "n", "d"]
    assert row["n"] == 40 and row["d"] == 2


# ---------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 50), st.integers(1, 3))
def test_mst_weight_matches_kruskal(seed, n, d):
    x = np.random.default_rng(seed).normal(size=(n, d))
    edges = minimum_spanning_tree(x)
    assert len(edges) == n - 1
    assert sum(w for *_, w in edges) == pytest.approx(kruskal_weight(x), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 60))
def test_mst_fraction_lower_bound(seed, n):
    x, y = random_labeled(seed, n=n)
    assert mst_boundary_fraction(x, y) >= 2 / n


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
def test_rigid_motion_invariance(seed, angle):
    x, y = random_labeled(seed)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = x @ rot.T + [3.0, -7.0]
    assert mst_boundary_fraction(moved, y) == mst_boundary_fraction(x, y)
    assert nn_distance_ratio(moved, y) == pytest.approx(nn_distance_ratio(x, y), rel=1e-9)
    # Fisher is per-feature, so only translations are exact invariances
    assert max_fisher_ratio(x + [3.0, -7.0], y) == pytest.approx(max_fisher_ratio(x, y), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50).filter(lambda s: abs(s) > 1e-3), st.floats(-10, 10))
def test_fisher_affine_invariance(seed, scale, shift):
    x, y = random_labeled(seed)
    assert max_fisher_ratio(x * scale + shift, y) == pytest.approx(max_fisher_ratio(x, y), rel=1e-9)


def test_standardize_flag_changes_only_scale():
    x, y = random_labeled(3)
    x = x * [1.0, 100.0]
    assert max_fisher_ratio(x, y, standardize=True) == pytest.approx(max_fisher_ratio(x, y))
    assert nn_distance_ratio(x, y, standardize=True) != nn_distance_ratio(x, y)
