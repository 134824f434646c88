import itertools

import numpy as np
import pytest

from iic import evalmap
from iic.evalmap import EvalMap


def brute_best_permutation_total(counts):
    k = counts.shape[0]
    return max(sum(counts[c, p[c]] for c in range(k)) for p in itertools.permutations(range(k)))


def brute_best_total_map(counts):
    k, k_gt = counts.shape
    return max(sum(counts[c, m[c]] for c in range(k)) for m in itertools.product(range(k_gt), repeat=k))


def test_confusion_matrix_counts():
    counts = evalmap.confusion_matrix([0, 1, 1, 2, 2, 2], [0, 0, 1, 1, 1, 0], 3, 2)
    np.testing.assert_array_equal(counts, [[1, 0], [1, 1], [1, 2]])
    with pytest.raises(ValueError):
        evalmap.confusion_matrix([0, 3], [0, 0], 3, 2)
    with pytest.raises(ValueError):
        evalmap.confusion_matrix([0, 1], [0, -1], 3, 2)


def test_hungarian_identity_and_swap():
    m = evalmap.hungarian_match(np.diag([5, 7, 9]) + 1)
    np.testing.assert_array_equal(m.map, [0, 1, 2])
    counts = np.array([[0, 10], [10, 0]])
    m = evalmap.hungarian_match(counts)
    np.testing.assert_array_equal(m.map, [1, 0])
    assert evalmap.matched_total(counts, m) == 20


def test_hungarian_matches_factorial_bruteforce():
    rng = np.random.default_rng(0)
    for k in range(1, 7):
        for _ in range(15):
            counts = rng.integers(0, 50, (k, k))
            m = evalmap.hungarian_match(counts)
            assert sorted(m.map.tolist()) == list(range(k))
            assert evalmap.matched_total(counts, m) == brute_best_permutation_total(counts)


def test_hungarian_with_ties_is_deterministic_and_optimal():
    counts = np.ones((4, 4), dtype=int)
    a = evalmap.hungarian_match(counts).map
    b = evalmap.hungarian_match(counts.copy()).map
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, [0, 1, 2, 3])


def test_hungarian_requires_square():
    with pytest.raises(ValueError):
        evalmap.hungarian_match(np.ones((2, 3)))


def test_linear_assignment_float_costs():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    cols = evalmap.linear_assignment(cost)
    best = min(sum(cost[r, p[r]] for r in range(3)) for p in itertools.permutations(range(3)))
    assert cost[np.arange(3), cols].sum() == best


def test_majority_map_stated_cases():
    np.testing.assert_array_equal(evalmap.majority_map(np.diag([3, 4, 5])).map, [0, 1, 2])
    counts = np.array([[9, 1], [2, 8], [5, 5], [0, 0]])
    np.testing.assert_array_equal(evalmap.majority_map(counts).map, [0, 1, 0, 0])


def test_majority_map_is_exhaustively_optimal():
    rng = np.random.default_rng(1)
    for _ in range(60):
        k_gt = int(rng.integers(1, 4))
        k = int(rng.integers(k_gt, 5))
        counts = rng.integers(0, 20, (k, k_gt))
        m = evalmap.majority_map(counts)
        assert evalmap.matched_total(counts, m) == brute_best_total_map(counts)


def test_accuracy_cases():
    truths = np.array([0, 1, 2, 1])
    ident = EvalMap("permutation", np.arange(3))
    assert evalmap.accuracy(truths, truths, ident) == 1.0
    rng = np.random.default_rng(2)
    n = 10_000
    t = np.arange(n) % 3
    p = rng.integers(0, 3, n)
    assert abs(evalmap.accuracy(p, t, ident) - 1 / 3) <= 0.03
    with pytest.raises(ValueError):
        evalmap.accuracy([], [], ident)
    with pytest.raises(ValueError):
        evalmap.accuracy([0, 5], [0, 1], ident)


def test_map_kind_validated():
    with pytest.raises(ValueError):
        EvalMap("fuzzy", np.arange(2))


def test_select_subhead():
    assert evalmap.select_subhead([-0.5, -0.7, -0.6]) == 1
    assert evalmap.select_subhead([0.3]) == 0
    assert evalmap.select_subhead([-1.0, -1.0]) == 0
    with pytest.raises(ValueError):
        evalmap.select_subhead([-1.0, float("nan")])
    with pytest.raises(ValueError):
        evalmap.select_subhead([])
