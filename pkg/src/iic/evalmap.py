"""Cluster-to-class maps and accuracy for evaluating unsupervised clusterers."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalMap:
    kind: str  # "permutation" or "many_to_one"
    map: np.ndarray

    def __post_init__(self):
        if self.kind not in ("permutation", "many_to_one"):
            raise ValueError(f"unknown map kind {self.kind!r}")

    def apply(self, predictions):
        return self.map[np.asarray(predictions)]


def confusion_matrix(predictions, truths, k, k_gt):
    """counts[c, g] = number of items predicted c with ground truth g."""
    predictions = np.asarray(predictions).ravel()
    truths = np.asarray(truths).ravel()
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    _check_range(predictions, k, "prediction")
    _check_range(truths, k_gt, "ground-truth label")
    counts = np.zeros((k, k_gt), dtype=np.int64)
    np.add.at(counts, (predictions, truths), 1)
    return counts


def _check_range(labels, k, what):
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"{what} out of range [0, {k})")


def linear_assignment(cost):
    """Minimum-cost perfect assignment on a square matrix, O(k^3).

    Shortest augmenting paths with row/column potentials; rows are inserted in
    index order and the first minimum is always taken, so ties resolve the
    same way on every machine. Returns ``col_of_row``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    k = cost.shape[0]
    u = np.zeros(k + 1)
    v = np.zeros(k + 1)
    row_of_col = np.zeros(k + 1, dtype=np.int64)  # 1-based, 0 = free
    way = np.zeros(k + 1, dtype=np.int64)
    for i in range(1, k + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(k + 1, np.inf)
        used = np.zeros(k + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta, j1 = np.inf, 0
            for j in range(1, k + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(k + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.zeros(k, dtype=np.int64)
    for j in range(1, k + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def hungarian_match(counts):
    """Permutation of predicted clusters onto classes maximizing matched counts."""
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ValueError(f"one-to-one matching needs a square matrix, got {counts.shape}")
    if counts.shape[0] < 1:
        raise ValueError("empty confusion matrix")
    return EvalMap("permutation", linear_assignment(-counts))


def majority_map(counts):
    """Send each predicted cluster to its most frequent class (ties and empty rows: lowest index)."""
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise ValueError(f"expected a k x k_gt matrix, got {counts.shape}")
    # argmax returns the first maximum, and 0 for all-zero rows
    return EvalMap("many_to_one", counts.argmax(axis=1).astype(np.int64))


def matched_total(counts, emap):
    counts = np.asarray(counts)
    return int(counts[np.arange(counts.shape[0]), emap.map].sum())


def accuracy(predictions, truths, emap):
    predictions = np.asarray(predictions).ravel()
    truths = np.asarray(truths).ravel()
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    if predictions.size == 0:
        raise ValueError("no samples to evaluate")
    _check_range(predictions, len(emap.map), "prediction")
    return float(np.mean(emap.apply(predictions) == truths))


def select_subhead(losses):
    """Index of the lowest loss; ties go to the lowest index."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("no sub-head losses given")
    if np.any(np.isnan(losses)):
        raise ValueError("NaN sub-head loss")
    return int(np.argmin(losses))
