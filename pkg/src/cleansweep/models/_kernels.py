"""Exact greedy tree growing on presorted columns (numba kernels).

Both the entropy classification tree and the squared-error regression trees
used for boosting are grown by :func:`grow_tree`. Candidate thresholds are the
midpoints between consecutive distinct values; a sample goes left when
``x <= threshold``. Ties in gain keep the first candidate seen, i.e. the lowest
feature index and then the lowest threshold.

Each feature keeps three parallel rows (row ids, values, targets) in ascending
value order. A node owns the same ``[start, end)`` slice of every row, and a
split stably partitions that slice so both children stay sorted.
"""

import numpy as np
from numba import njit

ENTROPY = 0
SQUARED_ERROR = 1

MIN_GAIN = 1e-12
LEAF = -1


@njit(cache=True)
def binary_entropy(p):
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))


@njit(cache=True)
def _node_stats(ids, start, end, target, hess, criterion):
    n = end - start
    s = 0.0
    s2 = 0.0
    h = 0.0
    for i in range(start, end):
        idx = ids[i]
        t = target[idx]
        s += t
        s2 += t * t
        h += hess[idx]
    if criterion == ENTROPY:
        impurity = binary_entropy(s / n)
        value = s / n
    else:
        mean = s / n
        impurity = max(s2 / n - mean * mean, 0.0)
        value = s / h if h > 1e-12 else 0.0
    return s, impurity, value


@njit(cache=True)
def _best_split(vals, tgts, start, end, total, impurity, criterion, min_leaf):
    n = end - start
    best_gain = MIN_GAIN
    best_feature = -1
    best_pos = -1
    best_threshold = 0.0
    for f in range(vals.shape[0]):
        v = vals[f]
        t = tgts[f]
        left_sum = 0.0
        for i in range(start, end - 1):
            left_sum += t[i]
            n_left = i - start + 1
            if n_left < min_leaf:
                continue
            n_right = n - n_left
            if n_right < min_leaf:
                break
            if v[i + 1] <= v[i]:
                continue
            right_sum = total - left_sum
            if criterion == ENTROPY:
                gain = (
                    impurity
                    - (n_left / n) * binary_entropy(left_sum / n_left)
                    - (n_right / n) * binary_entropy(right_sum / n_right)
                )
            else:
                gain = (
                    left_sum * left_sum / n_left
                    + right_sum * right_sum / n_right
                    - total * total / n
                ) / n
            if gain > best_gain:
                best_gain = gain
                best_feature = f
                best_pos = i
                threshold = 0.5 * (v[i] + v[i + 1])
                if threshold >= v[i + 1]:
                    threshold = v[i]
                best_threshold = threshold
    return best_feature, best_pos, best_threshold, best_gain


@njit(cache=True)
def _partition(ids, vals, tgts, start, end, goes_left, s_id, s_val, s_tgt):
    for f in range(ids.shape[0]):
        o = ids[f]
        v = vals[f]
        t = tgts[f]
        j = start
        k = 0
        for i in range(start, end):
            idx = o[i]
            if goes_left[idx]:
                o[j] = idx
                v[j] = v[i]
                t[j] = t[i]
                j += 1
            else:
                s_id[k] = idx
                s_val[k] = v[i]
                s_tgt[k] = t[i]
                k += 1
        for i in range(k):
            o[j + i] = s_id[i]
            v[j + i] = s_val[i]
            t[j + i] = s_tgt[i]


@njit(cache=True)
def grow_tree(ids, vals, target, hess, n_rows, criterion, max_depth, min_leaf):
    """Grow one tree over the samples listed in ``ids``.

    ``ids`` (n_features, m) holds row indices sorted by each feature and
    ``vals`` the matching feature values; both are reordered in place.
    ``target`` and ``hess`` are indexed by row id (``n_rows`` long).
    Returns node arrays (feature, threshold, left, right, value, n_samples,
    impurity) in pre-order.
    """
    n_features, m = ids.shape
    cap = 2 * m - 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)
    impurity = np.zeros(cap)

    tgts = np.empty((n_features, m))
    for f in range(n_features):
        for i in range(m):
            tgts[f, i] = target[ids[f, i]]
    goes_left = np.zeros(n_rows, dtype=np.bool_)
    s_id = np.empty(m, dtype=ids.dtype)
    s_val = np.empty(m)
    s_tgt = np.empty(m)

    # stack rows: node id, start, end, depth, row holding this node's samples
    stack = np.empty((cap, 5), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    stack[0, 4] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        total, imp, val = _node_stats(ids[stack[top, 4]], start, end, target, hess, criterion)
        n_samples[node] = end - start
        impurity[node] = imp
        value[node] = val
        if depth >= max_depth or end - start < 2 * min_leaf or imp <= 0.0:
            continue
        f, pos, thr, gain = _best_split(vals, tgts, start, end, total, imp, criterion, min_leaf)
        if f < 0:
            continue
        mid = pos + 1
        stat_row = f
        # children at max depth are never split, so their slices only need to
        # be correct in the split feature's row
        if depth + 1 < max_depth:
            row = ids[f]
            for i in range(start, end):
                goes_left[row[i]] = i < mid
            _partition(ids, vals, tgts, start, end, goes_left, s_id, s_val, s_tgt)
            stat_row = 0
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # right first so the left subtree is numbered next (pre-order)
        stack[top, 0] = right[node]
        stack[top, 1] = mid
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        stack[top, 4] = stat_row
        stack[top + 1, 0] = left[node]
        stack[top + 1, 1] = start
        stack[top + 1, 2] = mid
        stack[top + 1, 3] = depth + 1
        stack[top + 1, 4] = stat_row
        top += 2
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        n_samples[:n_nodes],
        impurity[:n_nodes],
    )


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while left[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


class Presorted:
    """Column orders of a fixed feature matrix, reusable across boosting rounds."""

    def __init__(self, X: np.ndarray):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.ids = np.ascontiguousarray(np.argsort(self.X, axis=0, kind="stable").T).astype(np.int64)
        self.vals = np.take_along_axis(self.X.T, self.ids, axis=1)

    def copies(self, keep: np.ndarray | None = None):
        """Fresh (ids, vals) buffers, optionally restricted to rows where ``keep`` is true."""
        if keep is None:
            return self.ids.copy(), self.vals.copy()
        sel = keep[self.ids]
        m = int(keep.sum())
        shape = (self.ids.shape[0], m)
        return self.ids[sel].reshape(shape), self.vals[sel].reshape(shape)
