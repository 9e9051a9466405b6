"""Compiled CART kernels used by the random forest.

Trees are stored as flat parallel arrays (feature, threshold, left, right,
value). A leaf has ``feature == -1``. ``value`` holds class frequencies for
classification trees and the leaf mean (one column) for regression trees.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _best_split_cls(X, y, idx, start, end, features, n_try, n_classes, min_leaf, order_buf, vals_buf):
    n = end - start
    total = np.zeros(n_classes)
    for i in range(start, end):
        total[y[idx[i]]] += 1.0
    parent = 0.0
    for c in range(n_classes):
        parent += total[c] * total[c]
    parent /= n
    best_gain = 1e-12
    best_f = -1
    best_thr = 0.0
    left = np.zeros(n_classes)
    visited = 0
    for fi in range(features.shape[0]):
        if visited >= n_try:
            break
        f = features[fi]
        for i in range(n):
            vals_buf[i] = X[idx[start + i], f]
        if vals_buf[:n].min() == vals_buf[:n].max():
            continue
        visited += 1
        order = np.argsort(vals_buf[:n], kind="mergesort")
        for i in range(n):
            order_buf[i] = order[i]
        left[:] = 0.0
        for i in range(n - 1):
            j = order_buf[i]
            left[y[idx[start + j]]] += 1.0
            nl = i + 1
            nr = n - nl
            v = vals_buf[j]
            v_next = vals_buf[order_buf[i + 1]]
            if v == v_next or nl < min_leaf or nr < min_leaf:
                continue
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                sl += left[c] * left[c]
                r = total[c] - left[c]
                sr += r * r
            gain = sl / nl + sr / nr - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                thr = 0.5 * (v + v_next)
                if thr == v_next:
                    thr = v
                best_thr = thr
    return best_f, best_thr


@njit(cache=True)
def _best_split_reg(X, y, idx, start, end, features, n_try, min_leaf, order_buf, vals_buf):
    n = end - start
    total = 0.0
    for i in range(start, end):
        total += y[idx[i]]
    parent = total * total / n
    # gains below this are float noise, not a real variance reduction
    best_gain = 1e-10 * (abs(parent) + 1.0)
    best_f = -1
    best_thr = 0.0
    visited = 0
    for fi in range(features.shape[0]):
        if visited >= n_try:
            break
        f = features[fi]
        for i in range(n):
            vals_buf[i] = X[idx[start + i], f]
        if vals_buf[:n].min() == vals_buf[:n].max():
            continue
        visited += 1
        order = np.argsort(vals_buf[:n], kind="mergesort")
        for i in range(n):
            order_buf[i] = order[i]
        sl = 0.0
        for i in range(n - 1):
            j = order_buf[i]
            sl += y[idx[start + j]]
            nl = i + 1
            nr = n - nl
            v = vals_buf[j]
            v_next = vals_buf[order_buf[i + 1]]
            if v == v_next or nl < min_leaf or nr < min_leaf:
                continue
            sr = total - sl
            gain = sl * sl / nl + sr * sr / nr - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                thr = 0.5 * (v + v_next)
                if thr == v_next:
                    thr = v
                best_thr = thr
    return best_f, best_thr


@njit(cache=True)
def build_tree(X, y_cls, y_reg, sample_idx, classification, n_classes, n_try,
               min_split, min_leaf, max_depth, seed):
    """Grow one tree on the rows ``sample_idx`` (duplicates allowed)."""
    np.random.seed(seed)
    n = sample_idx.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    n_out = n_classes if classification else 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_out))
    idx = sample_idx.copy()
    order_buf = np.empty(n, dtype=np.int64)
    vals_buf = np.empty(n)
    tmp = np.empty(n, dtype=np.int64)
    feats = np.arange(p)

    # stack entries: node id, start, end, depth
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start

        pure = True
        if classification:
            for i in range(start, end):
                value[node, y_cls[idx[i]]] += 1.0
                if y_cls[idx[i]] != y_cls[idx[start]]:
                    pure = False
            for c in range(n_classes):
                value[node, c] /= m
        else:
            s = 0.0
            for i in range(start, end):
                s += y_reg[idx[i]]
                if y_reg[idx[i]] != y_reg[idx[start]]:
                    pure = False
            value[node, 0] = s / m

        if pure or m < min_split or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        # random feature order, Fisher-Yates
        for i in range(p - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            t = feats[i]
            feats[i] = feats[j]
            feats[j] = t
        if classification:
            f, thr = _best_split_cls(X, y_cls, idx, start, end, feats, n_try, n_classes,
                                     min_leaf, order_buf, vals_buf)
        else:
            f, thr = _best_split_reg(X, y_reg, idx, start, end, feats, n_try,
                                     min_leaf, order_buf, vals_buf)
        if f < 0:
            continue

        lo = start
        hi = 0
        for i in range(start, end):
            r = idx[i]
            if X[r, f] <= thr:
                idx[lo] = r
                lo += 1
            else:
                tmp[hi] = r
                hi += 1
        for i in range(hi):
            idx[lo + i] = tmp[i]

        feature[node] = f
        threshold[node] = thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        stack[top, 0] = rnode
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True)
def predict_forest(X, offsets, feature, threshold, left, right, value):
    """Average the leaf values of every tree for each row of ``X``."""
    m = X.shape[0]
    n_trees = offsets.shape[0] - 1
    n_out = value.shape[1]
    out = np.zeros((m, n_out))
    for t in range(n_trees):
        base = offsets[t]
        for i in range(m):
            node = 0
            while feature[base + node] != LEAF:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            for c in range(n_out):
                out[i, c] += value[base + node, c]
    for i in range(m):
        for c in range(n_out):
            out[i, c] /= n_trees
    return out
