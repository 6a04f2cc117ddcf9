"""Array kernels for growing and evaluating randomized decision trees.

Compiled with numba when it is importable; otherwise the same functions run
as plain Python (slow but identical). All randomness flows through a
numpy Generator passed in by the caller, and numba operates on the same
bit-generator state as interpreted numpy, so compiled and interpreted
execution consume the stream identically and build identical trees.

Trees are stored in flat parallel arrays. ``node_feature[i] == LEAF`` marks
a leaf; otherwise rows with x[feature] <= threshold go left. Node ids are
assigned in order of allocation (root 0, children allocated at split time),
which fixes the serialized form.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func
        return wrap

LEAF = -1


def max_nodes_for_depth(max_depth: int) -> int:
    return 2 ** (max_depth + 1)


@njit(cache=True)
def grow_tree(x, y, gen, k_attributes, max_depth, min_split, use_bootstrap,
              node_feature, node_threshold, node_left, node_right,
              node_p_nonpro, node_p_pro, importance):
    """Grow one totally randomized tree; returns the number of nodes used.

    Stream consumption order per tree: one bootstrap index array (when
    enabled), then per node in DFS order a full feature shuffle followed by
    one uniform threshold per evaluated candidate.
    """
    n, d = x.shape
    if use_bootstrap:
        idx = gen.integers(0, n, size=n)
    else:
        idx = np.arange(n)

    perm = np.empty(d, dtype=np.int64)
    # stack rows: (segment start, segment end, node id, depth)
    stack = np.empty((node_feature.size, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = 0
    top = 1
    next_node = 1

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        node = stack[top, 2]
        depth = stack[top, 3]
        m = end - start

        npos = 0
        for i in range(start, end):
            npos += y[idx[i]]
        p1 = npos / m
        p0 = 1.0 - p1
        gini_parent = 1.0 - p0 * p0 - p1 * p1

        can_split = depth < max_depth and m >= min_split and 0 < npos < m
        best_dec = -1.0
        best_f = -1
        best_thr = 0.0
        if can_split:
            for i in range(d):
                perm[i] = i
            for i in range(d - 1, 0, -1):
                j = gen.integers(0, i + 1)
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
            tried = 0
            for pi in range(d):
                if tried >= k_attributes:
                    break
                f = perm[pi]
                lo = x[idx[start], f]
                hi = lo
                for i in range(start + 1, end):
                    v = x[idx[i], f]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
                if lo == hi:
                    continue
                tried += 1
                thr = lo + gen.random() * (hi - lo)
                if thr <= lo:
                    thr = np.nextafter(lo, hi)
                if thr >= hi:
                    thr = np.nextafter(hi, lo)
                m_l = 0
                npos_l = 0
                for i in range(start, end):
                    if x[idx[i], f] <= thr:
                        m_l += 1
                        npos_l += y[idx[i]]
                m_r = m - m_l
                npos_r = npos - npos_l
                pl = npos_l / m_l
                gl = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
                pr = npos_r / m_r
                gr = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
                dec = gini_parent - (m_l / m) * gl - (m_r / m) * gr
                if dec > best_dec:
                    best_dec = dec
                    best_f = f
                    best_thr = thr

        if best_f < 0:
            node_feature[node] = LEAF
            node_threshold[node] = 0.0
            node_left[node] = LEAF
            node_right[node] = LEAF
            node_p_pro[node] = p1
            node_p_nonpro[node] = (m - npos) / m
            continue

        importance[best_f] += (m / n) * best_dec

        # in-place two-pointer partition of the segment around the threshold
        i = start
        j = end - 1
        while i <= j:
            if x[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        left_id = next_node
        right_id = next_node + 1
        next_node += 2
        node_feature[node] = best_f
        node_threshold[node] = best_thr
        node_left[node] = left_id
        node_right[node] = right_id
        node_p_pro[node] = p1
        node_p_nonpro[node] = (m - npos) / m

        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = right_id
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = left_id
        stack[top, 3] = depth + 1
        top += 1

    return next_node


@njit(cache=True)
def predict_ensemble(x, tree_offsets, node_feature, node_threshold,
                     node_left, node_right, node_p_pro):
    """Mean leaf PRO-probability across trees for every row of x."""
    n = x.shape[0]
    n_trees = tree_offsets.size - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = tree_offsets[t]
            while node_feature[node] != LEAF:
                if x[i, node_feature[node]] <= node_threshold[node]:
                    node = node_left[node]
                else:
                    node = node_right[node]
            acc += node_p_pro[node]
        out[i] = acc / n_trees
    return out
