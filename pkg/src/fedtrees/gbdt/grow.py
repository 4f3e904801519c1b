"""Leaf-wise tree growth over binned features.

The growth loop always splits the frontier leaf with the largest gain,
where gain is the usual second-order reduction
``G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)`` scanned over histogram
bins. Ties break toward the lowest feature index, then the lowest bin, and
among frontier leaves toward the earliest-created one, so identical inputs
grow bit-identical trees.

The hot loops are JIT-compiled; per-node histograms use the classic trick
of building the smaller child directly and subtracting to get the larger.
Node gradient totals (and therefore leaf values) are always accumulated
directly over the node's rows, never by subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from fedtrees.dataset import SupervisedSet
from fedtrees.errors import DataError
from fedtrees.gbdt.binning import BinSpec, bin_matrix, build_histograms


@njit(cache=True)
def _scan_node(nd, hist_g, hist_h, hist_c, n_bins, node_g, node_h, count, min_data, lam,
               best_gain, best_feat, best_bin):
    f = hist_g.shape[1]
    total_g = node_g[nd]
    total_h = node_h[nd]
    total_c = count[nd]
    parent = total_g * total_g / (total_h + lam)
    bg = 0.0
    bf = -1
    bb = -1
    for j in range(f):
        gl = 0.0
        hl = 0.0
        cl = 0
        for b in range(n_bins[j] - 1):
            gl += hist_g[nd, j, b]
            hl += hist_h[nd, j, b]
            cl += hist_c[nd, j, b]
            if cl < min_data:
                continue
            if total_c - cl < min_data:
                break
            gr = total_g - gl
            hr = total_h - hl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > bg:
                bg = gain
                bf = j
                bb = b
    best_gain[nd] = bg
    best_feat[nd] = bf
    best_bin[nd] = bb


@njit(cache=True)
def _grow_kernel(binned, g, h, n_bins, num_leaves, max_depth, min_data, lam):
    n, f = binned.shape
    max_bins = 0
    for j in range(f):
        if n_bins[j] > max_bins:
            max_bins = n_bins[j]
    max_nodes = 2 * num_leaves - 1

    feat = np.full(max_nodes, -1, np.int32)
    sbin = np.full(max_nodes, -1, np.int32)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    depth = np.zeros(max_nodes, np.int32)
    count = np.zeros(max_nodes, np.int64)
    start = np.zeros(max_nodes, np.int64)
    end = np.zeros(max_nodes, np.int64)
    node_g = np.zeros(max_nodes, np.float64)
    node_h = np.zeros(max_nodes, np.float64)
    split_gain = np.zeros(max_nodes, np.float64)
    value = np.zeros(max_nodes, np.float64)

    hist_g = np.zeros((max_nodes, f, max_bins), np.float64)
    hist_h = np.zeros((max_nodes, f, max_bins), np.float64)
    hist_c = np.zeros((max_nodes, f, max_bins), np.int64)

    best_gain = np.zeros(max_nodes, np.float64)
    best_feat = np.full(max_nodes, -1, np.int32)
    best_bin = np.full(max_nodes, -1, np.int32)
    frontier = np.zeros(max_nodes, np.bool_)

    idx = np.empty(n, np.int64)
    for i in range(n):
        idx[i] = i
    scratch = np.empty(n, np.int64)

    start[0] = 0
    end[0] = n
    count[0] = n
    gs = 0.0
    hs = 0.0
    for i in range(n):
        gs += g[i]
        hs += h[i]
    node_g[0] = gs
    node_h[0] = hs
    for i in range(n):
        gi = g[i]
        hi = h[i]
        for j in range(f):
            b = binned[i, j]
            hist_g[0, j, b] += gi
            hist_h[0, j, b] += hi
            hist_c[0, j, b] += 1
    n_nodes = 1
    n_leaves_now = 1
    frontier[0] = True
    if n >= 2 * min_data:
        _scan_node(0, hist_g, hist_h, hist_c, n_bins, node_g, node_h, count,
                   min_data, lam, best_gain, best_feat, best_bin)

    while n_leaves_now < num_leaves:
        chosen = -1
        best = 0.0
        for nd in range(n_nodes):
            if frontier[nd] and best_gain[nd] > best:
                best = best_gain[nd]
                chosen = nd
        if chosen < 0:
            break

        j = best_feat[chosen]
        b = best_bin[chosen]
        s = start[chosen]
        e = end[chosen]
        nl = 0
        for i in range(s, e):
            if binned[idx[i], j] <= b:
                nl += 1
        li = 0
        ri = 0
        for i in range(s, e):
            row = idx[i]
            if binned[row, j] <= b:
                scratch[s + li] = row
                li += 1
            else:
                scratch[s + nl + ri] = row
                ri += 1
        for i in range(s, e):
            idx[i] = scratch[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feat[chosen] = j
        sbin[chosen] = b
        left[chosen] = lc
        right[chosen] = rc
        split_gain[chosen] = best_gain[chosen]
        frontier[chosen] = False
        n_leaves_now += 1

        start[lc] = s
        end[lc] = s + nl
        start[rc] = s + nl
        end[rc] = e
        depth[lc] = depth[chosen] + 1
        depth[rc] = depth[chosen] + 1
        count[lc] = nl
        count[rc] = e - s - nl

        for child in (lc, rc):
            cg = 0.0
            ch = 0.0
            for i in range(start[child], end[child]):
                row = idx[i]
                cg += g[row]
                ch += h[row]
            node_g[child] = cg
            node_h[child] = ch

        small = lc if count[lc] <= count[rc] else rc
        big = rc if small == lc else lc
        for i in range(start[small], end[small]):
            row = idx[i]
            gi = g[row]
            hi = h[row]
            for j2 in range(f):
                b2 = binned[row, j2]
                hist_g[small, j2, b2] += gi
                hist_h[small, j2, b2] += hi
                hist_c[small, j2, b2] += 1
        for j2 in range(f):
            for b2 in range(n_bins[j2]):
                hist_g[big, j2, b2] = hist_g[chosen, j2, b2] - hist_g[small, j2, b2]
                hist_h[big, j2, b2] = hist_h[chosen, j2, b2] - hist_h[small, j2, b2]
                hist_c[big, j2, b2] = hist_c[chosen, j2, b2] - hist_c[small, j2, b2]

        for child in (lc, rc):
            frontier[child] = True
            if depth[child] < max_depth and count[child] >= 2 * min_data:
                _scan_node(child, hist_g, hist_h, hist_c, n_bins, node_g, node_h, count,
                           min_data, lam, best_gain, best_feat, best_bin)

    for nd in range(n_nodes):
        if left[nd] < 0:
            value[nd] = -node_g[nd] / (node_h[nd] + lam)

    return (feat[:n_nodes].copy(), sbin[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), split_gain[:n_nodes].copy(),
            count[:n_nodes].copy(), depth[:n_nodes].copy())


@njit(cache=True)
def _apply_kernel(feature, threshold, left, right, value, X, out):
    for i in range(X.shape[0]):
        nd = 0
        while feature[nd] >= 0:
            if X[i, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]


@dataclass(frozen=True)
class DecisionTree:
    """A regression tree as flat node arrays; ``feature == -1`` marks leaves.

    Routing sends a row left when ``x[feature] <= threshold``. Thresholds
    are real values (bin-boundary midpoints), so a serialized tree routes
    identically without the training data's binning.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    count: np.ndarray
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def max_node_depth(self) -> int:
        return int(self.depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row of ``X`` (unscaled by any learning rate)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.float64)
        _apply_kernel(self.feature, self.threshold, self.left, self.right, self.value, X, out)
        return out


def grow_tree_binned(binned: np.ndarray, gradients: np.ndarray, hessians: np.ndarray,
                     bins: BinSpec, num_leaves: int, max_depth: int,
                     min_data_in_leaf: int, lambda_l2: float) -> DecisionTree:
    """Grow one tree on a pre-binned matrix (the batch trainer's fast path)."""
    feat, sbin, left, right, value, gain, count, depth = _grow_kernel(
        binned, gradients, hessians, bins.n_bins(),
        num_leaves, max_depth, min_data_in_leaf, lambda_l2,
    )
    threshold = np.zeros(feat.shape[0], dtype=np.float64)
    for nd in range(feat.shape[0]):
        if feat[nd] >= 0:
            threshold[nd] = bins.boundaries[feat[nd]][sbin[nd]]
    return DecisionTree(feature=feat, threshold=threshold, left=left, right=right,
                        value=value, gain=gain, count=count, depth=depth)


def grow_tree(gradients, hessians, train: SupervisedSet, params, bins: BinSpec | None = None) -> DecisionTree:
    """Grow one regression tree against the given gradient/hessian vectors."""
    gradients = np.ascontiguousarray(gradients, dtype=np.float64)
    hessians = np.ascontiguousarray(hessians, dtype=np.float64)
    if gradients.shape != (train.n_rows,) or hessians.shape != (train.n_rows,):
        raise DataError(
            f"gradient/hessian length mismatch: {gradients.shape[0]}/{hessians.shape[0]} "
            f"for {train.n_rows} rows"
        )
    if bins is None:
        bins = build_histograms(train, params.max_bins)
    binned = bin_matrix(train.features, bins)
    return grow_tree_binned(binned, gradients, hessians, bins,
                            params.num_leaves, params.max_depth,
                            params.min_data_in_leaf, params.lambda_l2)
