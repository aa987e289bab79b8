"""Flat array-backed decision trees and their growers.

Both growers share the node layout in :class:`FlatTree`: samples with
``value < threshold`` go left, the rest right. Classification trees are
grown extremely-randomized style (random feature subset, one random
threshold per candidate, keep the lowest weighted child Gini);
regression trees use exact variance-reduction scans and carry a Newton
leaf value for boosting.

Growing is iterative (explicit stack) so tree depth is not limited by
the interpreter recursion limit. All randomness comes from the
generator handed in by the caller; the number and order of draws depend
only on the tree structure, never on training-row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FlatTree:
    """Array-of-nodes tree. ``feature[i] == -1`` marks a leaf.

    Exactly one of ``counts`` (per-node class counts, classification)
    or ``values`` (leaf values, regression) is set.
    """

    feature: np.ndarray     # (n_nodes,) int32, -1 for leaves
    threshold: np.ndarray   # (n_nodes,) float64
    left: np.ndarray        # (n_nodes,) int32
    right: np.ndarray       # (n_nodes,) int32
    counts: np.ndarray | None = None   # (n_nodes, n_classes) float64
    values: np.ndarray | None = None   # (n_nodes,) float64

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of X."""
        node = np.zeros(X.shape[0], dtype=np.int32)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nd = node[rows]
            f = self.feature[nd]
            go_left = X[rows, f] < self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        assert self.values is not None
        return self.values[self.apply(X)]

    def leaf_frequencies(self, X: np.ndarray) -> np.ndarray:
        """Class-frequency vector of the leaf reached by each row."""
        assert self.counts is not None
        c = self.counts[self.apply(X)]
        return c / c.sum(axis=1, keepdims=True)


class _TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []

    def new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        return len(self.feature) - 1

    def set_split(self, node: int, f: int, thr: float,
                  lnode: int, rnode: int) -> None:
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = lnode
        self.right[node] = rnode

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (np.asarray(self.feature, dtype=np.int32),
                np.asarray(self.threshold, dtype=np.float64),
                np.asarray(self.left, dtype=np.int32),
                np.asarray(self.right, dtype=np.int32))


def grow_classification_tree(
    X: np.ndarray,
    y_int: np.ndarray,
    y_onehot: np.ndarray,
    rng: np.random.Generator,
    k_features: int,
    min_samples_split: int,
    max_depth: int | None,
    midpoint: bool = False,
) -> FlatTree:
    """Grow one extremely-randomized classification tree.

    At each node, ``k_features`` candidate features are drawn without
    replacement; each gets one threshold drawn uniformly inside its
    node-local [min, max] range. The candidate with the lowest weighted
    child Gini wins; ties keep the earliest candidate. A node becomes a
    leaf when pure, smaller than ``min_samples_split``, at ``max_depth``
    or when every candidate feature is locally constant.

    ``midpoint=True`` is the deterministic test mode: all features are
    candidates in index order and thresholds sit at (min + max) / 2.
    """
    n, p = X.shape
    n_classes = y_onehot.shape[1]
    b = _TreeBuilder()
    node_counts: list[np.ndarray] = []

    def new_node() -> int:
        node = b.new_node()
        node_counts.append(None)  # type: ignore[arg-type]
        return node

    root = new_node()
    stack: list[tuple[np.ndarray, int, int]] = [
        (np.arange(n, dtype=np.intp), 0, root)]
    while stack:
        idx, depth, node = stack.pop()
        m = idx.size
        cnt = np.bincount(y_int[idx], minlength=n_classes).astype(np.float64)
        node_counts[node] = cnt
        if (m < min_samples_split or cnt.max() == m
                or (max_depth is not None and depth >= max_depth)):
            continue

        if midpoint:
            feats = np.arange(p)
        else:
            feats = rng.choice(p, size=k_features, replace=False)
        Xn = X[idx[:, None], feats]
        mn = Xn.min(axis=0)
        mx = Xn.max(axis=0)
        valid = mx > mn
        if not valid.any():
            continue
        if midpoint:
            thr = (mn + mx) / 2.0
        else:
            thr = mn + rng.random(feats.size) * (mx - mn)
            thr = np.where(thr > mn, thr, np.nextafter(mn, mx))

        mask = Xn < thr
        n_left = mask.sum(axis=0).astype(np.float64)
        c_left = mask.T.astype(np.float64) @ y_onehot[idx]
        c_right = cnt - c_left
        n_right = m - n_left
        with np.errstate(divide="ignore", invalid="ignore"):
            g_left = 1.0 - np.einsum("ij,ij->i", c_left, c_left) / (n_left ** 2)
            g_right = 1.0 - np.einsum("ij,ij->i", c_right, c_right) / (n_right ** 2)
            score = (n_left * g_left + n_right * g_right) / m
        score = np.where(valid, score, np.inf)
        best = int(np.argmin(score))  # first minimum: candidate-order ties
        if not np.isfinite(score[best]):
            continue

        go_left = mask[:, best]
        lnode = new_node()
        rnode = new_node()
        b.set_split(node, int(feats[best]), float(thr[best]), lnode, rnode)
        stack.append((idx[~go_left], depth + 1, rnode))
        stack.append((idx[go_left], depth + 1, lnode))

    feature, threshold, left, right = b.arrays()
    return FlatTree(feature, threshold, left, right,
                    counts=np.vstack(node_counts))


def grow_regression_tree(
    X: np.ndarray,
    residual: np.ndarray,
    hessian: np.ndarray,
    max_depth: int,
    min_samples_leaf: int,
) -> FlatTree:
    """Grow one regression tree for boosting.

    Splits maximize the variance reduction of ``residual`` over all
    (feature, midpoint-between-distinct-values) pairs; ties keep the
    lowest feature index, then the lowest threshold. Leaf values are
    the Newton step sum(residual) / sum(hessian).
    """
    n = X.shape[0]
    b = _TreeBuilder()
    leaf_values: list[float] = []

    def new_node() -> int:
        node = b.new_node()
        leaf_values.append(0.0)
        return node

    def newton(idx: np.ndarray) -> float:
        denom = hessian[idx].sum()
        return float(residual[idx].sum() / max(denom, 1e-12))

    root = new_node()
    stack = [(np.arange(n, dtype=np.intp), 0, root)]
    while stack:
        idx, depth, node = stack.pop()
        m = idx.size
        if depth >= max_depth or m < 2 * min_samples_leaf or m < 2:
            leaf_values[node] = newton(idx)
            continue

        Xn = X[idx]
        rs_node = residual[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        rs = rs_node[order]
        csum = np.cumsum(rs, axis=0)
        total = csum[-1, 0]
        n_l = np.arange(1, m, dtype=np.float64)[:, None]
        sum_l = csum[:-1]
        valid = xs[1:] > xs[:-1]
        if min_samples_leaf > 1:
            ok = (n_l >= min_samples_leaf) & (m - n_l >= min_samples_leaf)
            valid = valid & ok
        if not valid.any():
            leaf_values[node] = newton(idx)
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            score = sum_l ** 2 / n_l + (total - sum_l) ** 2 / (m - n_l)
        score = np.where(valid, score, -np.inf)
        # feature-major flattening: ties resolve to the lowest feature
        # index, then the lowest split position
        flat = int(np.argmax(score.T.ravel()))
        f, pos = divmod(flat, m - 1)
        gain = score[pos, f] - total ** 2 / m
        if gain <= 1e-12:
            leaf_values[node] = newton(idx)
            continue

        thr = (xs[pos, f] + xs[pos + 1, f]) / 2.0
        go_left = Xn[:, f] < thr
        lnode = new_node()
        rnode = new_node()
        b.set_split(node, int(f), float(thr), lnode, rnode)
        stack.append((idx[~go_left], depth + 1, rnode))
        stack.append((idx[go_left], depth + 1, lnode))

    feature, threshold, left, right = b.arrays()
    return FlatTree(feature, threshold, left, right,
                    values=np.asarray(leaf_values, dtype=np.float64))
