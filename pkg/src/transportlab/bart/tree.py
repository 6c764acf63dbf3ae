"""Compact binary regression trees kept in posterior draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import predict_draws

LEAF = -1


@dataclass(frozen=True)
class Tree:
    """Compact tree; node 0 is the root and ``var == -1`` marks a leaf.

    Rows go left when ``x[var] <= cut``.
    """

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mu: np.ndarray

    @classmethod
    def leaf(cls, mu: float = 0.0) -> "Tree":
        return cls(
            np.array([LEAF], dtype=np.int32),
            np.array([0.0]),
            np.array([LEAF], dtype=np.int32),
            np.array([LEAF], dtype=np.int32),
            np.array([float(mu)]),
        )

    @classmethod
    def stump(cls, var: int, cut: float, mu_left: float = 0.0, mu_right: float = 0.0) -> "Tree":
        return cls(
            np.array([var, LEAF, LEAF], dtype=np.int32),
            np.array([cut, 0.0, 0.0]),
            np.array([1, LEAF, LEAF], dtype=np.int32),
            np.array([2, LEAF, LEAF], dtype=np.int32),
            np.array([0.0, mu_left, mu_right]),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.var)

    @property
    def n_leaves(self) -> int:
        return int((self.var == LEAF).sum())

    def depths(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):  # parents precede children
            if self.var[i] != LEAF:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return d

    def node_depths(self) -> tuple[np.ndarray, np.ndarray]:
        """Depths of internal nodes and of leaves."""
        d = self.depths()
        internal = self.var != LEAF
        return d[internal], d[~internal]

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            v = self.var[node]
            active = v != LEAF
            if not active.any():
                return node
            a = node[active]
            go_left = X[rows[active], v[active]] <= self.cut[a]
            node[active] = np.where(go_left, self.left[a], self.right[a])

    def predict(self, X) -> np.ndarray:
        return self.mu[self.apply(X)]


@dataclass(frozen=True)
class Ensemble:
    """All trees of one posterior draw packed into shared arrays.

    Tree ``j`` occupies node slots ``offsets[j]:offsets[j + 1]``; child
    indices are global within the draw.
    """

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mu: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, trees: list[Tree]) -> "Ensemble":
        sizes = np.array([t.n_nodes for t in trees], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        shift = np.repeat(offsets[:-1], sizes)

        def cat(name):
            return np.concatenate([getattr(t, name) for t in trees])

        left, right = cat("left").astype(np.int64), cat("right").astype(np.int64)
        leaf = left == LEAF
        left = np.where(leaf, LEAF, left + shift)
        right = np.where(leaf, LEAF, right + shift)
        return cls(cat("var").astype(np.int32), cat("cut"), left, right, cat("mu"), offsets)

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, j: int) -> Tree:
        a, b = self.offsets[j], self.offsets[j + 1]
        left = self.left[a:b]
        right = self.right[a:b]
        leaf = left == LEAF
        return Tree(
            self.var[a:b].copy(),
            self.cut[a:b].copy(),
            np.where(leaf, LEAF, left - a).astype(np.int32),
            np.where(leaf, LEAF, right - a).astype(np.int32),
            self.mu[a:b].copy(),
        )

    def tree_predictions(self, X) -> np.ndarray:
        """Matrix of per-tree predictions, shape (n_trees, n_rows)."""
        X = np.asarray(X, dtype=float)
        m = X.shape[0]
        J = self.n_trees
        node = np.repeat(self.offsets[:-1], m)
        rows = np.tile(np.arange(m), J)
        active = np.flatnonzero(self.var[node] != LEAF)
        while active.size:
            a = node[active]
            gl = X[rows[active], self.var[a]] <= self.cut[a]
            nxt = np.where(gl, self.left[a], self.right[a])
            node[active] = nxt
            active = active[self.var[nxt] != LEAF]
        return self.mu[node].reshape(J, m)

    def predict(self, X) -> np.ndarray:
        return predict_ensembles([self], X)[0]


def predict_ensembles(draws: list[Ensemble], X) -> np.ndarray:
    """Sum-of-trees values, shape (len(draws), n_rows)."""
    X = np.ascontiguousarray(X, dtype=float)
    sizes = np.array([int(d.offsets[-1]) for d in draws], dtype=np.int64)
    base = np.concatenate([[0], np.cumsum(sizes)])
    shift_nodes = np.repeat(base[:-1], sizes)
    var = np.concatenate([d.var for d in draws]).astype(np.int64)
    left = np.concatenate([d.left for d in draws]).astype(np.int64)
    right = np.concatenate([d.right for d in draws]).astype(np.int64)
    leaf = left == LEAF
    left = np.where(leaf, LEAF, left + shift_nodes)
    right = np.where(leaf, LEAF, right + shift_nodes)
    offsets = np.concatenate([d.offsets[:-1] + b for d, b in zip(draws, base[:-1])]).astype(np.int64)
    n_trees = np.array([d.n_trees for d in draws], dtype=np.int64)
    draw_start = np.concatenate([[0], np.cumsum(n_trees)])
    out = np.zeros((len(draws), X.shape[0]))
    predict_draws(
        X, var, np.concatenate([d.cut for d in draws]), left, right,
        np.concatenate([d.mu for d in draws]), offsets, draw_start, out,
    )
    return out
