"""Random-forest regression baseline.

Each tree is a CART regression tree grown greedily on a bootstrap resample,
choosing at every node the variance-reducing split among ``mtry`` randomly
drawn columns and stopping at ``min_leaf`` rows.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bart.tree import LEAF, Ensemble, Tree, predict_ensembles


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None: ceil(p / 3)
    min_leaf: int = 5
    seed: int = 0
    bootstrap: bool = True

    def resolve_mtry(self, p: int) -> int:
        m = math.ceil(p / 3) if self.mtry is None else self.mtry
        if not 1 <= m <= p:
            raise ValueError(f"mtry must lie in [1, {p}], got {m}")
        return m


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    n_features: int
    oob_indices: list[np.ndarray] = field(default_factory=list, repr=False)


@njit(cache=True)
def _grow(X, y, idx, keys, mtry, min_leaf):
    """Grow one tree on rows ``idx``; ``keys[k]`` ranks columns at node ``k``."""
    n = idx.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    var = np.full(cap, LEAF, np.int32)
    cut = np.zeros(cap)
    left = np.full(cap, LEAF, np.int32)
    right = np.full(cap, LEAF, np.int32)
    mu = np.zeros(cap)
    # node k covers order[start[k]:stop[k]]
    order = idx.copy()
    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    stop[0] = n
    n_nodes = 1
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    top = 1
    xs = np.empty(n)
    ys = np.empty(n)
    while top > 0:
        top -= 1
        k = stack[top]
        a, b = start[k], stop[k]
        m = b - a
        tot = 0.0
        ymin = np.inf
        ymax = -np.inf
        for t in range(a, b):
            v = y[order[t]]
            tot += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        mu[k] = tot / m
        if m < 2 * min_leaf or ymax == ymin:
            continue
        cols = np.argsort(keys[k])[:mtry]
        best_gain = 0.0
        best_var = -1
        best_cut = 0.0
        for c in cols:
            for t in range(m):
                xs[t] = X[order[a + t], c]
            srt = np.argsort(xs[:m], kind="mergesort")
            for t in range(m):
                ys[t] = y[order[a + srt[t]]]
            sl = 0.0
            for t in range(m - 1):
                sl += ys[t]
                nl = t + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                x0 = xs[srt[t]]
                x1 = xs[srt[t + 1]]
                if x0 == x1:
                    continue
                sr = tot - sl
                gain = sl * sl / nl + sr * sr / nr - tot * tot / m
                if gain > best_gain:
                    best_gain = gain
                    best_var = c
                    best_cut = 0.5 * (x0 + x1)
        if best_var < 0:
            continue
        # partition order[a:b] in place, left block first
        i, j = a, b - 1
        while i <= j:
            if X[order[i], best_var] <= best_cut:
                i += 1
            else:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                j -= 1
        lo, hi = n_nodes, n_nodes + 1
        n_nodes += 2
        var[k] = best_var
        cut[k] = best_cut
        left[k] = lo
        right[k] = hi
        start[lo], stop[lo] = a, i
        start[hi], stop[hi] = i, b
        stack[top] = hi
        stack[top + 1] = lo
        top += 2
    return var[:n_nodes], cut[:n_nodes], left[:n_nodes], right[:n_nodes], mu[:n_nodes]


def _preorder(t: Tree) -> Tree:
    """Renumber so parents precede children in depth-first order."""
    order, stack = [], [0]
    while stack:
        k = stack.pop()
        order.append(k)
        if t.var[k] != LEAF:
            stack.append(int(t.right[k]))
            stack.append(int(t.left[k]))
    index = {old: new for new, old in enumerate(order)}
    o = np.array(order)
    remap = np.vectorize(lambda c: LEAF if c == LEAF else index[int(c)], otypes=[np.int32])
    return Tree(t.var[o], t.cut[o], remap(t.left[o]), remap(t.right[o]), t.mu[o])


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("TRANSPORTLAB_THREADS", "1")))
    except ValueError:
        return 1


def fit_forest(X, y, cfg: ForestConfig = ForestConfig()) -> Forest:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("y length must equal row count")
    if cfg.n_trees < 1 or cfg.min_leaf < 1:
        raise ValueError("need n_trees >= 1 and min_leaf >= 1")
    if n < 1:
        raise ValueError("need at least one row")
    mtry = cfg.resolve_mtry(p)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)

    def one(ss):
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        keys = rng.random((2 * n + 1, p))
        t = _preorder(Tree(*_grow(X, y, idx, keys, mtry, cfg.min_leaf)))
        oob = np.setdiff1d(np.arange(n), idx)
        return t, oob

    workers = min(n_threads(), cfg.n_trees)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(one, seeds))
    else:
        out = [one(s) for s in seeds]
    return Forest([t for t, _ in out], cfg, p, [o for _, o in out])


def predict_forest(f: Forest, Xnew) -> np.ndarray:
    """Mean of the tree predictions."""
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim != 2 or Xnew.shape[1] != f.n_features:
        raise ValueError(f"expected {f.n_features} columns, got {np.shape(Xnew)}")
    return predict_ensembles([Ensemble.pack(f.trees)], Xnew)[0] / len(f.trees)
