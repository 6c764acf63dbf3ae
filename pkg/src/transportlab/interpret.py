"""Low-prediction outlier flags and a significance-gated classification tree.

The tree explains a binary label (typically "prediction flagged as low")
by recursive partitioning. At each node every covariate is tested for
association with the label, p-values are Bonferroni adjusted, and the node
splits only when the best adjusted p-value clears ``alpha``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bart.predict import PredictiveSummary, interval_ranks

P_FLOOR = 5e-324  # smallest positive double; keeps adjusted p-values above zero


@dataclass(frozen=True)
class OutlierRule:
    kind: str = "sd"
    K: float = 2.0
    side: str = "lower"
    mad_scale: float = 1.4826

    def __post_init__(self):
        if self.kind not in ("sd", "mad"):
            raise ValueError(f"unknown outlier rule {self.kind!r}")
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.side not in ("lower", "upper", "both"):
            raise ValueError(f"unknown side {self.side!r}")
        if not self.mad_scale > 0:
            raise ValueError("mad_scale must be positive")


def outlier_bounds(x, rule: OutlierRule) -> tuple[float, float]:
    """(center, spread) used by ``rule``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise ValueError("outlier detection needs at least 3 values")
    if rule.kind == "sd":
        return float(x.mean()), float(x.std(ddof=1))
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    if mad == 0.0:
        raise ValueError("degenerate spread: median absolute deviation is zero")
    return med, rule.mad_scale * mad


def detect_outliers(pred_means, rule: OutlierRule = OutlierRule()) -> np.ndarray:
    x = np.asarray(pred_means, dtype=float)
    center, spread = outlier_bounds(x, rule)
    lo = x < center - rule.K * spread
    hi = x > center + rule.K * spread
    if rule.side == "lower":
        return lo
    if rule.side == "upper":
        return hi
    return lo | hi


def low_label(summary: PredictiveSummary, rule: OutlierRule = OutlierRule()) -> np.ndarray:
    return detect_outliers(summary.post_mean, rule).astype(np.int64)


def below_grand_mean(draws, level: float = 0.95) -> np.ndarray:
    """Rows whose credible interval lies entirely below that of the grand mean.

    ``draws`` has shape (n_draws, n_rows); the grand mean is the row average
    within each draw.
    """
    draws = np.asarray(draws, dtype=float)
    lo, hi = interval_ranks(draws.shape[0], level)
    grand = np.sort(draws.mean(axis=1))
    upper = np.sort(draws, axis=0)[hi - 1]
    return upper < grand[lo - 1]


# ------------------------------------------------------------------- tree


@dataclass
class CNode:
    id: int
    depth: int
    n: int
    n_low: int
    column: int | None = None
    threshold: float | None = None
    left_categories: tuple[int, ...] | None = None
    p_adjusted: float | None = None
    left: "CNode | None" = None
    right: "CNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.column is None

    @property
    def proportion(self) -> float:
        return self.n_low / self.n

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        if self.left_categories is not None:
            return np.isin(x, self.left_categories)
        return x <= self.threshold


@dataclass
class CTree:
    root: CNode
    alpha: float
    names: list[str]
    categories: dict[int, tuple[str, ...]] = field(default_factory=dict)
    n_nodes: int = 1

    def nodes(self):
        stack = [self.root]
        while stack:
            nd = stack.pop()
            yield nd
            if not nd.is_leaf:
                stack.append(nd.right)
                stack.append(nd.left)

    def leaves(self) -> list[CNode]:
        return [nd for nd in self.nodes() if nd.is_leaf]

    def depth(self) -> int:
        return max(nd.depth for nd in self.nodes())

    def apply(self, X) -> np.ndarray:
        """Leaf id reached by each row."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0], dtype=np.int64)

        def walk(nd, idx):
            if nd.is_leaf:
                out[idx] = nd.id
                return
            gl = nd.goes_left(X[idx, nd.column])
            walk(nd.left, idx[gl])
            walk(nd.right, idx[~gl])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def _split_text(self, nd: CNode, left: bool) -> str:
        name = self.names[nd.column]
        if nd.left_categories is None:
            return f"{name} {'<=' if left else '>'} {nd.threshold:.6g}"
        labels = self.categories.get(nd.column)
        cats = ", ".join(labels[c] if labels else str(c) for c in nd.left_categories)
        return f"{name} {'in' if left else 'not in'} {{{cats}}}"

    def to_text(self) -> str:
        lines = [f"ctree alpha={self.alpha:g} n={self.root.n} leaves={len(self.leaves())}"]

        def walk(nd, indent):
            pad = "  " * indent
            if nd.is_leaf:
                lines.append(f"{pad}leaf {nd.id}: n={nd.n} low={nd.n_low} proportion_low={nd.proportion:.4f}")
                return
            for child, is_left in ((nd.left, True), (nd.right, False)):
                lines.append(f"{pad}{self._split_text(nd, is_left)}  [node {nd.id}, p_adj={nd.p_adjusted:.3g}]")
                walk(child, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"

    def to_dot(self) -> str:
        out = ["digraph ctree {", "  node [shape=box];"]
        for nd in self.nodes():
            if nd.is_leaf:
                out.append(f'  n{nd.id} [label="leaf {nd.id}\\nn={nd.n}\\nlow={nd.proportion:.3f}"];')
            else:
                out.append(f'  n{nd.id} [label="{self.names[nd.column]}\\np_adj={nd.p_adjusted:.3g}", shape=ellipse];')
                out.append(f'  n{nd.id} -> n{nd.left.id} [label="{_dot_escape(self._split_text(nd, True))}"];')
                out.append(f'  n{nd.id} -> n{nd.right.id} [label="{_dot_escape(self._split_text(nd, False))}"];')
        out.append("}")
        return "\n".join(out) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _chi2_2x2(a, b, c, d):
    """Pearson chi-square of [[a, b], [c, d]]; arrays allowed, 0 where undefined."""
    n = a + b + c + d
    den = (a + b) * (c + d) * (a + c) * (b + d)
    num = n * (a * d - b * c) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)


def _assoc_pvalue(x, y, categorical: bool) -> float:
    """Association between one covariate and the binary label."""
    if categorical:
        cats = np.unique(x)
        if cats.size < 2:
            return 1.0
        table = np.array([[np.sum((x == c) & (y == v)) for v in (0, 1)] for c in cats])
        p = stats.chi2_contingency(table, correction=False)[1]
    else:
        a, b = x[y == 1], x[y == 0]
        if a.size < 2 or b.size < 2 or x.max() == x.min():
            return 1.0
        if a.var() == 0 and b.var() == 0:
            # within-group constant but groups differ: perfect separation
            return 0.0 if a[0] != b[0] else 1.0
        p = stats.ttest_ind(a, b, equal_var=False).pvalue
    return 1.0 if not np.isfinite(p) else float(p)


def _best_numeric_split(x, y, min_node):
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    n = xs.size
    nl = np.arange(1, n)
    ok = (xs[1:] > xs[:-1]) & (nl >= min_node) & (n - nl >= min_node)
    if not ok.any():
        return None
    low_left = np.cumsum(ys)[:-1]
    tot_low = ys.sum()
    a, b = low_left, nl - low_left
    c, d = tot_low - low_left, (n - nl) - (tot_low - low_left)
    chi = np.where(ok, _chi2_2x2(a, b, c, d), -1.0)
    i = int(np.argmax(chi))
    return 0.5 * (xs[i] + xs[i + 1]), None


def _best_categorical_split(x, y, min_node):
    cats = np.unique(x)
    if cats.size < 2:
        return None
    props = np.array([y[x == c].mean() for c in cats])
    cats = cats[np.argsort(props, kind="mergesort")]
    best, best_chi = None, -1.0
    n, tot_low = y.size, y.sum()
    for i in range(1, cats.size):
        left = np.isin(x, cats[:i])
        nl = int(left.sum())
        if nl < min_node or n - nl < min_node:
            continue
        a = y[left].sum()
        chi = float(_chi2_2x2(a, nl - a, tot_low - a, (n - nl) - (tot_low - a)))
        if chi > best_chi:
            best_chi, best = chi, tuple(sorted(int(c) for c in cats[:i]))
    return None if best is None else (None, best)


def fit_ctree(
    X,
    label,
    alpha: float = 0.05,
    min_node: int = 20,
    max_depth: int = 5,
    categorical=None,
    names=None,
    categories: dict[int, tuple[str, ...]] | None = None,
) -> CTree:
    """Grow the tree on covariates ``X`` (categorical columns hold integer codes)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(label)
    n, p = X.shape
    if y.shape != (n,) or not np.isin(y, (0, 1)).all():
        raise ValueError("label must be a 0/1 vector with one entry per row")
    y = y.astype(np.int64)
    if y.min() == y.max():
        raise ValueError("label has a single class; nothing to explain")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if min_node < 1 or max_depth < 0:
        raise ValueError("need min_node >= 1 and max_depth >= 0")
    if n < 2 * min_node:
        raise ValueError(f"need at least 2 * min_node = {2 * min_node} rows, got {n}")
    if np.isnan(X).any():
        raise ValueError("covariates must not contain missing values")
    cat = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    names = [f"x{j + 1}" for j in range(p)] if names is None else list(names)
    counter = [0]

    def grow(idx, depth):
        yy = y[idx]
        nd = CNode(id=counter[0], depth=depth, n=idx.size, n_low=int(yy.sum()))
        counter[0] += 1
        if idx.size < 2 * min_node or depth >= max_depth or nd.n_low in (0, idx.size):
            return nd
        raw = np.array([_assoc_pvalue(X[idx, j], yy, cat[j]) for j in range(p)])
        padj = np.minimum(1.0, np.maximum(raw, P_FLOOR) * p)
        for j in np.argsort(padj, kind="mergesort"):  # stable: lowest column wins ties
            if padj[j] > alpha:
                break
            xj = X[idx, j]
            split = _best_categorical_split(xj, yy, min_node) if cat[j] else _best_numeric_split(xj, yy, min_node)
            if split is None:
                continue
            nd.column, nd.p_adjusted = int(j), float(padj[j])
            nd.threshold, nd.left_categories = split
            gl = nd.goes_left(xj)
            nd.left = grow(idx[gl], depth + 1)
            nd.right = grow(idx[~gl], depth + 1)
            break
        return nd

    root = grow(np.arange(n), 0)
    return CTree(root, alpha, names, dict(categories or {}), counter[0])


# ------------------------------------------------------------- leaf report


@dataclass(frozen=True)
class LeafRow:
    leaf: int
    predicates: tuple[tuple[int, str, object], ...]  # (column, op, threshold or category codes)
    rule: str
    n: int
    n_low: int
    proportion_low: float


def leaf_report(t: CTree) -> list[LeafRow]:
    rows = []

    def walk(nd, preds, texts):
        if nd.is_leaf:
            rows.append(LeafRow(nd.id, tuple(preds), " AND ".join(texts) or "(all)", nd.n, nd.n_low, nd.proportion))
            return
        if nd.left_categories is None:
            lp, rp = (nd.column, "<=", nd.threshold), (nd.column, ">", nd.threshold)
        else:
            lp, rp = (nd.column, "in", nd.left_categories), (nd.column, "not in", nd.left_categories)
        walk(nd.left, preds + [lp], texts + [t._split_text(nd, True)])
        walk(nd.right, preds + [rp], texts + [t._split_text(nd, False)])

    walk(t.root, [], [])
    return rows


def predicate_mask(predicates, X) -> np.ndarray:
    """Rows of ``X`` satisfying every predicate of a leaf path."""
    X = np.asarray(X, dtype=float)
    m = np.ones(X.shape[0], dtype=bool)
    for col, op, val in predicates:
        x = X[:, col]
        if op == "<=":
            m &= x <= val
        elif op == ">":
            m &= x > val
        elif op == "in":
            m &= np.isin(x, val)
        else:
            m &= ~np.isin(x, val)
    return m


def leaf_report_csv(rows: list[LeafRow], header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["leaf", "rule", "n", "n_low", "proportion_low"])
    for r in rows:
        w.writerow([r.leaf, r.rule, r.n, r.n_low, repr(r.proportion_low)])
    return buf.getvalue()
