"""Overlap-score model shared by the CLI and the comparison harness.

A covariate policy picks which design columns enter the membership
regression; the fitted logistic model then scores source and target rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linmod import LogisticFit, fit_logistic, predict_proba, rank_importance, top_k


@dataclass(frozen=True)
class CovariatePolicy:
    """``all``, ``exclude`` (drop listed covariates) or ``top_k`` (keep the k most explanatory)."""

    kind: str = "all"
    names: tuple[str, ...] = ()
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("all", "exclude", "top_k"):
            raise ValueError(f"unknown covariate policy {self.kind!r}")
        if self.kind == "top_k" and not (self.k and self.k >= 1):
            raise ValueError("top_k policy needs k >= 1")
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def parse(cls, text: str) -> "CovariatePolicy":
        """Parse ``all``, ``exclude:a,b`` or ``top_k:10``."""
        text = text.strip()
        if text == "all":
            return cls()
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        if kind == "exclude":
            return cls("exclude", tuple(s.strip() for s in rest.split(",") if s.strip()))
        if kind == "top_k":
            return cls("top_k", k=int(rest))
        raise ValueError(f"unknown covariate policy {text!r}")

    def __str__(self):
        if self.kind == "exclude":
            return "exclude:" + ",".join(self.names)
        if self.kind == "top_k":
            return f"top_k:{self.k}"
        return "all"


def _base_name(design_name: str) -> str:
    # indicator columns are named "covariate=category"
    return design_name.split("=", 1)[0]


def select_columns(policy: CovariatePolicy, names: list[str], X_source=None, y_source=None) -> list[int]:
    """Indices of design columns used by the overlap model.

    ``top_k`` ranks columns by the importance of an outcome regression on
    the source rows, so it needs ``X_source`` and ``y_source``.
    """
    if policy.kind == "all":
        cols = list(range(len(names)))
    elif policy.kind == "exclude":
        unknown = set(policy.names) - {_base_name(n) for n in names} - set(names)
        if unknown:
            raise ValueError(f"excluded covariates not in data: {', '.join(sorted(unknown))}")
        drop = set(policy.names)
        cols = [j for j, n in enumerate(names) if n not in drop and _base_name(n) not in drop]
    else:
        if X_source is None or y_source is None:
            raise ValueError("top_k policy needs labeled source rows")
        keep = set(top_k(rank_importance(X_source, y_source, names), policy.k))
        cols = [j for j, n in enumerate(names) if n in keep]
    if not cols:
        raise ValueError("covariate policy leaves no columns")
    return cols


@dataclass
class OverlapFit:
    columns: list[int]
    column_names: list[str]
    model: LogisticFit = field(repr=False)

    def scores(self, X) -> np.ndarray:
        return predict_proba(self.model, np.asarray(X)[:, self.columns])


def fit_overlap(
    X_source,
    X_target,
    names: list[str],
    policy: CovariatePolicy = CovariatePolicy(),
    y_source=None,
    **logistic_opts,
) -> OverlapFit:
    """Logistic regression of membership (source = 1) on the selected columns."""
    X_source = np.asarray(X_source, dtype=float)
    X_target = np.asarray(X_target, dtype=float)
    cols = select_columns(policy, names, X_source, y_source)
    X = np.vstack([X_source[:, cols], X_target[:, cols]])
    # constant columns carry no membership information and make IRLS singular
    varying = X.max(axis=0) > X.min(axis=0)
    cols = [c for c, v in zip(cols, varying) if v]
    if not cols:
        raise ValueError("no covariate varies across the pooled rows")
    X = X[:, varying]
    s = np.concatenate([np.ones(len(X_source)), np.zeros(len(X_target))])
    chosen = [names[j] for j in cols]
    model = fit_logistic(X, s, names=chosen, **logistic_opts)
    return OverlapFit(cols, chosen, model)
