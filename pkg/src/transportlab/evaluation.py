"""Prediction metrics, k-fold cross-validation and transport comparisons."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.stats import rankdata

from . import bart
from .data import Dataset, FoldAssignment, design_matrix, kfold
from .forest import ForestConfig, fit_forest, predict_forest
from .overlap import CovariatePolicy, fit_overlap
from .weights import ClipRule, make_weights

SETTINGS = ("unweighted", "weighted", "target_trained")


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float

    def to_dict(self) -> dict:
        # undefined R^2 becomes null so the JSON stays standard
        return {"rmse": self.rmse, "mae": self.mae, "r2": None if math.isnan(self.r2) else self.r2}


def metrics(y_true, y_pred, require_r2: bool = True) -> Metrics:
    """RMSE, MAE and out-of-sample R^2.

    R^2 is undefined when ``y_true`` has zero variance: that raises unless
    ``require_r2`` is false, in which case ``r2`` is NaN.
    """
    y = np.asarray(y_true, dtype=float)
    yhat = np.asarray(y_pred, dtype=float)
    if y.ndim != 1 or y.shape != yhat.shape:
        raise ValueError("y_true and y_pred must be vectors of equal length")
    if y.size == 0:
        raise ValueError("metrics need at least one prediction")
    e = y - yhat
    sse = float(e @ e)
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0 and require_r2:
        raise ValueError("r2 undefined: observed outcome has zero variance")
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    return Metrics(math.sqrt(sse / y.size), float(np.abs(e).sum() / y.size), r2)


def average_metrics(ms: list[Metrics]) -> Metrics:
    """Fold average; folds with undefined R^2 are left out of the R^2 mean."""
    r2 = [m.r2 for m in ms if not math.isnan(m.r2)]
    return Metrics(
        float(np.mean([m.rmse for m in ms])),
        float(np.mean([m.mae for m in ms])),
        float(np.mean(r2)) if r2 else math.nan,
    )


def auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney statistic, ties count one half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("auc needs both classes")
    r = rankdata(scores)
    return float((r[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# ---------------------------------------------------------------- models


class ModelSpec(Protocol):
    name: str

    def fit(self, X: np.ndarray, y: np.ndarray, weights=None) -> Callable[[np.ndarray], np.ndarray]: ...


@dataclass(frozen=True)
class MeanModel:
    """Predicts the (weighted) training mean everywhere."""

    name: str = "mean"

    def fit(self, X, y, weights=None):
        m = float(np.average(y, weights=weights))
        return lambda Xnew: np.full(len(Xnew), m)


@dataclass(frozen=True)
class BartModel:
    cfg: bart.BartConfig = field(default_factory=bart.BartConfig)
    seed: int = 0
    name: str = "BART"

    def fit(self, X, y, weights=None):
        post = bart.fit(X, y, weights, self.cfg, self.seed)
        return lambda Xnew: bart.predict_posterior(post, Xnew).post_mean


@dataclass(frozen=True)
class ForestModel:
    cfg: ForestConfig = field(default_factory=ForestConfig)
    name: str = "Random Forest"

    def fit(self, X, y, weights=None):
        if weights is not None:
            raise ValueError("random forest does not take row weights")
        f = fit_forest(X, y, self.cfg)
        return lambda Xnew: predict_forest(f, Xnew)


class FoldError(RuntimeError):
    def __init__(self, fold: int, setting: str, cause: Exception):
        self.fold = fold
        self.setting = setting
        super().__init__(f"fold {fold} ({setting}): {cause}")


# ---------------------------------------------------------- cross-validation


@dataclass
class CVResult:
    folds: list[Metrics]
    pooled: Metrics
    averaged: Metrics
    predictions: np.ndarray  # held-out prediction for every row
    assignment: FoldAssignment


def crossvalidate(model: ModelSpec, source: Dataset, k: int, seed: int, folds: FoldAssignment | None = None) -> CVResult:
    """Fit on k-1 folds and predict the held-out fold, for every fold."""
    y = source.labeled_outcome()
    X, _ = design_matrix(source)
    folds = folds or kfold(source.n, k, seed)
    if folds.n != source.n:
        raise ValueError("fold assignment does not match the row count")
    pred = np.full(source.n, np.nan)
    per_fold = []
    for f in range(folds.k):
        tr, te = folds.train_index(f), folds.test_index(f)
        try:
            predictor = model.fit(X[tr], y[tr])
            pred[te] = predictor(X[te])
            per_fold.append(metrics(y[te], pred[te], require_r2=False))
        except Exception as exc:
            raise FoldError(f, model.name, exc) from exc
    return CVResult(per_fold, metrics(y, pred), average_metrics(per_fold), pred, folds)


# ---------------------------------------------------------- comparison table


@dataclass
class ComparisonTable:
    """Rows of averaged fold metrics keyed by setting, plus fold-level detail."""

    outcome: str
    settings: list[str]
    averaged: dict[str, Metrics]
    pooled: dict[str, Metrics]
    folds: dict[str, list[Metrics]]
    fold_sizes: list[int] = field(default_factory=list)
    scored_on: str = "target"
    info: dict = field(default_factory=dict)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        buf.write(f"# outcome={self.outcome} scored_on={self.scored_on} metric=fold_average\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "rmse", "mae", "r2"])
        for s in self.settings:
            m = self.averaged[s]
            w.writerow([s, repr(m.rmse), repr(m.mae), repr(m.r2)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "scored_on": self.scored_on,
            "settings": list(self.settings),
            "fold_sizes": list(self.fold_sizes),
            "averaged": {s: self.averaged[s].to_dict() for s in self.settings},
            "pooled": {s: self.pooled[s].to_dict() for s in self.settings},
            "folds": {s: [m.to_dict() for m in self.folds[s]] for s in self.settings},
            **self.info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _has_labels(d: Dataset | None) -> bool:
    return d is not None and d.outcome is not None and not np.isnan(d.outcome).any()


def compare_transport(
    source: Dataset,
    target: Dataset | None,
    k: int = 10,
    seed: int = 0,
    clip: ClipRule = ClipRule("quantile", 0.99),
    bart_cfg: bart.BartConfig | None = None,
    settings=("unweighted", "weighted", "target_trained"),
    policy: CovariatePolicy = CovariatePolicy(),
    logistic_opts: dict | None = None,
) -> ComparisonTable:
    """Source-trained unweighted and weighted BART, and optionally target-trained BART.

    Source and target are each split into ``k`` folds. In fold ``f`` the
    models train on the other source folds; the weighted model's overlap
    scores come from a logistic fit on the training folds of both
    populations, so held-out target rows are never seen, not even when
    estimating weights. Predictions are scored on target fold ``f`` when
    target outcomes are known, otherwise on source fold ``f`` (the
    target-trained setting then cannot run).
    """
    settings = list(settings)
    unknown = set(settings) - set(SETTINGS)
    if unknown:
        raise ValueError(f"unknown settings: {', '.join(sorted(unknown))}")
    labeled_target = _has_labels(target)
    if "target_trained" in settings and not labeled_target:
        raise ValueError("target_trained setting needs target outcomes")
    if target is None and "weighted" in settings:
        raise ValueError("weighted setting needs target covariates")
    cfg = bart_cfg or bart.BartConfig()
    logistic_opts = logistic_opts or {}

    ys = source.labeled_outcome()
    Xs, names = design_matrix(source)
    fs = kfold(source.n, k, seed)
    if target is not None:
        Xt, names_t = design_matrix(target)
        if names_t != names:
            raise ValueError("source and target covariates differ")
        ft = kfold(target.n, k, seed + 1)
        yt = target.labeled_outcome() if labeled_target else None

    preds = {s: [] for s in settings}
    truth, per_fold, sizes = [], {s: [] for s in settings}, []
    ess_by_fold = []
    for f in range(k):
        tr_s, te_s = fs.train_index(f), fs.test_index(f)
        if labeled_target:
            X_eval, y_eval = Xt[ft.test_index(f)], yt[ft.test_index(f)]
        else:
            X_eval, y_eval = Xs[te_s], ys[te_s]
        truth.append(y_eval)
        sizes.append(len(y_eval))
        model = BartModel(cfg, seed + f)
        for s in settings:
            try:
                if s == "unweighted":
                    p = model.fit(Xs[tr_s], ys[tr_s])(X_eval)
                elif s == "weighted":
                    tr_t = ft.train_index(f)
                    ov = fit_overlap(Xs[tr_s], Xt[tr_t], names, policy, ys[tr_s], **logistic_opts)
                    w = make_weights(ov.scores(Xs[tr_s]), clip)
                    ess_by_fold.append(w.ess)
                    p = model.fit(Xs[tr_s], ys[tr_s], w.final)(X_eval)
                else:
                    tr_t = ft.train_index(f)
                    p = model.fit(Xt[tr_t], yt[tr_t])(X_eval)
                preds[s].append(p)
                per_fold[s].append(metrics(y_eval, p, require_r2=False))
            except Exception as exc:
                raise FoldError(f, s, exc) from exc

    y_all = np.concatenate(truth)
    info = {"k": k, "seed": seed, "clip": str(clip), "policy": str(policy)}
    if ess_by_fold:
        info["weighted_ess_by_fold"] = ess_by_fold
    return ComparisonTable(
        outcome=source.outcome_name,
        settings=settings,
        averaged={s: average_metrics(per_fold[s]) for s in settings},
        pooled={s: metrics(y_all, np.concatenate(preds[s])) for s in settings},
        folds=per_fold,
        fold_sizes=sizes,
        scored_on="target" if labeled_target else "source",
        info=info,
    )


def compare_models(source: Dataset, models: list[ModelSpec], k: int = 10, seed: int = 0) -> ComparisonTable:
    """Cross-validate several models on the same source folds."""
    folds = kfold(source.n, k, seed)
    results = {m.name: crossvalidate(m, source, k, seed, folds) for m in models}
    names = list(results)
    return ComparisonTable(
        outcome=source.outcome_name,
        settings=names,
        averaged={n: r.averaged for n, r in results.items()},
        pooled={n: r.pooled for n, r in results.items()},
        folds={n: r.folds for n, r in results.items()},
        fold_sizes=folds.sizes().tolist(),
        scored_on="source",
        info={"k": k, "seed": seed},
    )
