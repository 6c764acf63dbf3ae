"""Backfitting MCMC for the weighted sum-of-trees model.

Row ``i`` has likelihood N(y_i | sum_j T_j(x_i), sigma^2 / w_i). Tree
structure moves (grow, prune, change) are Metropolis-Hastings steps on the
marginal likelihood with leaf values integrated out; leaf values and the
error variance are then drawn from their full conditionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..linmod import fit_ols
from ._kernels import compact_all, sweep
from .priors import BartConfig, lambda_from_variance, sample_sigma
from .tree import LEAF, Ensemble, predict_ensembles

MIN_LAMBDA = 1e-16  # on the range-1 scale; keeps sigma^2 > 0 for exactly-fit data


class BartFitError(RuntimeError):
    pass


@dataclass
class BartPosterior:
    draws: list[Ensemble]
    sigma2: np.ndarray  # standardized scale, one per kept draw
    y_center: float
    y_scale: float
    config: BartConfig
    seed: int
    n_features: int
    lam: float
    accept: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    @property
    def sigma(self) -> np.ndarray:
        """Error standard deviation per draw on the outcome scale."""
        return np.sqrt(self.sigma2) * self.y_scale

    def draw_matrix(self, X) -> np.ndarray:
        """Mean-function values, shape (n_draws, n_rows), on the outcome scale."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {np.shape(X)}")
        return self.y_center + self.y_scale * predict_ensembles(self.draws, X)


def _standardize(y: np.ndarray) -> tuple[float, float]:
    center = float(y.mean())
    spread = float(y.max() - y.min())
    return center, (spread if spread > 0 else 1.0)


def _initial_variance(X: np.ndarray, z: np.ndarray) -> float:
    keep = X.max(axis=0) > X.min(axis=0)
    return fit_ols(X[:, keep], z).residual_variance


def _rank_columns(X: np.ndarray):
    n, p = X.shape
    ranks = np.empty((n, p), dtype=np.int64)
    uniq = [np.unique(X[:, j], return_inverse=True) for j in range(p)]
    n_unique = np.array([len(u) for u, _ in uniq], dtype=np.int64)
    uvals = np.zeros((p, max(1, int(n_unique.max(initial=1)))))
    for j, (u, inv) in enumerate(uniq):
        uvals[j, : len(u)] = u
        ranks[:, j] = inv.ravel()
    return ranks, uvals, n_unique


class _Chain:
    """Sampler state. Tree ``j`` lives in row ``j`` of the node arrays."""

    def __init__(self, X, z, w, cfg: BartConfig, lam: float, sigma2: float, rng):
        self.X = np.ascontiguousarray(X)
        self.ranks, self.uvals, self.n_unique = _rank_columns(self.X)
        self.z = z
        self.w = w
        self.cfg = cfg
        self.lam = lam
        self.sigma2 = sigma2
        self.rng = rng
        self.tau2 = cfg.sigma_mu**2
        self.probs = np.array(cfg.proposal_probs)
        self.max_depth = -1 if cfg.max_depth is None else cfg.max_depth
        J, n = cfg.n_trees, X.shape[0]
        self.leaf_of = np.zeros((J, n), dtype=np.int64)
        self.fits = np.zeros((J, n))
        self.total = np.zeros(n)
        self.n_alive = np.ones(J, dtype=np.int64)
        self.tried = np.zeros(3, dtype=np.int64)
        self.accepted = np.zeros(3, dtype=np.int64)
        self._alloc(16)

    def _alloc(self, cap: int) -> None:
        J = self.cfg.n_trees
        old = getattr(self, "var", None)
        fresh = {
            "var": np.full((J, cap), LEAF, dtype=np.int64),
            "cut": np.zeros((J, cap)),
            "left": np.full((J, cap), LEAF, dtype=np.int64),
            "right": np.full((J, cap), LEAF, dtype=np.int64),
            "parent": np.full((J, cap), LEAF, dtype=np.int64),
            "depth": np.zeros((J, cap), dtype=np.int64),
            "mu": np.zeros((J, cap)),
            "alive": np.zeros((J, cap), dtype=np.bool_),
        }
        if old is None:
            fresh["alive"][:, 0] = True
        else:
            k = old.shape[1]
            for name, arr in fresh.items():
                arr[:, :k] = getattr(self, name)
        for name, arr in fresh.items():
            setattr(self, name, arr)

    def step(self) -> None:
        """One backfitting sweep over all trees, then the variance draw."""
        cfg = self.cfg
        cap = self.var.shape[1]
        if self.n_alive.max() + 2 > cap:
            cap *= 2
            self._alloc(cap)
        U = self.rng.random((cfg.n_trees, 5))
        N = self.rng.standard_normal((cfg.n_trees, cap // 2 + 1))
        ok = sweep(
            self.X, self.ranks, self.uvals, self.n_unique, self.z, self.w, self.leaf_of, self.var, self.cut, self.left, self.right,
            self.parent, self.depth, self.alive, self.mu, self.fits, self.total, U, N,
            self.probs, cfg.eta, cfg.beta, self.sigma2, self.tau2, self.max_depth,
            self.tried, self.accepted, self.n_alive,
        )
        if not ok:
            raise BartFitError("non-finite leaf value; check outcome scaling")
        if cfg.sigma2_fixed is None:
            s2 = sample_sigma(self.z - self.total, self.w, cfg.nu, self.lam, self.rng)
            if not (math.isfinite(s2) and s2 > 0):
                raise BartFitError("non-finite error variance draw; check outcome scaling")
            self.sigma2 = s2

    def snapshot(self) -> Ensemble:
        return Ensemble(*compact_all(self.var, self.cut, self.left, self.right, self.mu))


def fit(X, y, weights=None, cfg: BartConfig | None = None, seed: int = 0) -> BartPosterior:
    """Sample the posterior of the (optionally weighted) sum-of-trees model.

    ``weights`` must be nonnegative with mean one; ``None`` means unit
    weights and yields exactly the same draws as passing all ones.
    """
    cfg = cfg or BartConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    n = X.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 rows, got {n}")
    if y.shape != (n,):
        raise ValueError("y length must equal row count")
    if not np.isfinite(y).all() or not np.isfinite(X).all():
        raise ValueError("X and y must be finite")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError("weights length must equal row count")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.mean() - 1.0) > 1e-8:
            raise ValueError(f"weights must be normalized to mean 1 (mean is {w.mean():.6g})")

    center, scale = _standardize(y)
    z = (y - center) / scale
    s2_ols = _initial_variance(X, z)
    lam = max(lambda_from_variance(s2_ols, cfg.nu, cfg.sigma_quantile), MIN_LAMBDA)
    sigma2 = cfg.sigma2_fixed if cfg.sigma2_fixed is not None else max(s2_ols, MIN_LAMBDA)

    rng = np.random.default_rng(seed)
    chain = _Chain(X, z, w, cfg, lam, sigma2, rng)
    draws, sig = [], []
    total_iter = cfg.n_burn + cfg.n_keep * cfg.thin
    for it in range(total_iter):
        chain.step()
        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == cfg.thin - 1:
            draws.append(chain.snapshot())
            sig.append(chain.sigma2)

    names = ("grow", "prune", "change")
    accept = {
        names[m]: (int(chain.accepted[m]) / int(chain.tried[m]) if chain.tried[m] else None)
        for m in range(3)
    }
    return BartPosterior(
        draws=draws,
        sigma2=np.array(sig),
        y_center=center,
        y_scale=scale,
        config=cfg,
        seed=seed,
        n_features=X.shape[1],
        lam=lam,
        accept=accept,
    )
