"""Prior hyperparameters and conjugate updates for the sum-of-trees model."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import chi2

from ..linmod import fit_ols


@dataclass(frozen=True)
class BartConfig:
    n_trees: int = 200
    eta: float = 2.0
    beta: float = 0.95
    nu: float = 3.0
    sigma_quantile: float = 0.9
    k_scale: float = 2.0
    n_burn: int = 1000
    n_keep: int = 1000
    thin: int = 1
    proposal_probs: tuple[float, float, float] = (0.25, 0.25, 0.5)
    # test hooks: cap tree depth, hold the error variance fixed
    max_depth: int | None = None
    sigma2_fixed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "proposal_probs", tuple(float(p) for p in self.proposal_probs))
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 < self.sigma_quantile < 1:
            raise ValueError("sigma_quantile must lie in (0, 1)")
        if not self.k_scale > 0:
            raise ValueError("k_scale must be positive")
        if self.n_burn < 0 or self.n_keep < 1 or self.thin < 1:
            raise ValueError("need n_burn >= 0, n_keep >= 1, thin >= 1")
        probs = self.proposal_probs
        if len(probs) != 3 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("proposal_probs must be three nonnegative numbers summing to 1")
        if probs[0] == 0:
            raise ValueError("grow probability must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.sigma2_fixed is not None and not self.sigma2_fixed > 0:
            raise ValueError("sigma2_fixed must be positive")

    @property
    def sigma_mu(self) -> float:
        """Leaf prior standard deviation on the range-1 outcome scale."""
        return 0.5 / (self.k_scale * math.sqrt(self.n_trees))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["proposal_probs"] = list(self.proposal_probs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BartConfig":
        d = dict(d)
        if "proposal_probs" in d:
            d["proposal_probs"] = tuple(d["proposal_probs"])
        return cls(**d)


def split_prob(depth, eta: float, beta: float):
    """Prior probability that a node at ``depth`` is internal."""
    return beta * (1.0 + np.asarray(depth, dtype=float)) ** (-eta)


def tree_log_prior(tree, eta: float, beta: float) -> float:
    """Log prior of the tree shape (split/no-split at every node)."""
    internal, leaves = tree.node_depths()
    return float(
        np.log(split_prob(internal, eta, beta)).sum() + np.log1p(-split_prob(leaves, eta, beta)).sum()
    )


def calibrate_sigma_prior(X, y, nu: float, q_cal: float) -> float:
    """Scale ``lambda`` of the error-variance prior.

    Chosen so that Pr(sigma^2 < OLS residual variance) = ``q_cal`` under
    ``nu * lambda / sigma^2 ~ chi2(nu)``.
    """
    s2 = fit_ols(X, y).residual_variance
    return lambda_from_variance(s2, nu, q_cal)


def lambda_from_variance(s2: float, nu: float, q_cal: float) -> float:
    return float(chi2.ppf(1.0 - q_cal, nu) * s2 / nu)


def leaf_posterior(r, w, sigma2: float, sigma_mu2: float) -> tuple[float, float]:
    """Conjugate normal posterior (mean, variance) of a leaf value.

    Row ``i`` has likelihood N(r_i | mu, sigma2 / w_i); the prior is
    N(0, sigma_mu2).
    """
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    prec = 1.0 / sigma_mu2 + w.sum() / sigma2
    return float((w @ r / sigma2) / prec), float(1.0 / prec)


def leaf_log_marginal(W, S, sigma2: float, sigma_mu2: float):
    """Log marginal likelihood of a leaf up to terms shared by every partition.

    ``W`` and ``S`` are the leaf's weight sum and weighted residual sum.
    """
    prec = 1.0 / sigma_mu2 + W / sigma2
    return -0.5 * np.log(sigma_mu2 * prec) + 0.5 * (S / sigma2) ** 2 / prec


def sigma_posterior_params(r, w, nu: float, lam: float) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) of the error-variance full conditional.

    Rows with zero weight carry no information and are excluded from the
    count.
    """
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    n = int(np.count_nonzero(w))
    return (nu + n) / 2.0, (nu * lam + float(w @ (r * r))) / 2.0


def sample_sigma(r, w, nu: float, lam: float, rng: np.random.Generator) -> float:
    shape, scale = sigma_posterior_params(r, w, nu, lam)
    return scale / rng.gamma(shape)
