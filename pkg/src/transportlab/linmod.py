"""Least squares and logistic regression.

OLS calibrates the BART error-variance prior and ranks covariates by
importance; logistic regression, fit by IRLS, produces overlap scores
Pr(S=1 | X).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

PROB_EPS = 1e-12


class RankDeficientError(ValueError):
    def __init__(self, dependent: list[str]):
        self.dependent = dependent
        super().__init__(f"design matrix is rank deficient; dependent columns: {', '.join(dependent)}")


class SeparationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray  # intercept first
    residual_variance: float
    column_names: tuple[str, ...]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.coefficients[0] + X @ self.coefficients[1:]


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray  # intercept first
    converged: bool
    iterations: int
    max_abs_score: float
    loglik: float
    column_names: tuple[str, ...] = ()
    trace: tuple[float, ...] = ()


def _names(p: int, names) -> tuple[str, ...]:
    if names is None:
        return tuple(f"x{j + 1}" for j in range(p))
    if len(names) != p:
        raise ValueError("names length must equal column count")
    return tuple(names)


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_ols(X, y, names=None) -> LinearFit:
    """Least-squares fit with intercept via pivoted QR.

    Raises :class:`RankDeficientError` naming the dependent columns instead
    of regularizing.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("y length must equal row count")
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 (n={n}, p={p})")
    cols = ("(intercept)",) + _names(p, names)
    A = _with_intercept(X)
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, p + 1) * np.finfo(float).eps * 10
    rank = int((diag > tol).sum())
    if rank < p + 1:
        raise RankDeficientError(sorted(cols[i] for i in piv[rank:]))
    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p + 1)
    beta[piv] = beta_piv
    resid = y - A @ beta
    return LinearFit(beta, float(resid @ resid / (n - p - 1)), cols[1:])


def rank_importance(X, y, names=None) -> list[tuple[str, float]]:
    """Covariates ordered by |coefficient| times column standard deviation.

    Ties are broken alphabetically.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    fit = fit_ols(X, y, names)
    sd = X.std(axis=0, ddof=1)
    imp = np.abs(fit.coefficients[1:]) * sd
    return sorted(zip(fit.column_names, imp.tolist()), key=lambda t: (-t[1], t[0]))


def top_k(ranked: list[tuple[str, float]], k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be positive")
    return [name for name, _ in ranked[:k]]


def _loglik(eta: np.ndarray, s: np.ndarray) -> float:
    # log(1 + exp(eta)) computed stably
    return float(s @ eta - np.logaddexp(0.0, eta).sum())


def fit_logistic(
    X,
    s,
    tol: float = 1e-8,
    max_iter: int = 100,
    separation_bound: float = 30.0,
    names=None,
) -> LogisticFit:
    """Maximum-likelihood logistic regression with intercept by IRLS.

    Newton steps are halved while they decrease the log-likelihood.
    Iteration stops once the largest absolute score component is at most
    ``tol``. A coefficient vector whose norm exceeds ``separation_bound``
    is taken as (quasi-)complete separation.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    s = np.asarray(s, dtype=float)
    n, p = X.shape
    if s.shape != (n,):
        raise ValueError("s length must equal row count")
    if not np.isin(s, (0.0, 1.0)).all():
        raise ValueError("s must be 0/1")
    if s.min() == s.max():
        raise ValueError("both classes must be present")
    A = _with_intercept(X)
    beta = np.zeros(p + 1)
    eta = A @ beta
    ll = _loglik(eta, s)
    trace = [ll]
    converged = False
    for it in range(max_iter + 1):
        mu = expit(eta)
        grad = A.T @ (s - mu)
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        if it == max_iter:
            break
        w = mu * (1.0 - mu)
        H = A.T @ (A * w[:, None])
        try:
            step = scipy.linalg.solve(H, grad, assume_a="pos")
        except (scipy.linalg.LinAlgError, ValueError):
            raise SeparationError("separation: overlap scores degenerate (singular information matrix)") from None
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = A @ cand
            ll_c = _loglik(eta_c, s)
            if ll_c >= ll or t < 1e-10:
                break
            t *= 0.5
        if ll_c < ll:
            # no ascent direction left at machine precision
            break
        beta, eta, ll = cand, eta_c, ll_c
        trace.append(ll)
        if np.linalg.norm(beta) > separation_bound:
            raise SeparationError(
                f"separation: overlap scores degenerate (coefficient norm {np.linalg.norm(beta):.1f} "
                f"exceeds {separation_bound:g})"
            )
    return LogisticFit(
        coefficients=beta,
        converged=converged,
        iterations=it,
        max_abs_score=float(np.max(np.abs(grad))),
        loglik=ll,
        column_names=_names(p, names),
        trace=tuple(trace),
    )


def predict_proba(f: LogisticFit, X) -> np.ndarray:
    """Fitted probabilities, clamped to ``[1e-12, 1 - 1e-12]``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != len(f.coefficients) - 1:
        raise ValueError(f"expected {len(f.coefficients) - 1} columns, got {X.shape[1]}")
    p = expit(f.coefficients[0] + X @ f.coefficients[1:])
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
