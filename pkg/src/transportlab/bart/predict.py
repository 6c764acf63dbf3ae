from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampler import BartPosterior


@dataclass(frozen=True)
class PredictiveSummary:
    post_mean: np.ndarray
    post_sd: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_draws: int
    level: float


def interval_ranks(n_draws: int, level: float) -> tuple[int, int]:
    """1-based order statistics bounding the equal-tailed interval.

    The lower end is the k-th smallest draw and the upper end the k-th
    largest, with k = floor(n_draws * (1 - level) / 2), at least 1.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    k = max(1, math.floor(n_draws * (1.0 - level) / 2.0 + 1e-9))
    return k, n_draws + 1 - k


def summarize_draws(draws: np.ndarray, level: float = 0.95) -> PredictiveSummary:
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[0]
    lo, hi = interval_ranks(n, level)
    srt = np.sort(draws, axis=0)
    return PredictiveSummary(
        post_mean=draws.mean(axis=0),
        post_sd=draws.std(axis=0, ddof=1) if n > 1 else np.zeros(draws.shape[1]),
        ci_low=srt[lo - 1],
        ci_high=srt[hi - 1],
        n_draws=n,
        level=level,
    )


def predict_posterior(
    post: BartPosterior,
    Xnew,
    level: float = 0.95,
    *,
    include_noise: bool = False,
    noise_seed: int | None = None,
) -> PredictiveSummary:
    """Posterior summary of the mean function at each row of ``Xnew``.

    With ``include_noise`` each draw gets Gaussian noise with that draw's
    error standard deviation, giving intervals for new observations.
    """
    f = post.draw_matrix(Xnew)
    if include_noise:
        rng = np.random.default_rng(post.seed if noise_seed is None else noise_seed)
        f = f + post.sigma[:, None] * rng.standard_normal(f.shape)
    return summarize_draws(f, level)
