import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from transportlab.bart import (
    BartConfig,
    Tree,
    calibrate_sigma_prior,
    lambda_from_variance,
    leaf_log_marginal,
    leaf_posterior,
    sample_sigma,
    sigma_posterior_params,
    split_prob,
    tree_log_prior,
)


def test_lambda_matches_independent_quantile(frozen):
    lam = lambda_from_variance(4.0, 3.0, 0.9)
    assert abs(lam - frozen["lambda_s2_4_nu3_q0.9"]) < 1e-3
    assert lam == pytest.approx(0.7792, abs=1e-4)


def test_lambda_limits_and_linearity():
    assert lambda_from_variance(1.0, 3, 1 - 1e-12) < 1e-7
    assert lambda_from_variance(8.0, 3, 0.9) == pytest.approx(2 * lambda_from_variance(4.0, 3, 0.9))


def test_lambda_calibration_probability():
    # under the prior, Pr(sigma^2 < s2) must equal q
    s2, nu, q = 2.5, 3.0, 0.9
    lam = lambda_from_variance(s2, nu, q)
    assert stats.chi2.sf(nu * lam / s2, nu) == pytest.approx(q, abs=1e-12)


def test_calibrate_from_data_uses_ols_variance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    y = X @ [1, 1] + rng.normal(size=50)
    resid = y - np.column_stack([np.ones(50), X]) @ np.linalg.lstsq(np.column_stack([np.ones(50), X]), y, rcond=None)[0]
    s2 = resid @ resid / (50 - 3)
    assert calibrate_sigma_prior(X, y, 3, 0.9) == pytest.approx(lambda_from_variance(s2, 3, 0.9), rel=1e-10)


def test_split_probabilities():
    assert split_prob(0, 2, 0.95) == pytest.approx(0.95)
    assert split_prob(1, 2, 0.95) == pytest.approx(0.2375)


def test_tree_log_prior():
    assert tree_log_prior(Tree.leaf(), 2, 0.95) == pytest.approx(math.log(0.05))
    stump = Tree.stump(0, 0.5)
    assert tree_log_prior(stump, 2, 0.95) == pytest.approx(math.log(0.95) + 2 * math.log(1 - 0.2375))


def test_leaf_posterior_examples():
    m, v = leaf_posterior([1, 1], [1, 1], 1, 1)
    assert (m, v) == pytest.approx((2 / 3, 1 / 3))
    m, v = leaf_posterior([1, 3], [1, 0], 1, 1)
    assert (m, v) == pytest.approx((0.5, 0.5))
    m, _ = leaf_posterior([1, 2, 6], [1, 2, 1], 1, 1e12)
    assert m == pytest.approx((1 + 4 + 6) / 4, rel=1e-9)


def _numerical_posterior(r, w, s2, t2):
    def logg(mu):
        return -mu * mu / (2 * t2) - np.sum(w * (r - mu) ** 2) / (2 * s2)

    mode = optimize.minimize_scalar(lambda m: -logg(m), bracket=(-10, 10), tol=1e-14).x
    ref = logg(mode)
    sd_guess = 1 / math.sqrt(1 / t2 + w.sum() / s2)
    lo, hi = mode - 40 * sd_guess, mode + 40 * sd_guess

    def mom(k):
        f = lambda m: (m - mode) ** k * math.exp(logg(m) - ref)  # noqa: E731
        return integrate.quad(f, lo, hi, points=[mode], epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    z = mom(0)
    m1 = mom(1) / z
    return mode + m1, mom(2) / z - m1 * m1


@pytest.mark.parametrize("case", range(20))
def test_leaf_posterior_matches_quadrature(case):
    rng = np.random.default_rng(100 + case)
    r = rng.normal(0, 1, 10)
    w = rng.uniform(0, 3, 10)
    s2 = rng.uniform(0.1, 2)
    t2 = rng.uniform(0.01, 1)
    m, v = leaf_posterior(r, w, s2, t2)
    mq, vq = _numerical_posterior(r, w, s2, t2)
    assert abs(m - mq) < 1e-8
    assert abs(v - vq) < 1e-8


def test_leaf_posterior_weight_variance_scaling():
    rng = np.random.default_rng(1)
    r, w = rng.normal(size=8), rng.uniform(0, 2, 8)
    a = leaf_posterior(r, w, 0.7, 0.3)
    b = leaf_posterior(r, 3.7 * w, 3.7 * 0.7, 0.3)
    assert a == pytest.approx(b, rel=1e-12)


def test_leaf_log_marginal_matches_gaussian_density():
    # the marginal of r under mu ~ N(0, t2) is N(0, diag(s2 / w) + t2 11'); compare
    # likelihood ratios of a two-leaf split against the unsplit leaf
    rng = np.random.default_rng(2)
    r, w = rng.normal(size=9), rng.uniform(0.5, 2, 9)
    s2, t2 = 0.8, 0.4
    left = np.arange(9) < 4

    def logdens(idx):
        cov = np.diag(s2 / w[idx]) + t2
        return stats.multivariate_normal(np.zeros(idx.sum()), cov).logpdf(r[idx])

    exact = logdens(left) + logdens(~left) - logdens(np.ones(9, bool))

    def lml(idx):
        return leaf_log_marginal(w[idx].sum(), (w[idx] * r[idx]).sum(), s2, t2)

    ours = lml(left) + lml(~left) - lml(np.ones(9, bool))
    assert ours == pytest.approx(exact, abs=1e-10)


def test_sigma_posterior_parameters():
    assert sigma_posterior_params([1, -1], [1, 1], 3, 1) == (2.5, 2.5)
    assert sigma_posterior_params([5, 7, 1], [0, 0, 0], 3, 0.4) == (1.5, pytest.approx(0.6))


def test_sigma_draw_moments():
    rng = np.random.default_rng(3)
    r, w = np.array([1.0, -2.0, 0.5, 0.3]), np.array([1.0, 0.5, 2.0, 0.5])
    shape, scale = sigma_posterior_params(r, w, 3, 1)
    draws = np.array([sample_sigma(r, w, 3, 1, rng) for _ in range(100_000)])
    assert (draws > 0).all()
    assert abs(draws.mean() / (scale / (shape - 1)) - 1) < 0.02


def test_config_validation():
    BartConfig()
    for bad in (dict(beta=1.0), dict(eta=-1), dict(nu=0), dict(sigma_quantile=1.0), dict(proposal_probs=(0.5, 0.5, 0.5))):
        with pytest.raises(ValueError):
            BartConfig(**bad)
    assert BartConfig(n_trees=200, k_scale=2).sigma_mu == pytest.approx(0.5 / (2 * math.sqrt(200)))
    cfg = BartConfig(n_trees=3, proposal_probs=(0.5, 0.5, 0))
    assert BartConfig.from_dict(cfg.to_dict()) == cfg
