import numpy as np
import pytest

from transportlab.data import split_by_membership
from transportlab.evaluation import auc
from transportlab.linmod import fit_ols
from transportlab.overlap import CovariatePolicy, fit_overlap, select_columns
from transportlab.synth import ShiftSpec, friedman, generate, mask_target, true_mean


def test_counts_and_ids():
    d = generate(ShiftSpec(7, 3, 5, seed=1))
    assert d.n == 10 and d.membership.sum() == 7
    assert d.row_ids[0] == "s0" and d.row_ids[-1] == "t2"
    assert d.names == ["x1", "x2", "x3", "x4", "x5"]


def test_deterministic():
    a, b = generate(ShiftSpec(seed=4)), generate(ShiftSpec(seed=4))
    np.testing.assert_array_equal(a.rows, b.rows)
    np.testing.assert_array_equal(a.outcome, b.outcome)


def test_constant_truth_noise_free():
    d = generate(ShiftSpec(20, 20, 5, truth="constant", constant=3.5, noise_sd=0))
    assert (d.outcome == 3.5).all()


def test_shift_moves_target_means():
    d = generate(ShiftSpec(4000, 4000, 5, shift=(1, 0, 0, 0, -1), truth="linear", beta=(0,) * 5, seed=2))
    diff = d.rows[d.membership == 0].mean(0) - d.rows[d.membership == 1].mean(0)
    np.testing.assert_allclose(diff, [1, 0, 0, 0, -1], atol=0.08)


def test_friedman_covariates_uniform():
    d = generate(ShiftSpec(300, 1, 6, seed=3))
    X = d.rows[d.membership == 1]
    assert X.min() >= 0 and X.max() <= 1
    np.testing.assert_allclose(d.outcome[:300] - friedman(X), d.outcome[:300] - true_mean(ShiftSpec(p=6), X))


def test_linear_truth_ols_within_three_se():
    beta = (1.0, -2.0, 0.5, 0.0, 3.0)
    d = generate(ShiftSpec(2000, 10, 5, truth="linear", beta=beta, noise_sd=1.0, seed=5))
    s, _ = split_by_membership(d)
    fit = fit_ols(s.rows, s.outcome)
    A = np.column_stack([np.ones(s.n), s.rows])
    se = np.sqrt(np.diag(fit.residual_variance * np.linalg.inv(A.T @ A)))[1:]
    assert (np.abs(fit.coefficients[1:] - beta) < 3 * se).all()


def test_null_shift_auc_near_half():
    d = generate(ShiftSpec(5000, 5000, 5, truth="linear", beta=(1,) * 5, seed=6))
    s, t = d.take(d.membership == 1), d.take(d.membership == 0)
    ov = fit_overlap(s.rows, t.rows, s.names)
    a = auc(np.r_[ov.scores(s.rows), ov.scores(t.rows)], np.r_[np.ones(s.n), np.zeros(t.n)])
    assert abs(a - 0.5) < 0.03


def test_mask_target():
    d = mask_target(generate(ShiftSpec(5, 5, 5)))
    assert np.isnan(d.outcome[d.membership == 0]).all()
    assert not np.isnan(d.outcome[d.membership == 1]).any()


@pytest.mark.parametrize("bad", [dict(p=4), dict(n_source=0), dict(noise_sd=-1), dict(truth="linear"), dict(truth="x")])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        ShiftSpec(**bad)


def test_covariate_policies():
    names = ["a", "b", "c=u", "c=v"]
    assert select_columns(CovariatePolicy.parse("all"), names) == [0, 1, 2, 3]
    assert select_columns(CovariatePolicy.parse("exclude:c"), names) == [0, 1]
    assert select_columns(CovariatePolicy.parse("exclude:b,c=u"), names) == [0, 3]
    with pytest.raises(ValueError):
        select_columns(CovariatePolicy.parse("exclude:zz"), names)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 4))
    y = 5 * X[:, 1] + 0.1 * X[:, 3] + 0.01 * rng.normal(size=100)
    assert select_columns(CovariatePolicy.parse("top_k:1"), names, X, y) == [1]
    assert str(CovariatePolicy.parse("top_k:3")) == "top_k:3"
    with pytest.raises(ValueError):
        CovariatePolicy.parse("some:thing")


def test_overlap_drops_constant_columns():
    rng = np.random.default_rng(1)
    Xs = np.column_stack([rng.normal(size=50), np.ones(50)])
    Xt = np.column_stack([rng.normal(1, 1, 50), np.ones(50)])
    ov = fit_overlap(Xs, Xt, ["x", "k"])
    assert ov.column_names == ["x"] and ov.scores(Xs).shape == (50,)
