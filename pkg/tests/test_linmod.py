import numpy as np
import pytest

from transportlab.linmod import (
    PROB_EPS,
    LogisticFit,
    RankDeficientError,
    SeparationError,
    fit_logistic,
    fit_ols,
    predict_proba,
    rank_importance,
    top_k,
)


def test_ols_exact_line():
    f = fit_ols(np.array([1.0, 2, 3, 4]), np.array([2.0, 4, 6, 8]))
    np.testing.assert_allclose(f.coefficients, [0, 2], atol=1e-12)
    assert f.residual_variance == pytest.approx(0, abs=1e-24)


def test_ols_constant_outcome():
    X = np.random.default_rng(0).normal(size=(20, 3))
    f = fit_ols(X, np.full(20, 4.5))
    np.testing.assert_allclose(f.coefficients, [4.5, 0, 0, 0], atol=1e-12)


def test_ols_duplicate_column_is_rank_deficient():
    x = np.random.default_rng(1).normal(size=(10, 1))
    with pytest.raises(RankDeficientError) as exc:
        fit_ols(np.hstack([x, x]), x[:, 0], names=["a", "b"])
    assert "b" in str(exc.value)


def test_ols_needs_more_rows_than_columns():
    with pytest.raises(ValueError):
        fit_ols(np.eye(3), np.ones(3))


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 4)) * [1, 10, 100, 0.1]
    y = X @ [1, -2, 0.5, 3] + rng.normal(size=100)
    f = fit_ols(X, y)
    r = y - f.predict(X)
    A = np.column_stack([np.ones(100), X])
    scale = np.abs(A).sum(axis=0) * np.abs(r).max()
    assert (np.abs(A.T @ r) <= 1e-8 * scale).all()


def test_importance_exact():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    X = (X - X.mean(0)) / X.std(0, ddof=1)
    ranked = rank_importance(X, 3 * X[:, 0], ["x1", "x2"])
    assert ranked[0][0] == "x1"
    assert ranked[0][1] == pytest.approx(3)
    assert ranked[1][1] == pytest.approx(0, abs=1e-10)


def test_importance_scale_invariant():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 3))
    y = X @ [1, 2, 3] + rng.normal(size=100)
    a = dict(rank_importance(X, y, ["a", "b", "c"]))
    X2 = X * [10, 1, 1]
    b = dict(rank_importance(X2, y, ["a", "b", "c"]))
    assert a["a"] == pytest.approx(b["a"], rel=1e-9)


def test_importance_ties_alphabetical(monkeypatch):
    import transportlab.linmod as lm

    class Fake:
        coefficients = np.array([0.0, 2.0, -2.0])
        column_names = ("zeta", "alpha")

    monkeypatch.setattr(lm, "fit_ols", lambda X, y, names=None: Fake)
    X = np.column_stack([np.arange(5.0), np.arange(5.0)[::-1]])
    assert [n for n, _ in lm.rank_importance(X, np.zeros(5))] == ["alpha", "zeta"]


def test_top_k():
    ranked = [("e", 5), ("d", 4), ("c", 3), ("b", 2), ("a", 1)]
    assert top_k(ranked, 2) == ["e", "d"]
    with pytest.raises(ValueError):
        top_k(ranked, 0)


def test_logistic_intercept_only():
    s = np.array([1] * 25 + [0] * 75)
    f = fit_logistic(np.zeros((100, 0)), s)
    assert f.coefficients[0] == pytest.approx(np.log(0.25 / 0.75), abs=1e-8)
    assert f.converged


def test_logistic_separation():
    x = np.arange(20.0)
    with pytest.raises(SeparationError, match="separation: overlap scores degenerate"):
        fit_logistic(x, (x > 9.5).astype(float))


def test_logistic_consistency():
    # large-sample Monte Carlo oracle: MLE within 0.05 of the generating values
    rng = np.random.default_rng(6)
    x = rng.normal(size=50000)
    s = rng.random(50000) < 1 / (1 + np.exp(-(0.5 - 1.0 * x)))
    f = fit_logistic(x, s.astype(float))
    assert abs(f.coefficients[0] - 0.5) < 0.05
    assert abs(f.coefficients[1] + 1.0) < 0.05


def test_logistic_score_equations_and_monotone_trace():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(400, 3))
    s = (rng.random(400) < 1 / (1 + np.exp(-(X @ [1, -0.5, 0.2])))).astype(float)
    f = fit_logistic(X, s)
    assert f.converged and f.max_abs_score <= 1e-8
    assert abs(predict_proba(f, X).sum() - s.sum()) < 1e-8
    assert all(b >= a for a, b in zip(f.trace, f.trace[1:]))


def test_logistic_requires_both_classes():
    with pytest.raises(ValueError):
        fit_logistic(np.ones((5, 1)), np.ones(5))


def fixed(coefs):
    return LogisticFit(np.asarray(coefs, dtype=float), True, 0, 0.0, 0.0, ("x",), ())


def test_predict_proba_rules():
    assert predict_proba(fixed([0, 1]), np.array([[0.0]]))[0] == 0.5
    assert predict_proba(fixed([0, 1]), np.array([[40.0]]))[0] == 1 - PROB_EPS
    assert predict_proba(fixed([0, 1]), np.array([[-40.0]]))[0] == PROB_EPS
    p = predict_proba(fixed([0, 1]), np.linspace(-5, 5, 11)[:, None])
    assert (np.diff(p) > 0).all()
    with pytest.raises(ValueError):
        predict_proba(fixed([0, 1]), np.zeros((2, 2)))
