import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit

from narfcs import kernel
from narfcs.errors import NumericalError, SingularDesignError


def _random_problem(rng, n=None, k=None):
    n = n or int(rng.integers(20, 200))
    k = k or int(rng.integers(1, 8))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    return X, y


def test_ols_matches_dense_normal_equations_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        X, y = _random_problem(rng)
        fit = kernel.ols_fit(X, y)
        inv = np.linalg.inv(X.T @ X)
        beta = inv @ X.T @ y
        np.testing.assert_allclose(fit.beta_hat, beta, rtol=1e-8, atol=1e-8)
        resid = y - X @ beta
        assert fit.rss == pytest.approx(resid @ resid, rel=1e-8)
        L = fit.xtx_inv_factor
        np.testing.assert_allclose(L @ L.T, inv, rtol=1e-8, atol=1e-10)
        assert np.allclose(L, np.tril(L))
        assert fit.df_resid == X.shape[0] - X.shape[1]


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(2)
    X, y = _random_problem(rng, 500, 6)
    fit = kernel.ols_fit(X, y)
    g = X.T @ (y - X @ fit.beta_hat)
    assert np.max(np.abs(g)) < 1e-8 * np.max(np.abs(X.T @ y))


def test_ols_singular_design_raises_and_ridge_recovers():
    rng = np.random.default_rng(3)
    x = rng.normal(size=50)
    X = np.column_stack([np.ones(50), x, 2 * x])
    y = x + rng.normal(size=50)
    with pytest.raises(SingularDesignError):
        kernel.ols_fit(X, y)
    fit = kernel.ols_fit(X, y, kernel.DEFAULT_RIDGE)
    A = X.T @ X + kernel.DEFAULT_RIDGE * np.eye(3)
    np.testing.assert_allclose(fit.beta_hat, np.linalg.solve(A, X.T @ y), rtol=1e-6)


def test_ols_too_few_rows():
    with pytest.raises(SingularDesignError):
        kernel.ols_fit(np.ones((2, 2)), np.ones(2))


def test_ols_rejects_non_finite():
    X = np.ones((5, 1))
    y = np.array([1.0, 2.0, np.nan, 1.0, 0.0])
    with pytest.raises(NumericalError):
        kernel.ols_fit(X, y)


def _logistic_problem(rng, n=400, k=4):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    y = (rng.random(n) < expit(X @ rng.normal(scale=0.8, size=k))).astype(float)
    return X, y


def _plain_newton(X, y, ridge=0.0, iters=100):
    # independent oracle: undamped Newton with a fixed iteration budget
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-X @ b))
        H = X.T @ np.diag(p * (1 - p)) @ X + ridge * np.eye(X.shape[1])
        b = b + np.linalg.inv(H) @ (X.T @ (y - p) - ridge * b)
    return b


def test_logistic_terminal_gradient_below_tolerance():
    rng = np.random.default_rng(4)
    for _ in range(25):
        X, y = _logistic_problem(rng, int(rng.integers(100, 800)), int(rng.integers(1, 6)))
        fit = kernel.logistic_fit(X, y)
        assert fit.converged
        p = expit(X @ fit.beta_hat)
        assert np.max(np.abs(X.T @ (y - p))) < 1e-8
        assert fit.grad_norm < 1e-8


def test_logistic_matches_plain_newton_oracle():
    rng = np.random.default_rng(5)
    for ridge in (0.0, 0.5):
        X, y = _logistic_problem(rng)
        fit = kernel.logistic_fit(X, y, ridge)
        np.testing.assert_allclose(fit.beta_hat, _plain_newton(X, y, ridge), rtol=1e-7, atol=1e-9)
        p = expit(X @ fit.beta_hat)
        H = (X * (p * (1 - p))[:, None]).T @ X + ridge * np.eye(X.shape[1])
        np.testing.assert_allclose(fit.cov_factor @ fit.cov_factor.T, np.linalg.inv(H), rtol=1e-7, atol=1e-12)


def test_logistic_intercept_only_symmetric():
    fit = kernel.logistic_fit(np.ones((40, 1)), np.repeat([0.0, 1.0], 20))
    assert fit.converged
    assert fit.beta_hat[0] == pytest.approx(0.0, abs=1e-12)


def test_logistic_all_ones_with_ridge():
    X = np.ones((30, 1))
    y = np.ones(30)
    ridge = 0.1
    fit = kernel.logistic_fit(X, y, ridge)
    assert fit.converged
    # the penalized score 30 * (1 - expit(b)) - ridge * b has a single root
    root = brentq(lambda b: 30 * (1 - expit(b)) - ridge * b, 0, 100, xtol=1e-14)
    grid = np.linspace(root - 1e-3, root + 1e-3, 2001)
    pen = 30 * -np.logaddexp(0, -grid) - 0.5 * ridge * grid**2
    assert abs(grid[np.argmax(pen)] - fit.beta_hat[0]) <= 2e-6
    assert fit.beta_hat[0] == pytest.approx(root, abs=1e-8)


def test_logistic_rejects_non_binary():
    with pytest.raises(ValueError):
        kernel.logistic_fit(np.ones((3, 1)), np.array([0.0, 0.5, 1.0]))


def test_unconverged_draw_guard():
    rng = np.random.default_rng(10)
    X, y = _logistic_problem(rng)
    fit = kernel.logistic_fit(X, y, max_iter=1)
    assert not fit.converged and fit.iterations == 1
    with pytest.raises(NumericalError):
        kernel.draw_logistic_posterior(fit, np.random.default_rng(0))
    kernel.draw_logistic_posterior(fit, np.random.default_rng(0), allow_unconverged=True)


def _within(sample, expected, mcse, z=4.0):
    return np.all(np.abs(sample - expected) <= z * mcse)


def test_ols_posterior_moments():
    rng = np.random.default_rng(6)
    X, y = _random_problem(rng, 14, 3)
    fit = kernel.ols_fit(X, y)
    draws_rng = np.random.default_rng(7)
    N = 100_000
    betas = np.empty((N, 3))
    s2 = np.empty(N)
    for i in range(N):
        b, s = kernel.draw_ols_posterior(fit, draws_rng)
        betas[i], s2[i] = b, s * s
    df = fit.df_resid
    inv_s2 = 1 / s2
    assert _within(inv_s2.mean(), df / fit.rss, inv_s2.std() / np.sqrt(N))
    # sigma^2 is scaled inverse chi-square: mean rss/(df-2)
    assert _within(s2.mean(), fit.rss / (df - 2), s2.std() / np.sqrt(N))
    assert _within(betas.mean(0), fit.beta_hat, betas.std(0) / np.sqrt(N))
    # marginal covariance of beta* is E[sigma^2] (X'X)^-1
    cov_true = fit.rss / (df - 2) * np.linalg.inv(X.T @ X)
    centered = betas - fit.beta_hat
    for j in range(3):
        sq = centered[:, j] ** 2
        assert _within(sq.mean(), cov_true[j, j], sq.std() / np.sqrt(N))


def test_logistic_posterior_moments():
    rng = np.random.default_rng(8)
    X, y = _logistic_problem(rng, 300, 3)
    fit = kernel.logistic_fit(X, y)
    draws_rng = np.random.default_rng(9)
    N = 100_000
    draws = np.array([kernel.draw_logistic_posterior(fit, draws_rng) for _ in range(N)])
    cov = fit.cov_factor @ fit.cov_factor.T
    assert _within(draws.mean(0), fit.beta_hat, np.sqrt(np.diag(cov) / N))
    centered = draws - fit.beta_hat
    for j in range(3):
        sq = centered[:, j] ** 2
        assert _within(sq.mean(), cov[j, j], sq.std() / np.sqrt(N))
    cross = centered[:, 0] * centered[:, 1]
    assert _within(cross.mean(), cov[0, 1], cross.std() / np.sqrt(N))
    sample_cov = np.cov(draws.T)
    assert np.linalg.norm(sample_cov - cov) / np.linalg.norm(cov) < 0.10


def test_logistic_draw_with_zero_factor_and_repeatability():
    fit = kernel.LogisticFit(np.array([0.5, -1.0]), np.zeros((2, 2)), True, 3)
    assert kernel.draw_logistic_posterior(fit, np.random.default_rng(1)).tolist() == [0.5, -1.0]
    rng = np.random.default_rng(11)
    X, y = _logistic_problem(rng)
    fit = kernel.logistic_fit(X, y)
    a = kernel.draw_logistic_posterior(fit, np.random.default_rng(3))
    b = kernel.draw_logistic_posterior(fit, np.random.default_rng(3))
    assert a.tolist() == b.tolist()


def test_exact_interpolation():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    fit = kernel.ols_fit(X, np.array([1.0, 3.0, 5.0]))
    np.testing.assert_allclose(fit.beta_hat, [1.0, 2.0], atol=1e-12)
    assert fit.rss == pytest.approx(0.0, abs=1e-20)


def test_intercept_only_gives_mean():
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0])
    fit = kernel.ols_fit(np.ones((6, 1)), y)
    assert fit.beta_hat[0] == pytest.approx(y.mean(), rel=1e-14)
    assert fit.rss == pytest.approx(((y - y.mean()) ** 2).sum(), rel=1e-12)


def test_zero_rss_draw_consumes_stream():
    fit = kernel.OlsFit(np.array([1.0, 2.0]), 0.0, 3, np.eye(2))
    r1, r2 = np.random.default_rng(0), np.random.default_rng(0)
    b, s = kernel.draw_ols_posterior(fit, r1)
    assert s == 0.0
    assert b.tolist() == [1.0, 2.0]
    r2.chisquare(3)
    r2.standard_normal(2)
    assert r1.random() == r2.random()
