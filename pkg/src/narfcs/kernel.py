"""Least-squares and logistic fits, and the Bayesian draws behind ``norm`` and ``logreg``.

Both fits are deterministic. Draws take a :class:`numpy.random.Generator` and
consume it in a fixed order so that callers can reason about stream usage:

* :func:`draw_ols_posterior` draws one chi-square variate, then ``k`` normals.
* :func:`draw_logistic_posterior` draws ``k`` normals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import NumericalError, SingularDesignError

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-5
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 25
_COND_LIMIT = 1e13


@dataclass(frozen=True)
class OlsFit:
    beta_hat: np.ndarray
    rss: float
    df_resid: int
    xtx_inv_factor: np.ndarray  # lower triangular, L @ L.T == inv(X'X + ridge*I)
    ridge: float = 0.0


@dataclass(frozen=True)
class LogisticFit:
    beta_hat: np.ndarray
    cov_factor: np.ndarray  # lower triangular
    converged: bool
    iterations: int
    ridge: float = 0.0
    grad_norm: float = float("nan")


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite values in model input")


def _spd_inverse_factor(A: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L' = inv(A) for symmetric positive definite A.

    Falls back to growing diagonal jitter when A is numerically indefinite.
    """
    k = A.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    jitter = 0.0
    scale = max(float(np.max(np.abs(np.diag(A)))), 1.0)
    for _ in range(8):
        try:
            c = linalg.cho_factor(A + jitter * np.eye(k), lower=True)
            inv = linalg.cho_solve(c, np.eye(k))
            inv = 0.5 * (inv + inv.T)
            return np.linalg.cholesky(inv)
        except (linalg.LinAlgError, np.linalg.LinAlgError):
            jitter = scale * 1e-12 if jitter == 0.0 else jitter * 100
    raise NumericalError("could not factor covariance matrix")


def ols_fit(X: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> OlsFit:
    """Solve ``(X'X + ridge I) beta = X'y``.

    Raises :class:`SingularDesignError` when ``ridge == 0`` and ``X'X`` is
    singular; callers retry with :data:`DEFAULT_RIDGE`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, k) and y (n,)")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    _check_finite(X, y)
    n, k = X.shape
    if ridge == 0 and n < k + 1:
        raise SingularDesignError(f"{n} rows cannot identify {k} coefficients plus residual variance")
    A = X.T @ X
    if ridge > 0:
        A = A + ridge * np.eye(k)
    elif k and np.linalg.cond(A) > _COND_LIMIT:
        raise SingularDesignError("X'X is singular")
    try:
        c = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError:
        raise SingularDesignError("X'X + ridge*I is not positive definite") from None
    beta = linalg.cho_solve(c, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    return OlsFit(
        beta_hat=beta,
        rss=rss,
        df_resid=max(n - k, 1),
        xtx_inv_factor=_spd_inverse_factor(A),
        ridge=float(ridge),
    )


def draw_ols_posterior(fit: OlsFit, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Draw ``(beta*, sigma*)`` from the noninformative-prior normal posterior."""
    if fit.df_resid < 1:
        raise ValueError("df_resid must be at least 1")
    g = rng.chisquare(fit.df_resid)
    sigma = float(np.sqrt(fit.rss / g)) if fit.rss > 0 else 0.0
    u = rng.standard_normal(fit.beta_hat.shape[0])
    if sigma == 0.0:
        return fit.beta_hat.copy(), 0.0
    return fit.beta_hat + sigma * (fit.xtx_inv_factor @ u), sigma


def _penalized_loglik(X, y, beta, ridge):
    eta = X @ beta
    # log(1 + exp(eta)) computed stably
    ll = y @ eta - np.logaddexp(0.0, eta).sum()
    return ll - 0.5 * ridge * beta @ beta


def logistic_fit(X: np.ndarray, y: np.ndarray, ridge: float = 0.0,
                 tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER) -> LogisticFit:
    """Newton-Raphson (IRLS) on the ridge-penalized log-likelihood.

    Convergence is declared when the max-norm of ``X'(y - p) - ridge*beta``
    drops below ``tol``. A non-converged fit is returned with
    ``converged=False`` rather than raised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, k) and y (n,)")
    _check_finite(X, y)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("y must be 0/1")
    n, k = X.shape
    beta = np.zeros(k)
    eye = np.eye(k)
    converged = False
    it = 0
    ll = _penalized_loglik(X, y, beta, ridge)
    gnorm = np.inf
    while True:
        p = expit(X @ beta)
        grad = X.T @ (y - p) - ridge * beta
        gnorm = float(np.max(np.abs(grad))) if k else 0.0
        if gnorm < tol:
            converged = True
            break
        if it >= max_iter:
            break
        w = p * (1.0 - p)
        H = (X * w[:, None]).T @ X + ridge * eye
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # step halving keeps the penalized likelihood from decreasing
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            ll_new = _penalized_loglik(X, y, cand, ridge)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        beta, ll = cand, ll_new
        it += 1
    p = expit(X @ beta)
    w = p * (1.0 - p)
    H = (X * w[:, None]).T @ X + ridge * eye
    try:
        cov_factor = _spd_inverse_factor(H)
    except NumericalError:
        cov_factor = np.zeros((k, k))
        converged = False
    if not np.all(np.isfinite(cov_factor)):
        cov_factor = np.zeros((k, k))
        converged = False
    return LogisticFit(
        beta_hat=beta,
        cov_factor=cov_factor,
        converged=converged,
        iterations=it,
        ridge=float(ridge),
        grad_norm=gnorm,
    )


def draw_logistic_posterior(fit: LogisticFit, rng: np.random.Generator,
                            allow_unconverged: bool = False) -> np.ndarray:
    """Normal-approximation draw ``beta_hat + L u`` with ``u ~ N(0, I)``."""
    if not fit.converged and not allow_unconverged:
        raise NumericalError("posterior draw requested from a non-converged logistic fit")
    u = rng.standard_normal(fit.beta_hat.shape[0])
    return fit.beta_hat + fit.cov_factor @ u
