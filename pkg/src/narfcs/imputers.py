"""Univariate imputation methods and the random initial fill.

Random stream contract: each imputer returns immediately, without touching
the generator, when there is nothing to impute. Otherwise it draws the
posterior parameters first and then one variate per missing row, in row
order. The ``mnar.*`` variants consume exactly the same stream as their MAR
counterparts; the offset is deterministic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import kernel
from .errors import ImputationError, SingularDesignError
from .ums import UmsExpression, evaluate_ums

log = logging.getLogger(__name__)

MAR_METHODS = ("norm", "logreg")
MNAR_METHODS = ("mnar.norm", "mnar.logreg")
METHODS = ("",) + MAR_METHODS + MNAR_METHODS
METHOD_KIND = {"norm": "continuous", "mnar.norm": "continuous",
               "logreg": "binary", "mnar.logreg": "binary"}


def mar_counterpart(method: str) -> str:
    return method[5:] if method.startswith("mnar.") else method


@dataclass
class UnivariateContext:
    """Everything one univariate imputation step needs.

    ``completed`` maps variable names to full-length columns holding observed
    values and the current imputations. ``miss_rows`` are the rows where the
    target was originally missing.
    """
    target: str
    predictors: Sequence[str]
    completed: Mapping[str, np.ndarray]
    miss_rows: np.ndarray
    rng: np.random.Generator
    ums: UmsExpression | None = None
    notes: list[str] = field(default_factory=list)

    def design(self) -> np.ndarray:
        y = self.completed[self.target]
        cols = [np.ones(y.shape[0])] + [np.asarray(self.completed[p], dtype=float) for p in self.predictors]
        return np.column_stack(cols)

    def observed_rows(self) -> np.ndarray:
        obs = np.ones(self.completed[self.target].shape[0], dtype=bool)
        obs[self.miss_rows] = False
        return obs


def _fit_ols(ctx: UnivariateContext, X, y) -> kernel.OlsFit:
    try:
        return kernel.ols_fit(X, y, 0.0)
    except SingularDesignError:
        ctx.notes.append(f"{ctx.target}: singular design, ridge {kernel.DEFAULT_RIDGE}")
        try:
            return kernel.ols_fit(X, y, kernel.DEFAULT_RIDGE)
        except Exception as exc:
            raise ImputationError(f"{ctx.target}: linear fit failed: {exc}") from exc


def _separated(X, y, fit: kernel.LogisticFit) -> bool:
    """Every observed row classified correctly: the unpenalized MLE does not exist."""
    eta = X @ fit.beta_hat
    return bool(np.all((eta > 0) == (y > 0.5)))


def _fit_logistic(ctx: UnivariateContext, X, y) -> kernel.LogisticFit:
    fit = kernel.logistic_fit(X, y, 0.0)
    if fit.converged and not _separated(X, y, fit):
        return fit
    ridged = kernel.logistic_fit(X, y, kernel.DEFAULT_RIDGE)
    if not ridged.converged:
        msg = f"{ctx.target}: logistic fit not converged after {ridged.iterations} iterations (used anyway)"
        ctx.notes.append(msg)
        log.debug(msg)
    else:
        why = "separation" if fit.converged else "non-convergence"
        ctx.notes.append(f"{ctx.target}: logistic fit needed ridge {kernel.DEFAULT_RIDGE} ({why})")
    if not np.all(np.isfinite(ridged.beta_hat)):
        raise ImputationError(f"{ctx.target}: logistic fit diverged")
    return ridged


def _offsets(ctx: UnivariateContext) -> np.ndarray:
    if ctx.ums is None:
        return np.zeros(len(ctx.miss_rows))
    return evaluate_ums(ctx.ums, ctx.completed, ctx.miss_rows)


def _norm_draw(ctx: UnivariateContext) -> np.ndarray:
    X = ctx.design()
    obs = ctx.observed_rows()
    y = np.asarray(ctx.completed[ctx.target], dtype=float)
    if obs.sum() < 1:
        raise ImputationError(f"{ctx.target}: no observed rows to fit")
    fit = _fit_ols(ctx, X[obs], y[obs])
    beta, sigma = kernel.draw_ols_posterior(fit, ctx.rng)
    z = ctx.rng.standard_normal(len(ctx.miss_rows))
    return X[ctx.miss_rows] @ beta + sigma * z


def impute_norm(ctx: UnivariateContext) -> np.ndarray:
    """Bayesian linear-regression imputation of a continuous target."""
    if len(ctx.miss_rows) == 0:
        return np.empty(0)
    return _norm_draw(ctx)


def impute_mnar_norm(ctx: UnivariateContext) -> np.ndarray:
    """``impute_norm`` plus the ums offset evaluated on the missing rows."""
    if len(ctx.miss_rows) == 0:
        return np.empty(0)
    return _norm_draw(ctx) + _offsets(ctx)


def _logreg_linear_predictor(ctx: UnivariateContext) -> np.ndarray:
    X = ctx.design()
    obs = ctx.observed_rows()
    y = np.asarray(ctx.completed[ctx.target], dtype=float)
    if obs.sum() < 1:
        raise ImputationError(f"{ctx.target}: no observed rows to fit")
    fit = _fit_logistic(ctx, X[obs], y[obs])
    beta = kernel.draw_logistic_posterior(fit, ctx.rng, allow_unconverged=True)
    return X[ctx.miss_rows] @ beta


def _draw_bernoulli(eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(eta.shape[0])
    return (u < expit(eta)).astype(float)


def impute_logreg(ctx: UnivariateContext) -> np.ndarray:
    """Logistic-regression imputation of a binary target."""
    if len(ctx.miss_rows) == 0:
        return np.empty(0)
    return _draw_bernoulli(_logreg_linear_predictor(ctx), ctx.rng)


def impute_mnar_logreg(ctx: UnivariateContext) -> np.ndarray:
    """``impute_logreg`` with the ums offset added on the log-odds scale."""
    if len(ctx.miss_rows) == 0:
        return np.empty(0)
    eta = _logreg_linear_predictor(ctx)
    return _draw_bernoulli(eta + _offsets(ctx), ctx.rng)


IMPUTERS: dict[str, Callable[[UnivariateContext], np.ndarray]] = {
    "norm": impute_norm,
    "logreg": impute_logreg,
    "mnar.norm": impute_mnar_norm,
    "mnar.logreg": impute_mnar_logreg,
}


def initial_fill(ds, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fill every masked cell by resampling that column's observed values.

    Columns are visited in dataset order; complete columns draw nothing.
    """
    out = {}
    for name in ds.names:
        col = np.array(ds.raw(name), dtype=float)
        mask = ds.mask(name)
        if mask.any():
            obs = col[~mask]
            if obs.size == 0:
                raise ImputationError(f"{name}: no observed values to draw initial imputations from")
            idx = rng.integers(0, obs.size, size=int(mask.sum()))
            col[mask] = obs[idx]
        out[name] = col
    return out
