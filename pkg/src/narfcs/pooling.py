"""Target-model fitting on completed datasets and Rubin's-rules pooling."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, NumericalError

INTERCEPT = "(Intercept)"


@dataclass(frozen=True)
class AnalysisModel:
    outcome: str
    terms: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.outcome in self.terms:
            raise ConfigError("the outcome cannot also be a term")
        if len(set(self.terms)) != len(self.terms):
            raise ConfigError("duplicate terms in analysis model")

    @property
    def coefficients(self) -> list[str]:
        return [INTERCEPT] + list(self.terms)

    def check(self, names: Sequence[str]) -> None:
        missing = [n for n in (self.outcome, *self.terms) if n not in names]
        if missing:
            raise ConfigError(f"analysis model refers to unknown variables {missing}")


@dataclass
class TargetFits:
    """Per-imputation OLS estimates and squared standard errors, both (m, k)."""
    coefficients: list[str]
    estimates: np.ndarray
    variances: np.ndarray
    df_complete: int


def _ols_with_se(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, k = X.shape
    if n <= k:
        raise NumericalError(f"{n} rows are too few for {k} coefficients")
    XtX = X.T @ X
    if np.linalg.cond(XtX) > 1e13:
        raise NumericalError("singular design in the analysis model")
    inv = np.linalg.inv(XtX)
    beta = inv @ (X.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - k)
    return beta, sigma2 * np.diag(inv)


def fit_target(datasets, model: AnalysisModel) -> TargetFits:
    """Fit ``model`` by OLS to each completed dataset.

    ``datasets`` may be a :class:`~narfcs.engine.MultiImputation` or any
    sequence of complete :class:`~narfcs.data.Dataset` objects.
    """
    if hasattr(datasets, "imputations"):
        datasets = [datasets.completed(i) for i in range(datasets.m)]
    if not datasets:
        raise DataError("no datasets to analyse")
    est, var = [], []
    for ds in datasets:
        model.check(ds.names)
        X = np.column_stack([np.ones(ds.n_rows)] + [ds[t] for t in model.terms])
        b, v = _ols_with_se(X, ds[model.outcome])
        est.append(b)
        var.append(v)
    n = datasets[0].n_rows
    return TargetFits(model.coefficients, np.array(est), np.array(var), n - len(model.coefficients))


def complete_case_fit(ds, model: AnalysisModel) -> TargetFits:
    """Single OLS fit on rows with no missing value among the model's variables."""
    model.check(ds.names)
    keep = np.ones(ds.n_rows, dtype=bool)
    for v in (model.outcome, *model.terms):
        keep &= ~ds.mask(v)
    X = np.column_stack([np.ones(int(keep.sum()))] + [ds.raw(t)[keep] for t in model.terms])
    b, v = _ols_with_se(X, ds.raw(model.outcome)[keep])
    return TargetFits(model.coefficients, b[None, :], v[None, :], int(keep.sum()) - X.shape[1])


@dataclass(frozen=True)
class PooledEstimate:
    coefficient: str
    qbar: float
    W: float
    B: float
    T: float
    df: float
    ci_low: float
    ci_high: float
    alpha: float
    m: int

    @property
    def se(self) -> float:
        return math.sqrt(self.T)


@dataclass
class PooledResult:
    estimates: list[PooledEstimate]

    def __getitem__(self, coef: str) -> PooledEstimate:
        for e in self.estimates:
            if e.coefficient == coef:
                return e
        raise KeyError(coef)

    @property
    def coefficients(self) -> list[str]:
        return [e.coefficient for e in self.estimates]

    def csv_rows(self):
        for e in self.estimates:
            yield (e.coefficient, e.qbar, e.se, e.ci_low, e.ci_high, e.df, e.W, e.B, e.m)

    CSV_HEADER = ("coefficient", "estimate", "se", "ci_low", "ci_high", "df", "W", "B", "m")


def barnard_rubin_df(m: int, W: float, B: float, df_complete: float | None) -> float:
    """Small-sample degrees of freedom; ``df_complete=None`` gives the large-sample form."""
    T = W + (1 + 1 / m) * B
    lam = (1 + 1 / m) * B / T if T > 0 else 0.0
    # lam**2 can underflow to zero when B is negligible against W
    lam2 = lam * lam
    df_old = (m - 1) / lam2 if lam2 > 0 else math.inf
    if df_complete is None or not math.isfinite(df_complete):
        return df_old
    df_obs = (df_complete + 1) / (df_complete + 3) * df_complete * (1 - lam)
    if math.isinf(df_old):
        return df_obs
    return df_old * df_obs / (df_old + df_obs)


def pool_scalar(q: Sequence[float], u: Sequence[float], alpha: float = 0.05,
                df_complete: float | None = None, coefficient: str = "") -> PooledEstimate:
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    m = q.shape[0]
    if m == 0:
        raise ValueError("cannot pool zero imputations")
    # fsum makes the result independent of imputation order
    qbar = math.fsum(q) / m
    W = math.fsum(u) / m
    if m == 1:
        B = math.nan
        T = W
        df = df_complete if df_complete is not None else math.inf
    else:
        B = math.fsum((q - qbar) ** 2) / (m - 1)
        T = W + (1 + 1 / m) * B
        df = barnard_rubin_df(m, W, B, df_complete)
    half = float(stats.t.ppf(1 - alpha / 2, df)) * math.sqrt(T) if T > 0 else 0.0
    return PooledEstimate(coefficient, qbar, W, B, T, float(df), qbar - half, qbar + half, alpha, m)


def pool(fits: TargetFits, alpha: float = 0.05) -> PooledResult:
    """Rubin's rules per coefficient with Barnard-Rubin degrees of freedom."""
    m = fits.estimates.shape[0]
    if m == 0:
        raise ValueError("cannot pool zero imputations")
    if m == 1:
        warnings.warn("pooling a single imputation: between-imputation variance is undefined",
                      RuntimeWarning, stacklevel=2)
    return PooledResult([
        pool_scalar(fits.estimates[:, j], fits.variances[:, j], alpha, fits.df_complete, name)
        for j, name in enumerate(fits.coefficients)
    ])


def recommend_m(pct_incomplete_cases: float) -> int:
    """At least as many imputations as the percentage of incomplete cases, never fewer than 5."""
    if not 0 <= pct_incomplete_cases <= 100:
        raise ValueError("percentage must lie in [0, 100]")
    return max(5, math.ceil(pct_incomplete_cases - 1e-9))
