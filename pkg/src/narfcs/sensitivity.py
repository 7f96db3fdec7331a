"""Delta sweeps and calibration of marginal to conditional sensitivity parameters.

Sign convention: a marginal sensitivity parameter (MSP) is the mean of the
imputed values at originally-missing rows minus the mean of the observed
values (a difference in proportions for binary variables). MSP > 0 means
missing values are larger on average.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .data import Dataset
from .engine import MiceSpec, MultiImputation, derive_seed, run_narfcs
from .errors import CalibrationError, ConfigError, NarfcsError
from .imputers import MNAR_METHODS
from .pooling import AnalysisModel, PooledResult, fit_target, pool
from .ums import UmsExpression, parse_ums

log = logging.getLogger(__name__)


def achieved_msp(mi: MultiImputation, ds: Dataset, var: str) -> float:
    """Mean imputed value over all chains minus the observed mean."""
    mask = ds.mask(var)
    if not mask.any():
        raise ConfigError(f"{var} has no missing values")
    imputed = mi.imputed_values(var)
    return float(imputed.mean() - ds.observed(var).mean())


# -- sweeps -----------------------------------------------------------------

def _ums_text(value) -> str:
    if isinstance(value, str):
        return value.strip()
    return UmsExpression(float(value)).to_text()


@dataclass
class DeltaGrid:
    """Ordered ums values per mnar variable; cells are the cartesian product."""
    values: dict[str, list[str]]

    def __post_init__(self):
        self.values = {k: [_ums_text(x) for x in v] for k, v in self.values.items()}
        if not self.values:
            raise ConfigError("delta grid is empty")
        for k, v in self.values.items():
            if not v:
                raise ConfigError(f"delta grid for {k!r} has no values")

    @property
    def variables(self) -> list[str]:
        return list(self.values)

    def cells(self, one_at_a_time: bool = False) -> list[tuple[tuple[int, ...], dict[str, str]]]:
        """``(index, ums)`` pairs in lexicographic index order.

        With ``one_at_a_time`` each variable is varied alone while the
        others are pinned to ``"0"``; the index is then ``(variable, value)``.
        """
        names = self.variables
        if one_at_a_time:
            out = []
            for i, v in enumerate(names):
                for j, text in enumerate(self.values[v]):
                    ums = {u: "0" for u in names}
                    ums[v] = text
                    out.append(((i, j), ums))
            return out
        ranges = [range(len(self.values[v])) for v in names]
        return [(idx, {v: self.values[v][i] for v, i in zip(names, idx)})
                for idx in itertools.product(*ranges)]


class SweepRow(NamedTuple):
    cell: tuple[int, ...]
    ums: dict[str, str]
    coefficient: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    df: float
    seed: int


@dataclass
class SweepCell:
    index: tuple[int, ...]
    ums: dict[str, str]
    seed: int
    pooled: PooledResult


@dataclass
class SweepResult:
    variables: list[str]
    coefficient: str
    cells: list[SweepCell]
    one_at_a_time: bool = False

    def rows(self, coefficient: str | None = None) -> list[SweepRow]:
        coefs = [coefficient or self.coefficient]
        if coefficient == "all":
            coefs = self.cells[0].pooled.coefficients if self.cells else []
        out = []
        for c in self.cells:
            for coef in coefs:
                e = c.pooled[coef]
                out.append(SweepRow(c.index, c.ums, coef, e.qbar, e.se, e.ci_low, e.ci_high, e.df, c.seed))
        return out

    def csv_header(self) -> list[str]:
        return (["cell"] + [f"ums.{v}" for v in self.variables]
                + ["coefficient", "estimate", "se", "ci_low", "ci_high", "df", "seed"])

    def csv_rows(self, coefficient: str | None = None):
        for r in self.rows(coefficient):
            yield ([":".join(str(i + 1) for i in r.cell)] + [r.ums[v] for v in self.variables]
                   + [r.coefficient, r.estimate, r.se, r.ci_low, r.ci_high, r.df, r.seed])


def _sweep_cell(args):
    ds, spec, model, alpha, idx = args
    try:
        mi = run_narfcs(ds, spec)
        return pool(fit_target(mi, model), alpha)
    except NarfcsError as exc:
        cell = ", ".join(f"{k}={v!r}" for k, v in sorted(spec.ums_map.items()))
        raise type(exc)(f"sweep cell {':'.join(str(i + 1) for i in idx)} ({cell}): {exc}") from exc


def run_sweep(ds: Dataset, spec: MiceSpec, grid: DeltaGrid | Mapping[str, Sequence],
              model: AnalysisModel, coef: str, alpha: float = 0.05, threads: int = 1,
              one_at_a_time: bool = False, common_seed: bool = False) -> SweepResult:
    """Run delta-adjusted imputation and pooling for every grid cell.

    Cell ``k`` (0-based, lexicographic) uses seed ``derive_seed(spec.seed, k)``
    unless ``common_seed`` reuses ``spec.seed`` everywhere. Either way a cell
    whose ums are all zero reproduces ``run_fcs`` with that seed exactly.
    """
    if not isinstance(grid, DeltaGrid):
        grid = DeltaGrid(dict(grid))
    model.check(ds.names)
    if coef not in model.coefficients:
        raise ConfigError(f"coefficient {coef!r} is not in the analysis model")
    for v in grid.variables:
        if v not in ds:
            raise ConfigError(f"grid variable {v!r} is not in the dataset")
        if spec.methods.get(v) not in MNAR_METHODS:
            raise ConfigError(f"grid variable {v!r} must use an mnar.* method")
        for text in grid.values[v]:
            parse_ums(text, ds.names, target=v)
    cells = grid.cells(one_at_a_time)
    specs = []
    for k, (idx, ums) in enumerate(cells):
        seed = spec.seed if common_seed else derive_seed(spec.seed, k)
        specs.append(spec.with_ums(ums).replace(seed=seed))
    specs[0].validate(ds)
    tasks = [(ds, s, model, alpha, idx) for s, (idx, _) in zip(specs, cells)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as ex:
            pooled = list(ex.map(_sweep_cell, tasks))
    else:
        pooled = [_sweep_cell(t) for t in tasks]
    return SweepResult(
        variables=grid.variables,
        coefficient=coef,
        cells=[SweepCell(idx, ums, s.seed, p) for (idx, ums), s, p in zip(cells, specs, pooled)],
        one_at_a_time=one_at_a_time,
    )


# -- calibration ------------------------------------------------------------

@dataclass
class CalibrationOptions:
    """Defaults: tol 0.02 sd (continuous) or 0.01 (proportion); 5 replicate
    runs of m=5, maxit=5 per evaluation; at most 10 Gauss-Seidel passes;
    deltas searched within +-10 sd (continuous) or +-5 (log-odds)."""
    tol: Mapping[str, float] | None = None
    replicates: int = 5
    m: int = 5
    maxit: int = 5
    max_passes: int = 10
    max_evals: int = 40
    delta_range: Mapping[str, tuple[float, float]] | None = None
    seed: int | None = None
    threads: int = 1


class CalibratedVariable(NamedTuple):
    variable: str
    target: float
    delta: float
    achieved: float
    mc_se: float
    delta_mc_se: float
    evaluations: int


@dataclass
class CalibrationResult:
    variables: list[CalibratedVariable]
    passes: int
    converged: bool
    evaluations: int

    def __getitem__(self, var: str) -> CalibratedVariable:
        for v in self.variables:
            if v.variable == var:
                return v
        raise KeyError(var)

    @property
    def deltas(self) -> dict[str, float]:
        return {v.variable: v.delta for v in self.variables}

    CSV_HEADER = CalibratedVariable._fields


def _replicate_msp(args):
    ds, spec, variables = args
    mi = run_narfcs(ds, spec)
    return [achieved_msp(mi, ds, v) for v in variables]


class MspEvaluator:
    """Monte Carlo estimate of the achieved MSPs as a function of the intercept deltas.

    Every evaluation reuses the same replicate seeds (common random numbers),
    so the estimate is a deterministic function of the deltas.
    """

    def __init__(self, ds: Dataset, spec: MiceSpec, variables: Sequence[str],
                 options: CalibrationOptions | None = None):
        self.ds = ds
        self.options = options or CalibrationOptions()
        self.variables = list(variables)
        self.base = spec.validate(ds)
        for v in self.variables:
            if v not in self.base:
                raise ConfigError(f"{v!r} must use an mnar.* method to be calibrated")
        root = spec.seed if self.options.seed is None else self.options.seed
        self.seeds = [derive_seed(root, r) for r in range(self.options.replicates)]
        self.spec = spec.replace(m=self.options.m, maxit=self.options.maxit)
        self.calls = 0
        self._cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _ums(self, deltas: Mapping[str, float]) -> dict[str, str]:
        return {v: self.base[v].with_intercept(deltas[v]).to_text() for v in self.variables}

    def __call__(self, deltas: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray]:
        """(mean achieved MSP, Monte Carlo standard error) per variable."""
        key = tuple(float(deltas[v]) for v in self.variables)
        if key in self._cache:
            return self._cache[key]
        spec = self.spec.with_ums(self._ums(deltas))
        tasks = [(self.ds, spec.replace(seed=s), self.variables) for s in self.seeds]
        if self.options.threads > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=min(self.options.threads, len(tasks))) as ex:
                vals = np.array(list(ex.map(_replicate_msp, tasks)))
        else:
            vals = np.array([_replicate_msp(t) for t in tasks])
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(len(tasks)) if len(tasks) > 1 else np.zeros(len(self.variables))
        self.calls += 1
        self._cache[key] = (mean, se)
        return mean, se


def _defaults(ds: Dataset, variables, options: CalibrationOptions):
    tol, rng, slope0 = {}, {}, {}
    for v in variables:
        obs = ds.observed(v)
        if ds.kind(v) == "binary":
            p = float(obs.mean())
            tol[v] = 0.01
            rng[v] = (-5.0, 5.0)
            slope0[v] = max(p * (1 - p), 0.01)
        else:
            sd = float(obs.std(ddof=1)) if obs.size > 1 else 1.0
            tol[v] = 0.02 * sd
            rng[v] = (-10.0 * sd, 10.0 * sd)
            slope0[v] = 1.0
    tol.update(options.tol or {})
    rng.update(options.delta_range or {})
    return tol, rng, slope0


def _solve_one(evaluate, deltas: dict, var: str, j: int, target: float, tol: float,
               lo: float, hi: float, slope0: float, max_evals: int):
    """Bracketing secant (Illinois) on ``achieved(delta) - target``; updates ``deltas``."""

    def f(x):
        trial = dict(deltas)
        trial[var] = x
        mean, se = evaluate(trial)
        return float(mean[j]) - target, float(se[j])

    clamp = lambda x: min(max(x, lo), hi)  # noqa: E731
    x0 = clamp(deltas[var])
    f0, se0 = f(x0)
    evals = 1
    slope = slope0
    if abs(f0) <= tol:
        deltas[var] = x0
        return f0, se0, slope, evals
    x1 = clamp(x0 - f0 / slope0)
    if x1 == x0:
        raise CalibrationError(f"{var}: no bracket within delta range [{lo}, {hi}]")
    f1, se1 = f(x1)
    evals += 1
    # extend with secant steps until the root is bracketed
    while f0 * f1 > 0 and abs(f1) > tol:
        s = (f1 - f0) / (x1 - x0)
        slope = s if s > 0 else slope0
        step = -f1 / slope
        if abs(step) < abs(x1 - x0):
            step = math.copysign(abs(x1 - x0), step)
        x2 = clamp(x1 + step)
        if x2 == x1 or evals >= max_evals:
            raise CalibrationError(f"{var}: no bracket for target {target} within delta range [{lo}, {hi}]")
        x0, f0 = x1, f1
        x1 = x2
        f1, se1 = f(x1)
        evals += 1
    if abs(f1) <= tol:
        s = (f1 - f0) / (x1 - x0)
        deltas[var] = x1
        return f1, se1, (s if s > 0 else slope), evals
    a, fa, b, fb = x0, f0, x1, f1
    while evals < max_evals:
        x = b - fb * (b - a) / (fb - fa)
        fx, sex = f(x)
        evals += 1
        if abs(fx) <= tol:
            s = (fb - fa) / (b - a)
            deltas[var] = x
            return fx, sex, (s if s > 0 else slope0), evals
        if fx * fb < 0:
            a, fa = b, fb
        else:
            fa *= 0.5
        b, fb = x, fx
    raise CalibrationError(f"{var}: secant search did not reach tolerance {tol} in {max_evals} evaluations")


def calibrate_msp_to_csp(ds: Dataset, spec: MiceSpec, targets: Mapping[str, float],
                         options: CalibrationOptions | None = None) -> CalibrationResult:
    """Find intercept deltas whose imputations reproduce the target MSPs.

    Gauss-Seidel over the target variables: each is solved with the others
    held fixed, and passes repeat until every residual is within tolerance.
    Any non-intercept ums terms in ``spec`` are kept as given.
    """
    options = options or CalibrationOptions()
    variables = [v for v in spec.visit_sequence if v in targets]
    unknown = set(targets) - set(variables)
    if unknown:
        raise ConfigError(f"calibration targets for unknown variables {sorted(unknown)}")
    evaluate = MspEvaluator(ds, spec, variables, options)
    tol, ranges, slope0 = _defaults(ds, variables, options)
    for v in variables:
        if ds.kind(v) == "binary":
            p = float(ds.observed(v).mean()) + targets[v]
            if not 0 < p < 1:
                raise CalibrationError(f"{v}: target difference {targets[v]} implies a proportion outside (0, 1)")
    deltas = {v: float(evaluate.base[v].intercept) for v in variables}
    deltas = {v: min(max(d, ranges[v][0]), ranges[v][1]) for v, d in deltas.items()}
    slopes = dict(slope0)
    evals = {v: 0 for v in variables}
    converged = False
    passes = 0
    for passes in range(1, options.max_passes + 1):
        for j, v in enumerate(variables):
            _, _, slopes[v], k = _solve_one(evaluate, deltas, v, j, targets[v], tol[v],
                                            ranges[v][0], ranges[v][1], slope0[v], options.max_evals)
            evals[v] += k
        mean, se = evaluate(deltas)
        resid = {v: float(mean[j]) - targets[v] for j, v in enumerate(variables)}
        log.info("calibration pass %d: residuals %s", passes, resid)
        if all(abs(resid[v]) <= tol[v] for v in variables):
            converged = True
            break
    if not converged:
        raise CalibrationError(f"calibration did not converge in {options.max_passes} passes")
    out = [CalibratedVariable(v, float(targets[v]), float(deltas[v]), float(mean[j]), float(se[j]),
                              float(se[j]) / slopes[v], evals[v])
           for j, v in enumerate(variables)]
    return CalibrationResult(out, passes, converged, evaluate.calls)
