"""LSAC-like synthetic data with configurable missingness mechanisms.

Structure follows the case-study missingness DAG: complete confounders Z1,
a latent U driving the incomplete confounders Z2 and the exposure X, the
outcome Y depending on X, Z1 and Z2, and a latent W shared by the
missingness indicators. Each indicator has a logistic model whose
intercept is tuned on a pilot sample to hit a target marginal rate; a
nonzero ``self_coef`` makes a variable cause its own missingness (MNAR).

All generative coefficients are defaults chosen here; they only aim to give
observed-data summaries of the same order as the LSAC variables.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import expit

from . import kernel
from .data import Dataset, VariableMeta
from .engine import MiceSpec, derive_seed, run_fcs, run_narfcs
from .errors import ConfigError
from .pooling import AnalysisModel, complete_case_fit, fit_target, pool

TABLE1_VARIABLES = (
    VariableMeta("sex", "binary", "confounder"),
    VariableMeta("siblings", "binary", "confounder"),
    VariableMeta("matedu", "binary", "confounder"),
    VariableMeta("matage", "continuous", "confounder"),
    VariableMeta("conspar", "continuous", "confounder"),
    VariableMeta("finhard", "binary", "confounder"),
    VariableMeta("basesdq", "continuous", "confounder"),
    VariableMeta("matsmok", "binary", "confounder"),
    VariableMeta("matalc", "binary", "confounder"),
    VariableMeta("physfunc", "continuous", "confounder"),
    VariableMeta("matmhw1", "binary", "exposure"),
    VariableMeta("sdqw3", "continuous", "outcome"),
)
TABLE1_N = 4882
TABLE1_MISSING = {"matsmok": 771, "matalc": 885, "physfunc": 742, "matmhw1": 738, "sdqw3": 1142}
TABLE1_COMPLETE_CASES = 3245
TABLE1_RATES = {k: v / TABLE1_N for k, v in TABLE1_MISSING.items()}

OUTCOME = "sdqw3"
EXPOSURE = "matmhw1"
ANALYSIS_MODEL = AnalysisModel(
    OUTCOME, (EXPOSURE,) + tuple(v.name for v in TABLE1_VARIABLES if v.name not in (OUTCOME, EXPOSURE)))


@dataclass(frozen=True)
class MissingnessModel:
    """Logistic model for one missingness indicator.

    Coefficients act on standardized variables (pilot mean and sd).
    """
    rate: float
    self_coef: float = 0.0
    w_coef: float = 0.0
    parents: Mapping[str, float] = field(default_factory=dict)


_MAR_PARENTS = {"basesdq": 0.3, "matedu": -0.3, "finhard": 0.2}


@dataclass(frozen=True)
class SimConfig:
    n: int = TABLE1_N
    seed: int = 0
    beta1: float = 0.65
    outcome_sd: float = 3.5
    u_strength: float = 0.5
    missingness: Mapping[str, MissingnessModel] = field(default_factory=lambda: {
        v: MissingnessModel(rate, w_coef=0.5, parents=dict(_MAR_PARENTS)) for v, rate in TABLE1_RATES.items()
    })
    pilot_n: int = 20000

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def with_missingness(self, var: str, **changes) -> "SimConfig":
        mm = dict(self.missingness)
        mm[var] = replace(mm[var], **changes)
        return self.replace(missingness=mm)

    @classmethod
    def mar(cls, **kw) -> "SimConfig":
        return cls(**kw)

    @classmethod
    def mnar_outcome(cls, self_coef: float = 1.5, **kw) -> "SimConfig":
        """Outcome causes its own missingness; everything else MAR."""
        return cls(**kw).with_missingness(OUTCOME, self_coef=self_coef)

    @classmethod
    def mdag(cls, **kw) -> "SimConfig":
        """Self-dependence arrows on exposure, outcome and the incomplete confounders."""
        cfg = cls(**kw)
        for v, c in (("matmhw1", 0.8), ("sdqw3", 0.8), ("matsmok", 0.5), ("matalc", 0.5), ("physfunc", -0.5)):
            cfg = cfg.with_missingness(v, self_coef=c)
        return cfg

    def validate(self) -> None:
        if self.n < 0:
            raise ConfigError("n must be nonnegative")
        for v, mm in self.missingness.items():
            if v not in {x.name for x in TABLE1_VARIABLES}:
                raise ConfigError(f"missingness model for unknown variable {v!r}")
            if not 0 <= mm.rate < 1:
                raise ConfigError(f"{v}: missingness rate must be in [0, 1)")


@dataclass
class SimTruth:
    beta1: float
    implied_msp: dict[str, float]
    implied_delta: dict[str, float]
    realized_rates: dict[str, float]
    intercepts: dict[str, float]
    full: Dataset

    def items(self) -> list[tuple[str, str]]:
        out = [("beta1", repr(self.beta1))]
        for prefix, d in (("realized_rate", self.realized_rates), ("implied_msp", self.implied_msp),
                          ("implied_delta", self.implied_delta), ("missingness_intercept", self.intercepts)):
            out += [(f"{prefix}.{k}", repr(float(v))) for k, v in d.items()]
        return out


def _complete_data(cfg: SimConfig, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bern = lambda p: (rng.random(n) < p).astype(float)  # noqa: E731
    d: dict[str, np.ndarray] = {}
    d["sex"] = bern(0.51)
    d["siblings"] = bern(0.89)
    d["matedu"] = bern(0.59)
    d["matage"] = rng.normal(35.1, 5.3, n)
    d["conspar"] = rng.normal(4.05, 0.6, n)
    d["finhard"] = bern(0.35)
    d["basesdq"] = (10.0 - 1.0 * d["sex"] + 1.5 * d["finhard"] - 1.5 * (d["conspar"] - 4.05)
                    + rng.normal(0.0, 4.5, n))
    u = rng.standard_normal(n)
    us = cfg.u_strength
    d["matsmok"] = bern(expit(-1.3 + 0.5 * d["finhard"] - 0.6 * d["matedu"]
                              - 0.03 * (d["matage"] - 35.1) + us * u))
    d["matalc"] = bern(expit(-3.0 + 0.5 * d["matsmok"] + us * u))
    d["physfunc"] = (83.0 - 0.4 * (d["basesdq"] - 9.3) - 2.0 * d["finhard"] - 3.0 * us * u
                     + rng.normal(0.0, 10.0, n))
    d["matmhw1"] = bern(expit(-1.7 + 0.5 * d["finhard"] + 0.4 * d["matsmok"] + 0.3 * d["matalc"]
                              - 0.02 * (d["physfunc"] - 83.0) + 0.05 * (d["basesdq"] - 9.3)
                              - 0.3 * d["matedu"] + us * u))
    d["sdqw3"] = (3.0 + cfg.beta1 * d["matmhw1"] + 0.55 * d["basesdq"] - 0.8 * d["sex"]
                  + 0.4 * d["finhard"] + 0.5 * d["matsmok"] + 0.5 * d["matalc"]
                  - 0.03 * (d["physfunc"] - 83.0) - 0.5 * (d["conspar"] - 4.05)
                  - 0.02 * (d["matage"] - 35.1) + 0.2 * d["siblings"] - 0.3 * d["matedu"]
                  + rng.normal(0.0, cfg.outcome_sd, n))
    return d


def _linear_part(mm: MissingnessModel, var: str, d, w, center, scale) -> np.ndarray:
    lin = mm.w_coef * w
    if mm.self_coef:
        lin = lin + mm.self_coef * (d[var] - center[var]) / scale[var]
    for p, c in mm.parents.items():
        lin = lin + c * (d[p] - center[p]) / scale[p]
    return lin


def _tune_intercept(lin: np.ndarray, rate: float, var: str) -> float:
    if rate == 0:
        return -math.inf
    f = lambda a: float(np.mean(expit(a + lin))) - rate  # noqa: E731
    lo, hi = -40.0, 40.0
    if f(lo) > 0 or f(hi) < 0:
        raise ConfigError(f"{var}: missingness rate {rate} is not attainable with these coefficients")
    return float(optimize.bisect(f, lo, hi, xtol=1e-12))


def _implied(full: Mapping[str, np.ndarray], masks: Mapping[str, np.ndarray], names: Sequence[str],
             kinds: Mapping[str, str]):
    msp, delta = {}, {}
    for v, m in masks.items():
        if m.all() or not m.any():
            continue
        x = full[v]
        msp[v] = float(x[m].mean() - x[~m].mean())
        X = np.column_stack([np.ones(x.size)] + [full[u] for u in names if u != v] + [m.astype(float)])
        if kinds[v] == "binary":
            fit = kernel.logistic_fit(X, x)
            delta[v] = float(fit.beta_hat[-1])
        else:
            delta[v] = float(kernel.ols_fit(X, x).beta_hat[-1])
    return msp, delta


def generate_lsac_like(cfg: SimConfig, rng: np.random.Generator | None = None) -> tuple[Dataset, SimTruth]:
    """Draw a masked dataset and the quantities that describe its true mechanism."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    pilot_rng, main_rng = rng.spawn(2)
    pilot = _complete_data(cfg, cfg.pilot_n, pilot_rng)
    center = {k: float(v.mean()) for k, v in pilot.items()}
    scale = {k: float(v.std()) or 1.0 for k, v in pilot.items()}
    w_pilot = pilot_rng.standard_normal(cfg.pilot_n)
    intercepts = {}
    for v, mm in cfg.missingness.items():
        intercepts[v] = _tune_intercept(_linear_part(mm, v, pilot, w_pilot, center, scale), mm.rate, v)

    full = _complete_data(cfg, cfg.n, main_rng)
    w = main_rng.standard_normal(cfg.n)
    masks = {}
    for v, mm in cfg.missingness.items():
        p = expit(intercepts[v] + _linear_part(mm, v, full, w, center, scale))
        masks[v] = main_rng.random(cfg.n) < p
    names = [x.name for x in TABLE1_VARIABLES]
    kinds = {x.name: x.kind for x in TABLE1_VARIABLES}
    full_ds = Dataset(TABLE1_VARIABLES, full)
    ds = Dataset(TABLE1_VARIABLES, full, masks)
    msp, delta = _implied(full, masks, names, kinds) if cfg.n else ({}, {})
    rates = {v: float(m.mean()) if cfg.n else math.nan for v, m in masks.items()}
    return ds, SimTruth(cfg.beta1, msp, delta, rates, intercepts, full_ds)


def table1_fixture(seed: int = 20240601) -> Dataset:
    """n=4882 dataset whose missingness counts reproduce the published LSAC marginal counts exactly.

    Values come from the MAR generator; masks are then placed so that each
    variable has its tabulated missing count and 3245 rows are complete.
    """
    cfg = SimConfig(n=TABLE1_N, seed=seed)
    rng = np.random.default_rng(seed)
    full = _complete_data(cfg, TABLE1_N, rng)
    n_incomplete = TABLE1_N - TABLE1_COMPLETE_CASES
    rows = rng.permutation(TABLE1_N)[:n_incomplete]
    order = list(TABLE1_MISSING)
    big = max(order, key=TABLE1_MISSING.get)
    masks = {v: np.zeros(TABLE1_N, dtype=bool) for v in order}
    chosen = {v: set() for v in order}
    first = rng.permutation(n_incomplete)
    chosen[big] = set(first[:TABLE1_MISSING[big]].tolist())
    rest = first[TABLE1_MISSING[big]:].tolist()
    others = [v for v in order if v != big]
    for i, r in enumerate(rest):
        chosen[others[i % len(others)]].add(r)
    for v in others:
        need = TABLE1_MISSING[v] - len(chosen[v])
        pool_ = [r for r in rng.permutation(n_incomplete).tolist() if r not in chosen[v]]
        chosen[v].update(pool_[:need])
    for v in order:
        masks[v][rows[sorted(chosen[v])]] = True
    return Dataset(TABLE1_VARIABLES, full, masks)


class MethodSummary(NamedTuple):
    method: str
    reps: int
    mean_estimate: float
    bias: float
    bias_mcse: float
    empirical_se: float
    mean_model_se: float
    coverage: float
    coverage_mcse: float


@dataclass
class ReplicateStudy:
    truth_beta1: float
    summaries: list[MethodSummary]
    estimates: dict[str, np.ndarray]
    ci: dict[str, np.ndarray]

    def __getitem__(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    CSV_HEADER = MethodSummary._fields


REPLICATE_METHODS = ("complete_case", "fcs", "narfcs")


def _one_replicate(args):
    cfg, rep_seed, methods, m, maxit, alpha = args
    ds, truth = generate_lsac_like(cfg.replace(seed=rep_seed))
    out = {}
    mi_seed = derive_seed(rep_seed, 1)
    spec = MiceSpec.default(ds, m=m, maxit=maxit, seed=mi_seed)
    for method in methods:
        if method == "complete_case":
            fits = complete_case_fit(ds, ANALYSIS_MODEL)
            j = fits.coefficients.index(EXPOSURE)
            b = float(fits.estimates[0, j])
            se = math.sqrt(fits.variances[0, j])
            q = stats.t.ppf(1 - alpha / 2, fits.df_complete)
            out[method] = (b, b - q * se, b + q * se, se)
            continue
        if method == "fcs":
            mi = run_fcs(ds, spec)
        elif method == "narfcs":
            selfdep = [v for v, mm in cfg.missingness.items() if mm.self_coef and v in truth.implied_delta]
            methods_ = dict(spec.methods)
            ums = {}
            for v in selfdep:
                methods_[v] = "mnar." + methods_[v]
                ums[v] = repr(truth.implied_delta[v])
            mi = run_narfcs(ds, spec.replace(methods=methods_, ums_map=ums))
        else:
            raise ConfigError(f"unknown method {method!r}")
        est = pool(fit_target(mi, ANALYSIS_MODEL), alpha)[EXPOSURE]
        out[method] = (est.qbar, est.ci_low, est.ci_high, est.se)
    return out


def replicate_study(cfg: SimConfig, reps: int, methods: Sequence[str] = REPLICATE_METHODS,
                    m: int = 10, maxit: int = 5, alpha: float = 0.05, workers: int = 1) -> ReplicateStudy:
    """Bias and CI coverage for the exposure coefficient across independent replicates.

    ``narfcs`` applies delta adjustment to every variable with a self-dependence
    arrow, using the pattern-mixture delta implied by that replicate's
    pre-masking data.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    tasks = [(cfg, derive_seed(cfg.seed, r), tuple(methods), m, maxit, alpha) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replicate, tasks))
    else:
        results = [_one_replicate(t) for t in tasks]
    summaries, estimates, cis = [], {}, {}
    for method in methods:
        arr = np.array([r[method] for r in results])
        b = arr[:, 0]
        cover = (arr[:, 1] <= cfg.beta1) & (cfg.beta1 <= arr[:, 2])
        sd = float(b.std(ddof=1)) if reps > 1 else math.nan
        cov = float(cover.mean())
        summaries.append(MethodSummary(
            method=method,
            reps=reps,
            mean_estimate=float(b.mean()),
            bias=float(b.mean() - cfg.beta1),
            bias_mcse=sd / math.sqrt(reps) if reps > 1 else math.nan,
            empirical_se=sd,
            mean_model_se=float(arr[:, 3].mean()),
            coverage=cov,
            coverage_mcse=math.sqrt(cov * (1 - cov) / reps) if reps > 1 else math.nan,
        ))
        estimates[method] = b
        cis[method] = arr[:, 1:3]
    return ReplicateStudy(cfg.beta1, summaries, estimates, cis)
