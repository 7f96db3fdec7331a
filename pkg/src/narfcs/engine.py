"""The chained-equations driver shared by FCS and its delta-adjusted variant."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import __version__
from .data import Dataset, summarize_missingness
from .errors import ConfigError, ImputationError, NarfcsError
from .imputers import (IMPUTERS, METHOD_KIND, METHODS, MNAR_METHODS, UnivariateContext,
                       initial_fill, mar_counterpart)
from .pooling import recommend_m
from .ums import UmsExpression, parse_ums

log = logging.getLogger(__name__)

DEFAULT_MAXIT = 10


class PredictorMatrix:
    """Square 0/1 matrix; ``matrix[r, c] == 1`` means ``c`` predicts ``r``."""

    def __init__(self, names: Sequence[str], matrix):
        self.names = list(names)
        self.matrix = np.array(matrix, dtype=np.int8)
        k = len(self.names)
        if self.matrix.shape != (k, k):
            raise ConfigError(f"predictor matrix must be {k}x{k}")
        if not np.isin(self.matrix, (0, 1)).all():
            raise ConfigError("predictor matrix entries must be 0 or 1")
        if k and np.any(np.diag(self.matrix) != 0):
            raise ConfigError("predictor matrix must have a zero diagonal")
        self._index = {n: i for i, n in enumerate(self.names)}

    def predictors(self, name: str) -> list[str]:
        row = self.matrix[self._index[name]]
        return [n for n, flag in zip(self.names, row) if flag]

    def set(self, row: str, col: str, value: int) -> "PredictorMatrix":
        m = self.matrix.copy()
        m[self._index[row], self._index[col]] = value
        return PredictorMatrix(self.names, m)

    def with_row(self, row: str, predictors: Sequence[str]) -> "PredictorMatrix":
        m = self.matrix.copy()
        i = self._index[row]
        m[i, :] = 0
        for p in predictors:
            if p not in self._index:
                raise ConfigError(f"unknown predictor {p!r} for {row!r}")
            m[i, self._index[p]] = 1
        return PredictorMatrix(self.names, m)

    def __eq__(self, other):
        return (isinstance(other, PredictorMatrix) and self.names == other.names
                and np.array_equal(self.matrix, other.matrix))

    def __repr__(self):
        return f"PredictorMatrix({self.names}, ones={int(self.matrix.sum())})"


def make_predictor_matrix(ds: Dataset) -> PredictorMatrix:
    k = len(ds.names)
    return PredictorMatrix(ds.names, np.ones((k, k), dtype=np.int8) - np.eye(k, dtype=np.int8))


@dataclass(frozen=True)
class MiceSpec:
    m: int
    maxit: int
    seed: int
    methods: Mapping[str, str]
    predictor_matrix: PredictorMatrix
    visit_sequence: tuple[str, ...]
    ums_map: Mapping[str, str] = field(default_factory=dict)
    include_indicators: bool = False

    @classmethod
    def default(cls, ds: Dataset, m: int | None = None, maxit: int = DEFAULT_MAXIT,
                seed: int = 0, methods: Mapping[str, str] | None = None,
                ums_map: Mapping[str, str] | None = None, **kw) -> "MiceSpec":
        """``norm``/``logreg`` by variable kind for incomplete columns, ``""`` otherwise."""
        if m is None:
            m = recommend_m(summarize_missingness(ds).incomplete_percent)
        meth = {}
        for v in ds.meta:
            if ds.is_complete(v.name):
                meth[v.name] = ""
            else:
                meth[v.name] = "norm" if v.kind == "continuous" else "logreg"
        meth.update(methods or {})
        return cls(m=m, maxit=maxit, seed=seed, methods=meth,
                   predictor_matrix=kw.pop("predictor_matrix", None) or make_predictor_matrix(ds),
                   visit_sequence=tuple(kw.pop("visit_sequence", None) or ds.names),
                   ums_map=dict(ums_map or {}), **kw)

    def replace(self, **changes) -> "MiceSpec":
        return replace(self, **changes)

    def as_mar(self) -> "MiceSpec":
        """Same spec with every ``mnar.*`` method replaced by its MAR counterpart."""
        return self.replace(methods={k: mar_counterpart(v) for k, v in self.methods.items()},
                            ums_map={})

    def with_ums(self, updates: Mapping[str, str]) -> "MiceSpec":
        ums = dict(self.ums_map)
        ums.update(updates)
        return self.replace(ums_map=ums)

    @property
    def mnar_variables(self) -> list[str]:
        return [v for v in self.visit_sequence if self.methods.get(v) in MNAR_METHODS]

    def validate(self, ds: Dataset) -> dict[str, UmsExpression]:
        """Check the spec against ``ds``; return parsed ums for the mnar variables."""
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.maxit < 1:
            raise ConfigError("maxit must be at least 1")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        if self.predictor_matrix.names != ds.names:
            raise ConfigError("predictor matrix variables do not match the dataset columns")
        unknown = set(self.methods) - set(ds.names)
        if unknown:
            raise ConfigError(f"methods given for unknown variables {sorted(unknown)}")
        if sorted(self.visit_sequence) != sorted(ds.names):
            raise ConfigError("visit sequence must list every variable exactly once")
        for v in ds.meta:
            method = self.methods.get(v.name, "")
            if method not in METHODS:
                raise ConfigError(f"{v.name}: unknown method {method!r}")
            incomplete = not ds.is_complete(v.name)
            if incomplete and not method:
                raise ConfigError(f"{v.name} is incomplete but has no imputation method")
            if not incomplete and method:
                raise ConfigError(f"{v.name} is complete; its method must be empty, got {method!r}")
            if method and METHOD_KIND[method] != v.kind:
                raise ConfigError(f"{v.name}: method {method!r} does not suit a {v.kind} variable")
        parsed = {}
        for name, text in self.ums_map.items():
            if name not in ds:
                raise ConfigError(f"ums given for unknown variable {name!r}")
            if self.methods.get(name) not in MNAR_METHODS:
                raise ConfigError(f"ums given for {name!r}, whose method is not mnar.*")
        for name in self.mnar_variables:
            parsed[name] = parse_ums(self.ums_map.get(name, "0"), ds.names, target=name)
        return parsed

    def manifest_items(self) -> list[tuple[str, str]]:
        items = [("m", str(self.m)), ("maxit", str(self.maxit)), ("seed", str(self.seed)),
                 ("visit_sequence", ",".join(self.visit_sequence)),
                 ("include_indicators", str(self.include_indicators).lower())]
        for n in self.predictor_matrix.names:
            items.append((f"method.{n}", self.methods.get(n, "")))
        for n in self.predictor_matrix.names:
            items.append((f"predictors.{n}", ",".join(self.predictor_matrix.predictors(n))))
        for n in sorted(self.ums_map):
            items.append((f"ums.{n}", self.ums_map[n]))
        return items


def derive_seed(root: int, *index: int) -> int:
    """Independent 64-bit seed for a sub-task identified by ``index``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(int(i) for i in index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Generator owned by chain ``chain`` (0-based) of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain),)))


class TraceRow(NamedTuple):
    chain: int
    iteration: int
    variable: str
    mean_imputed: float
    sd_imputed: float


@dataclass
class MultiImputation:
    data: Dataset
    spec: MiceSpec
    imputations: list[dict[str, np.ndarray]]
    trace_vars: list[str]
    trace: np.ndarray  # (m, maxit, len(trace_vars), 2): mean, sd
    notes: list[str] = field(default_factory=list)
    snapshots: list[list[dict[str, np.ndarray]]] | None = None

    @property
    def m(self) -> int:
        return len(self.imputations)

    def completed(self, i: int) -> Dataset:
        return self.data.with_values(self.imputations[i])

    def imputed_values(self, var: str) -> np.ndarray:
        """(m, n_missing) array of imputations at ``var``'s originally missing rows."""
        rows = self.data.mask(var)
        return np.vstack([imp[var][rows] for imp in self.imputations])


def _sd(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _indicator_name(var: str) -> str:
    return f"M({var})"


def _run_chain(ds: Dataset, spec: MiceSpec, ums: Mapping[str, UmsExpression], chain: int,
               record: bool):
    rng = chain_rng(spec.seed, chain)
    work = initial_fill(ds, rng)
    incomplete = set(ds.incomplete)
    if spec.include_indicators:
        for v in ds.incomplete:
            work[_indicator_name(v)] = ds.mask(v).astype(float)
    miss = {v: np.flatnonzero(ds.mask(v)) for v in incomplete}
    visit = [v for v in spec.visit_sequence if v in incomplete]
    trace = np.zeros((spec.maxit, len(visit), 2))
    notes: list[str] = []
    snaps = [] if record else None
    for it in range(spec.maxit):
        for j, v in enumerate(visit):
            preds = spec.predictor_matrix.predictors(v)
            if spec.include_indicators:
                preds = preds + [_indicator_name(u) for u in ds.incomplete if u in preds]
            ctx = UnivariateContext(target=v, predictors=preds, completed=work,
                                    miss_rows=miss[v], rng=rng, ums=ums.get(v))
            try:
                vals = IMPUTERS[spec.methods[v]](ctx)
            except NarfcsError as exc:
                raise ImputationError(f"chain {chain + 1}, iteration {it + 1}, variable {v}: {exc}") from exc
            work[v][miss[v]] = vals
            trace[it, j] = (float(np.mean(vals)), _sd(vals))
            notes.extend(f"chain {chain + 1}, iteration {it + 1}: {n}" for n in ctx.notes)
        if record:
            snaps.append({k: work[k].copy() for k in ds.names})
    out = {k: work[k] for k in ds.names}
    for col in out.values():
        col.flags.writeable = False
    return out, trace, notes, snaps


def _run(ds: Dataset, spec: MiceSpec, threads: int = 1, record_snapshots: bool = False) -> MultiImputation:
    ums = spec.validate(ds)
    visit = [v for v in spec.visit_sequence if v in set(ds.incomplete)]

    def job(c):
        return _run_chain(ds, spec, ums, c, record_snapshots)

    if threads > 1 and spec.m > 1:
        with ThreadPoolExecutor(max_workers=min(threads, spec.m)) as pool:
            results = list(pool.map(job, range(spec.m)))
    else:
        results = [job(c) for c in range(spec.m)]
    notes = [n for r in results for n in r[2]]
    for n in notes:
        log.info(n)
    return MultiImputation(
        data=ds,
        spec=spec,
        imputations=[r[0] for r in results],
        trace_vars=visit,
        trace=np.stack([r[1] for r in results]) if results else np.zeros((0, spec.maxit, len(visit), 2)),
        notes=notes,
        snapshots=[r[3] for r in results] if record_snapshots else None,
    )


def run_fcs(ds: Dataset, spec: MiceSpec, threads: int = 1, record_snapshots: bool = False) -> MultiImputation:
    """Standard FCS under MAR. Any ``mnar.*`` method in ``spec`` runs as its MAR counterpart."""
    return _run(ds, spec.as_mar(), threads, record_snapshots)


def run_narfcs(ds: Dataset, spec: MiceSpec, threads: int = 1, record_snapshots: bool = False) -> MultiImputation:
    """FCS with delta adjustment: ``mnar.*`` variables get their ums offsets on the missing rows."""
    return _run(ds, spec, threads, record_snapshots)


def trace_statistics(mi: MultiImputation) -> list[TraceRow]:
    """One row per chain x iteration x imputed variable (1-based chain and iteration)."""
    rows = []
    m, maxit = mi.trace.shape[:2]
    for c in range(m):
        for it in range(maxit):
            for j, v in enumerate(mi.trace_vars):
                mean, sd = mi.trace[c, it, j]
                rows.append(TraceRow(c + 1, it + 1, v, float(mean), float(sd)))
    return rows


def run_manifest(spec: MiceSpec, extra: Sequence[tuple[str, str]] = ()) -> str:
    """Plain-text ``key = value`` record sufficient to reproduce a run."""
    lines = [f"software = narfcs {__version__}"]
    lines += [f"{k} = {v}" for k, v in list(extra) + spec.manifest_items()]
    return "\n".join(lines) + "\n"
