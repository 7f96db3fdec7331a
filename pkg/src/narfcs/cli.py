"""``narfcs`` command-line front end.

Every subcommand validates the whole configuration and computes all results
before the output directory is touched, so a failing run leaves no partial
files behind. Outputs never depend on ``--threads``.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import __version__
from .config import RunConfig, load_config
from .data import Dataset, load_csv, summarize_missingness, write_csv, write_rows
from .engine import MiceSpec, make_predictor_matrix, run_manifest, run_narfcs, trace_statistics
from .errors import ConfigError, DataError, NarfcsError, NumericalError
from .pooling import AnalysisModel, PooledResult, fit_target, pool
from .report import render_heatmap
from .sensitivity import CalibrationOptions, DeltaGrid, calibrate_msp_to_csp, run_sweep
from .simulate import SimConfig, generate_lsac_like, replicate_study

log = logging.getLogger("narfcs")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


@dataclass
class Outputs:
    """Files to write once everything has been computed."""
    writers: list[tuple[str, Callable[[Path], None]]] = field(default_factory=list)
    console: list[str] = field(default_factory=list)

    def text(self, name: str, content: str) -> None:
        self.writers.append((name, lambda p: p.write_text(content, encoding="utf-8")))

    def rows(self, name: str, header, rows) -> None:
        rows = [list(r) for r in rows]
        self.writers.append((name, lambda p: write_rows(p, header, rows)))

    def dataset(self, name: str, ds: Dataset) -> None:
        self.writers.append((name, lambda p: write_csv(ds, p)))

    def flush(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, write in self.writers:
            path = out_dir / name
            write(path)
            paths.append(path)
        return paths


# -- shared plumbing ----------------------------------------------------------

def _dataset(cfg: RunConfig) -> Dataset:
    if cfg.data_path is None:
        raise ConfigError("[data] path is required for this subcommand")
    if not cfg.variables:
        raise ConfigError("[variables] (or [data] schema) is required for this subcommand")
    return load_csv(cfg.data_path, cfg.variables)


def _data_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(Path(cfg.data_path).read_bytes()).hexdigest()


def _spec(cfg: RunConfig, ds: Dataset, seed: int | None) -> MiceSpec:
    pm = make_predictor_matrix(ds)
    for row, preds in cfg.predictors.items():
        if row not in ds:
            raise ConfigError(f"[predictors] unknown variable {row!r}")
        bad = [p for p in preds if p not in ds or p == row]
        if bad:
            raise ConfigError(f"[predictors] {row}: invalid predictors {bad}")
        pm = pm.with_row(row, preds)
    if cfg.visit_sequence is not None:
        unknown = [v for v in cfg.visit_sequence if v not in ds]
        if unknown:
            raise ConfigError(f"[mice] visit_sequence names unknown variables {unknown}")
    spec = MiceSpec.default(
        ds, m=cfg.m, maxit=cfg.maxit, seed=cfg.seed if seed is None else seed,
        methods=cfg.methods, ums_map=cfg.ums, predictor_matrix=pm,
        visit_sequence=tuple(cfg.visit_sequence) if cfg.visit_sequence else None,
        include_indicators=cfg.include_indicators,
    )
    spec.validate(ds)
    return spec


def _model(cfg: RunConfig, ds: Dataset) -> AnalysisModel:
    if not cfg.outcome or not cfg.terms:
        raise ConfigError("[analysis] outcome and terms are required for this subcommand")
    model = AnalysisModel(cfg.outcome, tuple(cfg.terms))
    model.check(ds.names)
    if cfg.coefficient is not None and cfg.coefficient not in model.coefficients:
        raise ConfigError(f"[analysis] coefficient {cfg.coefficient!r} is not in the model")
    return model


def _manifest(cfg: RunConfig, command: str, spec: MiceSpec | None, extra=()) -> str:
    items = [("command", command)]
    if cfg.data_path is not None:
        items += [("data", str(cfg.data_path)), ("data_sha256", _data_digest(cfg))]
    items += list(extra)
    if spec is None:
        return "".join([f"software = narfcs {__version__}\n"] + [f"{k} = {v}\n" for k, v in items])
    return run_manifest(spec, items)


def _pooled_rows(pooled: PooledResult):
    return PooledResult.CSV_HEADER, list(pooled.csv_rows())


# -- subcommands --------------------------------------------------------------

def cmd_summarize(cfg: RunConfig, args) -> Outputs:
    ds = _dataset(cfg)
    s = summarize_missingness(ds)
    out = Outputs()
    rows = [(n, ds.kind(n), c, p, f"{p:.0f}") for n, c, p in s.rows()]
    rows.append(("complete_cases", "", s.complete_cases, s.complete_percent, f"{s.complete_percent:.0f}"))
    out.rows("missingness.csv", ("variable", "kind", "missing", "percent", "percent_rounded"), rows)
    out.text("manifest.txt", _manifest(cfg, "summarize", None, [("n_rows", str(s.n_rows))]))
    width = max([len(n) for n in ds.names] + [14])
    out.console.append(f"{'variable':<{width}}  missing")
    for n, c, p in s.rows():
        out.console.append(f"{n:<{width}}  {c} ({p:.0f}%)")
    out.console.append(f"{'complete cases':<{width}}  {s.complete_cases} ({s.complete_percent:.0f}%)")
    out.console.append(f"{'rows':<{width}}  {s.n_rows}")
    return out


def _impute(cfg: RunConfig, args, command: str):
    ds = _dataset(cfg)
    spec = _spec(cfg, ds, args.seed)
    model = _model(cfg, ds) if command == "analyze" else None
    mi = run_narfcs(ds, spec, threads=args.threads)
    out = Outputs()
    width = len(str(spec.m))
    for i in range(mi.m):
        out.dataset(f"imputed_{i + 1:0{width}d}.csv", mi.completed(i))
    out.text("run_log.txt", "".join(f"{n}\n" for n in mi.notes))
    return ds, spec, mi, model, out


def cmd_impute(cfg: RunConfig, args) -> Outputs:
    _, spec, mi, _, out = _impute(cfg, args, "impute")
    out.text("manifest.txt", _manifest(cfg, "impute", spec))
    out.console.append(f"wrote {mi.m} imputed datasets")
    return out


def cmd_analyze(cfg: RunConfig, args) -> Outputs:
    _, spec, mi, model, out = _impute(cfg, args, "analyze")
    pooled = pool(fit_target(mi, model), cfg.alpha)
    out.rows("pooled.csv", *_pooled_rows(pooled))
    out.text("manifest.txt", _manifest(cfg, "analyze", spec, [
        ("analysis.outcome", model.outcome), ("analysis.terms", ",".join(model.terms)),
        ("analysis.alpha", repr(cfg.alpha))]))
    for e in pooled.estimates:
        out.console.append(f"{e.coefficient:<16} {e.qbar: .4f}  ({e.ci_low: .4f}, {e.ci_high: .4f})")
    return out


def cmd_sweep(cfg: RunConfig, args) -> Outputs:
    ds = _dataset(cfg)
    spec = _spec(cfg, ds, args.seed)
    model = _model(cfg, ds)
    if not cfg.grid:
        raise ConfigError("[grid] is required for sweep")
    coef = cfg.coefficient or model.terms[0]
    which = cfg.sweep.get("coefficients", coef)
    if which not in ("all", coef):
        raise ConfigError("[sweep] coefficients must be 'all' or the designated coefficient")
    vmin, vmax = cfg.sweep.get("scale_min"), cfg.sweep.get("scale_max")
    if vmin is not None and vmax is not None and not vmax > vmin:
        raise ConfigError("[sweep] scale_max must exceed scale_min")
    result = run_sweep(ds, spec, DeltaGrid(dict(cfg.grid)), model, coef, cfg.alpha,
                       threads=args.threads, one_at_a_time=cfg.sweep.get("one_at_a_time", False),
                       common_seed=cfg.sweep.get("common_seed", False))
    out = Outputs()
    out.rows("sweep.csv", result.csv_header(), result.csv_rows(which if which == "all" else None))
    out.text("heatmap.svg", render_heatmap(result, vmin, vmax))
    out.text("manifest.txt", _manifest(cfg, "sweep", spec, [
        ("analysis.outcome", model.outcome), ("analysis.terms", ",".join(model.terms)),
        ("analysis.coefficient", coef), ("analysis.alpha", repr(cfg.alpha))]
        + [(f"grid.{v}", ",".join(vals)) for v, vals in DeltaGrid(dict(cfg.grid)).values.items()]
        + [(f"sweep.{k}", str(v)) for k, v in sorted(cfg.sweep.items())]))
    out.console.append(f"swept {len(result.cells)} cells for {coef}")
    return out


def cmd_calibrate(cfg: RunConfig, args) -> Outputs:
    ds = _dataset(cfg)
    spec = _spec(cfg, ds, args.seed)
    if not cfg.targets:
        raise ConfigError("[targets] is required for calibrate")
    for v in cfg.targets:
        if not spec.methods.get(v, "").startswith("mnar."):
            raise ConfigError(f"[targets] {v!r} must use an mnar.* method")
    opts = dict(cfg.calibration)
    options = CalibrationOptions(threads=args.threads, **opts)
    result = calibrate_msp_to_csp(ds, spec, cfg.targets, options)
    out = Outputs()
    out.rows("calibration.csv", result.CSV_HEADER, result.variables)
    out.text("manifest.txt", _manifest(cfg, "calibrate", spec,
                                       [(f"target.{k}", repr(v)) for k, v in cfg.targets.items()]
                                       + [(f"calibration.{k}", str(v)) for k, v in sorted(opts.items())]
                                       + [("calibration.passes", str(result.passes))]))
    for v in result.variables:
        out.console.append(f"{v.variable}: delta {v.delta:.4f} (MC-SE {v.delta_mc_se:.4f}), "
                           f"MSP {v.achieved:.4f} vs target {v.target:.4f}")
    return out


def _sim_config(cfg: RunConfig, seed: int | None) -> SimConfig:
    s = cfg.simulate
    kw = {k: s[k] for k in ("n", "beta1", "outcome_sd", "u_strength") if k in s}
    kw["seed"] = seed if seed is not None else s.get("seed", cfg.seed)
    preset = s.get("preset", "mar")
    sc = getattr(SimConfig, preset)(**kw)
    for key in ("rate", "self_coef", "w_coef"):
        for var, val in s.get(key, {}).items():
            if var not in sc.missingness:
                raise ConfigError(f"[simulate] {key}.{var}: {var!r} is not an incomplete variable")
            sc = sc.with_missingness(var, **{key: val})
    sc.validate()
    return sc


def cmd_simulate(cfg: RunConfig, args) -> Outputs:
    sc = _sim_config(cfg, args.seed)
    reps = cfg.simulate.get("reps", 0)
    if reps < 0:
        raise ConfigError("[simulate] reps must be nonnegative")
    ds, truth = generate_lsac_like(sc)
    out = Outputs()
    out.dataset("simulated.csv", ds)
    out.text("truth.txt", "".join(f"{k} = {v}\n" for k, v in truth.items()))
    out.rows("rates.csv", ("variable", "target_rate", "realized_rate", "difference_pp"),
             [(v, mm.rate, truth.realized_rates[v], 100 * (truth.realized_rates[v] - mm.rate))
              for v, mm in sc.missingness.items()])
    if reps:
        study = replicate_study(sc, reps, m=cfg.simulate.get("m", 10), maxit=cfg.simulate.get("maxit", 5),
                                alpha=cfg.alpha, workers=args.threads)
        out.rows("replicate_study.csv", study.CSV_HEADER, study.summaries)
        for s in study.summaries:
            out.console.append(f"{s.method:<14} bias {s.bias: .4f} (MC-SE {s.bias_mcse:.4f}) "
                               f"coverage {s.coverage:.3f}")
    items = [("command", "simulate"), ("preset", cfg.simulate.get("preset", "mar")),
             ("n", str(sc.n)), ("seed", str(sc.seed)), ("beta1", repr(sc.beta1)),
             ("outcome_sd", repr(sc.outcome_sd)), ("u_strength", repr(sc.u_strength)),
             ("reps", str(reps))]
    for v, mm in sc.missingness.items():
        items += [(f"rate.{v}", repr(mm.rate)), (f"self_coef.{v}", repr(mm.self_coef)),
                  (f"w_coef.{v}", repr(mm.w_coef)),
                  (f"parents.{v}", ",".join(f"{p}:{c!r}" for p, c in mm.parents.items()))]
    out.text("manifest.txt", f"software = narfcs {__version__}\n" + "".join(f"{k} = {v}\n" for k, v in items))
    for v, mm in sc.missingness.items():
        out.console.append(f"{v:<10} target {100 * mm.rate:5.1f}%  realized {100 * truth.realized_rates[v]:5.1f}%")
    return out


def cmd_trace(cfg: RunConfig, args) -> Outputs:
    ds = _dataset(cfg)
    spec = _spec(cfg, ds, args.seed)
    mi = run_narfcs(ds, spec, threads=args.threads)
    out = Outputs()
    out.rows("trace.csv", ("chain", "iteration", "variable", "mean", "sd"), trace_statistics(mi))
    out.text("manifest.txt", _manifest(cfg, "trace", spec))
    out.console.append(f"{mi.m} chains x {spec.maxit} iterations x {len(mi.trace_vars)} variables")
    return out


COMMANDS = {
    "summarize": (cmd_summarize, "missingness report"),
    "impute": (cmd_impute, "write m completed datasets"),
    "analyze": (cmd_analyze, "impute, fit the analysis model and pool"),
    "sweep": (cmd_sweep, "delta-adjusted sensitivity sweep with heatmap"),
    "calibrate": (cmd_calibrate, "find deltas that reproduce target marginal differences"),
    "simulate": (cmd_simulate, "generate synthetic data and optional replicate study"),
    "trace": (cmd_trace, "per-iteration mean and sd of imputed values"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="narfcs", description="Chained-equations multiple imputation "
                                "with delta-adjusted sensitivity analysis.")
    p.add_argument("--version", action="version", version=f"narfcs {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="parallel workers (default: available cores); results do not depend on it")
    common.add_argument("--out-dir", default=None, help="override [output] dir")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be in [0, 2**64)")
        cfg = load_config(args.config)
        outputs = COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"narfcs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"narfcs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"narfcs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NarfcsError as exc:  # pragma: no cover - every subclass is handled above
        print(f"narfcs: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out_dir = Path(args.out_dir) if args.out_dir else cfg.out_dir
    outputs.flush(out_dir)
    for line in outputs.console:
        print(line)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
