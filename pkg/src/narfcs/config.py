"""Run configuration: INI-style sections of ``key = value``; lists are comma-separated.

Sections (all optional unless a subcommand needs them)::

    [data]         path, schema (``lsac`` uses the built-in 12-variable schema)
    [variables]    name = kind[, role]
    [mice]         m, maxit, seed, visit_sequence, include_indicators
    [methods]      name = norm | logreg | mnar.norm | mnar.logreg
    [ums]          name = delta expression
    [predictors]   name = comma list (replaces that row of the predictor matrix)
    [analysis]     outcome, terms, coefficient, alpha
    [grid]         name = comma list of deltas or ums expressions
    [sweep]        one_at_a_time, common_seed, coefficients (coefficient | all),
                   scale_min, scale_max
    [targets]      name = marginal sensitivity parameter
    [calibration]  replicates, m, maxit, max_passes, max_evals, seed, tol.<name>
    [simulate]     preset, n, seed, beta1, outcome_sd, u_strength,
                   rate.<name>, self_coef.<name>, w_coef.<name>, reps, m, maxit
    [output]       dir
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import VariableMeta
from .errors import ConfigError, DataError

_SECTIONS = {"data", "variables", "mice", "methods", "ums", "predictors", "analysis", "grid",
             "sweep", "targets", "calibration", "simulate", "output"}


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int(section: str, key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _float(section: str, key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def _bool(section: str, key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected true/false, got {text!r}")


@dataclass
class RunConfig:
    source: Path | None = None
    data_path: Path | None = None
    variables: list[VariableMeta] = field(default_factory=list)
    m: int | None = None
    maxit: int = 10
    seed: int = 0
    visit_sequence: list[str] | None = None
    include_indicators: bool = False
    methods: dict[str, str] = field(default_factory=dict)
    ums: dict[str, str] = field(default_factory=dict)
    predictors: dict[str, list[str]] = field(default_factory=dict)
    outcome: str | None = None
    terms: list[str] = field(default_factory=list)
    coefficient: str | None = None
    alpha: float = 0.05
    grid: dict[str, list[str]] = field(default_factory=dict)
    sweep: dict[str, Any] = field(default_factory=dict)
    targets: dict[str, float] = field(default_factory=dict)
    calibration: dict[str, Any] = field(default_factory=dict)
    simulate: dict[str, Any] = field(default_factory=dict)
    out_dir: Path = Path("narfcs-out")


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep variable-name case
    try:
        cp.read_string(text, source=str(source) if source else "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    base = source.parent if source else Path(".")
    cfg = RunConfig(source=source)
    sec = lambda name: cp[name] if cp.has_section(name) else {}  # noqa: E731

    data = sec("data")
    if "path" in data:
        p = Path(data["path"])
        cfg.data_path = p if p.is_absolute() else base / p
    schema = data.get("schema", "").strip() if data else ""
    if schema:
        if schema != "lsac":
            raise ConfigError(f"[data] schema: unknown schema {schema!r}")
        from .simulate import TABLE1_VARIABLES
        cfg.variables = list(TABLE1_VARIABLES)
    for name, spec in sec("variables").items():
        parts = _split(spec)
        if not parts or len(parts) > 2:
            raise ConfigError(f"[variables] {name}: expected 'kind[, role]'")
        try:
            cfg.variables.append(VariableMeta(name, parts[0], parts[1] if len(parts) > 1 else "auxiliary"))
        except DataError as exc:
            raise ConfigError(f"[variables] {exc}") from None
    names = [v.name for v in cfg.variables]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate variable definitions")

    for key, val in sec("mice").items():
        if key == "m":
            cfg.m = _int("mice", key, val)
        elif key == "maxit":
            cfg.maxit = _int("mice", key, val)
        elif key == "seed":
            cfg.seed = _int("mice", key, val)
        elif key == "visit_sequence":
            cfg.visit_sequence = _split(val)
        elif key == "include_indicators":
            cfg.include_indicators = _bool("mice", key, val)
        else:
            raise ConfigError(f"[mice] unknown key {key!r}")
    cfg.methods = {k: v.strip().strip('"') for k, v in sec("methods").items()}
    cfg.ums = {k: v.strip() for k, v in sec("ums").items()}
    cfg.predictors = {k: _split(v) for k, v in sec("predictors").items()}

    for key, val in sec("analysis").items():
        if key == "outcome":
            cfg.outcome = val.strip()
        elif key == "terms":
            cfg.terms = _split(val)
        elif key == "coefficient":
            cfg.coefficient = val.strip()
        elif key == "alpha":
            cfg.alpha = _float("analysis", key, val)
            if not 0 < cfg.alpha < 1:
                raise ConfigError("[analysis] alpha must be in (0, 1)")
        else:
            raise ConfigError(f"[analysis] unknown key {key!r}")

    cfg.grid = {k: _split(v) for k, v in sec("grid").items()}
    for key, val in sec("sweep").items():
        if key in ("one_at_a_time", "common_seed"):
            cfg.sweep[key] = _bool("sweep", key, val)
        elif key in ("scale_min", "scale_max"):
            cfg.sweep[key] = _float("sweep", key, val)
        elif key == "coefficients":
            cfg.sweep[key] = val.strip()
        else:
            raise ConfigError(f"[sweep] unknown key {key!r}")

    cfg.targets = {k: _float("targets", k, v) for k, v in sec("targets").items()}
    for key, val in sec("calibration").items():
        if key in ("replicates", "m", "maxit", "max_passes", "max_evals", "seed"):
            cfg.calibration[key] = _int("calibration", key, val)
        elif key.startswith("tol."):
            cfg.calibration.setdefault("tol", {})[key[4:]] = _float("calibration", key, val)
        else:
            raise ConfigError(f"[calibration] unknown key {key!r}")

    for key, val in sec("simulate").items():
        if key == "preset":
            if val.strip() not in ("mar", "mnar_outcome", "mdag"):
                raise ConfigError(f"[simulate] unknown preset {val!r}")
            cfg.simulate[key] = val.strip()
        elif key in ("n", "seed", "reps", "m", "maxit"):
            cfg.simulate[key] = _int("simulate", key, val)
        elif key in ("beta1", "outcome_sd", "u_strength"):
            cfg.simulate[key] = _float("simulate", key, val)
        elif key.split(".")[0] in ("rate", "self_coef", "w_coef") and "." in key:
            cfg.simulate.setdefault(key.split(".")[0], {})[key.split(".", 1)[1]] = _float("simulate", key, val)
        else:
            raise ConfigError(f"[simulate] unknown key {key!r}")

    out = sec("output")
    if "dir" in out:
        p = Path(out["dir"])
        cfg.out_dir = p if p.is_absolute() else base / p
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)
