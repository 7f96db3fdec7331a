"""Rectangular datasets with an explicit missingness mask, plus CSV I/O."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, MaskedReadError

KINDS = ("continuous", "binary")
ROLES = ("outcome", "exposure", "confounder", "auxiliary")
MISSING_TOKENS = ("", "NA")

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


@dataclass(frozen=True)
class VariableMeta:
    name: str
    kind: str = "continuous"
    role: str = "auxiliary"

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise DataError(f"invalid variable name {self.name!r}")
        if self.kind not in KINDS:
            raise DataError(f"variable {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role not in ROLES:
            raise DataError(f"variable {self.name!r}: role must be one of {ROLES}, got {self.role!r}")


class Dataset:
    """Immutable column store; ``mask[name][i]`` is True when cell i is missing.

    Masked cells hold NaN internally. ``ds[name]`` returns a read-only column
    and raises :class:`MaskedReadError` if the column has any masked cell; use
    :meth:`raw` or :meth:`observed` for incomplete columns.
    """

    def __init__(self, meta: Sequence[VariableMeta], values: Mapping[str, np.ndarray],
                 mask: Mapping[str, np.ndarray] | None = None):
        names = [v.name for v in meta]
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")
        missing = set(names) - set(values)
        if missing:
            raise DataError(f"no values supplied for {sorted(missing)}")
        self.meta = tuple(meta)
        self._kind = {v.name: v.kind for v in meta}
        n_rows = None
        self._values: dict[str, np.ndarray] = {}
        self._mask: dict[str, np.ndarray] = {}
        for v in meta:
            col = np.array(values[v.name], dtype=float)
            if col.ndim != 1:
                raise DataError(f"column {v.name!r} is not one-dimensional")
            if n_rows is None:
                n_rows = col.shape[0]
            elif col.shape[0] != n_rows:
                raise DataError(f"column {v.name!r} has {col.shape[0]} rows, expected {n_rows}")
            if mask is not None and v.name in mask:
                m = np.array(mask[v.name], dtype=bool)
                if m.shape != col.shape:
                    raise DataError(f"mask for {v.name!r} has wrong shape")
                m = m | np.isnan(col)
            else:
                m = np.isnan(col)
            col[m] = np.nan
            if not np.all(np.isfinite(col[~m])):
                raise DataError(f"column {v.name!r} contains non-finite values")
            if v.kind == "binary":
                bad = ~np.isin(col[~m], (0.0, 1.0))
                if bad.any():
                    first = col[~m][bad][0]
                    raise DataError(f"binary column {v.name!r} has value {first!r} outside {{0,1}}")
            col.flags.writeable = False
            m.flags.writeable = False
            self._values[v.name] = col
            self._mask[v.name] = m
        self.n_rows = 0 if n_rows is None else int(n_rows)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.meta]

    def kind(self, name: str) -> str:
        self._check(name)
        return self._kind[name]

    def _check(self, name: str) -> None:
        if name not in self._values:
            raise DataError(f"unknown variable {name!r}")

    def __contains__(self, name: object) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        self._check(name)
        if self._mask[name].any():
            raise MaskedReadError(f"column {name!r} has masked cells")
        return self._values[name]

    def raw(self, name: str) -> np.ndarray:
        """Column values with NaN at masked cells."""
        self._check(name)
        return self._values[name]

    def mask(self, name: str) -> np.ndarray:
        self._check(name)
        return self._mask[name]

    def observed(self, name: str) -> np.ndarray:
        self._check(name)
        return self._values[name][~self._mask[name]]

    def is_complete(self, name: str) -> bool:
        return not self.mask(name).any()

    @property
    def incomplete(self) -> list[str]:
        return [n for n in self.names if self._mask[n].any()]

    def with_values(self, values: Mapping[str, np.ndarray], keep_mask: bool = False) -> "Dataset":
        """New dataset with the same metadata and replaced values."""
        mask = self._mask if keep_mask else None
        return Dataset(self.meta, values, mask)

    def equals(self, other: "Dataset") -> bool:
        if self.meta != other.meta or self.n_rows != other.n_rows:
            return False
        for n in self.names:
            if not np.array_equal(self._mask[n], other._mask[n]):
                return False
            a, b = self._values[n], other._values[n]
            m = self._mask[n]
            if not np.array_equal(a[~m].view(np.int64), b[~m].view(np.int64)):
                return False
        return True

    def __repr__(self) -> str:
        return f"Dataset(n_rows={self.n_rows}, variables={self.names})"


@dataclass
class MissingnessSummary:
    n_rows: int
    count: dict[str, int]
    percent: dict[str, float]
    complete_cases: int
    complete_percent: float
    order: list[str] = field(default_factory=list)

    @property
    def incomplete_percent(self) -> float:
        return 100.0 - self.complete_percent

    def rows(self) -> list[tuple[str, int, float]]:
        return [(n, self.count[n], self.percent[n]) for n in self.order]


def summarize_missingness(ds: Dataset) -> MissingnessSummary:
    count, percent = {}, {}
    any_missing = np.zeros(ds.n_rows, dtype=bool)
    for n in ds.names:
        m = ds.mask(n)
        count[n] = int(m.sum())
        percent[n] = 100.0 * count[n] / ds.n_rows if ds.n_rows else 0.0
        any_missing |= m
    cc = int(ds.n_rows - any_missing.sum())
    return MissingnessSummary(
        n_rows=ds.n_rows,
        count=count,
        percent=percent,
        complete_cases=cc,
        complete_percent=100.0 * cc / ds.n_rows if ds.n_rows else 100.0,
        order=ds.names,
    )


def missingness_indicator(ds: Dataset, var: str) -> np.ndarray:
    """0/1 vector, 1 where ``var`` is missing."""
    return ds.mask(var).astype(np.int8)


def _parse_cell(token: str, column: str, line: int) -> float:
    token = token.strip()
    if token in MISSING_TOKENS:
        return math.nan
    try:
        x = float(token)
    except ValueError:
        raise DataError(f"line {line}, column {column!r}: non-numeric value {token!r}") from None
    if not math.isfinite(x):
        raise DataError(f"line {line}, column {column!r}: non-finite value {token!r}")
    return x


def load_csv(path: str | Path, meta: Sequence[VariableMeta]) -> Dataset:
    """Read a headed CSV. Empty fields and ``NA`` become masked cells.

    Header names must match ``meta`` up to order; the resulting dataset
    follows the file's column order.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        by_name = {v.name: v for v in meta}
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        unknown = [h for h in header if h not in by_name]
        if unknown:
            raise DataError(f"{path}: unknown column(s) {unknown}")
        absent = [n for n in by_name if n not in header]
        if absent:
            raise DataError(f"{path}: missing column(s) {absent}")
        cols: list[list[float]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            for j, tok in enumerate(row):
                cols[j].append(_parse_cell(tok, header[j], lineno))
    ordered = [by_name[h] for h in header]
    return Dataset(ordered, {h: np.array(c, dtype=float) for h, c in zip(header, cols)})


def format_value(x: float, kind: str = "continuous") -> str:
    """Shortest text that reads back to the identical double."""
    if math.isnan(x):
        return "NA"
    if kind == "binary":
        return str(int(x))
    return repr(float(x))


def write_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    kinds = [ds.kind(n) for n in ds.names]
    cols = [ds.raw(n) for n in ds.names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for i in range(ds.n_rows):
            w.writerow([format_value(c[i], k) for c, k in zip(cols, kinds)])


def write_rows(path: str | Path, header: Iterable[str], rows: Iterable[Iterable[object]]) -> None:
    """Small CSV writer used by the reports; floats are written with ``repr``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
