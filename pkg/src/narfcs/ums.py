"""Delta-adjustment expressions such as ``"0.78 + 0.2*matage"``.

An expression is a flat signed sum of terms. A term is either a bare number
or ``number*identifier``. Exactly one bare number must appear (the intercept
shift), in any position. A ``-`` between terms negates the following term's
coefficient.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UmsParseError

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
    r"|(?P<op>[-+*])"
    r"|(?P<bad>\S)"
    r")"
)


@dataclass(frozen=True)
class UmsExpression:
    intercept: float
    terms: tuple[tuple[float, str], ...] = ()

    @property
    def variables(self) -> list[str]:
        return [v for _, v in self.terms]

    def is_zero(self) -> bool:
        return self.intercept == 0 and all(c == 0 for c, _ in self.terms)

    def with_intercept(self, value: float) -> "UmsExpression":
        return UmsExpression(float(value), self.terms)

    def to_text(self) -> str:
        parts = [repr(float(self.intercept))]
        for coef, var in self.terms:
            sign = "-" if np.signbit(coef) else "+"
            parts.append(f"{sign} {repr(abs(float(coef)))}*{var}")
        return " ".join(parts)

    def __str__(self) -> str:
        return self.to_text()


def _tokenize(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "bad":
            raise UmsParseError(f"unexpected character {value!r} in {text!r}")
        out.append((kind, value))
        pos = m.end()
    return out


def _number(tok: str, text: str) -> float:
    x = float(tok)
    if not np.isfinite(x):
        raise UmsParseError(f"number {tok!r} out of range in {text!r}")
    return x


def parse_ums(text: str, known_vars: Iterable[str] | None = None,
              target: str | None = None) -> UmsExpression:
    """Parse ``text``; validate identifiers against ``known_vars`` and ``target``.

    ``known_vars=None`` skips the identifier existence check.
    """
    if not isinstance(text, str) or not text.strip():
        raise UmsParseError("empty ums expression")
    toks = _tokenize(text)
    known = None if known_vars is None else set(known_vars)
    intercept = None
    terms: list[tuple[float, str]] = []
    i = 0
    sign = 1.0
    if toks and toks[0] == ("op", "-"):
        sign, i = -1.0, 1
    elif toks and toks[0] == ("op", "+"):
        i = 1
    while True:
        if i >= len(toks):
            raise UmsParseError(f"dangling operator at end of {text!r}")
        kind, val = toks[i]
        if kind != "num":
            raise UmsParseError(f"expected a number, found {val!r} in {text!r}")
        coef = sign * _number(val, text)
        i += 1
        if i < len(toks) and toks[i] == ("op", "*"):
            if i + 1 >= len(toks):
                raise UmsParseError(f"dangling '*' in {text!r}")
            kind, var = toks[i + 1]
            if kind != "ident":
                raise UmsParseError(f"expected a variable name after '*', found {var!r} in {text!r}")
            if target is not None and var == target:
                raise UmsParseError(f"term variable {var!r} is the imputation target")
            if known is not None and var not in known:
                raise UmsParseError(f"unknown variable {var!r} in {text!r}")
            terms.append((coef, var))
            i += 2
        else:
            if intercept is not None:
                raise UmsParseError(f"more than one intercept in {text!r}")
            intercept = coef
        if i == len(toks):
            break
        kind, val = toks[i]
        if kind != "op" or val == "*":
            raise UmsParseError(f"expected '+' or '-', found {val!r} in {text!r}")
        sign = -1.0 if val == "-" else 1.0
        i += 1
    if intercept is None:
        raise UmsParseError(f"no intercept term in {text!r}")
    return UmsExpression(intercept, tuple(terms))


def evaluate_ums(expr: UmsExpression, completed: Mapping[str, np.ndarray],
                 rows: Sequence[int] | np.ndarray) -> np.ndarray:
    """Row-wise offsets ``intercept + sum(coef * completed[var][rows])``."""
    rows = np.asarray(rows, dtype=np.intp)
    out = np.full(rows.shape[0], float(expr.intercept))
    for coef, var in expr.terms:
        try:
            col = completed[var]
        except KeyError:
            raise UmsParseError(f"unknown variable {var!r} at evaluation time") from None
        out = out + coef * np.asarray(col, dtype=float)[rows]
    return out
