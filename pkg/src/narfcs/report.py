"""Standalone SVG heatmap for delta sweeps.

Cells are laid out with the last grid variable across columns and the
remaining variables down rows. Fill encodes the point estimate on a linear
white-to-blue scale between ``vmin`` and ``vmax``; the bounds are printed in
the legend because a poorly chosen range can exaggerate or hide differences.
Every cell carries its exact values as ``data-*`` attributes.
"""
from __future__ import annotations

from html import escape

from .sensitivity import SweepResult

_CELL_W = 150
_CELL_H = 64
_LEFT = 190
_TOP = 70
_LOW_RGB = (247, 251, 255)
_HIGH_RGB = (8, 48, 107)


def _color(t: float) -> str:
    t = min(1.0, max(0.0, t))
    rgb = [round(lo + (hi - lo) * t) for lo, hi in zip(_LOW_RGB, _HIGH_RGB)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _label(value: float) -> str:
    return f"{value:.2f}"


def _axis_label(result: SweepResult, var_idx: int, value_idx: int, ums: dict[str, str]) -> str:
    return f"{result.variables[var_idx]} = {ums[result.variables[var_idx]]}"


def render_heatmap(result: SweepResult, vmin: float | None = None, vmax: float | None = None,
                   title: str | None = None) -> str:
    rows = result.rows()
    if not rows:
        raise ValueError("sweep has no cells")
    est = [r.estimate for r in rows]
    lo = min(est) if vmin is None else float(vmin)
    hi = max(est) if vmax is None else float(vmax)
    if not hi > lo:
        hi = lo + 1.0

    # row key / column key per cell
    keys = []
    for r in rows:
        if result.one_at_a_time:
            var_i, val_j = r.cell
            rkey = (var_i,)
            rlabel = f"vary {result.variables[var_i]}"
            ckey = val_j
            clabel = f"value {val_j + 1}"
        else:
            rkey = r.cell[:-1]
            rlabel = ", ".join(_axis_label(result, i, r.cell[i], r.ums) for i in range(len(r.cell) - 1)) or "estimate"
            ckey = r.cell[-1]
            clabel = _axis_label(result, len(r.cell) - 1, ckey, r.ums)
        keys.append((rkey, rlabel, ckey, clabel))
    row_keys = sorted({k[0] for k in keys})
    col_keys = sorted({k[2] for k in keys})
    row_labels = {k[0]: k[1] for k in keys}
    col_labels = {k[2]: k[3] for k in keys}

    width = _LEFT + _CELL_W * len(col_keys) + 20
    grid_h = _CELL_H * len(row_keys)
    height = _TOP + grid_h + 90
    title = title or f"Estimates of {result.coefficient} (with {100 * (1 - _alpha(result)):g}% CI)"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<title>{escape(title)}</title>',
        f'<text x="10" y="22" font-size="15" font-weight="bold">{escape(title)}</text>',
    ]
    for j, ck in enumerate(col_keys):
        x = _LEFT + j * _CELL_W + _CELL_W / 2
        out.append(f'<text class="col-label" x="{x:g}" y="{_TOP - 10}" text-anchor="middle">'
                   f'{escape(col_labels[ck])}</text>')
    for i, rk in enumerate(row_keys):
        y = _TOP + i * _CELL_H + _CELL_H / 2 + 4
        out.append(f'<text class="row-label" x="{_LEFT - 8}" y="{y:g}" text-anchor="end">'
                   f'{escape(row_labels[rk])}</text>')
    for r, (rk, _, ck, _) in zip(rows, keys):
        i, j = row_keys.index(rk), col_keys.index(ck)
        x, y = _LEFT + j * _CELL_W, _TOP + i * _CELL_H
        t = (r.estimate - lo) / (hi - lo)
        ink = "#ffffff" if t > 0.55 else "#000000"
        cell_id = ":".join(str(k + 1) for k in r.cell)
        ums_attr = escape(";".join(f"{v}={r.ums[v]}" for v in result.variables), quote=True)
        out.append(
            f'<g class="cell" data-cell="{cell_id}" data-ums="{ums_attr}" '
            f'data-estimate="{r.estimate!r}" data-ci-low="{r.ci_low!r}" data-ci-high="{r.ci_high!r}">'
        )
        out.append(f'<rect x="{x}" y="{y}" width="{_CELL_W}" height="{_CELL_H}" '
                   f'fill="{_color(t)}" stroke="#ffffff"/>')
        cx = x + _CELL_W / 2
        out.append(f'<text class="estimate" x="{cx:g}" y="{y + 27}" text-anchor="middle" '
                   f'font-weight="bold" fill="{ink}">{_label(r.estimate)}</text>')
        out.append(f'<text class="ci" x="{cx:g}" y="{y + 45}" text-anchor="middle" fill="{ink}">'
                   f'({_label(r.ci_low)}, {_label(r.ci_high)})</text>')
        out.append("</g>")

    # legend: gradient bar with the scale bounds printed
    ly = _TOP + grid_h + 30
    out.append('<defs><linearGradient id="scale" x1="0" x2="1" y1="0" y2="0">'
               f'<stop offset="0" stop-color="{_color(0)}"/><stop offset="1" stop-color="{_color(1)}"/>'
               '</linearGradient></defs>')
    out.append(f'<g class="legend" data-vmin="{lo!r}" data-vmax="{hi!r}">')
    out.append(f'<rect x="{_LEFT}" y="{ly}" width="200" height="14" fill="url(#scale)" stroke="#999999"/>')
    out.append(f'<text x="{_LEFT}" y="{ly + 30}" text-anchor="start">{_label(lo)}</text>')
    out.append(f'<text x="{_LEFT + 200}" y="{ly + 30}" text-anchor="end">{_label(hi)}</text>')
    out.append(f'<text x="10" y="{ly + 12}">colour scale: estimate</text>')
    out.append(f'<text x="10" y="{ly + 50}">scale {_label(lo)} to {_label(hi)}; '
               'values outside are clipped</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _alpha(result: SweepResult) -> float:
    return result.cells[0].pooled[result.coefficient].alpha
