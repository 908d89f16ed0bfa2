"""Static report files: grouped bar charts as SVG plus a CSV of the plotted numbers.

The SVG is written by hand from a fixed template so identical inputs give
identical bytes. Every bar carries its exact value in a ``data-value``
attribute and the CSV twin stores the same numbers at full precision.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .analyze import FIG2_COMPARISONS, Grouping, TimeControlResult
from .annotate import LeaningCell
from .model import LEANING_SCALE, DataError, QueryCategory
from .stats import BootstrapCI, StatResult

log = logging.getLogger(__name__)


class Figure(str, enum.Enum):
    FIG2_PANEL = "Fig2Panel"
    FIG3_PANEL = "Fig3Panel"
    LEANING_PANEL = "LeaningPanel"
    METRICS_GRID = "MetricsGrid"
    TIME_CONTROL = "TimeControl"


@dataclass(frozen=True)
class ReportSpec:
    inputs: tuple[str, ...]
    figure: Figure
    out_dir: str
    formats: tuple[str, ...] = ("csv", "svg")
    title: str = ""

    def __post_init__(self):
        object.__setattr__(self, "figure", Figure(self.figure))
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        bad = set(self.formats) - {"csv", "svg"}
        if bad:
            raise ValueError(f"unknown format(s) {sorted(bad)}")
        if "svg" in self.formats and "csv" not in self.formats:
            raise ValueError("an SVG chart always needs its CSV twin")


@dataclass
class Bar:
    series: str
    value: float | None          # None marks a missing cell
    lo: float | None = None
    hi: float | None = None
    n: int = 0
    shade: str = "light"         # light | dark
    hatched: bool = False


@dataclass
class Bracket:
    left: int                    # bar indices within the group
    right: int
    p_adjusted: float
    stars: str
    name: str = ""


@dataclass
class Group:
    label: str
    bars: list[Bar]
    brackets: list[Bracket] = field(default_factory=list)


@dataclass
class Panel:
    title: str
    groups: list[Group]
    y_label: str = "D"


# --- building panels -------------------------------------------------------------

_FIG2_BARS = (
    (Grouping.SAME, QueryCategory.GENERAL, "light", False),
    (Grouping.DIFF, QueryCategory.GENERAL, "dark", False),
    (Grouping.SAME, QueryCategory.SPECIFIC, "light", True),
    (Grouping.DIFF, QueryCategory.SPECIFIC, "dark", True),
)


def _bar_index(spec: Mapping) -> int:
    for i, (g, c, _, _) in enumerate(_FIG2_BARS):
        if g is spec["grouping"] and c is spec["category"]:
            return i
    raise KeyError(spec)


def _ci_bar(series, ci: BootstrapCI | None, shade, hatched) -> Bar:
    if ci is None:
        return Bar(series, None, shade=shade, hatched=hatched)
    return Bar(series, ci.mean, ci.lo, ci.hi, ci.n, shade, hatched)


def grouped_panel(title: str, means: Mapping[tuple, BootstrapCI],
                  tests: Sequence[StatResult] = (), engines: Sequence[str] | None = None,
                  y_label: str = "D") -> Panel:
    """One group of four bars per engine, keyed like :func:`analyze.group_means`."""
    engines = sorted(engines or {k[0] for k in means} | {t.engine for t in tests})
    groups = []
    for engine in engines:
        bars = [_ci_bar(f"{g.value}/{c.value}", means.get((engine, g, c)), shade, hatch)
                for g, c, shade, hatch in _FIG2_BARS]
        brackets = []
        for name, left, right in FIG2_COMPARISONS:
            res = next((t for t in tests if t.engine == engine and t.comparison == name), None)
            if res is None or res.untestable:
                continue
            brackets.append(Bracket(_bar_index(left), _bar_index(right),
                                    res.p_adjusted, res.stars.value, name))
        groups.append(Group(engine, bars, brackets))
    return Panel(title, groups, y_label)


def leaning_panel(title: str, all_cells: Mapping[tuple, LeaningCell],
                  top3_cells: Mapping[tuple, LeaningCell], engine: str) -> Panel:
    """Per location, the share of each leaning among all news results and the top 3."""
    locations = sorted({k[1] for k in all_cells if k[0] == engine}
                       | {k[1] for k in top3_cells if k[0] == engine})
    groups = []
    for loc in locations:
        bars = []
        for lab_i, lab in enumerate(LEANING_SCALE):
            for cells, scope, shade in ((all_cells, "All", "light"), (top3_cells, "Top3", "dark")):
                cell = cells.get((engine, loc))
                v = cell.proportions[lab_i] if cell else None
                bars.append(Bar(f"{lab.value}/{scope}", v, v, v, cell.n if cell else 0, shade))
        groups.append(Group(loc, bars))
    return Panel(title, groups, "proportion")


def time_panel(title: str, result: TimeControlResult) -> Panel:
    groups = []
    for epoch, means in enumerate(result.epoch_means):
        bars = [_ci_bar(f"{g.value}/{c.value}", means.get((g, c)), shade, hatch)
                for g, c, shade, hatch in _FIG2_BARS]
        groups.append(Group(f"epoch {epoch}", bars))
    return Panel(title, groups)


# --- SVG -----------------------------------------------------------------------------

_W_BAR, _GAP, _PAD_L, _PAD_R, _PANEL_H, _TOP, _BOTTOM = 22, 26, 56, 16, 220, 40, 48
_FILL = {"light": "#9ecae1", "dark": "#08519c"}


def _f(x: float) -> str:
    return f"{x:.2f}"


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _y_max(panels: Sequence[Panel]) -> float:
    top = 0.0
    for p in panels:
        for g in p.groups:
            for b in g.bars:
                for v in (b.value, b.hi):
                    if v is not None and math.isfinite(v):
                        top = max(top, v)
    if top <= 1.0:
        return 1.0
    mag = 10 ** math.floor(math.log10(top))
    return math.ceil(top / mag) * mag


def render_svg(title: str, panels: Sequence[Panel]) -> tuple[str, list[str]]:
    """SVG text and a list of warnings about missing cells."""
    warnings = []
    ymax = _y_max(panels)
    widths = []
    for p in panels:
        nb = sum(len(g.bars) for g in p.groups)
        widths.append(_PAD_L + _PAD_R + nb * _W_BAR + len(p.groups) * _GAP)
    width = max(widths + [320])
    height = _TOP + len(panels) * (_PANEL_H + _BOTTOM) + 24
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
        "patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" "
        "stroke=\"#ffffff\" stroke-width=\"2\"/></pattern></defs>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for pi, panel in enumerate(panels):
        y0 = _TOP + pi * (_PANEL_H + _BOTTOM)
        base = y0 + _PANEL_H

        def ypos(v: float) -> float:
            return base - (_PANEL_H - 20) * max(0.0, min(v, ymax)) / ymax

        out.append(f'<g class="panel" data-title="{escape(panel.title)}">')
        out.append(f'<text x="{_PAD_L}" y="{_f(y0 + 8)}">{escape(panel.title)}</text>')
        out.append(f'<line x1="{_PAD_L}" y1="{_f(base)}" x2="{width - _PAD_R}" y2="{_f(base)}" stroke="#000000"/>')
        out.append(f'<line x1="{_PAD_L}" y1="{_f(base)}" x2="{_PAD_L}" y2="{_f(ypos(ymax))}" stroke="#000000"/>')
        for t in range(5):
            v = ymax * t / 4
            out.append(f'<text x="{_PAD_L - 4}" y="{_f(ypos(v) + 4)}" text-anchor="end">{v:g}</text>')
        out.append(f'<text x="12" y="{_f(base - _PANEL_H / 2)}" transform="rotate(-90 12 '
                   f'{_f(base - _PANEL_H / 2)})" text-anchor="middle">{escape(panel.y_label)}</text>')
        x = _PAD_L + _GAP / 2
        for group in panel.groups:
            xs = []
            for bar in group.bars:
                cx = x + _W_BAR / 2
                xs.append(cx)
                if bar.value is None or not math.isfinite(bar.value):
                    warnings.append(f"{panel.title}/{group.label}/{bar.series}: no data")
                    out.append(f'<g class="gap" data-series="{escape(bar.series)}">'
                               f'<text x="{_f(cx)}" y="{_f(base - 4)}" text-anchor="middle" '
                               f'fill="#cc0000">x</text></g>')
                    x += _W_BAR
                    continue
                top = ypos(bar.value)
                attrs = (f'data-series="{escape(bar.series)}" data-value="{_num(bar.value)}" '
                         f'data-lo="{_num(bar.lo)}" data-hi="{_num(bar.hi)}"')
                out.append(f'<rect class="bar" {attrs} x="{_f(x + 1)}" y="{_f(top)}" '
                           f'width="{_W_BAR - 2}" height="{_f(base - top)}" fill="{_FILL[bar.shade]}" '
                           f'stroke="#000000" stroke-width="0.5"/>')
                if bar.hatched:
                    out.append(f'<rect x="{_f(x + 1)}" y="{_f(top)}" width="{_W_BAR - 2}" '
                               f'height="{_f(base - top)}" fill="url(#hatch)"/>')
                if bar.lo is not None and bar.hi is not None and bar.hi > bar.lo:
                    ylo, yhi = ypos(bar.lo), ypos(bar.hi)
                    out.append(f'<path class="ci" d="M{_f(cx)} {_f(ylo)}V{_f(yhi)}'
                               f'M{_f(cx - 4)} {_f(ylo)}H{_f(cx + 4)}M{_f(cx - 4)} {_f(yhi)}H{_f(cx + 4)}" '
                               f'stroke="#333333" fill="none"/>')
                x += _W_BAR
            # brackets with stars, stacked above the tallest bar of the group
            tops = [b.hi if b.hi is not None else b.value for b in group.bars
                    if b.value is not None and math.isfinite(b.value)]
            level = ypos(max(tops)) - 8 if tops else base - 20
            for br in group.brackets:
                if not br.stars:
                    continue
                xa, xb = xs[br.left], xs[br.right]
                level = max(level, y0 + 14)
                out.append(f'<path class="bracket" d="M{_f(xa)} {_f(level + 4)}V{_f(level)}'
                           f'H{_f(xb)}V{_f(level + 4)}" stroke="#000000" fill="none" '
                           f'data-p="{_num(br.p_adjusted)}"/>')
                out.append(f'<text x="{_f((xa + xb) / 2)}" y="{_f(level - 2)}" '
                           f'text-anchor="middle">{br.stars}</text>')
                level -= 12
            gx = (xs[0] + xs[-1]) / 2 if xs else x
            out.append(f'<text x="{_f(gx)}" y="{_f(base + 16)}" text-anchor="middle">'
                       f'{escape(group.label)}</text>')
            x += _GAP
        out.append("</g>")
    ly = height - 10
    out.append(f'<g class="legend"><rect x="{_PAD_L}" y="{ly - 9}" width="10" height="10" fill="{_FILL["light"]}"/>'
               f'<text x="{_PAD_L + 14}" y="{ly}">{escape(_legend(panels)[0])}</text>'
               f'<rect x="{_PAD_L + 150}" y="{ly - 9}" width="10" height="10" fill="{_FILL["dark"]}"/>'
               f'<text x="{_PAD_L + 164}" y="{ly}">{escape(_legend(panels)[1])}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n", warnings


def _legend(panels: Sequence[Panel]) -> tuple[str, str]:
    if panels and panels[0].y_label == "proportion":
        return "all news results", "top 3 news results"
    return "same location (hatched: specific)", "different location"


# --- CSV -----------------------------------------------------------------------------

CSV_FIELDS = ("panel", "group", "series", "kind", "value", "lo", "hi", "n", "stars")


def render_csv(panels: Sequence[Panel]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in panels:
        for g in p.groups:
            for b in g.bars:
                w.writerow([p.title, g.label, b.series, "bar", _num(b.value), _num(b.lo),
                            _num(b.hi), b.n, ""])
            for br in g.brackets:
                pair = f"{g.bars[br.left].series}|{g.bars[br.right].series}"
                w.writerow([p.title, g.label, pair, "comparison", _num(br.p_adjusted), "", "",
                            "", br.stars])
    return buf.getvalue()


def read_chart_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- entry point ---------------------------------------------------------------------

def emit_chart(spec: ReportSpec, panels: Sequence[Panel]) -> tuple[list[Path], list[str]]:
    """Write ``<figure>.svg`` and ``<figure>.csv`` under ``spec.out_dir``.

    Returns the written paths and warnings; a chart with no data at all is a
    :class:`DataError`.
    """
    has_data = any(b.value is not None for p in panels for g in p.groups for b in g.bars)
    if not panels or not has_data:
        raise DataError(f"nothing to plot for {spec.figure.value}")
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = spec.figure.value
    written = []
    warnings: list[str] = []
    if "svg" in spec.formats:
        svg, warnings = render_svg(spec.title or stem, panels)
        path = out_dir / f"{stem}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(path)
    if "csv" in spec.formats:
        path = out_dir / f"{stem}.csv"
        path.write_text(render_csv(panels), encoding="utf-8")
        written.append(path)
    for w in warnings:
        log.warning("%s: %s", stem, w)
    return written, warnings
