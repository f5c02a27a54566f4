"""Self-contained SVG charts and CSV tables for run artifacts.

No plotting dependency: charts are assembled from SVG primitives.  Every
plotted number also appears verbatim in the chart's embedded data table
(text elements with class "datum" and a data-key attribute) and in the
companion CSV, written through the same formatter, so the two sources can
be cross-checked mechanically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape


def fmt(x: float) -> str:
    """The one number format shared by SVG data tables and CSVs."""
    return format(float(x), ".10g")


@dataclass(frozen=True)
class Band:
    """One category on the x axis with a named interval per series."""

    label: str
    intervals: dict[str, tuple[float, float] | None]


_PALETTE = ("#2f6fb2", "#d07a2d", "#3b8a4e", "#8a4e9c")
_W, _H = 760, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 50, 60


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    return [lo + span * k / (n - 1) for k in range(n)]


def _data_table(bands: Sequence[Band], series: Sequence[str]) -> list[str]:
    # invisible, machine-readable copy of every plotted number
    parts = ['<g class="data" font-size="0" visibility="hidden">']
    for band in bands:
        for name in series:
            iv = band.intervals.get(name)
            if iv is None:
                continue
            key = escape(f"{band.label}/{name}", {'"': "&quot;"})
            parts.append(f'<text class="datum" data-key="{key}_lo">{fmt(iv[0])}</text>')
            parts.append(f'<text class="datum" data-key="{key}_hi">{fmt(iv[1])}</text>')
    parts.append("</g>")
    return parts


def render_interval_chart(bands: Sequence[Band], title: str,
                          y_label: str = "EUR") -> str:
    """Vertical interval bars per category, one color per series."""
    if not bands:
        raise ValueError("no bands to plot")
    series = []
    for band in bands:
        for name in band.intervals:
            if name not in series:
                series.append(name)
    values = [v for band in bands for v in (band.intervals.get(s) for s in series)
              if v is not None for v in v]
    lo = min(values) if values else 0.0
    hi = max(values) if values else 1.0
    pad = 0.08 * (hi - lo if hi > lo else max(abs(hi), 1.0))
    lo, hi = lo - pad, hi + pad

    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B

    def ypix(v: float) -> float:
        return _MARGIN_T + plot_h * (hi - v) / (hi - lo)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif">',
             f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
             f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="16">'
             f'{escape(title)}</text>']
    for tick in _ticks(lo, hi):
        y = ypix(tick)
        parts.append(f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{_W - _MARGIN_R}" '
                     f'y2="{y:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{tick:.4g}</text>')
    parts.append(f'<text x="16" y="{_MARGIN_T - 14}" font-size="11">'
                 f'{escape(y_label)}</text>')

    slot = plot_w / max(len(bands), 1)
    for i, band in enumerate(bands):
        x0 = _MARGIN_L + slot * i
        parts.append(f'<text x="{x0 + slot / 2:.1f}" y="{_H - _MARGIN_B + 18}" '
                     f'text-anchor="middle" font-size="11">{escape(band.label)}</text>')
        drawn = [s for s in series if band.intervals.get(s) is not None]
        step = slot / (len(drawn) + 1) if drawn else slot
        for k, name in enumerate(drawn):
            v_lo, v_hi = band.intervals[name]
            x = x0 + step * (k + 1)
            color = _PALETTE[series.index(name) % len(_PALETTE)]
            y1, y2 = ypix(v_hi), ypix(v_lo)
            parts.append(f'<line x1="{x:.1f}" y1="{y1:.1f}" x2="{x:.1f}" '
                         f'y2="{y2:.1f}" stroke="{color}" stroke-width="3"/>')
            for y in (y1, y2):
                parts.append(f'<line x1="{x - 5:.1f}" y1="{y:.1f}" '
                             f'x2="{x + 5:.1f}" y2="{y:.1f}" '
                             f'stroke="{color}" stroke-width="2"/>')
        missing = [s for s in series if band.intervals.get(s) is None]
        if missing:
            parts.append(f'<text x="{x0 + slot / 2:.1f}" y="{_MARGIN_T + 14}" '
                         f'text-anchor="middle" font-size="10" fill="#888888">'
                         f'n.s.</text>')
    for k, name in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        x = _MARGIN_L + 110 * k
        y = _H - 16
        parts.append(f'<rect x="{x}" y="{y - 10}" width="12" height="12" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{x + 16}" y="{y}" font-size="11">'
                     f'{escape(name)}</text>')
    parts.extend(_data_table(bands, series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bands_to_csv(bands: Sequence[Band], label_header: str = "label") -> str:
    """CSV twin of an interval chart, empty cells for missing intervals."""
    series = []
    for band in bands:
        for name in band.intervals:
            if name not in series:
                series.append(name)
    header = [label_header]
    for name in series:
        header += [f"{name}_lo", f"{name}_hi"]
    lines = [",".join(header)]
    for band in bands:
        cells = [band.label]
        for name in series:
            iv = band.intervals.get(name)
            cells += ["", ""] if iv is None else [fmt(iv[0]), fmt(iv[1])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_strategy_chart(doc: dict, title: str) -> str:
    """Hourly bar profile of a strategy document (strategy_to_dict shape):
    one bar group per hour showing the independent volume plus the
    cumulative price-dependent volume at each level, lightest = highest
    level, with block orders in a footer table."""
    independent = [float(v) for v in doc["independent"]]
    dependent = [[float(v) for v in row] for row in doc["dependent"]]
    block = [[float(v) for v in row] for row in doc["block"]]
    blocks = [tuple(int(h) for h in b) for b in doc["blocks"]]
    n_levels = len(dependent)
    hours = len(independent)

    totals = [[independent[t] + dependent[p][t] for t in range(hours)]
              for p in range(n_levels)]
    peak = max(max(row) for row in totals) if totals else 1.0
    peak = max(peak, max(independent), 1e-9)

    extra = 26 + 14 * len(blocks)
    height = _H + extra
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    y0 = _MARGIN_T + plot_h

    def bar_h(v: float) -> float:
        return plot_h * v / (1.12 * peak)

    shades = ["#9ecae1", "#6baed6", "#4292c6", "#2171b5", "#084594"][:n_levels]
    shades = shades[::-1]  # index by level: darkest = level 1

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{height}" viewBox="0 0 {_W} {height}" '
             f'font-family="sans-serif">',
             f'<rect width="{_W}" height="{height}" fill="#ffffff"/>',
             f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="16">'
             f'{escape(title)}</text>',
             f'<line x1="{_MARGIN_L}" y1="{y0}" x2="{_W - _MARGIN_R}" '
             f'y2="{y0}" stroke="#333333"/>']
    slot = plot_w / hours
    for t in range(hours):
        x = _MARGIN_L + slot * t
        w = slot * 0.8
        for p in reversed(range(n_levels)):  # tall light bars first
            h = bar_h(totals[p][t])
            parts.append(f'<rect x="{x:.1f}" y="{y0 - h:.1f}" width="{w:.1f}" '
                         f'height="{h:.1f}" fill="{shades[p]}"/>')
        h_ind = bar_h(independent[t])
        if h_ind > 0:
            parts.append(f'<rect x="{x:.1f}" y="{y0 - h_ind:.1f}" '
                         f'width="{w:.1f}" height="{h_ind:.1f}" fill="none" '
                         f'stroke="#222222" stroke-width="1"/>')
        if t % 3 == 0:
            parts.append(f'<text x="{x + w / 2:.1f}" y="{y0 + 14}" '
                         f'text-anchor="middle" font-size="10">{t}</text>')
    y = y0 + 34
    for j, hours_j in enumerate(blocks):
        vols = " ".join(fmt(block[p][j]) for p in range(n_levels))
        parts.append(f'<text x="{_MARGIN_L}" y="{y}" font-size="10">block {j} '
                     f'(hours {hours_j[0]}-{hours_j[-1]}): {vols}</text>')
        y += 14
    parts.append('<g class="data" font-size="0" visibility="hidden">')
    for t in range(hours):
        parts.append(f'<text class="datum" data-key="independent/{t}">'
                     f'{fmt(independent[t])}</text>')
        for p in range(n_levels):
            parts.append(f'<text class="datum" data-key="dependent{p + 1}/{t}">'
                         f'{fmt(dependent[p][t])}</text>')
    for j in range(len(blocks)):
        for p in range(n_levels):
            parts.append(f'<text class="datum" data-key="block{p + 1}/{j}">'
                         f'{fmt(block[p][j])}</text>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def strategy_report_csv(doc: dict) -> str:
    """CSV twin of the strategy chart's data table."""
    independent = [float(v) for v in doc["independent"]]
    dependent = [[float(v) for v in row] for row in doc["dependent"]]
    block = [[float(v) for v in row] for row in doc["block"]]
    lines = ["series,index,volume"]
    for t, v in enumerate(independent):
        lines.append(f"independent,{t},{fmt(v)}")
    for p, row in enumerate(dependent, start=1):
        for t, v in enumerate(row):
            lines.append(f"dependent{p},{t},{fmt(v)}")
    for p, row in enumerate(block, start=1):
        for j, v in enumerate(row):
            lines.append(f"block{p},{j},{fmt(v)}")
    return "\n".join(lines) + "\n"


def extract_data_table(svg_text: str) -> dict[str, float]:
    """Parse the embedded data table of a chart back into {key: value}."""
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_text)
    ns = {"svg": "http://www.w3.org/2000/svg"}
    out: dict[str, float] = {}
    for el in root.iterfind(".//svg:text[@class='datum']", ns):
        out[el.attrib["data-key"]] = float(el.text)
    return out
