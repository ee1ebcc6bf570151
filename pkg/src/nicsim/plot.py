"""Latency-versus-nodes charts as standalone SVG."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

from .analytic import ModelParams, predict_latency

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 180, 24, 48
HW_BARRIER_US = 4.20
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

SVG_NS = "http://www.w3.org/2000/svg"


class PlotError(ValueError):
    pass


def group_series(rows) -> dict[str, list[tuple[int, float]]]:
    """(mode, algorithm) label -> sorted (n, mean_us) points."""
    series: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        label = f"{row['mode']} ({row['algorithm']})"
        series.setdefault(label, []).append((int(row["n"]), float(row["mean_us"])))
    return {k: sorted(v) for k, v in sorted(series.items())}


def _nice_step(span: float) -> float:
    raw = span / 5
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag  # pragma: no cover


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def emit_plot(rows, *, title: str | None = None, model: ModelParams | None = None,
              reference_us: float | None = None) -> str:
    """Render rows of the results CSV as an SVG document string.

    ``model`` adds the analytic prediction on the same n grid as a dashed
    line; ``reference_us`` draws a horizontal reference level.
    """
    rows = list(rows)
    if not rows:
        raise PlotError("nothing to plot: no result rows")
    platforms = {r["platform"] for r in rows}
    if len(platforms) > 1:
        raise PlotError(f"rows mix platforms: {', '.join(sorted(platforms))}")
    platform = platforms.pop()
    series = group_series(rows)
    if any(n < 1 for pts in series.values() for n, _ in pts):
        raise PlotError("node counts must be >= 1")

    ns = sorted({n for pts in series.values() for n, _ in pts})
    if model is not None:
        grid = [n for n in ns if n >= 2]
        if grid:
            series_model = [(n, predict_latency(model, n)) for n in grid]
        else:
            series_model = []
    else:
        series_model = []

    lo_exp = math.floor(math.log2(ns[0]))
    hi_exp = max(math.ceil(math.log2(ns[-1])), lo_exp + 1)
    ymax = max(y for pts in series.values() for _, y in pts)
    ymax = max([ymax] + [y for _, y in series_model] + ([reference_us] if reference_us else []))
    ystep = _nice_step(ymax if ymax > 0 else 1.0)
    ytop = ystep * math.ceil((ymax if ymax > 0 else 1.0) * 1.05 / ystep)

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(n):
        return MARGIN_L + pw * (math.log2(n) - lo_exp) / (hi_exp - lo_exp)

    def py(y):
        return MARGIN_T + ph * (1 - y / ytop)

    svg = ET.Element("svg", {
        "xmlns": SVG_NS, "version": "1.1",
        "width": str(WIDTH), "height": str(HEIGHT), "viewBox": f"0 0 {WIDTH} {HEIGHT}",
        "font-family": "sans-serif", "font-size": "11",
    })
    ET.SubElement(svg, "title").text = title or f"Barrier latency on {platform}"
    ET.SubElement(svg, "rect", {"x": "0", "y": "0", "width": str(WIDTH), "height": str(HEIGHT), "fill": "white"})

    axes = ET.SubElement(svg, "g", {"class": "axes", "stroke": "black", "fill": "none"})
    ET.SubElement(axes, "line", {"x1": str(MARGIN_L), "y1": f"{MARGIN_T + ph}",
                                 "x2": f"{MARGIN_L + pw}", "y2": f"{MARGIN_T + ph}"})
    ET.SubElement(axes, "line", {"x1": str(MARGIN_L), "y1": str(MARGIN_T),
                                 "x2": str(MARGIN_L), "y2": f"{MARGIN_T + ph}"})

    xt = ET.SubElement(svg, "g", {"class": "x-ticks"})
    for e in range(lo_exp, hi_exp + 1):
        x = px(2 ** e)
        tick = ET.SubElement(xt, "g", {"class": "x-tick"})
        ET.SubElement(tick, "line", {"x1": f"{x:.2f}", "y1": f"{MARGIN_T + ph}", "x2": f"{x:.2f}",
                                     "y2": f"{MARGIN_T + ph + 5}", "stroke": "black"})
        ET.SubElement(tick, "text", {"x": f"{x:.2f}", "y": f"{MARGIN_T + ph + 18}",
                                     "text-anchor": "middle"}).text = str(2 ** e)
    ET.SubElement(svg, "text", {"x": f"{MARGIN_L + pw / 2:.2f}", "y": str(HEIGHT - 8),
                                "text-anchor": "middle"}).text = "Number of nodes"

    yt = ET.SubElement(svg, "g", {"class": "y-ticks"})
    steps = int(round(ytop / ystep))
    for i in range(steps + 1):
        v = i * ystep
        y = py(v)
        ET.SubElement(yt, "line", {"x1": str(MARGIN_L - 5), "y1": f"{y:.2f}", "x2": str(MARGIN_L),
                                   "y2": f"{y:.2f}", "stroke": "black"})
        ET.SubElement(yt, "text", {"x": str(MARGIN_L - 8), "y": f"{y + 4:.2f}",
                                   "text-anchor": "end"}).text = _fmt(v)
    ET.SubElement(svg, "text", {"x": "14", "y": f"{MARGIN_T + ph / 2:.2f}", "text-anchor": "middle",
                                "transform": f"rotate(-90 14 {MARGIN_T + ph / 2:.2f})"}).text = "Latency (µs)"

    legend = ET.SubElement(svg, "g", {"class": "legend"})
    lx = WIDTH - MARGIN_R + 16

    def legend_entry(i, label, color, dashed=False):
        y = MARGIN_T + 12 + 18 * i
        attrs = {"x1": str(lx), "y1": str(y), "x2": str(lx + 20), "y2": str(y), "stroke": color,
                 "stroke-width": "2"}
        if dashed:
            attrs["stroke-dasharray"] = "6 3"
        ET.SubElement(legend, "line", attrs)
        ET.SubElement(legend, "text", {"x": str(lx + 26), "y": str(y + 4)}).text = label

    for i, (label, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        g = ET.SubElement(svg, "g", {"class": "series", "data-label": label})
        coords = [(px(n), py(y)) for n, y in pts]
        if len(coords) > 1:
            ET.SubElement(g, "polyline", {
                "class": "series-line", "fill": "none", "stroke": color, "stroke-width": "2",
                "points": " ".join(f"{x:.2f},{y:.2f}" for x, y in coords),
            })
        for x, y in coords:
            ET.SubElement(g, "circle", {"class": "marker", "cx": f"{x:.2f}", "cy": f"{y:.2f}", "r": "3",
                                        "fill": color})
        legend_entry(i, label, color)

    extra = len(series)
    if series_model:
        g = ET.SubElement(svg, "g", {"class": "model"})
        coords = [(px(n), py(y)) for n, y in series_model]
        if len(coords) > 1:
            ET.SubElement(g, "polyline", {
                "class": "model-line", "fill": "none", "stroke": "gray", "stroke-width": "1.5",
                "stroke-dasharray": "6 3", "points": " ".join(f"{x:.2f},{y:.2f}" for x, y in coords),
            })
        else:
            x, y = coords[0]
            ET.SubElement(g, "circle", {"class": "marker", "cx": f"{x:.2f}", "cy": f"{y:.2f}", "r": "3",
                                        "fill": "gray"})
        legend_entry(extra, "model", "gray", dashed=True)
        extra += 1

    if reference_us is not None:
        y = py(reference_us)
        ET.SubElement(svg, "line", {"class": "reference", "x1": str(MARGIN_L), "y1": f"{y:.2f}",
                                    "x2": f"{MARGIN_L + pw}", "y2": f"{y:.2f}", "stroke": "black",
                                    "stroke-dasharray": "2 2"})
        legend_entry(extra, f"reference {_fmt(reference_us)} µs", "black", dashed=True)

    ET.indent(svg)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"
