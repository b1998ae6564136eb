"""Minimal self-contained SVG canvas for the CLI plots.

Every drawn element carries a ``class`` attribute so plots can be checked
structurally (count polylines of class ``trajectory`` and so on) instead of
pixel-wise.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

SVG_NS = "http://www.w3.org/2000/svg"

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.array([lo])
    raw = span / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = mag * min((1, 2, 5, 10), key=lambda m: abs(m * mag - raw))
    return np.arange(np.ceil(lo / step) * step, hi + 1e-9 * span, step)


class Canvas:
    """A data-space drawing area mapped onto an SVG viewport.

    Parameters
    ----------
    xrange, yrange
        Data limits ``(lo, hi)`` of the plot area.
    width, height
        Pixel size of the plot area; axes margins are added around it.
    equal
        Keep a 1:1 data aspect ratio by shrinking one pixel dimension.
    """

    margin = (60, 20, 20, 45)  # left, right, top, bottom

    def __init__(self, xrange, yrange, width: int = 640, height: int = 640,
                 equal: bool = True, title: str | None = None,
                 xlabel: str | None = None, ylabel: str | None = None):
        self.x0, self.x1 = (float(v) for v in xrange)
        self.y0, self.y1 = (float(v) for v in yrange)
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("empty plot range")
        if equal:
            sx = width / (self.x1 - self.x0)
            sy = height / (self.y1 - self.y0)
            s = min(sx, sy)
            width, height = s * (self.x1 - self.x0), s * (self.y1 - self.y0)
        self.w, self.h = float(width), float(height)
        left, right, top, bottom = self.margin
        self.root = ET.Element("svg", {
            "xmlns": SVG_NS,
            "width": f"{self.w + left + right:.0f}",
            "height": f"{self.h + top + bottom:.0f}",
            "viewBox": f"0 0 {self.w + left + right:.1f} {self.h + top + bottom:.1f}",
            "font-family": "sans-serif", "font-size": "11",
        })
        ET.SubElement(self.root, "rect", {"x": "0", "y": "0", "width": "100%",
                                          "height": "100%", "fill": "white"})
        self.plot = ET.SubElement(self.root, "g", {"transform": f"translate({left},{top})"})
        self._axes(title, xlabel, ylabel)

    def px(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u = (x - self.x0) / (self.x1 - self.x0) * self.w
        v = (self.y1 - y) / (self.y1 - self.y0) * self.h
        return u, v

    def _axes(self, title, xlabel, ylabel):
        g = ET.SubElement(self.plot, "g", {"class": "axes"})
        ET.SubElement(g, "rect", {"x": "0", "y": "0", "width": f"{self.w:.1f}",
                                  "height": f"{self.h:.1f}", "fill": "none", "stroke": "#444"})
        for t in _nice_ticks(self.x0, self.x1):
            u, _ = self.px(t, self.y0)
            ET.SubElement(g, "line", {"x1": f"{u:.1f}", "x2": f"{u:.1f}", "y1": f"{self.h:.1f}",
                                      "y2": f"{self.h + 4:.1f}", "stroke": "#444"})
            ET.SubElement(g, "text", {"x": f"{u:.1f}", "y": f"{self.h + 16:.1f}",
                                      "text-anchor": "middle"}).text = f"{t:g}"
        for t in _nice_ticks(self.y0, self.y1):
            _, v = self.px(self.x0, t)
            ET.SubElement(g, "line", {"x1": "-4", "x2": "0", "y1": f"{v:.1f}", "y2": f"{v:.1f}",
                                      "stroke": "#444"})
            ET.SubElement(g, "text", {"x": "-6", "y": f"{v + 4:.1f}",
                                      "text-anchor": "end"}).text = f"{t:g}"
        if title:
            ET.SubElement(g, "text", {"x": f"{self.w / 2:.1f}", "y": "-6",
                                      "text-anchor": "middle"}).text = title
        if xlabel:
            ET.SubElement(g, "text", {"x": f"{self.w / 2:.1f}", "y": f"{self.h + 34:.1f}",
                                      "text-anchor": "middle"}).text = xlabel
        if ylabel:
            ET.SubElement(g, "text", {"x": "-45", "y": f"{self.h / 2:.1f}", "text-anchor": "middle",
                                      "transform": f"rotate(-90 -45 {self.h / 2:.1f})"}).text = ylabel

    def polyline(self, xy, stroke: str = "black", width: float = 1.5,
                 cls: str = "line", dash: str | None = None, label: str | None = None):
        """Draw an open polyline through the ``(n, 2)`` data points."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        u, v = self.px(xy[:, 0], xy[:, 1])
        attrs = {"points": " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(u, v)),
                 "fill": "none", "stroke": stroke, "stroke-width": f"{width:g}", "class": cls}
        if dash:
            attrs["stroke-dasharray"] = dash
        el = ET.SubElement(self.plot, "polyline", attrs)
        if label:
            ET.SubElement(el, "title").text = label
        return el

    def circle(self, center, r: float, stroke: str = "black", fill: str = "none",
               cls: str = "circle", dash: str | None = None):
        u, v = self.px(center[0], center[1])
        rr = r / (self.x1 - self.x0) * self.w
        attrs = {"cx": f"{u:.2f}", "cy": f"{v:.2f}", "r": f"{rr:.2f}",
                 "stroke": stroke, "fill": fill, "class": cls}
        if dash:
            attrs["stroke-dasharray"] = dash
        return ET.SubElement(self.plot, "circle", attrs)

    def hline(self, y: float, stroke: str = "#888", cls: str = "guideline", dash: str = "6,4"):
        _, v = self.px(self.x0, y)
        return ET.SubElement(self.plot, "line", {
            "x1": "0", "x2": f"{self.w:.1f}", "y1": f"{v:.2f}", "y2": f"{v:.2f}",
            "stroke": stroke, "stroke-dasharray": dash, "class": cls, "data-y": f"{y:g}"})

    def cells(self, xs, ys, colors, cls: str = "cell"):
        """Fill the rectangles centred on the ``xs`` by ``ys`` lattice.

        ``colors[i][j]`` is the fill for ``(xs[i], ys[j])``; ``None`` leaves a
        cell blank.
        """
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        hx = np.diff(xs).mean() if len(xs) > 1 else 1.0
        hy = np.diff(ys).mean() if len(ys) > 1 else 1.0
        g = ET.SubElement(self.plot, "g", {"class": cls, "shape-rendering": "crispEdges"})
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                c = colors[i][j]
                if c is None:
                    continue
                u0, v0 = self.px(x - hx / 2, y + hy / 2)
                u1, v1 = self.px(x + hx / 2, y - hy / 2)
                ET.SubElement(g, "rect", {"x": f"{u0:.2f}", "y": f"{v0:.2f}",
                                          "width": f"{u1 - u0 + 0.05:.2f}",
                                          "height": f"{v1 - v0 + 0.05:.2f}", "fill": c})
        return g

    def text(self, xy, s: str, cls: str = "label", anchor: str = "start"):
        u, v = self.px(xy[0], xy[1])
        el = ET.SubElement(self.plot, "text", {"x": f"{u:.1f}", "y": f"{v:.1f}",
                                               "class": cls, "text-anchor": anchor})
        el.text = s
        return el

    def to_string(self) -> str:
        return ET.tostring(self.root, encoding="unicode")

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text('<?xml version="1.0" encoding="UTF-8"?>\n' + self.to_string())
        tmp.replace(path)
        return path


def count_class(svg_text: str, cls: str, tag: str | None = None) -> int:
    """Number of elements in ``svg_text`` whose class is ``cls``."""
    root = ET.fromstring(svg_text)
    n = 0
    for el in root.iter():
        t = el.tag.split("}")[-1]
        if el.get("class") == cls and (tag is None or t == tag):
            n += 1
    return n
