"""Minimal SVG charts drawn from the CSV tables the CLI writes.

Every chart reads its numbers back from a CSV file so the picture and the
table can never disagree.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=64, right=20, top=36, bottom=52)
COLORS = {"gamma": "#1f77b4", "echo": "#d62728", "early": "#2ca02c", "final": "#9467bd",
          "band": "#9ecae1", "median": "#08519c", "empirical": "#000000"}


def _read(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 10))
        v += step
    return ticks


class Canvas:
    def __init__(self, title: str, xlim, ylim, xlabel: str = "", ylabel: str = ""):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.xlim, self.ylim = xlim, ylim
        self.parts: list[str] = []

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return MARGIN["left"] + (x - lo) / (hi - lo) * (WIDTH - MARGIN["left"] - MARGIN["right"])

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        return HEIGHT - MARGIN["bottom"] - (y - lo) / (hi - lo) * (
            HEIGHT - MARGIN["top"] - MARGIN["bottom"])

    def line(self, x0, y0, x1, y1, color="#000", width=1.0, dash: str | None = None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{self.px(x0):.2f}" y1="{self.py(y0):.2f}" x2="{self.px(x1):.2f}" '
            f'y2="{self.py(y1):.2f}" stroke="{color}" stroke-width="{width}"{extra}/>')

    def rect(self, x0, y0, x1, y1, fill, stroke="#000", opacity=1.0):
        xa, xb = sorted((self.px(x0), self.px(x1)))
        ya, yb = sorted((self.py(y0), self.py(y1)))
        self.parts.append(
            f'<rect x="{xa:.2f}" y="{ya:.2f}" width="{xb - xa:.2f}" height="{yb - ya:.2f}" '
            f'fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"/>')

    def polyline(self, xs, ys, color, width=1.5, step=False):
        pts = []
        for i, (x, y) in enumerate(zip(xs, ys)):
            if step and i:
                pts.append(f"{self.px(x):.2f},{self.py(ys[i - 1]):.2f}")
            pts.append(f"{self.px(x):.2f},{self.py(y):.2f}")
        self.parts.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def polygon(self, xs, lower, upper, fill, opacity=0.5):
        pts = [f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, upper)]
        pts += [f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(reversed(xs), reversed(lower))]
        self.parts.append(f'<polygon points="{" ".join(pts)}" fill="{fill}" '
                          f'fill-opacity="{opacity}" stroke="none"/>')

    def text(self, x, y, s, size=12, anchor="middle", raw=False):
        px, py = (x, y) if raw else (self.px(x), self.py(y))
        self.parts.append(f'<text x="{px:.2f}" y="{py:.2f}" font-size="{size}" '
                          f'text-anchor="{anchor}" font-family="sans-serif">{escape(s)}</text>')

    def legend(self, entries: list[tuple[str, str]]):
        x = WIDTH - MARGIN["right"] - 120
        for i, (label, color) in enumerate(entries):
            y = MARGIN["top"] + 8 + 16 * i
            self.parts.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.text(x + 16, y, label, size=11, anchor="start", raw=True)

    def no_data(self):
        self.text(WIDTH / 2, HEIGHT / 2, "no data", size=18, raw=True)

    def render(self, xticks=True) -> str:
        axes = []
        x0, y0 = MARGIN["left"], HEIGHT - MARGIN["bottom"]
        axes.append(f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN["right"]}" y2="{y0}" stroke="#000"/>')
        axes.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="#000"/>')
        if xticks:
            for t in _nice_ticks(*self.xlim):
                if self.xlim[0] <= t <= self.xlim[1]:
                    axes.append(f'<line x1="{self.px(t):.2f}" y1="{y0}" x2="{self.px(t):.2f}" '
                                f'y2="{y0 + 5}" stroke="#000"/>')
                    axes.append(f'<text x="{self.px(t):.2f}" y="{y0 + 18}" font-size="11" '
                                f'text-anchor="middle" font-family="sans-serif">{t:g}</text>')
        for t in _nice_ticks(*self.ylim):
            if self.ylim[0] <= t <= self.ylim[1]:
                axes.append(f'<line x1="{x0 - 5}" y1="{self.py(t):.2f}" x2="{x0}" '
                            f'y2="{self.py(t):.2f}" stroke="#000"/>')
                axes.append(f'<text x="{x0 - 8}" y="{self.py(t) + 4:.2f}" font-size="11" '
                            f'text-anchor="end" font-family="sans-serif">{t:g}</text>')
        head = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>',
            f'<text x="{WIDTH / 2}" y="22" font-size="15" text-anchor="middle" '
            f'font-family="sans-serif">{escape(self.title)}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif">{escape(self.xlabel)}</text>',
            f'<text x="16" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif" transform="rotate(-90 16 {HEIGHT / 2})">'
            f'{escape(self.ylabel)}</text>',
        ]
        return "\n".join(head + axes + self.parts + ["</svg>"]) + "\n"


def _write(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg)


def trust_change_box_svg(csv_path, out_path) -> None:
    rows = [r for r in _read(csv_path) if int(r["count"]) > 0]
    if not rows:
        c = Canvas("Change in trust per grasp", (0, 1), (0, 1), "", "trust change")
        c.no_data()
        return _write(out_path, c.render(xticks=False))
    lo = min(_num(r["min"]) for r in rows)
    hi = max(_num(r["max"]) for r in rows)
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    c = Canvas("Change in trust per grasp", (0, len(rows)), (lo - pad, hi + pad),
               "algorithm", "trust change")
    for i, r in enumerate(rows):
        color = COLORS.get(r["algorithm"], "#777")
        mid = i + 0.5
        q1, med, q3 = _num(r["q1"]), _num(r["median"]), _num(r["q3"])
        wl, wh = _num(r["whisker_low"]), _num(r["whisker_high"])
        c.line(mid, wl, mid, q1)
        c.line(mid, q3, mid, wh)
        c.line(mid - 0.1, wl, mid + 0.1, wl)
        c.line(mid - 0.1, wh, mid + 0.1, wh)
        c.rect(mid - 0.25, q1, mid + 0.25, q3, color, opacity=0.6)
        c.line(mid - 0.25, med, mid + 0.25, med, width=2)
        c.text(mid, lo - pad, f"{r['algorithm']} (n={r['count']})", size=12)
    c.line(0, 0, len(rows), 0, color="#999", dash="4,3")
    _write(out_path, c.render(xticks=False))


def grasp_distribution_svg(csv_path, out_path) -> None:
    rows = _read(csv_path)
    counts = [int(r["count"]) for r in rows]
    c = Canvas("Trust ratings by grasp number", (0.5, len(rows) + 0.5),
               (0, max(counts + [1]) * 1.1), "grasp number", "ratings")
    if sum(counts) == 0:
        c.no_data()
    for r in rows:
        lo, hi = _num(r["bin_low"]), _num(r["bin_high"])
        c.rect(lo + 0.1, 0, hi - 0.1, int(r["count"]), "#6baed6")
    _write(out_path, c.render())


def rating_time_hist_svg(early_csv, final_csv, out_path) -> None:
    early, final = _read(early_csv), _read(final_csv)
    both = early + final
    c_title = "Rating time relative to placement"
    if not both:
        c = Canvas(c_title, (0, 1), (0, 1), "seconds from placement", "ratings")
        c.no_data()
        return _write(out_path, c.render())
    lo = min(_num(r["bin_low"]) for r in both)
    hi = max(_num(r["bin_high"]) for r in both)
    top = max(int(r["count"]) for r in both)
    c = Canvas(c_title, (lo, hi), (0, top * 1.1), "seconds from placement", "ratings")
    for rows, key in ((early, "early"), (final, "final")):
        for r in rows:
            c.rect(_num(r["bin_low"]), 0, _num(r["bin_high"]), int(r["count"]),
                   COLORS[key], opacity=0.45)
    c.line(0, 0, 0, top * 1.1, color="#555", dash="4,3")
    c.legend([("grasps 1-3", COLORS["early"]), ("final grasp", COLORS["final"])])
    _write(out_path, c.render())


def survival_overlay_svg(band_csv, out_path, title: str = "Predicted survival") -> None:
    rows = _read(band_csv)
    if not rows:
        c = Canvas(title, (0, 1), (0, 1), "seconds since pick", "S(t)")
        c.no_data()
        return _write(out_path, c.render())
    t = [_num(r["t"]) for r in rows]
    c = Canvas(title, (t[0], t[-1]), (0, 1.02), "seconds since pick", "S(t)")
    c.polygon(t, [_num(r["q05"]) for r in rows], [_num(r["q95"]) for r in rows], COLORS["band"])
    c.polyline(t, [_num(r["q50"]) for r in rows], COLORS["median"])
    emp = [_num(r["empirical"]) for r in rows]
    if not any(math.isnan(v) for v in emp):
        c.polyline(t, emp, COLORS["empirical"], width=1.2, step=True)
    c.legend([("5-95% band", COLORS["band"]), ("median", COLORS["median"]),
              ("empirical", COLORS["empirical"])])
    _write(out_path, c.render())
