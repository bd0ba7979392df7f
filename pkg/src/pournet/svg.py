"""Minimal standalone SVG charts with their data embedded as CSV in ``<metadata>``."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _num(v) -> str:
    return f"{float(v):.4g}"


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1

    def px(self, x):
        return LEFT + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y):
        return H - BOTTOM - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)


def _frame(ax: _Axes, title, xlabel, ylabel, xticks=None) -> list:
    out = [f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2 - RIGHT / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 15}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="18" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 18 {(TOP + H - BOTTOM) / 2})">{escape(ylabel)}</text>']
    for v in np.linspace(ax.y0, ax.y1, 6):
        y = ax.py(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{_num(v)}</text>')
    if xticks is None:
        xticks = [(v, _num(v)) for v in np.linspace(ax.x0, ax.x1, 6)]
    for v, label in xticks:
        x = ax.px(v)
        out.append(f'<line x1="{x:.1f}" y1="{H - BOTTOM}" x2="{x:.1f}" y2="{H - BOTTOM + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 17}" text-anchor="middle" font-size="10">{escape(label)}</text>')
    return out


def _legend(names) -> list:
    out = []
    for i, name in enumerate(names):
        y = TOP + 10 + 18 * i
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - RIGHT + 12}" y="{y - 8}" width="12" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - RIGHT + 30}" y="{y + 1}" font-size="11">{escape(str(name))}</text>')
    return out


def _document(body: list, table_header, table_rows) -> str:
    csv = ",".join(table_header) + "\n" + "\n".join(",".join(str(c) for c in r) for r in table_rows)
    return ('<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
            f'<metadata>{escape(csv)}</metadata>\n' + "\n".join(body) + "\n</svg>\n")


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, ylim=None, markers=False) -> str:
    """``series`` maps a label to ``(x, y)`` arrays."""
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)] if np.isfinite(ys).any() else np.zeros(1)
    ax = _Axes((xs.min(), xs.max()), ylim or (min(0.0, ys.min()), ys.max()))
    body = _frame(ax, title, xlabel, ylabel)
    rows = []
    for i, (name, (x, y)) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(y)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(ax.px(x[ok]), ax.py(y[ok])))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.8"/>')
        if markers:
            body += [f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{c}"/>'
                     for a, b in zip(ax.px(x[ok]), ax.py(y[ok]))]
        rows += [(name, _num(a), _num(b)) for a, b in zip(x, y)]
    body += _legend(series)
    return _document(body, ("series", "x", "y"), rows)


def scatter_fit_chart(points: dict, curves: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Scatter ``points`` and overlay ``curves``; both map a label to ``(x, y)``."""
    allx = [np.asarray(x, float) for x, _ in list(points.values()) + list(curves.values())]
    ally = [np.asarray(y, float) for _, y in list(points.values()) + list(curves.values())]
    xs = np.concatenate(allx) if allx else np.zeros(1)
    ys = np.concatenate(ally) if ally else np.zeros(1)
    ax = _Axes((xs.min(), xs.max()), (0.0, ys.max() * 1.1 if ys.size else 1.0))
    body = _frame(ax, title, xlabel, ylabel)
    rows = []
    names = list(points) + list(curves)
    for i, (name, (x, y)) in enumerate(points.items()):
        c = PALETTE[names.index(name) % len(PALETTE)]
        body += [f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2" fill="{c}" fill-opacity="0.6"/>'
                 for a, b in zip(ax.px(x), ax.py(y))]
        rows += [(name, _num(a), _num(b)) for a, b in zip(x, y)]
    for name, (x, y) in curves.items():
        c = PALETTE[names.index(name) % len(PALETTE)]
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(ax.px(x), ax.py(y)))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        rows += [(name, _num(a), _num(b)) for a, b in zip(x, y)]
    body += _legend(names)
    return _document(body, ("series", "x", "y"), rows)


def bar_chart(categories, groups: dict, title: str, ylabel: str) -> str:
    """Grouped bars with error whiskers; ``groups`` maps a label to ``(means, stds)``."""
    categories = list(categories)
    k = max(1, len(groups))
    tops = [np.nanmax(np.asarray(m, float) + np.nan_to_num(np.asarray(s, float)))
            for m, s in groups.values() if len(m)] or [1.0]
    ax = _Axes((0, max(1, len(categories))), (0.0, max(max(tops), 1e-9) * 1.1))
    ticks = [(i + 0.5, str(c)) for i, c in enumerate(categories)]
    body = _frame(ax, title, "", ylabel, ticks)
    rows = []
    width = 0.8 / k
    for gi, (name, (means, stds)) in enumerate(groups.items()):
        c = PALETTE[gi % len(PALETTE)]
        for i, (m, s) in enumerate(zip(means, stds)):
            if not np.isfinite(m):
                continue
            x0 = ax.px(i + 0.1 + gi * width)
            x1 = ax.px(i + 0.1 + (gi + 1) * width)
            y = ax.py(m)
            body.append(f'<rect x="{x0:.1f}" y="{y:.1f}" width="{x1 - x0:.1f}" '
                        f'height="{ax.py(0) - y:.1f}" fill="{c}"/>')
            if np.isfinite(s) and s > 0:
                xm = (x0 + x1) / 2
                body.append(f'<line x1="{xm:.1f}" y1="{ax.py(m + s):.1f}" x2="{xm:.1f}" '
                            f'y2="{ax.py(max(m - s, 0)):.1f}" stroke="black"/>')
            rows.append((name, categories[i], _num(m), _num(s)))
    body += _legend(groups)
    return _document(body, ("group", "category", "mean", "std"), rows)


def write(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
