"""Dependency-free SVG line charts for moment curves and envelopes.

Fixed 800 x 500 viewBox, optional log y-axis, dashed overlay series.
Plots are conveniences for humans; verdicts never read them.
"""

import math

WIDTH, HEIGHT = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, n - 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * abs(hi):
        out.append(round(t, 12))
        t += step
    return out


def _log_ticks(lo, hi):
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(lo_e, hi_e + 1)]


class LineChart:
    """Accumulates (x, y) series and renders a self-contained SVG."""

    def __init__(self, title="", x_label="t", y_label="", log_y=False):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.log_y = log_y
        self.series = []

    def add_series(self, xs, ys, label="", dashed=False, color=None):
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y)
               and (not self.log_y or y > 0)]
        if pts:
            self.series.append((pts, label, dashed,
                                color or COLORS[len(self.series) % len(COLORS)]))
        return self

    def _bounds(self):
        xs = [p[0] for s in self.series for p in s[0]]
        ys = [p[1] for s in self.series for p in s[0]]
        if not xs:
            return 0.0, 1.0, 0.1, 1.0
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1
        if self.log_y:
            y0 = max(y0, 1e-300)
            if y1 <= y0:
                y1 = 10 * y0
        elif y1 == y0:
            y1 = y0 + 1
        return x0, x1, y0, y1

    def render(self):
        x0, x1, y0, y1 = self._bounds()
        iw = WIDTH - MARGIN_L - MARGIN_R
        ih = HEIGHT - MARGIN_T - MARGIN_B

        def sx(x):
            return MARGIN_L + (x - x0) / (x1 - x0) * iw

        def sy(y):
            if self.log_y:
                frac = (math.log10(y) - math.log10(y0)) / (
                    math.log10(y1) - math.log10(y0) or 1.0)
            else:
                frac = (y - y0) / (y1 - y0)
            return MARGIN_T + (1.0 - frac) * ih

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" '
            f'font-size="13">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" '
            f'font-size="16">{self.title}</text>',
        ]
        xticks = _ticks(x0, x1)
        yticks = _log_ticks(y0, y1) if self.log_y else _ticks(y0, y1)
        for t in xticks:
            px = sx(t)
            parts.append(f'<line x1="{px:.1f}" y1="{MARGIN_T}" x2="{px:.1f}" '
                         f'y2="{HEIGHT - MARGIN_B}" stroke="#eee"/>')
            parts.append(f'<text x="{px:.1f}" y="{HEIGHT - MARGIN_B + 18}" '
                         f'text-anchor="middle">{t:g}</text>')
        for t in yticks:
            if not (y0 <= t <= y1):
                continue
            py = sy(t)
            parts.append(f'<line x1="{MARGIN_L}" y1="{py:.1f}" '
                         f'x2="{WIDTH - MARGIN_R}" y2="{py:.1f}" stroke="#eee"/>')
            parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.1f}" '
                         f'text-anchor="end">{t:g}</text>')
        parts.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{iw}" '
                     f'height="{ih}" fill="none" stroke="#444"/>')
        parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" '
                     f'text-anchor="middle">{self.x_label}</text>')
        parts.append(f'<text x="18" y="{HEIGHT / 2}" text-anchor="middle" '
                     f'transform="rotate(-90 18 {HEIGHT / 2})">{self.y_label}</text>')
        for i, (pts, label, dashed, color) in enumerate(self.series):
            d = "M" + " L".join(f"{sx(x):.2f} {sy(y):.2f}" for x, y in pts)
            dash = ' stroke-dasharray="8 5"' if dashed else ""
            parts.append(f'<path d="{d}" fill="none" stroke="{color}" '
                         f'stroke-width="1.8"{dash}/>')
            if label:
                ly = MARGIN_T + 16 + 18 * i
                lx = WIDTH - MARGIN_R - 160
                parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 26}" '
                             f'y2="{ly - 4}" stroke="{color}" '
                             f'stroke-width="1.8"{dash}/>')
                parts.append(f'<text x="{lx + 32}" y="{ly}">{label}</text>')
        parts.append("</svg>")
        return "\n".join(parts)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
        return path
