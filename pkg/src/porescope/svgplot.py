"""Minimal deterministic SVG plots (no plotting dependency)."""

import math

W, H = 480, 360
MARGIN = 50


def _fmt(v):
    return f"{v:.2f}"


def _doc(body, title):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _range(vals):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Axes:
    def __init__(self, xr, yr):
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr

    def px(self, x):
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2 * MARGIN)

    def py(self, y):
        return H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2 * MARGIN)

    def frame(self, xlabel, ylabel):
        return [
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{W - 2 * MARGIN}" height="{H - 2 * MARGIN}" '
            'fill="none" stroke="black"/>',
            f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
            f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>',
            f'<text x="{MARGIN}" y="{H - MARGIN + 14}" font-size="10">{self.x0:.3g}</text>',
            f'<text x="{W - MARGIN}" y="{H - MARGIN + 14}" text-anchor="end" font-size="10">{self.x1:.3g}</text>',
            f'<text x="{MARGIN - 4}" y="{H - MARGIN}" text-anchor="end" font-size="10">{self.y0:.3g}</text>',
            f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" text-anchor="end" font-size="10">{self.y1:.3g}</text>',
        ]


def polar_histogram(counts, edges_deg, title="Stream orientation", fit=None):
    """Wedge histogram; ``fit`` is an optional ``(mu_deg, kappa)`` label."""
    cx, cy = W / 2, H / 2 + 10
    rmax = min(W, H) / 2 - 40
    peak = max(counts) if len(counts) and max(counts) > 0 else 1
    body = [f'<circle cx="{cx}" cy="{cy}" r="{rmax}" fill="none" stroke="#bbb"/>']
    for c, a0, a1 in zip(counts, edges_deg[:-1], edges_deg[1:]):
        if c == 0:
            continue
        r = rmax * c / peak
        t0, t1 = math.radians(a0), math.radians(a1)
        x0, y0 = cx + r * math.cos(t0), cy - r * math.sin(t0)
        x1, y1 = cx + r * math.cos(t1), cy - r * math.sin(t1)
        large = 1 if a1 - a0 > 180 else 0
        body.append(
            f'<path d="M {_fmt(cx)} {_fmt(cy)} L {_fmt(x0)} {_fmt(y0)} '
            f'A {_fmt(r)} {_fmt(r)} 0 {large} 0 {_fmt(x1)} {_fmt(y1)} Z" '
            'fill="steelblue" stroke="white" stroke-width="0.5"/>'
        )
    if fit is not None:
        body.append(f'<text x="10" y="{H - 10}" font-size="12">mu = {fit[0]:.1f} deg, '
                    f'kappa = {fit[1]:.3g}</text>')
    return _doc(body, title)


def scatter(x, y, title, xlabel, ylabel, line=None):
    """Scatter plot with an optional ``(slope, intercept)`` line."""
    if len(x) == 0:
        return _doc([], title)
    ax = _Axes(_range(x), _range(y))
    body = ax.frame(xlabel, ylabel)
    for a, b in zip(x, y):
        body.append(f'<circle cx="{_fmt(ax.px(a))}" cy="{_fmt(ax.py(b))}" r="2.5" fill="steelblue"/>')
    if line is not None:
        m, c = line
        xa, xb = ax.x0, ax.x1
        body.append(
            f'<line x1="{_fmt(ax.px(xa))}" y1="{_fmt(ax.py(m * xa + c))}" '
            f'x2="{_fmt(ax.px(xb))}" y2="{_fmt(ax.py(m * xb + c))}" stroke="crimson"/>'
        )
    return _doc(body, title)


def traces(series, title, xlabel, ylabel):
    """Polylines; ``series`` is a list of ``(x, y)`` sequences."""
    series = [(list(x), list(y)) for x, y in series if len(x)]
    if not series:
        return _doc([], title)
    ax = _Axes(_range([v for x, _ in series for v in x]), _range([v for _, y in series for v in y]))
    body = ax.frame(xlabel, ylabel)
    for x, y in series:
        pts = " ".join(f"{_fmt(ax.px(a))},{_fmt(ax.py(b))}" for a, b in zip(x, y))
        body.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1"/>')
    return _doc(body, title)
