"""Self-contained SVG rendering of density histograms (no plotting backend)."""
from __future__ import annotations

from xml.sax.saxutils import escape

from .propagate import Histogram

WIDTH, HEIGHT = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 28, 48


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def histogram_svg(hist: Histogram, title: str, unit: str = "μm") -> str:
    edges, dens = hist.bin_edges, hist.densities
    lo, hi = float(edges[0]), float(edges[-1])
    m_lo, m, m_hi = hist.markers
    lo, hi = min(lo, m_lo), max(hi, m_hi)
    span = hi - lo or 1.0
    top = float(dens.max()) * 1.08 or 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(v):
        return LEFT + (v - lo) / span * pw

    def sy(d):
        return TOP + ph - d / top * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<text x="{WIDTH / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for a, b, d in zip(edges[:-1], edges[1:], dens):
        x0, x1 = sx(a), sx(b)
        parts.append(
            f'<rect x="{x0:.3f}" y="{sy(d):.3f}" width="{max(x1 - x0, 0.5):.3f}" '
            f'height="{TOP + ph - sy(d):.3f}" fill="#4c72b0" stroke="#ffffff" stroke-width="0.5"/>'
        )
    for v, colour, dash in ((m, "#c44e52", ""), (m_lo, "#dd8452", ' stroke-dasharray="4 3"'),
                            (m_hi, "#dd8452", ' stroke-dasharray="4 3"')):
        parts.append(f'<line x1="{sx(v):.3f}" y1="{TOP}" x2="{sx(v):.3f}" y2="{TOP + ph}" '
                     f'stroke="{colour}" stroke-width="1.5"{dash}/>')
    # axes and ticks
    parts.append(f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>')
    parts.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>')
    for k in range(5):
        v = lo + span * k / 4
        parts.append(f'<text x="{sx(v):.3f}" y="{TOP + ph + 14}" text-anchor="middle">{_fmt(v)}</text>')
        d = top * k / 4
        parts.append(f'<text x="{LEFT - 4}" y="{sy(d) + 4:.3f}" text-anchor="end">{_fmt(d)}</text>')
    parts.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">'
                 f'deformation ({unit})</text>')
    parts.append(f'<text x="14" y="{TOP + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {TOP + ph / 2})">density (1/{unit})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
