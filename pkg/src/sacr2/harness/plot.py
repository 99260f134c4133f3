"""Dependency-free SVG learning curves with standard-error bands."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 720, 440
MARGIN = {"left": 64, "right": 180, "top": 24, "bottom": 52}


def _path(xs, ys) -> str:
    return " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(zip(xs, ys)))


def render_svg(curves, labels, x_label="episodes", y_label="success rate", use_steps=False) -> str:
    if not curves:
        raise ValueError("nothing to plot: empty curve list")
    if len(labels) != len(curves):
        raise ValueError("need one label per curve")
    if use_steps:
        series = [(c.step_grid, c.step_mean, c.step_stderr) for c in curves]
    else:
        n = min(len(c.mean) for c in curves)  # align on the shortest run
        series = [(c.episodes[:n], c.mean[:n], c.stderr[:n]) for c in curves]
    x_max = max((float(x[-1]) for x, _, _ in series if len(x)), default=1.0) or 1.0

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    sx = lambda x: MARGIN["left"] + pw * np.asarray(x, dtype=float) / x_max  # noqa: E731
    sy = lambda y: MARGIN["top"] + ph * (1.0 - np.clip(np.asarray(y, dtype=float), 0.0, 1.0))  # noqa: E731

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    # axes and ticks
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for v in np.linspace(0, 1, 6):
        y = float(sy(v))
        out.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0 + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    for v in np.linspace(0, x_max, 6):
        x = float(sx(v))
        out.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y0 + 18}" text-anchor="middle">{v:.0f}</text>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(y_label)}</text>'
    )

    for i, ((x, m, e), label) in enumerate(zip(series, labels)):
        color = PALETTE[i % len(PALETTE)]
        dash = "" if i < len(PALETTE) else ' stroke-dasharray="6 3"'
        if len(x):
            xs = sx(x)
            upper, lower = sy(m + e), sy(m - e)
            band = _path(np.concatenate([xs, xs[::-1]]), np.concatenate([upper, lower[::-1]])) + " Z"
            out.append(f'<path class="band" d="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            out.append(
                f'<path class="curve" d="{_path(xs, sy(m))}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>'
            )
        ly = MARGIN["top"] + 16 + 20 * i
        lx = WIDTH - MARGIN["right"] + 16
        out.append(
            f'<g class="legend"><line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" '
            f'stroke-width="3"{dash}/><text x="{lx + 30}" y="{ly + 4}">{escape(str(label))}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot(curves, labels, path, **kw) -> str:
    svg = render_svg(curves, labels, **kw)
    with open(path, "w") as fh:
        fh.write(svg)
    return path
