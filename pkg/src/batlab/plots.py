"""Deterministic SVG line charts of sweep cells (score vs training epochs)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import UsageError
from .experiment import SPLIT_TEST, Cell

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 170, 40, 50
COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
PRIMARY = {"ae": "f1", "asc": "accuracy"}


def _line_label(dropout: float, epsilon: float, vary_dropout: bool, vary_eps: bool) -> str:
    parts = []
    if vary_dropout or not vary_eps:
        parts.append(f"dropout={dropout:g}")
    if vary_eps:
        parts.append("baseline" if epsilon == 0.0 else f"eps={epsilon:g}")
    return " ".join(parts)


def render_svg(cells: Sequence[Cell], title: str) -> str:
    """One chart; one line per (dropout, epsilon), x = epochs, y = mean score."""
    if not cells:
        raise UsageError("nothing to plot")
    dropouts = sorted({c.dropout for c in cells})
    epsilons = sorted({c.epsilon for c in cells})
    lines: dict[tuple[float, float], list[Cell]] = {}
    for c in sorted(cells, key=lambda c: (c.dropout, c.epsilon, c.epochs)):
        lines.setdefault((c.dropout, c.epsilon), []).append(c)

    xs = sorted({c.epochs for c in cells})
    ys = [c.mean for c in cells]
    x0, x1 = xs[0], xs[-1]
    y0, y1 = min(ys), max(ys)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.05, y1 + 0.05
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (pw / 2 if x1 == x0 else (x - x0) / (x1 - x0) * pw)

    def py(y):
        return TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for x in xs:
        out.append(f'<text x="{px(x):.2f}" y="{TOP + ph + 18}" text-anchor="middle" font-size="11">{x}</text>')
    for i in range(5):
        y = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{LEFT - 6}" y="{py(y) + 4:.2f}" text-anchor="end" font-size="11">{100 * y:.1f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">training epochs</text>')

    for i, ((dropout, eps), pts) in enumerate(lines.items()):
        color = COLORS[i % len(COLORS)]
        label = _line_label(dropout, eps, len(dropouts) > 1, len(epsilons) > 1)
        coords = " ".join(f"{px(c.epochs):.2f},{py(c.mean):.2f}" for c in pts)
        out.append(f'<g class="series" data-label="{escape(label)}">')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for c in pts:
            out.append(
                f'<circle cx="{px(c.epochs):.2f}" cy="{py(c.mean):.2f}" r="3" fill="{color}">'
                f"<title>{escape(label)} epochs={c.epochs} value={c.mean!r}</title></circle>"
            )
        out.append("</g>")
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{WIDTH - RIGHT + 12}" y1="{ly}" x2="{WIDTH - RIGHT + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 38}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(cells: Sequence[Cell], out_dir, split: str = SPLIT_TEST, metric: str | None = None) -> list[Path]:
    """Write one ``<task>_<dataset>.svg`` per (dataset, task) in ``cells``."""
    chosen = [c for c in cells if c.split == split and c.metric == (metric or PRIMARY[c.task])]
    if not chosen:
        raise UsageError("no completed sweep cells to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for task, dataset in sorted({(c.task, c.dataset) for c in chosen}):
        group = [c for c in chosen if (c.task, c.dataset) == (task, dataset)]
        name = metric or PRIMARY[task]
        svg = render_svg(group, f"{task.upper()} {dataset}: {name} ({split})")
        path = out_dir / f"{task}_{dataset}.svg"
        path.write_text(svg, encoding="utf-8")
        paths.append(path)
    return paths
