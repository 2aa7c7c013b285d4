"""SVG and box-drawing renderings of ground-truth and discovered mazes."""
from __future__ import annotations

from pathlib import Path

from .explorer import DiscoveredMap
from .geometry import Circle, Maze, wall_obstacles

LABEL_CHARS = "0123456789abcde"
SCALE = 400.0  # px per meter
MARGIN = 20.0

# (up, down, left, right) -> junction glyph
_JUNCTIONS = {
    (0, 0, 0, 0): " ", (1, 1, 0, 0): "│", (0, 0, 1, 1): "─",
    (1, 0, 0, 0): "╵", (0, 1, 0, 0): "╷", (0, 0, 1, 0): "╴", (0, 0, 0, 1): "╶",
    (1, 0, 0, 1): "└", (1, 0, 1, 0): "┘", (0, 1, 0, 1): "┌", (0, 1, 1, 0): "┐",
    (1, 1, 0, 1): "├", (1, 1, 1, 0): "┤", (0, 1, 1, 1): "┬", (1, 0, 1, 1): "┴",
    (1, 1, 1, 1): "┼",
}


def _cell_text(maze: Maze, discovered: DiscoveredMap | None, cell) -> tuple[str, bool]:
    """Label character shown for a cell and whether it is misclassified."""
    truth = maze.world_mask(cell)
    if discovered is None:
        return LABEL_CHARS[truth], False
    got = discovered.label(cell)
    if got is None:
        return "?", False
    return LABEL_CHARS[got], got != truth


def render_ascii(maze: Maze, discovered: DiscoveredMap | None = None) -> str:
    """North-up grid; each cell shows its world-frame label, ``*`` marks a misclassification."""
    n = maze.size
    h, v = maze.h_walls, maze.v_walls
    lines = []
    for j in range(n, -1, -1):
        row = []
        for i in range(n + 1):
            up = j < n and v[j, i]
            down = j > 0 and v[j - 1, i]
            left = i > 0 and h[j, i - 1]
            right = i < n and h[j, i]
            row.append(_JUNCTIONS[(int(up), int(down), int(left), int(right))])
            if i < n:
                row.append("───" if h[j, i] else "   ")
        lines.append("".join(row))
        if j == 0:
            break
        row = []
        for i in range(n + 1):
            row.append("│" if v[j - 1, i] else " ")
            if i < n:
                ch, wrong = _cell_text(maze, discovered, (i, j - 1))
                row.append(f" {ch}{'*' if wrong else ' '}")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def _f(x: float) -> str:
    return f"{x:.2f}"


def render_svg(maze: Maze, discovered: DiscoveredMap | None = None) -> str:
    cs = maze.cell_size
    side = maze.size * cs * SCALE
    W = side + 2 * MARGIN

    def px(x, y):
        return MARGIN + x * SCALE, MARGIN + side - y * SCALE

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(W)}" height="{_f(W)}" '
        f'viewBox="0 0 {_f(W)} {_f(W)}">',
        '<defs><marker id="arrow" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#1f77b4"/></marker></defs>',
        f'<rect x="0" y="0" width="{_f(W)}" height="{_f(W)}" fill="white"/>',
        '<g id="walls" fill="#444" stroke="none">',
    ]
    t = maze.profile.base_thickness * SCALE
    for j in range(maze.size + 1):
        for i in range(maze.size):
            if maze.h_walls[j, i]:
                x, y = px(i * cs, j * cs)
                out.append(f'<rect x="{_f(x)}" y="{_f(y - t)}" width="{_f(cs * SCALE)}" height="{_f(2 * t)}"/>')
    for j in range(maze.size):
        for i in range(maze.size + 1):
            if maze.v_walls[j, i]:
                x, y = px(i * cs, (j + 1) * cs)
                out.append(f'<rect x="{_f(x - t)}" y="{_f(y)}" width="{_f(2 * t)}" height="{_f(cs * SCALE)}"/>')
    for cell in maze.cells:
        for ob in wall_obstacles(maze, cell):
            if isinstance(ob, Circle):
                x, y = px(*ob.center)
                out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(ob.radius * SCALE)}"/>')
    out.append("</g>")

    out.append('<g id="labels" font-family="monospace" font-size="28" text-anchor="middle">')
    outlines = []
    for cell in maze.cells:
        ch, wrong = _cell_text(maze, discovered, cell)
        x, y = px(*maze.center(cell))
        color = "#d62728" if wrong else "#000"
        out.append(f'<text x="{_f(x)}" y="{_f(y + 10)}" fill="{color}">{ch}</text>')
        if wrong:
            x0, y0 = px(cell[0] * cs, (cell[1] + 1) * cs)
            pad = 0.12 * cs * SCALE
            outlines.append(f'<rect class="misclassified" x="{_f(x0 + pad)}" y="{_f(y0 + pad)}" '
                            f'width="{_f(cs * SCALE - 2 * pad)}" height="{_f(cs * SCALE - 2 * pad)}" '
                            'fill="none" stroke="#d62728" stroke-width="4"/>')
    out.append("</g>")
    out.extend(outlines)

    if discovered is not None and len(discovered.trajectory) > 1:
        out.append('<g id="trajectory" stroke="#1f77b4" stroke-width="3" marker-end="url(#arrow)">')
        pts = [px(*maze.center(tuple(step["cell"]))) for step in discovered.trajectory]
        for (x1, y1), (x2, y2) in zip(pts, pts[1:]):
            # shorten so arrowheads do not cover the labels
            mx, my = x1 + 0.7 * (x2 - x1), y1 + 0.7 * (y2 - y1)
            sx, sy = x1 + 0.3 * (x2 - x1), y1 + 0.3 * (y2 - y1)
            out.append(f'<line x1="{_f(sx)}" y1="{_f(sy)}" x2="{_f(mx)}" y2="{_f(my)}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(maze: Maze, path, discovered: DiscoveredMap | None = None, fmt: str = "svg") -> None:
    text = render_svg(maze, discovered) if fmt == "svg" else render_ascii(maze, discovered)
    Path(path).write_text(text, encoding="utf-8")
