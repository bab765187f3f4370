"""Decision-boundary grids, marching-squares contours, and hand-rolled SVG.

The boundary grid probes p(y=1|x) over a 2-D lattice in the pre-embedding
plane (each lattice point is pushed through the embedding before the
network). Contours at a level are extracted cell by cell with linear
interpolation along the crossed edges; no plotting dependency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import EmbeddingMap, embed_100d
from .errors import ConfigError
from .numerics import Tensor, as_tensor


@dataclass
class BoundaryGrid:
    xs: Tensor        # (nx,) lattice coordinates
    ys: Tensor        # (ny,)
    values: Tensor    # (ny, nx), p(y=1) per lattice point

    def __post_init__(self):
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ConfigError("grid values must be probabilities")


def lattice_bounds(points: Tensor, pad_fraction: float = 0.3) -> tuple[float, float, float, float]:
    points = as_tensor(points)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = pad_fraction * (hi - lo)
    return lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1]


def probe_grid(net, emb: EmbeddingMap, bounds: tuple[float, float, float, float],
               resolution: int = 200) -> BoundaryGrid:
    """p(y=1|x) over a resolution x resolution lattice in the 2-D plane."""
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)
    plane = np.column_stack([gx.ravel(), gy.ravel()])
    proba = nn.predict_proba(net, embed_100d(plane, emb))[:, 1]
    return BoundaryGrid(xs=xs, ys=ys, values=proba.reshape(resolution, resolution))


def marching_squares(grid: BoundaryGrid, level: float = 0.5) -> list[list[tuple[float, float]]]:
    """Contour segments at the given level, merged into polylines.

    Each lattice cell contributes 0-2 segments; endpoints are linearly
    interpolated along the crossed edges. Saddle cells are split by the
    cell-center value.
    """
    xs, ys, v = grid.xs, grid.ys, grid.values
    segments = []

    def interp(pa, pb, fa, fb):
        t = 0.5 if fb == fa else (level - fa) / (fb - fa)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            corners = [(xs[i], ys[j]), (xs[i + 1], ys[j]),
                       (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            f = [v[j, i], v[j, i + 1], v[j + 1, i + 1], v[j + 1, i]]
            case = sum(1 << k for k in range(4) if f[k] >= level)
            if case in (0, 15):
                continue
            edges = {
                0: interp(corners[0], corners[1], f[0], f[1]),
                1: interp(corners[1], corners[2], f[1], f[2]),
                2: interp(corners[3], corners[2], f[3], f[2]),
                3: interp(corners[0], corners[3], f[0], f[3]),
            }
            table = {
                1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
                6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(2, 0)],
                11: [(2, 1)], 12: [(1, 3)], 13: [(1, 0)], 14: [(0, 3)],
            }
            if case in (5, 10):
                center = np.mean(f)
                if case == 5:
                    pairs = [(3, 0), (1, 2)] if center < level else [(3, 2), (1, 0)]
                else:
                    pairs = [(0, 1), (2, 3)] if center < level else [(0, 3), (2, 1)]
            else:
                pairs = table[case]
            for a, b in pairs:
                segments.append((edges[a], edges[b]))
    return _merge_segments(segments)


def _merge_segments(segments, tol: float = 1e-9) -> list[list[tuple[float, float]]]:
    """Chain shared-endpoint segments into polylines (greedy join)."""
    def key(p):
        return (round(p[0] / tol), round(p[1] / tol))

    remaining = list(segments)
    polylines = []
    by_end: dict = {}
    for seg in remaining:
        by_end.setdefault(key(seg[0]), []).append(seg)
    used = [False] * len(remaining)
    index = {id(seg): i for i, seg in enumerate(remaining)}
    for i, seg in enumerate(remaining):
        if used[i]:
            continue
        used[i] = True
        line = [seg[0], seg[1]]
        while True:
            candidates = by_end.get(key(line[-1]), [])
            nxt = next((s for s in candidates if not used[index[id(s)]]), None)
            if nxt is None:
                break
            used[index[id(nxt)]] = True
            line.append(nxt[1])
        polylines.append(line)
    return polylines


def boundary_svg(grid: BoundaryGrid, points: Tensor, labels: np.ndarray,
                 mean_lds: float | None = None, width: int = 640,
                 height: int = 640) -> str:
    """SVG document: shaded probability field, 0.5 contour, data markers.

    Class 1 points draw as red circles, class 0 as blue triangles.
    """
    x0, x1 = grid.xs[0], grid.xs[-1]
    y0, y1 = grid.ys[0], grid.ys[-1]

    def to_px(p):
        px = (p[0] - x0) / (x1 - x0) * width
        py = height - (p[1] - y0) / (y1 - y0) * height
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if mean_lds is not None:
        parts.append(f'<!-- mean smoothness estimate: {mean_lds:.6f} -->')
        parts.append(f'<text x="10" y="20" font-size="14">mean LDS = {mean_lds:.4f}</text>')

    # coarse shading: one rect per 4x4 block of lattice cells
    step = max(1, len(grid.xs) // 50)
    cw = width / ((len(grid.xs) - 1) / step + 1)
    ch = height / ((len(grid.ys) - 1) / step + 1)
    for j in range(0, len(grid.ys), step):
        for i in range(0, len(grid.xs), step):
            val = grid.values[j, i]
            r = int(255 * val)
            b = int(255 * (1 - val))
            px, py = to_px((grid.xs[i], grid.ys[j]))
            parts.append(
                f'<rect x="{px:.1f}" y="{py - ch:.1f}" width="{cw:.1f}" height="{ch:.1f}" '
                f'fill="rgb({r},230,{b})" fill-opacity="0.35"/>')

    for line in marching_squares(grid, 0.5):
        coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in (to_px(p) for p in line))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="black" stroke-width="2"/>')

    for p, label in zip(as_tensor(points), labels):
        px, py = to_px(p)
        if label == 1:
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="5" fill="red"/>')
        else:
            tri = f"{px:.1f},{py - 6:.1f} {px - 5:.1f},{py + 4:.1f} {px + 5:.1f},{py + 4:.1f}"
            parts.append(f'<polygon points="{tri}" fill="blue"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def grid_csv(grid: BoundaryGrid) -> str:
    """x,y,p rows for the probed lattice."""
    lines = ["x,y,p"]
    for j, y in enumerate(grid.ys):
        for i, x in enumerate(grid.xs):
            lines.append(f"{x!r},{y!r},{grid.values[j, i]!r}")
    return "\n".join(lines) + "\n"
