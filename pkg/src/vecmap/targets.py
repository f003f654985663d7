"""Supervision targets: perspective-view keypoint heatmaps and BEV raster
masks.

Keypoints are the instance's stored vertices (the simplest geometric
representation), not the fixed-cardinality resampled points. Heatmap kernels
are truncated at 3 sigma and combined by per-pixel max, so the peak at every
projected keypoint pixel is exactly 1. Raster masks use cell-center coverage:
open chains set every cell whose center lies within line_width / 2 cells of
the chain, closed shapes are scanline-filled by the even-odd rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


import numpy as np

from .camera import CameraRig, in_image, project
from .errors import ContractError
from .map_core import BevGrid, MapInstance, N_CATEGORIES, VectorMap


@dataclass(frozen=True)
class HeatmapTarget:
    heatmap: np.ndarray  # [n_cams, H_I, W_I, N_CATEGORIES] in [0, 1]
    sigma: float


@dataclass(frozen=True)
class RasterMask:
    mask: np.ndarray  # [H, W, N_CATEGORIES]
    line_width: int


def keypoints_of(inst: MapInstance) -> list[tuple[float, float]]:
    """The geometric definition points of an instance: its stored vertices."""
    return [(p[0], p[1]) for p in inst.points]


def _gaussian_kernel(sigma: float) -> tuple[np.ndarray, int]:
    radius = int(math.ceil(3.0 * sigma))
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    d2 = offs[None, :] ** 2 + offs[:, None] ** 2
    kern = np.exp(-d2 / (2.0 * sigma * sigma))
    kern[d2 > (3.0 * sigma) ** 2] = 0.0
    return kern, radius


def make_heatmap_target(vmap: VectorMap, rig: CameraRig, sigma: float,
                        z_ground: float = 0.0) -> HeatmapTarget:
    """Splat a truncated Gaussian around every visible projected keypoint
    into the category channel of each camera's canvas, combining by max."""
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    if not rig.cameras:
        raise ContractError("rig has no cameras")
    h_img, w_img = rig.cameras[0].image_hw
    heat = np.zeros((len(rig.cameras), h_img, w_img, N_CATEGORIES))
    kern, radius = _gaussian_kernel(sigma)
    for inst in vmap.instances:
        ch = inst.category.id
        for (x, y) in keypoints_of(inst):
            for ci, cam in enumerate(rig.cameras):
                res = project(cam, (x, y, z_ground))
                if res is None:
                    continue
                u, v, _ = res
                if not in_image(cam, u, v):
                    continue
                u0, v0 = int(math.floor(u)), int(math.floor(v))
                r_lo, r_hi = max(0, v0 - radius), min(h_img, v0 + radius + 1)
                c_lo, c_hi = max(0, u0 - radius), min(w_img, u0 + radius + 1)
                win = kern[r_lo - (v0 - radius):r_hi - (v0 - radius),
                           c_lo - (u0 - radius):c_hi - (u0 - radius)]
                view = heat[ci, r_lo:r_hi, c_lo:c_hi, ch]
                np.maximum(view, win, out=view)
    return HeatmapTarget(heatmap=heat, sigma=float(sigma))


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _to_cell_space(points: np.ndarray, grid: BevGrid) -> np.ndarray:
    out = np.empty_like(points)
    out[:, 0] = (points[:, 0] - grid.x_range[0]) / grid.cell_w
    out[:, 1] = (points[:, 1] - grid.y_range[0]) / grid.cell_h
    return out


def stroke_cells(points: np.ndarray, closed: bool, grid: BevGrid,
                 line_width: int) -> set[tuple[int, int]]:
    """Cells whose center lies within line_width / 2 (in cell units) of the
    chain. Distances are measured in cell space so anisotropic grids keep a
    constant stroke width in cells."""
    if line_width < 1:
        raise ContractError(f"line_width must be >= 1, got {line_width}")
    cs = _to_cell_space(points, grid)
    chain = np.vstack([cs, cs[:1]]) if closed else cs
    half = line_width / 2.0
    cells: set[tuple[int, int]] = set()
    for (ax, ay), (bx, by) in zip(chain[:-1], chain[1:]):
        lo_c = max(0, int(math.floor(min(ax, bx) - half - 1.0)))
        hi_c = min(grid.width - 1, int(math.ceil(max(ax, bx) + half + 1.0)))
        lo_r = max(0, int(math.floor(min(ay, by) - half - 1.0)))
        hi_r = min(grid.height - 1, int(math.ceil(max(ay, by) + half + 1.0)))
        dx, dy = bx - ax, by - ay
        len2 = dx * dx + dy * dy
        for r in range(lo_r, hi_r + 1):
            py = r + 0.5
            for c in range(lo_c, hi_c + 1):
                px = c + 0.5
                if len2 == 0.0:
                    d = math.hypot(px - ax, py - ay)
                else:
                    t = ((px - ax) * dx + (py - ay) * dy) / len2
                    t = min(1.0, max(0.0, t))
                    d = math.hypot(px - (ax + t * dx), py - (ay + t * dy))
                if d <= half:
                    cells.add((r, c))
    return cells


def fill_cells(points: np.ndarray, grid: BevGrid) -> set[tuple[int, int]]:
    """Scanline fill: cells whose center is inside the polygon under the
    even-odd rule with half-open edges (vertices and horizontal edges are
    handled consistently with a per-cell ray-cast)."""
    cs = _to_cell_space(points, grid)
    n = len(cs)
    lo_r = max(0, int(math.floor(cs[:, 1].min() - 1.0)))
    hi_r = min(grid.height - 1, int(math.ceil(cs[:, 1].max() + 1.0)))
    lo_c = max(0, int(math.floor(cs[:, 0].min() - 1.0)))
    hi_c = min(grid.width - 1, int(math.ceil(cs[:, 0].max() + 1.0)))
    cells: set[tuple[int, int]] = set()
    for r in range(lo_r, hi_r + 1):
        py = r + 0.5
        crossings = []
        for i in range(n):
            x1, y1 = cs[i]
            x2, y2 = cs[(i + 1) % n]
            if (y1 <= py < y2) or (y2 <= py < y1):
                crossings.append(x1 + (py - y1) * (x2 - x1) / (y2 - y1))
        if not crossings:
            continue
        for c in range(lo_c, hi_c + 1):
            px = c + 0.5
            count = 0
            for xc in crossings:
                if xc > px:
                    count += 1
            if count % 2 == 1:
                cells.add((r, c))
    return cells


def instance_cells(points: np.ndarray, closed: bool, grid: BevGrid,
                   line_width: int, fill_closed: bool = True
                   ) -> set[tuple[int, int]]:
    if closed and fill_closed:
        return fill_cells(points, grid)
    return stroke_cells(points, closed, grid, line_width)


def rasterize_instances(vmap: VectorMap, grid: BevGrid, line_width: int = 1,
                        use_confidence: bool = False,
                        fill_closed: bool = True) -> RasterMask:
    """Burn instances into a per-category mask. Ground truth writes 1.0;
    predictions write their confidence. Overlaps combine by max, so the
    result is independent of instance order."""
    mask = np.zeros((grid.height, grid.width, N_CATEGORIES))
    for inst in vmap.instances:
        value = inst.confidence if use_confidence else 1.0
        ch = inst.category.id
        for (r, c) in instance_cells(inst.points_array(), inst.closed, grid,
                                     line_width, fill_closed):
            if mask[r, c, ch] < value:
                mask[r, c, ch] = value
    return RasterMask(mask=mask, line_width=int(line_width))
