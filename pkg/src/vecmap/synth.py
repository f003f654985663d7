"""Procedural synthetic scenes: ground-truth vector maps plus consistent
PV/BEV feature tensors, fully determined by a seed.

Dividers and boundaries are piecewise-arc polylines running roughly
longitudinally; crossings are convex quadrilaterals. Features are rendered
from the ground truth itself: rasterized (BEV) or projected (PV) category
masks, smoothed with a fixed binomial kernel, embedded into the channel
dimension by a seeded projection, plus seeded Gaussian noise. That makes the
whole pipeline exercisable end to end without any real dataset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import CameraRig, in_image, project
from .errors import GenerationError, IOFormatError
from .map_core import (
    BDR,
    BevGrid,
    CATEGORIES,
    DIV,
    N_CATEGORIES,
    PED,
    VectorMap,
    make_instance,
    resample_polyline,
)
from .rng import Rng
from .targets import rasterize_instances

_SMOOTH_3X3 = np.array([[1.0, 2.0, 1.0],
                        [2.0, 4.0, 2.0],
                        [1.0, 2.0, 1.0]]) / 16.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_crossings: int = 1
    n_dividers: int = 1
    n_boundaries: int = 1
    crossing_half_extent: tuple[float, float] = (1.0, 3.0)
    polyline_span: float = 0.7      # fraction of the y range a polyline covers
    curvature: float = 0.08         # radians of heading drift per segment
    segments_per_polyline: int = 6
    min_crossing_separation: float = 5.0
    margin: float = 1.5             # keep-out from the grid border, meters
    noise: float = 0.05
    max_attempts: int = 200

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_crossings": self.n_crossings,
            "n_dividers": self.n_dividers,
            "n_boundaries": self.n_boundaries,
            "crossing_half_extent": list(self.crossing_half_extent),
            "polyline_span": self.polyline_span,
            "curvature": self.curvature,
            "segments_per_polyline": self.segments_per_polyline,
            "min_crossing_separation": self.min_crossing_separation,
            "margin": self.margin,
            "noise": self.noise,
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        """Missing keys fall back to their defaults."""
        try:
            kwargs = dict(d)
            if "crossing_half_extent" in kwargs:
                kwargs["crossing_half_extent"] = tuple(
                    kwargs["crossing_half_extent"])
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise IOFormatError(f"malformed scene spec: {e}") from e


@dataclass
class SceneBundle:
    gt: VectorMap
    rig: CameraRig
    f_pv: np.ndarray   # [n_cams, H_p, W_p, C]
    f_bev: np.ndarray  # [H, W, C]


def _inside(grid: BevGrid, pts, margin: float) -> bool:
    return all(grid.x_range[0] + margin <= x <= grid.x_range[1] - margin
               and grid.y_range[0] + margin <= y <= grid.y_range[1] - margin
               for x, y in pts)


def _convex(pts) -> bool:
    n = len(pts)
    signs = []
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        cx, cy = pts[(i + 2) % n]
        signs.append((bx - ax) * (cy - by) - (by - ay) * (cx - bx))
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def _gen_crossing(rng: Rng, grid: BevGrid, spec: SceneSpec,
                  centers: list) -> Optional[list]:
    cx = rng.uniform_in(grid.x_range[0] + 4, grid.x_range[1] - 4)
    cy = rng.uniform_in(grid.y_range[0] + 4, grid.y_range[1] - 4)
    for (ox, oy) in centers:
        if math.hypot(cx - ox, cy - oy) < spec.min_crossing_separation:
            return None
    lo, hi = spec.crossing_half_extent
    rx, ry = rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)
    rot = rng.uniform_in(0.0, math.pi / 2)
    pts = []
    for k in range(4):
        ang = rot + math.pi / 4 + k * math.pi / 2
        radius = rng.uniform_in(0.85, 1.15)
        pts.append((cx + radius * rx * math.cos(ang),
                    cy + radius * ry * math.sin(ang)))
    if not _inside(grid, pts, spec.margin) or not _convex(pts):
        return None
    centers.append((cx, cy))
    return pts


def _gen_polyline(rng: Rng, grid: BevGrid, spec: SceneSpec,
                  near_edge: bool) -> Optional[list]:
    span_y = (grid.y_range[1] - grid.y_range[0]) * spec.polyline_span
    step = span_y / spec.segments_per_polyline
    if near_edge:
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        x0 = side * rng.uniform_in(grid.x_range[1] - 6.0,
                                   grid.x_range[1] - spec.margin - 0.5)
    else:
        x0 = rng.uniform_in(grid.x_range[0] * 0.6, grid.x_range[1] * 0.6)
    y0 = rng.uniform_in(grid.y_range[0] + spec.margin,
                        grid.y_range[1] - spec.margin - span_y)
    heading = math.pi / 2  # along +y
    pts = [(x0, y0)]
    x, y = x0, y0
    for _ in range(spec.segments_per_polyline):
        heading += rng.uniform_in(-spec.curvature, spec.curvature)
        x += step * math.cos(heading)
        y += step * math.sin(heading)
        pts.append((x, y))
    if not _inside(grid, pts, spec.margin):
        return None
    return pts


def generate_map(spec: SceneSpec, grid: BevGrid,
                 frame_id: str = "") -> VectorMap:
    """Deterministic per seed. Raises GenerationError when the spec cannot
    be placed inside the grid (e.g. too many separated crossings)."""
    rng = Rng(spec.seed)
    instances = []
    centers: list = []
    for kind, count in (("ped", spec.n_crossings), ("div", spec.n_dividers),
                        ("bdr", spec.n_boundaries)):
        for k in range(count):
            placed = None
            for _ in range(spec.max_attempts):
                if kind == "ped":
                    placed = _gen_crossing(rng, grid, spec, centers)
                elif kind == "div":
                    placed = _gen_polyline(rng, grid, spec, near_edge=False)
                else:
                    placed = _gen_polyline(rng, grid, spec, near_edge=True)
                if placed is not None:
                    break
            if placed is None:
                raise GenerationError(
                    f"could not place {kind} instance {k + 1}/{count}; "
                    f"spec too dense for the grid range")
            cat = {"ped": PED, "div": DIV, "bdr": BDR}[kind]
            instances.append(make_instance(placed, cat))
    return VectorMap(instances=tuple(instances), frame_id=frame_id)


def _smooth(channelwise: np.ndarray) -> np.ndarray:
    h, w, c = channelwise.shape
    padded = np.pad(channelwise, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(channelwise)
    for di in range(3):
        for dj in range(3):
            out += _SMOOTH_3X3[di, dj] * padded[di:di + h, dj:dj + w, :]
    return out


def _channel_projection(rng: Rng, channels: int) -> np.ndarray:
    vals = [rng.normal() for _ in range(N_CATEGORIES * channels)]
    proj = np.array(vals).reshape(N_CATEGORIES, channels)
    return proj / math.sqrt(N_CATEGORIES)


def render_features(gt: VectorMap, rig: CameraRig, grid: BevGrid,
                    spec: SceneSpec, feature_hw: tuple[int, int],
                    channels: int, z_ground: float = 0.0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(F_pv [n_cams, H_p, W_p, C], F_bev [H, W, C]); deterministic function
    of (gt, rig, grid, spec)."""
    rng = Rng(spec.seed).spawn(0xFEA7)
    proj = _channel_projection(rng, channels)

    bev_mask = rasterize_instances(gt, grid, line_width=1).mask
    f_bev = _smooth(bev_mask) @ proj
    noise = np.array(rng.normals(f_bev.size)).reshape(f_bev.shape)
    f_bev = f_bev + spec.noise * noise

    hp, wp = feature_hw
    f_pv = np.zeros((len(rig.cameras), hp, wp, channels))
    img_h, img_w = rig.cameras[0].image_hw
    for ci, cam in enumerate(rig.cameras):
        canvas = np.zeros((hp, wp, N_CATEGORIES))
        for inst in gt.instances:
            dense = resample_polyline(inst, 64).points_array()
            for (x, y) in dense:
                res = project(cam, (x, y, z_ground))
                if res is None or not in_image(cam, res[0], res[1]):
                    continue
                u, v, _ = res
                r = int(v * hp / img_h)
                c = int(u * wp / img_w)
                canvas[r, c, inst.category.id] = 1.0
        feat = _smooth(canvas) @ proj
        noise = np.array(rng.normals(feat.size)).reshape(feat.shape)
        f_pv[ci] = feat + spec.noise * noise
    return f_pv, f_bev


def make_bundle(spec: SceneSpec, rig: CameraRig, grid: BevGrid,
                feature_hw: tuple[int, int], channels: int,
                frame_id: str = "") -> SceneBundle:
    gt = generate_map(spec, grid, frame_id)
    f_pv, f_bev = render_features(gt, rig, grid, spec, feature_hw, channels)
    return SceneBundle(gt=gt, rig=rig, f_pv=f_pv, f_bev=f_bev)
