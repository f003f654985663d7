"""Vectorized map data model and BEV grid geometry.

Conventions fixed here and relied on everywhere else:

  - A map instance is an ordered point set in the ego/BEV frame, in meters.
  - x is the lateral axis (default +/-15 m, 100 cells), y is the longitudinal
    axis (default +/-30 m, 200 cells).
  - Grids are row-major with row <-> y and col <-> x, so the default mask
    shape is (200, 100).
  - Closed shapes (pedestrian crossings) are stored WITHOUT a duplicated
    closing vertex; closure is implied by the category.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, IOFormatError


@dataclass(frozen=True)
class Category:
    """A map element class. ``is_closed`` decides polygon vs polyline."""

    id: int
    name: str
    is_closed: bool


PED = Category(0, "ped", True)
DIV = Category(1, "div", False)
BDR = Category(2, "bdr", False)

CATEGORIES: tuple[Category, ...] = (PED, DIV, BDR)
N_CATEGORIES = len(CATEGORIES)

_BY_NAME = {c.name: c for c in CATEGORIES}
_BY_ID = {c.id: c for c in CATEGORIES}


def category_by_name(name: str) -> Category:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ContractError(f"unknown category name {name!r}") from None


def category_by_id(cat_id: int) -> Category:
    try:
        return _BY_ID[cat_id]
    except KeyError:
        raise ContractError(f"unknown category id {cat_id}") from None


@dataclass(frozen=True)
class MapInstance:
    """One vectorized map element: ordered 2D points + category + confidence.

    Ground-truth instances carry confidence exactly 1.0; predictions carry
    the model score in [0, 1].
    """

    points: tuple[tuple[float, float], ...]
    category: Category
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise ContractError("an instance needs at least 2 points")
        for p in self.points:
            if not (math.isfinite(p[0]) and math.isfinite(p[1])):
                raise ContractError(f"non-finite coordinate in instance: {p}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ContractError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def closed(self) -> bool:
        return self.category.is_closed

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class VectorMap:
    """A set of map instances for one frame. May be empty."""

    instances: tuple[MapInstance, ...] = ()
    frame_id: str = ""


def make_instance(points: Iterable[Sequence[float]], category: Category,
                  confidence: float = 1.0) -> MapInstance:
    pts = tuple((float(p[0]), float(p[1])) for p in points)
    return MapInstance(points=pts, category=category, confidence=float(confidence))


@dataclass(frozen=True)
class BevGrid:
    """Metric BEV extent plus its cell resolution.

    ``width`` counts lateral (x) cells, ``height`` longitudinal (y) cells.
    ``downsample`` is the scale factor used by the coarse BEV feature map.
    """

    x_range: tuple[float, float] = (-15.0, 15.0)
    y_range: tuple[float, float] = (-30.0, 30.0)
    width: int = 100
    height: int = 200
    downsample: int = 2

    def __post_init__(self) -> None:
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ContractError("grid ranges must be increasing")
        if self.width < 1 or self.height < 1 or self.downsample < 1:
            raise ContractError("grid cell counts and downsample must be positive")

    @property
    def cell_w(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.width

    @property
    def cell_h(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / self.height

    def bev_to_cell(self, p: Sequence[float]) -> Optional[tuple[int, int]]:
        """Map a metric BEV point (x, y) to integer (row, col), or None if
        outside the range. Points exactly on the max boundary land in the
        last cell (floor convention with the upper edge clamped in)."""
        x, y = float(p[0]), float(p[1])
        if not (self.x_range[0] <= x <= self.x_range[1]):
            return None
        if not (self.y_range[0] <= y <= self.y_range[1]):
            return None
        col = int(math.floor((x - self.x_range[0]) / self.cell_w))
        row = int(math.floor((y - self.y_range[0]) / self.cell_h))
        return (min(row, self.height - 1), min(col, self.width - 1))

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        x = self.x_range[0] + (col + 0.5) * self.cell_w
        y = self.y_range[0] + (row + 0.5) * self.cell_h
        return (x, y)

    def contains(self, p: Sequence[float]) -> bool:
        return self.bev_to_cell(p) is not None


def chain_lengths(points: np.ndarray, closed: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment lengths and cumulative arclength of a point chain.

    For closed chains the closing edge back to the first point is included.
    Returns (segment_lengths, cumulative) with cumulative[0] == 0.
    """
    chain = np.vstack([points, points[:1]]) if closed else points
    deltas = np.diff(chain, axis=0)
    seg = np.hypot(deltas[:, 0], deltas[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return seg, cum


def arclength(inst: MapInstance) -> float:
    _, cum = chain_lengths(inst.points_array(), inst.closed)
    return float(cum[-1])


def resample_polyline(inst: MapInstance, n: int) -> MapInstance:
    """Resample an instance to exactly ``n`` points equally spaced by
    arclength. Open chains keep their endpoints; closed chains are walked
    around the closing edge with samples at i * L / n. A zero-length chain
    collapses to n copies of its first point."""
    if n < 2:
        raise ContractError(f"resample target {n} must be >= 2")
    pts = inst.points_array()
    closed = inst.closed
    seg, cum = chain_lengths(pts, closed)
    total = cum[-1]
    if total == 0.0:
        out = np.repeat(pts[:1], n, axis=0)
    else:
        if closed:
            s = np.arange(n, dtype=np.float64) * (total / n)
        else:
            s = np.linspace(0.0, total, n)
        chain = np.vstack([pts, pts[:1]]) if closed else pts
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        safe = np.where(seg[idx] > 0.0, seg[idx], 1.0)
        t = np.clip((s - cum[idx]) / safe, 0.0, 1.0)
        out = chain[idx] + t[:, None] * (chain[idx + 1] - chain[idx])
        if not closed:
            out[0] = pts[0]
            out[-1] = pts[-1]
    return MapInstance(points=tuple(map(tuple, out.tolist())),
                       category=inst.category, confidence=inst.confidence)


# ---------------------------------------------------------------------------
# Canonical JSON serialization. This schema is the contract between the CLI
# subcommands and the external bindings; keep it stable.
# ---------------------------------------------------------------------------

def instance_to_dict(inst: MapInstance) -> dict:
    return {
        "category": inst.category.name,
        "closed": inst.closed,
        "confidence": inst.confidence,
        "points": [[p[0], p[1]] for p in inst.points],
    }


def instance_from_dict(d: dict) -> MapInstance:
    try:
        cat = category_by_name(d["category"])
        closed = bool(d["closed"])
        conf = float(d["confidence"])
        pts = [(float(p[0]), float(p[1])) for p in d["points"]]
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise IOFormatError(f"malformed instance record: {e}") from e
    if closed != cat.is_closed:
        raise IOFormatError(
            f"instance closed={closed} contradicts category {cat.name!r}")
    return make_instance(pts, cat, conf)


def map_to_dict(vmap: VectorMap) -> dict:
    return {
        "frame_id": vmap.frame_id,
        "instances": [instance_to_dict(i) for i in vmap.instances],
    }


def map_from_dict(d: dict) -> VectorMap:
    try:
        frame_id = str(d.get("frame_id", ""))
        raw = d["instances"]
    except (KeyError, TypeError) as e:
        raise IOFormatError(f"malformed map document: {e}") from e
    return VectorMap(instances=tuple(instance_from_dict(r) for r in raw),
                     frame_id=frame_id)


def map_to_json(vmap: VectorMap) -> str:
    return json.dumps(map_to_dict(vmap), sort_keys=True, indent=2) + "\n"


def map_from_json(text: str) -> VectorMap:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise IOFormatError(f"invalid JSON: {e}") from e
    return map_from_dict(doc)


def grid_to_dict(grid: BevGrid) -> dict:
    return {
        "x_range": list(grid.x_range),
        "y_range": list(grid.y_range),
        "width": grid.width,
        "height": grid.height,
        "downsample": grid.downsample,
    }


def grid_from_dict(d: dict) -> BevGrid:
    try:
        return BevGrid(
            x_range=(float(d["x_range"][0]), float(d["x_range"][1])),
            y_range=(float(d["y_range"][0]), float(d["y_range"][1])),
            width=int(d["width"]),
            height=int(d["height"]),
            downsample=int(d.get("downsample", 1)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise IOFormatError(f"malformed grid record: {e}") from e
