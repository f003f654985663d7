"""Training losses: penalty-reduced heatmap focal loss, rasterized instance
segmentation cross-entropy, and the Hungarian-matched class/point losses.

The raster loss rasterizes predicted geometry with detached coordinates, so
its gradient reaches only the class scores. Point supervision minimizes L1
under the cheapest point-order equivalence per matched pair: both directions
for open chains, every rotation in both directions for closed ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError
from .map_core import CATEGORIES, N_CATEGORIES, VectorMap, resample_polyline
from .map_core import BevGrid
from .model import ModelConfig
from .targets import HeatmapTarget, RasterMask, instance_cells
from . import tensor as T
from .tensor import Tensor

_EPS = 1e-12


def heatmap_loss(heat_logits: Tensor, target: HeatmapTarget,
                 alpha: float = 2.0, beta: float = 4.0,
                 binarize: bool = False) -> Tensor:
    """Penalty-reduced focal loss on sigmoid(logits) against a Gaussian
    target: positives are the exact-peak pixels, negatives are down-weighted
    by (1 - target)^beta, normalized by the positive count (min 1)."""
    t = target.heatmap
    if heat_logits.shape != t.shape:
        raise ContractError(f"heatmap shape {heat_logits.shape} vs target "
                            f"{t.shape}")
    if binarize:
        t = (t == 1.0).astype(np.float64)
    pos_mask = (t == 1.0).astype(np.float64)
    neg_weight = (1.0 - t) ** beta
    p = T.clamp(T.sigmoid(heat_logits), _EPS, 1.0 - _EPS)
    one_minus_p = T.sub(1.0, p)
    pos_term = T.mul(pos_mask, T.mul(T.pow_const(one_minus_p, alpha), T.log(p)))
    neg_term = T.mul((1.0 - pos_mask) * neg_weight,
                     T.mul(T.pow_const(p, alpha), T.log(one_minus_p)))
    n_pos = max(1.0, float(pos_mask.sum()))
    return T.mul(T.add(T.tsum(pos_term), T.tsum(neg_term)), -1.0 / n_pos)


def _binary_ce_mean(pred: Tensor, target: np.ndarray) -> Tensor:
    p = T.clamp(pred, _EPS, 1.0 - _EPS)
    ce = T.add(T.mul(target, T.log(p)),
               T.mul(1.0 - target, T.log(T.sub(1.0, p))))
    return T.mul(T.tsum(ce), -1.0 / target.size)


def ris_loss(points: Tensor, class_logits: Tensor, gt_mask: RasterMask,
             grid: BevGrid, line_width: int = 1,
             fill_closed: bool = True) -> Tensor:
    """Rasterize each predicted vector with pixel value = its argmax-class
    probability (coordinates detached), max-combine per category channel,
    then pixelwise binary cross-entropy against the ground-truth mask,
    averaged over all cells and channels."""
    h, w = grid.height, grid.width
    if gt_mask.mask.shape != (h, w, N_CATEGORIES):
        raise ContractError("ground-truth mask does not match grid")
    probs = T.sigmoid(class_logits)  # [n_instances, N_c]
    n_inst = class_logits.shape[0] if class_logits.data.ndim else 0
    channel_preds: list[Optional[Tensor]] = [None] * N_CATEGORIES
    for i in range(n_inst):
        cls = int(np.argmax(class_logits.data[i]))
        cells = instance_cells(points.data[i], CATEGORIES[cls].is_closed,
                               grid, line_width, fill_closed)
        if not cells:
            continue
        mask_i = np.zeros((h, w))
        for (r, c) in cells:
            mask_i[r, c] = 1.0
        p_i = T.take_axis0(T.take_axis0(probs, i), cls)  # scalar
        contrib = T.mul(mask_i, p_i)
        prev = channel_preds[cls]
        channel_preds[cls] = contrib if prev is None else T.maximum(prev, contrib)
    total = None
    for ch in range(N_CATEGORIES):
        pred = channel_preds[ch]
        if pred is None:
            pred = Tensor(np.zeros((h, w)))
        ce = _binary_ce_mean(pred, gt_mask.mask[:, :, ch])
        total = ce if total is None else T.add(total, ce)
    return T.mul(total, 1.0 / N_CATEGORIES)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _orderings(n_points: int, closed: bool) -> list[np.ndarray]:
    base = np.arange(n_points)
    if not closed:
        return [base, base[::-1]]
    orders = []
    for shift in range(n_points):
        rolled = np.roll(base, -shift)
        orders.append(rolled)
        orders.append(rolled[::-1])
    return orders


def _best_order_l1(pred_pts: np.ndarray, gt_pts: np.ndarray,
                   closed: bool) -> tuple[float, np.ndarray]:
    """Cheapest mean-per-point L1 between the prediction and any equivalent
    ordering of the ground-truth chain."""
    best_cost, best = math.inf, None
    for order in _orderings(len(gt_pts), closed):
        cost = float(np.abs(pred_pts - gt_pts[order]).sum() / len(gt_pts))
        if cost < best_cost:
            best_cost, best = cost, order
    return best_cost, best


def _focal_terms(probs: np.ndarray, alpha: float, gamma: float
                 ) -> tuple[np.ndarray, np.ndarray]:
    p = np.clip(probs, _EPS, 1.0 - _EPS)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p ** gamma * np.log(1.0 - p)
    return pos, neg


@dataclass
class MatchResult:
    l_cls: Tensor
    l_pts: Tensor
    assignment: list[tuple[int, int]]  # (prediction index, gt index)


def matching_losses(points: Tensor, class_logits: Tensor, gt: VectorMap,
                    cfg: ModelConfig) -> MatchResult:
    """Hungarian one-to-one assignment under (class cost + point L1 cost),
    then focal classification loss over all predictions (unmatched ->
    background) and mean matched L1 under the best point-order equivalence."""
    n_inst = class_logits.shape[0]
    n_points = points.shape[1]
    gt_resampled = [resample_polyline(g, n_points) for g in gt.instances]
    gt_pts = [g.points_array() for g in gt_resampled]
    probs = _stable_sigmoid(class_logits.data)
    pos_cost, neg_cost = _focal_terms(probs, cfg.focal_alpha, cfg.focal_gamma)
    cls_cost = pos_cost - neg_cost

    n_gt = len(gt_resampled)
    assignment: list[tuple[int, int]] = []
    best_orders: dict[tuple[int, int], np.ndarray] = {}
    if n_gt:
        cost = np.zeros((n_inst, n_gt))
        for i in range(n_inst):
            for j, g in enumerate(gt_resampled):
                l1, order = _best_order_l1(points.data[i], gt_pts[j],
                                           g.category.is_closed)
                best_orders[(i, j)] = order
                cost[i, j] = (cfg.cost_class_weight * cls_cost[i, g.category.id]
                              + cfg.cost_points_weight * l1)
        rows, cols = linear_sum_assignment(cost)
        assignment = sorted(zip(rows.tolist(), cols.tolist()))

    # point loss over matched pairs, gradient through the prediction rows
    if assignment:
        pred_rows = T.take_axis0(points, np.array([i for i, _ in assignment]))
        gt_stack = np.stack([gt_pts[j][best_orders[(i, j)]]
                             for i, j in assignment])
        diff = T.absolute(T.sub(pred_rows, gt_stack))
        l_pts = T.mul(T.tsum(diff), 1.0 / (len(assignment) * n_points))
    else:
        l_pts = Tensor(0.0)

    # focal classification loss; matched instances target their gt category
    targets = np.zeros((n_inst, N_CATEGORIES))
    for i, j in assignment:
        targets[i, gt_resampled[j].category.id] = 1.0
    p = T.clamp(T.sigmoid(class_logits), _EPS, 1.0 - _EPS)
    pos = T.mul(targets * -cfg.focal_alpha,
                T.mul(T.pow_const(T.sub(1.0, p), cfg.focal_gamma), T.log(p)))
    neg = T.mul((1.0 - targets) * -(1.0 - cfg.focal_alpha),
                T.mul(T.pow_const(p, cfg.focal_gamma), T.log(T.sub(1.0, p))))
    l_cls = T.mul(T.add(T.tsum(pos), T.tsum(neg)),
                  1.0 / max(1, len(assignment)))
    return MatchResult(l_cls=l_cls, l_pts=l_pts, assignment=assignment)


@dataclass
class LossBreakdown:
    total: Tensor
    heatmap: Optional[Tensor]
    raster: Optional[Tensor]
    classification: Tensor
    points: Tensor

    def scalars(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "heatmap": self.heatmap.item() if self.heatmap is not None else 0.0,
            "raster": self.raster.item() if self.raster is not None else 0.0,
            "classification": self.classification.item(),
            "points": self.points.item(),
            "core": self.classification.item() + self.points.item(),
        }


def total_loss(l_cls: Tensor, l_pts: Tensor,
               l_heat: Optional[Tensor] = None,
               l_ris: Optional[Tensor] = None,
               gamma_heatmap: float = 0.1,
               gamma_raster: float = 15.0) -> LossBreakdown:
    """gamma_H * L_H + gamma_R * L_RIS + L_cls + L_pts; absent components
    contribute zero."""
    total = T.add(l_cls, l_pts)
    if l_heat is not None:
        total = T.add(total, T.mul(l_heat, gamma_heatmap))
    if l_ris is not None:
        total = T.add(total, T.mul(l_ris, gamma_raster))
    return LossBreakdown(total=total, heatmap=l_heat, raster=l_ris,
                         classification=l_cls, points=l_pts)
