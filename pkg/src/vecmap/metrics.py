"""Chamfer-distance average-precision evaluation.

Protocol: per category and threshold, predictions pooled over the frame set
are ranked by descending confidence (ties broken by frame then instance
index) and matched greedily to the unmatched ground-truth instance of the
same frame and category with the smallest Chamfer distance; the prediction
is a true positive iff that distance is below the threshold. AP is the
all-point interpolated area under the precision-recall curve.

The PR arithmetic runs on exact rationals and is converted to float once at
the end, so evaluation is bit-reproducible and exactly order-independent
for distinct confidences. An optimal (Hungarian) matching mode is available
behind ``matching="hungarian"``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError
from .map_core import CATEGORIES, Category, MapInstance, VectorMap, resample_polyline

COARSE_THRESHOLDS = (0.5, 1.0, 1.5)
TIGHT_THRESHOLDS = (0.2, 0.5, 1.0)

_INFEASIBLE = 1.0e9


@dataclass(frozen=True)
class EvalConfig:
    thresholds_coarse: tuple[float, ...] = COARSE_THRESHOLDS
    thresholds_tight: tuple[float, ...] = TIGHT_THRESHOLDS
    n_eval_points: int = 100
    matching: str = "greedy"  # or "hungarian"
    categories: tuple[Category, ...] = CATEGORIES

    def __post_init__(self) -> None:
        for ts in (self.thresholds_coarse, self.thresholds_tight):
            if any(t <= 0 for t in ts) or list(ts) != sorted(set(ts)):
                raise ContractError(
                    f"thresholds must be strictly increasing and positive: {ts}")
        if self.matching not in ("greedy", "hungarian"):
            raise ContractError(f"unknown matching mode {self.matching!r}")
        if self.n_eval_points < 2:
            raise ContractError("n_eval_points must be >= 2")

    def to_dict(self) -> dict:
        return {
            "thresholds_coarse": list(self.thresholds_coarse),
            "thresholds_tight": list(self.thresholds_tight),
            "n_eval_points": self.n_eval_points,
            "matching": self.matching,
            "interpolation": "all-point",
        }


def chamfer_distance(a: MapInstance, b: MapInstance,
                     n_eval_points: int = 100) -> float:
    """Symmetric mean nearest-point distance between the two instances after
    resampling each to n_eval_points (closed chains over the closed
    traversal)."""
    pa = resample_polyline(a, n_eval_points).points_array()
    pb = resample_polyline(b, n_eval_points).points_array()
    d = np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])
    return 0.5 * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


@dataclass
class CategoryEval:
    name: str
    n_gt: int
    n_pred: int
    ap_by_threshold: dict[float, float] = field(default_factory=dict)
    tp_by_threshold: dict[float, int] = field(default_factory=dict)
    included: bool = True

    def mean_ap(self, thresholds: Sequence[float]) -> float:
        return float(sum(self.ap_by_threshold[t] for t in thresholds)
                     / len(thresholds))


@dataclass
class EvalReport:
    config: EvalConfig
    categories: dict[str, CategoryEval]
    map_coarse: float
    map_tight: float
    n_frames: int

    def to_dict(self) -> dict:
        per_cat = {}
        for name, ce in self.categories.items():
            per_cat[name] = {
                "included": ce.included,
                "n_gt": ce.n_gt,
                "n_pred": ce.n_pred,
                "ap_coarse": {f"{t}": ce.ap_by_threshold[t]
                              for t in self.config.thresholds_coarse},
                "ap_tight": {f"{t}": ce.ap_by_threshold[t]
                             for t in self.config.thresholds_tight},
                "ap_coarse_mean": ce.mean_ap(self.config.thresholds_coarse),
                "ap_tight_mean": ce.mean_ap(self.config.thresholds_tight),
                "tp_by_threshold": {f"{t}": ce.tp_by_threshold[t]
                                    for t in sorted(ce.tp_by_threshold)},
            }
        from . import __version__
        return {
            "version": __version__,
            "config": self.config.to_dict(),
            "per_category": per_cat,
            "map_coarse": self.map_coarse,
            "map_tight": self.map_tight,
            "n_frames": self.n_frames,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "threshold_m", "set", "ap"])
        for name, ce in self.categories.items():
            for t in self.config.thresholds_coarse:
                writer.writerow([name, t, "coarse", repr(ce.ap_by_threshold[t])])
            for t in self.config.thresholds_tight:
                writer.writerow([name, t, "tight", repr(ce.ap_by_threshold[t])])
        writer.writerow(["mAP", "", "coarse", repr(self.map_coarse)])
        writer.writerow(["mAP", "", "tight", repr(self.map_tight)])
        return buf.getvalue()


def _average_precision(tp_flags: list[bool], n_gt: int) -> Fraction:
    """All-point interpolated AP on exact rationals."""
    if n_gt == 0 or not tp_flags:
        return Fraction(0)
    cum = 0
    precisions: list[Fraction] = []
    recalls: list[Fraction] = []
    for k, tp in enumerate(tp_flags):
        cum += 1 if tp else 0
        precisions.append(Fraction(cum, k + 1))
        recalls.append(Fraction(cum, n_gt))
    # precision envelope from the right
    env = precisions[:]
    for k in range(len(env) - 2, -1, -1):
        env[k] = max(env[k], env[k + 1])
    ap = Fraction(0)
    prev_recall = Fraction(0)
    for k, tp in enumerate(tp_flags):
        if tp:
            ap += (recalls[k] - prev_recall) * env[k]
            prev_recall = recalls[k]
    return ap


def _greedy_tp_flags(ranked_cd: list[np.ndarray], ranked_frames: list[int],
                     n_gts: dict[int, int], threshold: float) -> list[bool]:
    """ranked_cd[k] holds the CDs from ranked prediction k to every GT of its
    frame (same category)."""
    matched: dict[int, set[int]] = {f: set() for f in n_gts}
    flags = []
    for cd, frame in zip(ranked_cd, ranked_frames):
        best_j, best_cd = -1, np.inf
        for j in range(len(cd)):
            if j in matched[frame]:
                continue
            if cd[j] < best_cd:
                best_cd, best_j = cd[j], j
        if best_j >= 0 and best_cd < threshold:
            matched[frame].add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _hungarian_tp_flags(ranked_cd: list[np.ndarray], ranked_frames: list[int],
                        n_gts: dict[int, int], threshold: float) -> list[bool]:
    """Per frame, the max-cardinality minimum-total-CD assignment among
    feasible pairs (CD < threshold)."""
    flags = [False] * len(ranked_cd)
    by_frame: dict[int, list[int]] = {}
    for k, f in enumerate(ranked_frames):
        by_frame.setdefault(f, []).append(k)
    for frame, pred_ranks in by_frame.items():
        n_gt = n_gts[frame]
        if n_gt == 0:
            continue
        cost = np.full((len(pred_ranks), n_gt), _INFEASIBLE)
        for row, k in enumerate(pred_ranks):
            cd = ranked_cd[k]
            for j in range(n_gt):
                if cd[j] < threshold:
                    cost[row, j] = cd[j]
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] < _INFEASIBLE:
                flags[pred_ranks[r]] = True
    return flags


def evaluate_frames(pairs: Sequence[tuple[VectorMap, VectorMap]],
                    cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Evaluate (predictions, ground truth) frame pairs into an EvalReport.

    Categories with neither ground truth nor predictions anywhere in the
    frame set are excluded from the mAP means and flagged in the report.
    """
    all_thresholds = sorted(set(cfg.thresholds_coarse) | set(cfg.thresholds_tight))
    cat_evals: dict[str, CategoryEval] = {}
    included_coarse: list[float] = []
    included_tight: list[float] = []
    for cat in cfg.categories:
        preds: list[tuple[float, int, int, MapInstance]] = []
        gts_by_frame: dict[int, list[MapInstance]] = {}
        for fi, (pred_map, gt_map) in enumerate(pairs):
            gts_by_frame[fi] = [g for g in gt_map.instances if g.category == cat]
            for ii, p in enumerate(pred_map.instances):
                if p.category == cat:
                    preds.append((p.confidence, fi, ii, p))
        preds.sort(key=lambda t: (-t[0], t[1], t[2]))
        n_gt_total = sum(len(g) for g in gts_by_frame.values())
        ce = CategoryEval(name=cat.name, n_gt=n_gt_total, n_pred=len(preds))
        # Chamfer distances computed once, reused across thresholds
        ranked_cd = []
        ranked_frames = []
        for conf, fi, ii, p in preds:
            cds = np.array([chamfer_distance(p, g, cfg.n_eval_points)
                            for g in gts_by_frame[fi]])
            ranked_cd.append(cds)
            ranked_frames.append(fi)
        n_gts = {fi: len(g) for fi, g in gts_by_frame.items()}
        for thr in all_thresholds:
            if cfg.matching == "greedy":
                flags = _greedy_tp_flags(ranked_cd, ranked_frames, n_gts, thr)
            else:
                flags = _hungarian_tp_flags(ranked_cd, ranked_frames, n_gts, thr)
            ce.ap_by_threshold[thr] = float(_average_precision(flags, n_gt_total))
            ce.tp_by_threshold[thr] = int(sum(flags))
        ce.included = (n_gt_total > 0) or (len(preds) > 0)
        cat_evals[cat.name] = ce

    included = [ce for ce in cat_evals.values() if ce.included]
    if included:
        map_coarse = float(sum(ce.mean_ap(cfg.thresholds_coarse)
                               for ce in included) / len(included))
        map_tight = float(sum(ce.mean_ap(cfg.thresholds_tight)
                              for ce in included) / len(included))
    else:
        map_coarse = map_tight = 0.0
    return EvalReport(config=cfg, categories=cat_evals, map_coarse=map_coarse,
                      map_tight=map_tight, n_frames=len(pairs))


def evaluate(preds: VectorMap, gts: VectorMap,
             cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Single-frame convenience wrapper around evaluate_frames."""
    return evaluate_frames([(preds, gts)], cfg)
