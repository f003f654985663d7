"""Loss tests: closed forms, finite-difference gradients, and an exhaustive
matching oracle."""
import itertools
import math

import numpy as np
import pytest

from oracles import fd_check
from vecmap.map_core import (
    BDR,
    BevGrid,
    DIV,
    PED,
    VectorMap,
    make_instance,
    resample_polyline,
)
from vecmap.losses import (
    heatmap_loss,
    matching_losses,
    ris_loss,
    total_loss,
)
from vecmap.model import toy_config
from vecmap.targets import HeatmapTarget, rasterize_instances
from vecmap.tensor import Tensor


def loss_cfg(**overrides):
    return toy_config(**overrides)


def soft_target(shape, peaks, sigma=2.0):
    """Gaussian-decayed target with exact-1.0 peaks, like the generator."""
    t = np.zeros(shape)
    n, h, w, c = shape
    for (vi, py, px, ch) in peaks:
        for r in range(h):
            for q in range(w):
                d2 = (r - py) ** 2 + (q - px) ** 2
                if d2 <= (3 * sigma) ** 2:
                    t[vi, r, q, ch] = max(t[vi, r, q, ch],
                                          math.exp(-d2 / (2 * sigma ** 2)))
    return HeatmapTarget(heatmap=t, sigma=sigma)


class TestHeatmapLoss:
    def test_perfect_prediction_is_tiny(self):
        target = soft_target((1, 8, 8, 3), [(0, 3, 4, 1)])
        logits = np.where(target.heatmap == 1.0, 40.0, -40.0)
        loss = heatmap_loss(Tensor(logits), target)
        assert loss.item() < 1e-6

    def test_single_pixel_closed_form(self):
        # one positive pixel at logit 0, everything else saturated negative:
        # loss = (1 - 1/2)^alpha * log(2) = 0.25 * ln 2 with alpha = 2
        t = np.zeros((1, 8, 8, 3))
        t[0, 4, 4, 0] = 1.0
        logits = np.full_like(t, -40.0)
        logits[0, 4, 4, 0] = 0.0
        loss = heatmap_loss(Tensor(logits), HeatmapTarget(t, 2.0))
        assert abs(loss.item() - 0.25 * math.log(2.0)) < 1e-9

    def test_gradient_matches_fd(self):
        target = soft_target((1, 8, 8, 3), [(0, 2, 2, 0), (0, 5, 6, 2)])
        rng = np.random.default_rng(0)
        logits = Tensor(rng.uniform(-2, 2, (1, 8, 8, 3)), requires_grad=True)
        fd_check(lambda: heatmap_loss(logits, target), [logits])

    def test_binarized_mode_ignores_soft_ring(self):
        target = soft_target((1, 6, 6, 3), [(0, 3, 3, 1)])
        logits = np.zeros((1, 6, 6, 3))
        soft = heatmap_loss(Tensor(logits), target, binarize=False)
        hard = heatmap_loss(Tensor(logits), target, binarize=True)
        assert soft.item() != hard.item()  # the ring downweighting differs

    def test_normalized_by_positive_count(self):
        t = np.zeros((1, 4, 4, 3))
        t[0, 1, 1, 0] = 1.0
        one = heatmap_loss(Tensor(np.zeros_like(t)), HeatmapTarget(t, 2.0))
        t2 = t.copy()
        t2[0, 2, 2, 0] = 1.0
        two = heatmap_loss(Tensor(np.zeros_like(t2)), HeatmapTarget(t2, 2.0))
        assert two.item() < 2 * one.item()


def grid_10x20():
    return BevGrid(x_range=(-5, 5), y_range=(-10, 10), width=10, height=20)


class TestRisLoss:
    def test_empty_vs_empty_is_zero(self):
        grid = grid_10x20()
        gt = rasterize_instances(VectorMap(), grid)
        points = Tensor(np.zeros((0, 4, 2)))
        logits = Tensor(np.zeros((0, 3)))
        assert ris_loss(points, logits, gt, grid).item() < 1e-9

    def test_exact_prediction_with_confident_class_is_tiny(self):
        grid = grid_10x20()
        gt_map = VectorMap(instances=(
            make_instance([(-3, -6), (3, 6)], DIV),))
        gt = rasterize_instances(gt_map, grid)
        pts = resample_polyline(gt_map.instances[0], 6).points_array()
        points = Tensor(pts[None])
        logits = np.full((1, 3), -40.0)
        logits[0, DIV.id] = 40.0
        loss = ris_loss(points, Tensor(logits), gt, grid)
        assert loss.item() < 1e-4

    def test_wrong_confidence_is_penalized(self):
        grid = grid_10x20()
        gt_map = VectorMap(instances=(make_instance([(-3, -6), (3, 6)], DIV),))
        gt = rasterize_instances(gt_map, grid)
        pts = resample_polyline(gt_map.instances[0], 6).points_array()
        points = Tensor(pts[None])
        confident = np.full((1, 3), -40.0)
        confident[0, DIV.id] = 40.0
        hesitant = np.full((1, 3), -40.0)
        hesitant[0, DIV.id] = 0.0
        good = ris_loss(points, Tensor(confident), gt, grid).item()
        bad = ris_loss(points, Tensor(hesitant), gt, grid).item()
        assert bad > good

    def test_gradient_reaches_class_scores_only_and_matches_fd(self):
        grid = grid_10x20()
        gt_map = VectorMap(instances=(
            make_instance([(-2, -4), (2, 4)], DIV),
            make_instance([(-3, 2), (0, 6), (3, 2)], PED),
        ))
        gt = rasterize_instances(gt_map, grid)
        rng = np.random.default_rng(1)
        points = Tensor(rng.uniform(-4, 8, (3, 4, 2)), requires_grad=True)
        logits = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)

        def build():
            return ris_loss(points, logits, gt, grid)

        fd_check(build, [logits])
        from vecmap.tensor import backward, zero_grads
        zero_grads([points, logits])
        backward(build())
        assert points.grad is None or np.all(points.grad == 0.0)


def l1_orderings_oracle(pred, gt_pts, closed):
    """Min mean-per-point L1 over chain equivalences, via itertools."""
    n = len(gt_pts)
    orders = []
    if closed:
        idx = list(range(n))
        for s in range(n):
            rolled = idx[s:] + idx[:s]
            orders.append(rolled)
            orders.append(rolled[::-1])
    else:
        orders = [list(range(n)), list(range(n - 1, -1, -1))]
    best = math.inf
    for o in orders:
        cost = sum(abs(pred[k][0] - gt_pts[o[k]][0])
                   + abs(pred[k][1] - gt_pts[o[k]][1]) for k in range(n)) / n
        best = min(best, cost)
    return best


def match_cost_oracle(points, logits, gt, cfg):
    """Exhaustive min-cost injective assignment of predictions to GTs."""
    probs = 1.0 / (1.0 + np.exp(-logits))
    n_gt = len(gt.instances)
    gts = [resample_polyline(g, points.shape[1]) for g in gt.instances]

    def pair_cost(i, j):
        g = gts[j]
        p = min(max(probs[i, g.category.id], 1e-12), 1 - 1e-12)
        pos = -cfg.focal_alpha * (1 - p) ** cfg.focal_gamma * math.log(p)
        neg = -(1 - cfg.focal_alpha) * p ** cfg.focal_gamma * math.log(1 - p)
        l1 = l1_orderings_oracle(points[i], g.points_array(),
                                 g.category.is_closed)
        return (cfg.cost_class_weight * (pos - neg)
                + cfg.cost_points_weight * l1)

    best_total, best_assign = math.inf, None
    for perm in itertools.permutations(range(points.shape[0]), n_gt):
        total = sum(pair_cost(perm[j], j) for j in range(n_gt))
        if total < best_total:
            best_total, best_assign = total, sorted(
                (perm[j], j) for j in range(n_gt))
    return best_total, best_assign


class TestMatchingLosses:
    def _scene(self, rng, n_gt=3):
        cats = [PED, DIV, BDR]
        gts = []
        for k in range(n_gt):
            cat = cats[k % 3]
            if cat.is_closed:
                cx, cy = rng.uniform(-8, 8, 2)
                gts.append(make_instance(
                    [(cx - 1, cy - 1), (cx + 1, cy - 1), (cx + 1, cy + 1),
                     (cx - 1, cy + 1)], cat))
            else:
                x0, y0 = rng.uniform(-10, 10, 2)
                gts.append(make_instance(
                    [(x0, y0), (x0 + 1, y0 + 3), (x0, y0 + 6)], cat))
        return VectorMap(instances=tuple(gts))

    def test_perfect_predictions(self):
        cfg = loss_cfg(n_instances=3, n_points=6)
        rng = np.random.default_rng(2)
        gt = self._scene(rng)
        pts = np.stack([resample_polyline(g, 6).points_array()
                        for g in gt.instances])
        logits = np.full((3, 3), -12.0)
        for i, g in enumerate(gt.instances):
            logits[i, g.category.id] = 12.0
        res = matching_losses(Tensor(pts), Tensor(logits), gt, cfg)
        assert res.l_pts.item() == 0.0
        assert res.l_cls.item() < 1e-3
        assert res.assignment == [(0, 0), (1, 1), (2, 2)]

    def test_uniform_shift_gives_shift_as_l1(self):
        cfg = loss_cfg(n_instances=1, n_points=5)
        gt = VectorMap(instances=(make_instance([(0, -4), (0, 4)], DIV),))
        shifted = resample_polyline(gt.instances[0], 5).points_array()
        shifted[:, 0] += 0.1
        logits = np.array([[ -9.0, 9.0, -9.0]])
        res = matching_losses(Tensor(shifted[None]), Tensor(logits), gt, cfg)
        assert abs(res.l_pts.item() - 0.1) < 1e-12

    def test_assignment_matches_exhaustive_oracle(self):
        cfg = loss_cfg(n_instances=3, n_points=4)
        rng = np.random.default_rng(3)
        for trial in range(10):
            gt = self._scene(rng)
            pts = rng.uniform(-10, 10, (3, 4, 2))
            logits = rng.uniform(-3, 3, (3, 3))
            res = matching_losses(Tensor(pts), Tensor(logits), gt, cfg)
            want_total, want_assign = match_cost_oracle(pts, logits, gt, cfg)
            assert res.assignment == want_assign

    def test_assignment_invariant_to_prediction_permutation(self):
        cfg = loss_cfg(n_instances=3, n_points=4)
        rng = np.random.default_rng(4)
        gt = self._scene(rng)
        pts = rng.uniform(-10, 10, (3, 4, 2))
        logits = rng.uniform(-3, 3, (3, 3))
        base = matching_losses(Tensor(pts), Tensor(logits), gt, cfg)
        perm = [2, 0, 1]
        res = matching_losses(Tensor(pts[perm]), Tensor(logits[perm]), gt, cfg)
        relabeled = sorted((perm.index(i), j) for i, j in base.assignment)
        assert res.assignment == relabeled
        assert abs(res.l_pts.item() - base.l_pts.item()) < 1e-12
        assert abs(res.l_cls.item() - base.l_cls.item()) < 1e-12

    def test_l1_invariant_to_gt_reversal_and_rotation(self):
        cfg = loss_cfg(n_instances=2, n_points=4)
        rng = np.random.default_rng(5)
        open_gt = make_instance([(0, 0), (1, 2), (2, 5)], DIV)
        closed_gt = make_instance([(-2, -2), (2, -2), (2, 2), (-2, 2)], PED)
        pts = rng.uniform(-4, 6, (2, 4, 2))
        logits = rng.uniform(-2, 2, (2, 3))

        def run(gts):
            return matching_losses(Tensor(pts), Tensor(logits),
                                   VectorMap(instances=tuple(gts)),
                                   cfg).l_pts.item()

        base = run([open_gt, closed_gt])
        rev_open = make_instance(list(reversed(open_gt.points)), DIV)
        rot_closed = make_instance(closed_gt.points[2:] + closed_gt.points[:2],
                                   PED)
        assert abs(run([rev_open, rot_closed]) - base) < 1e-12

    def test_gradients_match_fd(self):
        cfg = loss_cfg(n_instances=2, n_points=3)
        rng = np.random.default_rng(6)
        gt = VectorMap(instances=(
            make_instance([(0, 0), (2, 3), (1, 6)], DIV),
            make_instance([(-3, -3), (3, -3), (3, 3), (-3, 3)], PED),
        ))
        pts = Tensor(rng.uniform(-5, 7, (2, 3, 2)), requires_grad=True)
        logits = Tensor(rng.uniform(-1, 1, (2, 3)), requires_grad=True)

        def build():
            res = matching_losses(pts, logits, gt, cfg)
            return total_loss(res.l_cls, res.l_pts).total

        fd_check(build, [pts, logits])

    def test_no_gt_pushes_everything_to_background(self):
        cfg = loss_cfg(n_instances=2, n_points=3)
        pts = Tensor(np.zeros((2, 3, 2)))
        logits = Tensor(np.full((2, 3), -11.0))
        res = matching_losses(pts, logits, VectorMap(), cfg)
        assert res.assignment == []
        assert res.l_pts.item() == 0.0
        assert res.l_cls.item() < 1e-3


class TestTotalLoss:
    def test_all_zero(self):
        lb = total_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0), Tensor(0.0))
        assert lb.total.item() == 0.0

    def test_heatmap_weight(self):
        lb = total_loss(Tensor(0.0), Tensor(0.0), l_heat=Tensor(1.0))
        assert abs(lb.total.item() - 0.1) < 1e-15

    def test_raster_weight(self):
        lb = total_loss(Tensor(0.0), Tensor(0.0), l_ris=Tensor(1.0))
        assert abs(lb.total.item() - 15.0) < 1e-12

    def test_scalars_report(self):
        lb = total_loss(Tensor(0.25), Tensor(0.5), l_heat=Tensor(1.0),
                        l_ris=Tensor(0.1))
        s = lb.scalars()
        assert s["core"] == pytest.approx(0.75)
        assert s["total"] == pytest.approx(0.25 + 0.5 + 0.1 + 1.5)
