"""Deterministic PRNG and synthetic scene generation tests."""
import numpy as np
import pytest

from vecmap.camera import make_surround_rig
from vecmap.errors import GenerationError
from vecmap.map_core import BevGrid, PED
from vecmap.rng import Rng
from vecmap.synth import (
    SceneSpec,
    generate_map,
    make_bundle,
    render_features,
)
from vecmap.targets import rasterize_instances


def xoshiro_reference(seed, n):
    """Independent straight-from-the-reference reimplementation of
    splitmix64-seeded xoshiro256**, kept verbatim simple."""
    mask = (1 << 64) - 1
    sm = seed & mask
    state = []
    for _ in range(4):
        sm = (sm + 0x9E3779B97F4A7C15) & mask
        z = sm
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        state.append(z ^ (z >> 31))
    out = []
    for _ in range(n):
        s0, s1, s2, s3 = state
        x = (s1 * 5) & mask
        x = (((x << 7) | (x >> 57)) & mask) * 9 & mask
        out.append(x)
        t = (s1 << 17) & mask
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & mask
        state = [s0, s1, s2, s3]
    return out


class TestRng:
    def test_stream_matches_reference_implementation(self):
        for seed in (0, 1, 42, 2 ** 63):
            rng = Rng(seed)
            got = [rng.next_u64() for _ in range(50)]
            assert got == xoshiro_reference(seed, 50)

    def test_uniform_range_and_determinism(self):
        a = Rng(7).uniforms(1000)
        b = Rng(7).uniforms(1000)
        assert a == b
        assert all(0.0 <= u < 1.0 for u in a)

    def test_normal_moments_roughly_standard(self):
        vals = np.array(Rng(3).normals(20000))
        assert abs(vals.mean()) < 0.03
        assert abs(vals.std() - 1.0) < 0.03

    def test_spawn_streams_decorrelated(self):
        parent = Rng(5)
        a = parent.spawn(1).uniforms(100)
        b = parent.spawn(2).uniforms(100)
        assert a != b


class TestGenerateMap:
    def test_zero_counts_give_empty_map(self):
        spec = SceneSpec(seed=1, n_crossings=0, n_dividers=0, n_boundaries=0)
        assert generate_map(spec, BevGrid()).instances == ()

    def test_fixed_seed_is_reproducible(self):
        spec = SceneSpec(seed=11, n_crossings=2, n_dividers=2, n_boundaries=2)
        a = generate_map(spec, BevGrid())
        b = generate_map(spec, BevGrid())
        assert a == b

    def test_counts_respected_and_categories_assigned(self):
        spec = SceneSpec(seed=2, n_crossings=2, n_dividers=3, n_boundaries=1)
        vmap = generate_map(spec, BevGrid())
        by_cat = {}
        for inst in vmap.instances:
            by_cat[inst.category.name] = by_cat.get(inst.category.name, 0) + 1
        assert by_cat == {"ped": 2, "div": 3, "bdr": 1}

    def test_every_vertex_inside_grid_range_over_many_scenes(self):
        grid = BevGrid()
        for seed in range(1000):
            spec = SceneSpec(seed=seed, n_crossings=2, n_dividers=2,
                             n_boundaries=2)
            vmap = generate_map(spec, grid)
            for inst in vmap.instances:
                for (x, y) in inst.points:
                    assert grid.x_range[0] <= x <= grid.x_range[1]
                    assert grid.y_range[0] <= y <= grid.y_range[1]

    def test_crossings_are_convex_quads(self):
        spec = SceneSpec(seed=4, n_crossings=3)
        vmap = generate_map(spec, BevGrid())
        for inst in vmap.instances:
            if inst.category == PED:
                assert len(inst.points) == 4

    def test_infeasible_spec_raises(self):
        spec = SceneSpec(seed=0, n_crossings=200, min_crossing_separation=8.0)
        with pytest.raises(GenerationError):
            generate_map(spec, BevGrid())


class TestRenderFeatures:
    def _setup(self):
        grid = BevGrid(width=20, height=40)
        rig = make_surround_rig(2, image_hw=(64, 64), pitch_deg=25.0)
        spec = SceneSpec(seed=6, n_crossings=1, n_dividers=1, n_boundaries=1)
        gt = generate_map(spec, grid)
        return gt, rig, grid, spec

    def test_empty_map_zero_noise_gives_all_zero_features(self):
        grid = BevGrid(width=20, height=40)
        rig = make_surround_rig(2, image_hw=(64, 64))
        spec = SceneSpec(seed=1, n_crossings=0, n_dividers=0, n_boundaries=0,
                         noise=0.0)
        gt = generate_map(spec, grid)
        f_pv, f_bev = render_features(gt, rig, grid, spec, (16, 16), 16)
        np.testing.assert_array_equal(f_pv, 0.0)
        np.testing.assert_array_equal(f_bev, 0.0)

    def test_identical_seed_bit_identical_features(self):
        gt, rig, grid, spec = self._setup()
        a_pv, a_bev = render_features(gt, rig, grid, spec, (16, 16), 16)
        b_pv, b_bev = render_features(gt, rig, grid, spec, (16, 16), 16)
        assert a_pv.tobytes() == b_pv.tobytes()
        assert a_bev.tobytes() == b_bev.tobytes()

    def test_zero_noise_energy_concentrated_near_geometry(self):
        gt, rig, grid, _ = self._setup()
        spec = SceneSpec(seed=6, n_crossings=1, n_dividers=1, n_boundaries=1,
                         noise=0.0)
        _, f_bev = render_features(gt, rig, grid, spec, (16, 16), 16)
        energy = (f_bev ** 2).sum(axis=2)
        raster = rasterize_instances(gt, grid, line_width=1).mask.max(axis=2)
        near = np.zeros_like(raster, dtype=bool)
        rows, cols = np.nonzero(raster)
        for r, c in zip(rows, cols):
            near[max(0, r - 2):r + 3, max(0, c - 2):c + 3] = True
        assert energy[near].sum() >= 0.95 * energy.sum()

    def test_bundle_shapes_match_request(self):
        gt, rig, grid, spec = self._setup()
        bundle = make_bundle(spec, rig, grid, (16, 16), 16, frame_id="f0")
        assert bundle.f_pv.shape == (2, 16, 16, 16)
        assert bundle.f_bev.shape == (40, 20, 16)
        assert bundle.gt.frame_id == "f0"

    def test_spec_round_trip(self):
        spec = SceneSpec(seed=9, n_crossings=2, noise=0.125)
        assert SceneSpec.from_dict(spec.to_dict()) == spec
