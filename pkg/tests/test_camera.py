"""Camera geometry: projection, ground unprojection, visibility."""
import math

import numpy as np
import pytest

from vecmap.camera import (
    CameraModel,
    CameraRig,
    make_surround_rig,
    project,
    project_homogeneous,
    rig_from_json,
    rig_to_json,
    unproject_ground,
    visible_cameras,
)
from vecmap.errors import ContractError


def identity_cam(fx=1.0, fy=1.0, cx=0.0, cy=0.0, hw=(100, 100)):
    return CameraModel(camera_id="c", fx=fx, fy=fy, cx=cx, cy=cy,
                       extrinsics=tuple(map(tuple, np.eye(4).tolist())),
                       image_hw=hw)


def down_cam(height=2.0, hw=(64, 64)):
    """Camera at (0, 0, height) looking straight down, +x right, +y forward
    mapped so that image v grows with ego -y."""
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, 0.0, -1.0]])
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = -rot @ np.array([0.0, 0.0, height])
    return CameraModel(camera_id="down", fx=40.0, fy=40.0, cx=32.0, cy=32.0,
                       extrinsics=tuple(map(tuple, ext.tolist())), image_hw=hw)


class TestProject:
    def test_optical_axis_point(self):
        assert project(identity_cam(), (0.0, 0.0, 1.0)) == (0.0, 0.0, 1.0)

    def test_zero_depth_is_behind(self):
        assert project(identity_cam(), (0.3, -0.2, 0.0)) is None
        assert project(identity_cam(), (0.0, 0.0, -5.0)) is None

    def test_scale_invariance_of_projection_matrix(self):
        rig = make_surround_rig(3)
        cam = rig.cameras[0]  # looks along +y
        p = cam.projection_matrix()
        pt = (2.0, 5.0, 0.0)
        base = project_homogeneous(p, pt)
        for lam in (0.5, 3.0, 1e4):
            scaled = project_homogeneous(lam * p, pt)
            assert scaled is not None and base is not None
            assert abs(scaled[0] - base[0]) < 1e-12 * max(1, abs(base[0]))
            assert abs(scaled[1] - base[1]) < 1e-12 * max(1, abs(base[1]))

    def test_project_matches_homogeneous_path(self):
        cam = make_surround_rig(5).cameras[2]
        pt = (1.0, -4.0, 0.0)
        res = project(cam, pt)
        hom = project_homogeneous(cam.projection_matrix(), pt)
        assert res is not None and hom is not None
        assert abs(res[0] - hom[0]) < 1e-9 and abs(res[1] - hom[1]) < 1e-9

    def test_invalid_rotation_rejected(self):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        with pytest.raises(ContractError):
            CameraModel(camera_id="x", fx=1, fy=1, cx=0, cy=0,
                        extrinsics=tuple(map(tuple, bad.tolist())),
                        image_hw=(10, 10))


class TestUnprojectGround:
    def test_round_trip_on_random_ground_points(self):
        rig = make_surround_rig(6)
        rng = np.random.default_rng(0)
        checked = 0
        worst = 0.0
        while checked < 1000:
            x = rng.uniform(-15, 15)
            y = rng.uniform(-30, 30)
            for cam in rig.cameras:
                res = project(cam, (x, y, 0.0))
                if res is None:
                    continue
                u, v, _ = res
                back = unproject_ground(cam, u, v, 0.0)
                assert back is not None
                worst = max(worst, math.hypot(back[0] - x, back[1] - y))
                checked += 1
        assert worst < 1e-9

    def test_principal_point_of_down_camera_hits_foot_point(self):
        cam = down_cam(height=2.0)
        hit = unproject_ground(cam, 32.0, 32.0, 0.0)
        assert hit is not None
        assert abs(hit[0]) < 1e-12 and abs(hit[1]) < 1e-12

    def test_ray_parallel_to_plane_misses(self):
        cam = identity_cam()  # optical axis along ego z=... axis: ray in z=0 plane
        # identity extrinsics: camera at origin, ray direction has z-component
        # (v - cy)/fy; v = cy gives a ray parallel to the ground plane
        assert unproject_ground(cam, 5.0, 0.0, -1.0) is None

    def test_intersection_behind_camera_misses(self):
        cam = down_cam(height=2.0)
        # plane above the camera: ray looking down never reaches z = 3
        assert unproject_ground(cam, 32.0, 32.0, 3.0) is None


class TestVisibleCameras:
    def test_point_behind_all_cameras(self):
        rig = make_surround_rig(2)  # forward and backward cameras
        # directly above the rig: outside both frusta
        assert visible_cameras(rig, (0.0, 0.0, 50.0)) == []

    def test_overlap_of_adjacent_cameras_brute_force(self):
        rig = make_surround_rig(6, hfov_deg=100.0)  # 60 deg apart, overlap
        rng = np.random.default_rng(1)
        found_multi = 0
        for _ in range(500):
            p = (rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0)
            vis = visible_cameras(rig, p)
            # brute-force frustum test, camera by camera
            expected = []
            for cam in rig.cameras:
                res = project(cam, p)
                if res is None:
                    continue
                u, v, _ = res
                h, w = cam.image_hw
                if 0 <= u < w and 0 <= v < h:
                    expected.append(cam.camera_id)
            assert [c for c, _, _ in vis] == expected
            if len(vis) >= 2:
                found_multi += 1
        assert found_multi > 0, "rig should have overlapping frusta"

    def test_ego_origin_matches_frustum_test(self):
        rig = make_surround_rig(6)
        vis = visible_cameras(rig, (0.0, 0.0, 0.0))
        expected = []
        for cam in rig.cameras:
            res = project(cam, (0.0, 0.0, 0.0))
            if res is not None:
                u, v, _ = res
                h, w = cam.image_hw
                if 0 <= u < w and 0 <= v < h:
                    expected.append(cam.camera_id)
        assert [c for c, _, _ in vis] == expected

    def test_result_independent_of_camera_order(self):
        rig = make_surround_rig(4)
        reordered = CameraRig(cameras=tuple(reversed(rig.cameras)))
        p = (3.0, 8.0, 0.0)
        a = {c for c, _, _ in visible_cameras(rig, p)}
        b = {c for c, _, _ in visible_cameras(reordered, p)}
        assert a == b


class TestRigSerialization:
    def test_round_trip(self):
        rig = make_surround_rig(6)
        assert rig_from_json(rig_to_json(rig)) == rig

    def test_deterministic_bytes(self):
        rig = make_surround_rig(3)
        assert rig_to_json(rig) == rig_to_json(rig)

    def test_duplicate_ids_rejected(self):
        cam = make_surround_rig(1).cameras[0]
        with pytest.raises(ContractError):
            CameraRig(cameras=(cam, cam))
