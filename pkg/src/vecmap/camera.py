"""Multi-camera pinhole rig: ego-frame 3D points to per-camera pixels.

Frames: ego x lateral, y longitudinal (forward), z up. Camera frames follow
the usual computer-vision convention: +z optical axis, +x right, +y down.
The extrinsic matrix maps ego homogeneous coordinates to camera coordinates.
Projection applies the intrinsics after the perspective divide; a point with
camera-frame depth <= DEPTH_EPS is reported as behind.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, IOFormatError

DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class CameraModel:
    camera_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsics: tuple  # 4x4 ego-to-camera rigid transform, row-major
    image_hw: tuple[int, int]

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        ext = self.extrinsics_array()
        rot = ext[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ContractError(
                f"extrinsic rotation of {self.camera_id!r} is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ContractError(
                f"extrinsic rotation of {self.camera_id!r} must have det +1")
        if not np.allclose(ext[3], [0, 0, 0, 1]):
            raise ContractError("extrinsics bottom row must be [0, 0, 0, 1]")

    def extrinsics_array(self) -> np.ndarray:
        return np.asarray(self.extrinsics, dtype=np.float64).reshape(4, 4)

    def intrinsics_array(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix mapping homogeneous ego points to homogeneous pixels."""
        return self.intrinsics_array() @ self.extrinsics_array()[:3, :]


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[CameraModel, ...]

    def __post_init__(self) -> None:
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ContractError("camera ids must be unique")

    def __len__(self) -> int:
        return len(self.cameras)


def project(cam: CameraModel,
            p3: Sequence[float]) -> Optional[tuple[float, float, float]]:
    """Project an ego-frame 3D point; returns (u, v, depth) in pixels/meters
    or None when the point is at or behind the camera plane."""
    ext = cam.extrinsics_array()
    pc = ext[:3, :3] @ np.asarray(p3, dtype=np.float64) + ext[:3, 3]
    depth = pc[2]
    if depth <= DEPTH_EPS:
        return None
    u = cam.fx * pc[0] / depth + cam.cx
    v = cam.fy * pc[1] / depth + cam.cy
    return (float(u), float(v), float(depth))


def project_homogeneous(p_matrix: np.ndarray,
                        p3: Sequence[float]) -> Optional[tuple[float, float]]:
    """Apply a 3x4 projection matrix with the perspective divide; None when
    the homogeneous scale is not positive."""
    hom = p_matrix @ np.array([p3[0], p3[1], p3[2], 1.0])
    if hom[2] <= DEPTH_EPS:
        return None
    return (float(hom[0] / hom[2]), float(hom[1] / hom[2]))


def unproject_ground(cam: CameraModel, u: float, v: float,
                     z_ground: float = 0.0) -> Optional[tuple[float, float]]:
    """Intersect the viewing ray of pixel (u, v) with the plane z = z_ground.
    Returns the ego-frame (x, y), or None when the ray is parallel to the
    plane or the intersection is behind the camera."""
    ext = cam.extrinsics_array()
    rot = ext[:3, :3]
    center = -rot.T @ ext[:3, 3]
    ray_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    ray_ego = rot.T @ ray_cam
    if abs(ray_ego[2]) < 1e-15:
        return None
    t = (z_ground - center[2]) / ray_ego[2]
    if t <= DEPTH_EPS:
        return None
    hit = center + t * ray_ego
    return (float(hit[0]), float(hit[1]))


def in_image(cam: CameraModel, u: float, v: float) -> bool:
    h, w = cam.image_hw
    return 0.0 <= u < w and 0.0 <= v < h


def visible_cameras(rig: CameraRig,
                    p3: Sequence[float]) -> list[tuple[str, float, float]]:
    """All cameras that see the point: projection succeeds and the pixel lies
    inside the image bounds. Empty list is valid."""
    out = []
    for cam in rig.cameras:
        res = project(cam, p3)
        if res is None:
            continue
        u, v, _ = res
        if in_image(cam, u, v):
            out.append((cam.camera_id, u, v))
    return out


def make_surround_rig(n_cameras: int = 6, image_hw: tuple[int, int] = (64, 64),
                      height: float = 1.6, pitch_deg: float = 18.0,
                      hfov_deg: float = 100.0) -> CameraRig:
    """Evenly spaced surround rig at the ego origin, each camera pitched down
    so the ground plane is visible. Camera 0 looks along +y (forward)."""
    h, w = image_hw
    cams = []
    for i in range(n_cameras):
        yaw = 2.0 * math.pi * i / n_cameras
        pitch = math.radians(pitch_deg)
        fwd = np.array([math.sin(yaw) * math.cos(pitch),
                        math.cos(yaw) * math.cos(pitch),
                        -math.sin(pitch)])
        right = np.array([math.cos(yaw), -math.sin(yaw), 0.0])
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])  # rows: camera axes in ego coords
        center = np.array([0.0, 0.0, height])
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ center
        fx = (w / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        cams.append(CameraModel(
            camera_id=f"cam{i}", fx=fx, fy=fx, cx=w / 2.0, cy=h / 2.0,
            extrinsics=tuple(map(tuple, ext.tolist())), image_hw=(h, w)))
    return CameraRig(cameras=tuple(cams))


# ---------------------------------------------------------------------------
# rig description file
# ---------------------------------------------------------------------------

def rig_to_dict(rig: CameraRig) -> dict:
    return {"cameras": [{
        "camera_id": c.camera_id,
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "extrinsics": [list(row) for row in c.extrinsics],
        "image_hw": list(c.image_hw),
    } for c in rig.cameras]}


def rig_from_dict(d: dict) -> CameraRig:
    try:
        cams = tuple(CameraModel(
            camera_id=str(c["camera_id"]),
            fx=float(c["fx"]), fy=float(c["fy"]),
            cx=float(c["cx"]), cy=float(c["cy"]),
            extrinsics=tuple(tuple(float(v) for v in row)
                             for row in c["extrinsics"]),
            image_hw=(int(c["image_hw"][0]), int(c["image_hw"][1])),
        ) for c in d["cameras"])
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise IOFormatError(f"malformed rig record: {e}") from e
    return CameraRig(cameras=cams)


def rig_to_json(rig: CameraRig) -> str:
    return json.dumps(rig_to_dict(rig), sort_keys=True, indent=2) + "\n"


def rig_from_json(text: str) -> CameraRig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise IOFormatError(f"invalid rig JSON: {e}") from e
    return rig_from_dict(doc)
