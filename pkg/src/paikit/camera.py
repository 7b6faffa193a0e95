"""Virtual pinhole cameras: intrinsics, poses along a trajectory, projection.

Camera frame convention: x right, y down, z forward (looking direction).
Pixel coordinates are edge-origin: pixel (c, r) spans [c, c+1) x [r, r+1),
so a projection at (u, v) lands in pixel (floor(u), floor(v)) whose center
is (floor(u)+0.5, floor(v)+0.5).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .pointcloud import Trajectory

log = logging.getLogger(__name__)

DEFAULT_FOCAL_MM = 4.15
DEFAULT_PIXEL_SIZE_UM = 1.22
DEFAULT_VIEW_WIDTH = 4032
DEFAULT_VIEW_HEIGHT = 3024
DEFAULT_PITCH_DEG = 10.0
DEFAULT_CAM_HEIGHT_M = 2.0

# Station view order; the flat pose list from plan_cameras follows it.
VIEW_KINDS = ("front", "left", "right")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole intrinsics; f in millimeters, ps in micrometers."""

    f: float = DEFAULT_FOCAL_MM
    ps: float = DEFAULT_PIXEL_SIZE_UM
    width: int = DEFAULT_VIEW_WIDTH
    height: int = DEFAULT_VIEW_HEIGHT

    def __post_init__(self):
        if not (self.f > 0 and self.ps > 0 and self.width > 0 and self.height > 0):
            raise ValueError("intrinsics must be positive")

    @property
    def focal_px(self) -> float:
        # f [mm] over ps [um]: 1 mm = 1000 um
        return self.f * 1000.0 / self.ps

    @property
    def matrix(self) -> np.ndarray:
        fp = self.focal_px
        return np.array(
            [
                [fp, 0.0, self.width / 2.0],
                [0.0, fp, self.height / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rotation R and camera position T in world coordinates."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        T = np.asarray(self.position, dtype=np.float64)
        if R.shape != (3, 3) or T.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and 3-vector position")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal (1e-9)")
        if not math.isclose(float(np.linalg.det(R)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation must have determinant +1 (1e-9)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", T)
        R.setflags(write=False)
        T.setflags(write=False)

    @property
    def joint_matrix(self) -> np.ndarray:
        """The 3x4 [R | -R T] used by the projection equation."""
        return np.hstack([self.rotation, (-self.rotation @ self.position)[:, None]])


@dataclass(frozen=True)
class ProjectedPixel:
    u: float
    v: float
    s: float  # camera-frame depth; positive for anything rendered


def pose_looking(position, forward, pitch_deg: float = 0.0) -> CameraPose:
    """Pose at `position` looking along the horizontal `forward` direction,
    tilted down by `pitch_deg`, zero roll (image x stays horizontal)."""
    position = np.asarray(position, dtype=np.float64)
    f = np.asarray(forward, dtype=np.float64)
    h = np.array([f[0], f[1], 0.0])
    norm = np.linalg.norm(h)
    if norm < 1e-12:
        raise ValueError("forward direction has no horizontal component")
    h /= norm
    pitch = math.radians(pitch_deg)
    z_world = np.array([0.0, 0.0, 1.0])
    fwd = math.cos(pitch) * h - math.sin(pitch) * z_world
    right = np.cross(fwd, z_world)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.vstack([right, down, fwd])
    return CameraPose(R, position)


def _yaw(v: np.ndarray, degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])


@dataclass(frozen=True)
class Station:
    index: int
    arc_length: float
    poses: Tuple[CameraPose, ...]  # front, left, right


def plan_stations(
    traj: Trajectory,
    spacing: float,
    cam_height: float,
    pitch_deg: float = DEFAULT_PITCH_DEG,
) -> List[Station]:
    """Camera stations every `spacing` of arc length, starting at 0,
    strictly before the trajectory end. Each carries front/left/right poses
    at trajectory height plus `cam_height`."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if traj.length < spacing:
        raise ValueError(
            f"trajectory length {traj.length:.3f} shorter than station spacing {spacing}"
        )
    stations = []
    k = 0
    index = 0
    while True:
        s = k * spacing
        if s >= traj.length:
            break
        k += 1
        tangent = traj.tangent_at(s)
        if np.linalg.norm(tangent[:2]) < 1e-12:
            log.warning("station at arc length %.3f skipped: vertical tangent", s)
            continue
        position = traj.point_at(s) + np.array([0.0, 0.0, cam_height])
        poses = tuple(
            pose_looking(position, _yaw(tangent, yaw_deg), pitch_deg)
            for yaw_deg in (0.0, 90.0, -90.0)
        )
        stations.append(Station(index, s, poses))
        index += 1
    return stations


def plan_cameras(
    traj: Trajectory,
    spacing: float,
    cam_height: float,
    pitch_deg: float = DEFAULT_PITCH_DEG,
) -> List[CameraPose]:
    """Flat pose list: station order, front/left/right within each station."""
    return [
        pose
        for station in plan_stations(traj, spacing, cam_height, pitch_deg)
        for pose in station.poses
    ]


def project_point(p, intr: CameraIntrinsics, pose: CameraPose) -> Optional[ProjectedPixel]:
    """Project one point; None when at or behind the camera plane."""
    world = np.array([p.x, p.y, p.z]) if hasattr(p, "x") else np.asarray(p, dtype=np.float64)
    cam = pose.rotation @ (world - pose.position)
    s = float(cam[2])
    if s <= 0.0:
        return None
    fp = intr.focal_px
    u = fp * cam[0] / s + intr.width / 2.0
    v = fp * cam[1] / s + intr.height / 2.0
    return ProjectedPixel(float(u), float(v), s)


def project_points(
    xyz: np.ndarray, intr: CameraIntrinsics, pose: CameraPose
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection: (u, v, s) arrays; s <= 0 marks behind-camera
    (u, v are NaN there)."""
    cam = (pose.rotation @ (xyz - pose.position).T).T
    s = cam[:, 2]
    fp = intr.focal_px
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(s > 0, fp * cam[:, 0] / s + intr.width / 2.0, np.nan)
        v = np.where(s > 0, fp * cam[:, 1] / s + intr.height / 2.0, np.nan)
    return u, v, s
