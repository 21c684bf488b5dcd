"""Geometric novel-view rendering: pinhole projection, z-buffer splatting,
multi-frame fusion, hole metrics, and random-mask mitigation.

Rendering is geometry-only. A camera pose is a vehicle pose (camera-to-world,
heading about the vertical axis, looking along the heading, image y pointing
down); depth is the camera-frame forward distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError
from .scene import PointCloud, Pose

NEAR_PLANE_M = 0.1
HOLE = math.inf  # internal per-pixel marker for "no geometry"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("image must be at least 1x1")


@dataclass
class DepthMap:
    """Per-pixel depth in meters; holes are +inf internally, -1 in exports."""

    data: np.ndarray  # (height, width) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise InvalidParameterError("depth map must be 2-D")
        finite = np.isfinite(self.data)
        if finite.any() and (self.data[finite] <= 0).any():
            raise InvalidParameterError("non-hole depths must be positive")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def hole_mask(self) -> np.ndarray:
        return ~np.isfinite(self.data)

    def hole_fraction(self) -> float:
        return float(self.hole_mask().mean())

    def non_hole_count(self) -> int:
        return int(np.isfinite(self.data).sum())

    def copy(self) -> "DepthMap":
        return DepthMap(self.data.copy())

    def to_ascii_grid(self) -> str:
        """Plain-text grid (width height header, -1 for holes) for plotting."""
        lines = [f"{self.width} {self.height}"]
        for row in self.data:
            lines.append(" ".join("-1" if not math.isfinite(v) else f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def empty(intrinsics: CameraIntrinsics) -> "DepthMap":
        return DepthMap(np.full((intrinsics.height, intrinsics.width), HOLE))


@dataclass
class RenderReport:
    depth: DepthMap
    hole_fraction: float
    points_rendered: int


def _camera_basis(pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(origin, right, down, forward) of the camera frame in world coordinates."""
    fwd = pose.forward()
    right = np.array([math.sin(pose.heading), -math.cos(pose.heading), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    return pose.position, right, down, fwd


def world_to_camera(pose: Pose, points: np.ndarray) -> np.ndarray:
    """(n, 3) world points to camera coordinates (x right, y down, z forward)."""
    origin, right, down, fwd = _camera_basis(pose)
    rel = np.atleast_2d(points) - origin
    return np.column_stack([rel @ right, rel @ down, rel @ fwd])


def camera_to_world(pose: Pose, cam_points: np.ndarray) -> np.ndarray:
    origin, right, down, fwd = _camera_basis(pose)
    cam = np.atleast_2d(cam_points)
    return origin + cam[:, 0:1] * right + cam[:, 1:2] * down + cam[:, 2:3] * fwd


def project_points(
    intrinsics: CameraIntrinsics, pose: Pose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection: (u, v, depth, in_view) for (n, 3) world points."""
    cam = world_to_camera(pose, points)
    z = cam[:, 2]
    safe_z = np.where(z > NEAR_PLANE_M, z, 1.0)
    u = intrinsics.fx * cam[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / safe_z + intrinsics.cy
    in_view = (
        (z > NEAR_PLANE_M)
        & (u >= 0)
        & (u < intrinsics.width)
        & (v >= 0)
        & (v < intrinsics.height)
    )
    return u, v, z, in_view


def project_point(
    intrinsics: CameraIntrinsics, camera_pose: Pose, point: Sequence[float]
) -> tuple[float, float, float] | None:
    """Project one world point; None when culled (behind near plane or off-image)."""
    u, v, z, ok = project_points(intrinsics, camera_pose, np.asarray(point, dtype=float))
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def back_project(
    intrinsics: CameraIntrinsics, camera_pose: Pose, u: float, v: float, depth: float
) -> np.ndarray:
    """Inverse of project_point for a single pixel coordinate and depth."""
    if depth <= 0:
        raise InvalidParameterError("depth must be positive")
    x = (u - intrinsics.cx) / intrinsics.fx * depth
    y = (v - intrinsics.cy) / intrinsics.fy * depth
    return camera_to_world(camera_pose, np.array([[x, y, depth]]))[0]


def render_depth(
    intrinsics: CameraIntrinsics, novel_pose: Pose, cloud: PointCloud
) -> RenderReport:
    """Z-buffer splat of the cloud into a depth image; 1-pixel footprints."""
    depth = np.full((intrinsics.height, intrinsics.width), HOLE)
    if len(cloud) == 0:
        return RenderReport(DepthMap(depth), 1.0, 0)
    u, v, z, ok = project_points(intrinsics, novel_pose, cloud.points)
    cols = u[ok].astype(np.int64)
    rows = v[ok].astype(np.int64)
    flat = rows * intrinsics.width + cols
    buf = depth.reshape(-1)
    np.minimum.at(buf, flat, z[ok])
    dm = DepthMap(depth)
    return RenderReport(dm, dm.hole_fraction(), int(ok.sum()))


def depth_map_to_cloud(
    intrinsics: CameraIntrinsics, pose: Pose, depth: DepthMap
) -> PointCloud:
    """Back-project every non-hole pixel at its pixel center."""
    mask = ~depth.hole_mask()
    if not mask.any():
        return PointCloud.empty()
    rows, cols = np.nonzero(mask)
    z = depth.data[rows, cols]
    x = (cols + 0.5 - intrinsics.cx) / intrinsics.fx * z
    y = (rows + 0.5 - intrinsics.cy) / intrinsics.fy * z
    return PointCloud(camera_to_world(pose, np.column_stack([x, y, z])))


def fuse_frames(
    views: Sequence[tuple[Pose, DepthMap | PointCloud]], intrinsics: CameraIntrinsics
) -> PointCloud:
    """Back-project each view into world coordinates and concatenate (no dedup)."""
    if not views:
        raise InvalidParameterError("need at least one view to fuse")
    clouds = []
    for pose, payload in views:
        if isinstance(payload, DepthMap):
            clouds.append(depth_map_to_cloud(intrinsics, pose, payload))
        elif isinstance(payload, PointCloud):
            clouds.append(payload)
        else:
            raise InvalidParameterError(f"unsupported view payload {type(payload).__name__}")
    return PointCloud.concatenate(clouds)


def lateral_offset_pose(pose: Pose, offset: float) -> Pose:
    """Pose displaced sideways (positive = left of the heading)."""
    left = pose.left()
    return Pose(pose.x + offset * left[0], pose.y + offset * left[1], pose.z, pose.heading)


@dataclass
class ContextPoint:
    context_length: int
    novel_offset: float
    hole_fraction: float
    points_rendered: int


def hole_fraction_vs_context(
    world: PointCloud,
    true_trajectory: Sequence[Pose],
    novel_offset: float,
    context_lengths: Sequence[int],
    intrinsics: CameraIntrinsics,
) -> list[ContextPoint]:
    """Novel-view hole fraction after fusing the last k true-pose captures.

    The novel pose is the last true pose displaced laterally by novel_offset.
    Captures are single-frame renders of the world from each true pose, so the
    fused cloud only contains geometry a real sensor could have seen.
    """
    lengths = list(context_lengths)
    if lengths != sorted(lengths):
        raise InvalidParameterError("context_lengths must be sorted ascending")
    if not lengths or lengths[0] < 1:
        raise InvalidParameterError("context lengths must be >= 1")
    if lengths[-1] > len(true_trajectory):
        raise InvalidParameterError("context length exceeds trajectory length")

    novel_pose = lateral_offset_pose(true_trajectory[-1], novel_offset)
    max_k = lengths[-1]
    captures: list[PointCloud] = []
    for pose in true_trajectory[-max_k:]:
        report = render_depth(intrinsics, pose, world)
        captures.append(depth_map_to_cloud(intrinsics, pose, report.depth))

    rows = []
    for k in lengths:
        fused = PointCloud.concatenate(captures[-k:])
        report = render_depth(intrinsics, novel_pose, fused)
        rows.append(
            ContextPoint(
                context_length=k,
                novel_offset=novel_offset,
                hole_fraction=report.hole_fraction,
                points_rendered=report.points_rendered,
            )
        )
    return rows


def context_table_to_csv(rows: Sequence[ContextPoint]) -> str:
    lines = ["context_length,novel_offset,hole_fraction,points_rendered"]
    for r in rows:
        lines.append(
            f"{r.context_length},{float(r.novel_offset)!r},{float(r.hole_fraction)!r},{r.points_rendered}"
        )
    return "\n".join(lines) + "\n"


def apply_random_mask(depth: DepthMap, mask_fraction: float, seed: int) -> DepthMap:
    """Turn exactly round(mask_fraction * non-hole count) random pixels into holes."""
    if not 0.0 <= mask_fraction <= 1.0:
        raise InvalidParameterError("mask_fraction must lie in [0, 1]")
    out = depth.copy()
    candidates = np.flatnonzero(np.isfinite(out.data).reshape(-1))
    n_mask = round(mask_fraction * candidates.size)
    if n_mask == 0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    chosen = rng.choice(candidates, size=n_mask, replace=False)
    buf = out.data.reshape(-1)
    buf[chosen] = HOLE
    return out


@dataclass
class CoopGainReport:
    coverage_without: float
    coverage_with: float
    mean_abs_depth_error_on_gained: float
    gained_pixels: int


def cooperative_depth_gain(
    ego_view: tuple[Pose, CameraIntrinsics],
    contributor_cloud: PointCloud,
    world: PointCloud,
    sensing_range: float = 50.0,
) -> CoopGainReport:
    """Depth coverage of the ego view with and without a contributor's points.

    The ego capture is an occlusion-aware single-frame render of the world
    limited to sensing_range; the contributor cloud fills pixels the ego could
    not reach. Depth error on the gained pixels is measured against a render
    of the full world from the same pose.
    """
    pose, intrinsics = ego_view
    capture = render_depth(intrinsics, pose, world).depth
    truth = capture.data.copy()
    limited = capture.copy()
    limited.data[limited.data > sensing_range] = HOLE
    ego_cloud = depth_map_to_cloud(intrinsics, pose, limited)

    without = render_depth(intrinsics, pose, ego_cloud).depth
    union = PointCloud.concatenate([ego_cloud, contributor_cloud])
    with_coop = render_depth(intrinsics, pose, union).depth

    gained = np.isfinite(with_coop.data) & ~np.isfinite(without.data)
    gained &= np.isfinite(truth)
    if gained.any():
        err = float(np.abs(with_coop.data[gained] - truth[gained]).mean())
    else:
        err = 0.0
    return CoopGainReport(
        coverage_without=1.0 - without.hole_fraction(),
        coverage_with=1.0 - with_coop.hole_fraction(),
        mean_abs_depth_error_on_gained=err,
        gained_pixels=int(gained.sum()),
    )
