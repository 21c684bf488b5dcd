"""Synthetic multi-vehicle driving scenarios: trajectories plus sparse 3D world geometry.

Three parametric road layouts stand in for recorded driving scenes, and a CSV
importer replays externally captured trajectories on a uniform time grid.
All generation is deterministic in the seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError

LANE_WIDTH_M = 3.0
MIN_INITIAL_SPACING_M = 5.0
DEFAULT_V_MAX = 40.0

LAYOUTS = ("straight", "grid-intersection", "two-lane-highway")

TRAJECTORY_CSV_HEADER = ["vehicle_id", "t", "x", "y", "z", "heading"]


class TrajectoryCsvError(ValueError):
    """Malformed trajectory CSV; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InconsistentVehicleError(ValueError):
    """A vehicle's timestamps are not strictly increasing."""

    def __init__(self, vehicle_id: str, line: int):
        super().__init__(f"vehicle {vehicle_id!r}: non-monotone timestamp at line {line}")
        self.vehicle_id = vehicle_id
        self.line = line


def normalize_heading(heading: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (heading + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Pose:
    """Planar vehicle pose: position in meters, heading about the vertical axis."""

    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "heading"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"pose {name} must be finite")
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def forward(self) -> np.ndarray:
        """Unit vector along the heading, in the ground plane."""
        return np.array([math.cos(self.heading), math.sin(self.heading), 0.0])

    def left(self) -> np.ndarray:
        """Unit vector 90 degrees left of the heading."""
        return np.array([-math.sin(self.heading), math.cos(self.heading), 0.0])


@dataclass
class Trajectory:
    """Poses of one vehicle sampled at a uniform time step."""

    vehicle_id: str
    dt: float
    poses: list[Pose]
    _positions: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise InvalidParameterError("trajectory dt must be positive and finite")
        if len(self.poses) < 2:
            raise InvalidParameterError("trajectory needs at least 2 samples")

    def validate_kinematics(self, v_max: float = DEFAULT_V_MAX) -> None:
        """Reject consecutive displacements larger than v_max * dt."""
        steps = np.diff(self.positions(), axis=0)
        max_step = float(np.sqrt((steps**2).sum(axis=1)).max())
        if max_step > v_max * self.dt + 1e-9:
            raise InvalidParameterError(
                f"vehicle {self.vehicle_id!r}: step {max_step:.3f} m exceeds "
                f"v_max*dt = {v_max * self.dt:.3f} m"
            )

    def positions(self) -> np.ndarray:
        """(n, 3) array of sample positions; cached."""
        if self._positions is None:
            self._positions = np.array([[p.x, p.y, p.z] for p in self.poses])
        return self._positions

    def headings(self) -> np.ndarray:
        return np.array([p.heading for p in self.poses])

    @property
    def duration(self) -> float:
        return (len(self.poses) - 1) * self.dt

    def pose_at(self, index: int) -> Pose:
        return self.poses[index]


@dataclass
class PointCloud:
    """Static world geometry as bare points, optionally with per-point intensity."""

    points: np.ndarray  # (n, 3) float64
    intensity: np.ndarray | None = None  # (n,) in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise InvalidParameterError("point cloud coordinates must be finite")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if self.intensity.shape[0] != self.points.shape[0]:
                raise InvalidParameterError("intensity length must match point count")
            if self.intensity.size and (self.intensity.min() < 0 or self.intensity.max() > 1):
                raise InvalidParameterError("intensity must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)))

    @staticmethod
    def concatenate(clouds: Iterable["PointCloud"]) -> "PointCloud":
        arrays = [c.points for c in clouds]
        if not arrays:
            return PointCloud.empty()
        return PointCloud(np.concatenate(arrays, axis=0))


@dataclass
class Scenario:
    """One rollout's worth of inputs: timed trajectories plus static geometry."""

    scenario_id: str
    duration: float
    dt: float
    trajectories: list[Trajectory]
    ego_id: str
    world: PointCloud
    rng_seed: int
    _tensor: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [t.vehicle_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("duplicate vehicle ids in scenario")
        if self.ego_id not in ids:
            raise InvalidParameterError(f"ego id {self.ego_id!r} not among trajectories")
        n = len(self.trajectories[0].poses)
        for t in self.trajectories:
            if len(t.poses) != n or abs(t.dt - self.dt) > 1e-12:
                raise InvalidParameterError("all trajectories must share dt and duration")

    @property
    def vehicle_ids(self) -> list[str]:
        return [t.vehicle_id for t in self.trajectories]

    @property
    def n_samples(self) -> int:
        return len(self.trajectories[0].poses)

    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def trajectory(self, vehicle_id: str) -> Trajectory:
        for t in self.trajectories:
            if t.vehicle_id == vehicle_id:
                return t
        raise KeyError(vehicle_id)

    def position_tensor(self) -> tuple[list[str], np.ndarray]:
        """(vehicle ids, (V, T, 3) position array); cached per scenario."""
        if self._tensor is None:
            ids = self.vehicle_ids
            arr = np.stack([t.positions() for t in self.trajectories], axis=0)
            self._tensor = (ids, arr)
        return self._tensor

    def with_ego(self, ego_id: str) -> "Scenario":
        """Same scenario with a different receiver; trajectory objects are shared."""
        s = Scenario(
            scenario_id=self.scenario_id,
            duration=self.duration,
            dt=self.dt,
            trajectories=self.trajectories,
            ego_id=ego_id,
            world=self.world,
            rng_seed=self.rng_seed,
        )
        s._tensor = self._tensor
        return s


def constant_velocity_trajectory(
    start: Pose, speed: float, duration: float, dt: float, vehicle_id: str = "v0"
) -> Trajectory:
    """Straight-line motion along the start heading at constant speed."""
    if speed < 0:
        raise InvalidParameterError("speed must be non-negative")
    if dt <= 0 or duration < 2 * dt:
        raise InvalidParameterError("need dt > 0 and duration >= 2*dt")
    n = int(round(duration / dt)) + 1
    fwd = start.forward()
    poses = [
        Pose(
            start.x + speed * i * dt * fwd[0],
            start.y + speed * i * dt * fwd[1],
            start.z,
            start.heading,
        )
        for i in range(n)
    ]
    return Trajectory(vehicle_id=vehicle_id, dt=dt, poses=poses)


def _sample_plane(
    rng: np.random.Generator,
    origin: Sequence[float],
    u_vec: Sequence[float],
    v_vec: Sequence[float],
    n_points: int,
) -> np.ndarray:
    """Uniform samples on the parallelogram origin + a*u + b*v, a,b in [0,1]."""
    a = rng.random(n_points)
    b = rng.random(n_points)
    o = np.asarray(origin, dtype=float)
    u = np.asarray(u_vec, dtype=float)
    v = np.asarray(v_vec, dtype=float)
    return o + a[:, None] * u + b[:, None] * v


def _sample_box(
    rng: np.random.Generator,
    center: Sequence[float],
    size: Sequence[float],
    n_points: int,
) -> np.ndarray:
    """Samples on the four side walls and top of an axis-aligned box."""
    cx, cy, cz = center
    sx, sy, sz = size
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    z0, z1 = cz - sz / 2, cz + sz / 2
    faces = [
        ((x0, y0, z0), (x1 - x0, 0, 0), (0, 0, z1 - z0)),  # front
        ((x0, y1, z0), (x1 - x0, 0, 0), (0, 0, z1 - z0)),  # back
        ((x0, y0, z0), (0, y1 - y0, 0), (0, 0, z1 - z0)),  # left
        ((x1, y0, z0), (0, y1 - y0, 0), (0, 0, z1 - z0)),  # right
        ((x0, y0, z1), (x1 - x0, 0, 0), (0, y1 - y0, 0)),  # top
    ]
    per = max(1, n_points // len(faces))
    parts = [_sample_plane(rng, o, u, v, per) for o, u, v in faces]
    return np.concatenate(parts, axis=0)


def _roadside_world(
    rng: np.random.Generator,
    x_range: tuple[float, float],
    y_edges: tuple[float, float],
    n_buildings: int = 6,
    n_ground: int = 600,
) -> PointCloud:
    """Ground-plane samples plus box 'buildings' along both road edges."""
    x0, x1 = x_range
    parts = [
        _sample_plane(
            rng,
            (x0, y_edges[0] - 10.0, 0.0),
            (x1 - x0, 0, 0),
            (0, (y_edges[1] - y_edges[0]) + 20.0, 0),
            n_ground,
        )
    ]
    for i in range(n_buildings):
        side = 1 if i % 2 == 0 else -1
        bx = x0 + (i + 0.5) * (x1 - x0) / n_buildings
        by = (y_edges[1] + 8.0) if side > 0 else (y_edges[0] - 8.0)
        size = (
            6.0 + 6.0 * rng.random(),
            5.0 + 4.0 * rng.random(),
            4.0 + 6.0 * rng.random(),
        )
        parts.append(_sample_box(rng, (bx, by, size[2] / 2), size, 120))
    return PointCloud(np.concatenate(parts, axis=0))


def _stagger_starts(rng: np.random.Generator, n: int, spacing: float, jitter: float) -> np.ndarray:
    return np.arange(n) * spacing + rng.uniform(0.0, jitter, size=n)


def _min_pairwise_distance(points: np.ndarray) -> float:
    d = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((d**2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


def _straight_layout(rng, n_vehicles, duration, dt):
    lanes = np.arange(n_vehicles) - (n_vehicles - 1) / 2.0
    ys = lanes * LANE_WIDTH_M
    xs = _stagger_starts(rng, n_vehicles, spacing=9.0, jitter=3.0)
    order = rng.permutation(n_vehicles)
    speeds = rng.uniform(8.0, 14.0, size=n_vehicles)
    trajectories = []
    for i in range(n_vehicles):
        start = Pose(float(xs[order[i]]), float(ys[i]), 0.0, 0.0)
        trajectories.append(
            constant_velocity_trajectory(start, float(speeds[i]), duration, dt, f"v{i}")
        )
    extent = (float(xs.min()) - 20.0, float(xs.max()) + 14.0 * duration + 20.0)
    world = _roadside_world(rng, extent, (float(ys.min()) - 1.5, float(ys.max()) + 1.5))
    return trajectories, world


def _grid_intersection_layout(rng, n_vehicles, duration, dt):
    # Four approach groups: +x, -x, +y, -y. Each vehicle gets its own lane of
    # its approach (rank picks the lane), so all lanes are distinct.
    headings = [0.0, math.pi, math.pi / 2, -math.pi / 2]
    group_speed = rng.uniform(8.0, 14.0, size=4)
    trajectories = []
    for i in range(n_vehicles):
        g = i % 4
        rank = i // 4
        h = headings[g]
        speed = float(group_speed[g])
        back = 25.0 + rank * 14.0 + float(rng.uniform(0.0, 6.0))
        lane = (0.5 + rank) * LANE_WIDTH_M
        if g == 0:  # eastbound on y = -lane
            start = Pose(-back, -lane, 0.0, h)
        elif g == 1:  # westbound on y = +lane
            start = Pose(back, lane, 0.0, h)
        elif g == 2:  # northbound on x = +lane
            start = Pose(lane, -back, 0.0, h)
        else:  # southbound on x = -lane
            start = Pose(-lane, back, 0.0, h)
        trajectories.append(constant_velocity_trajectory(start, speed, duration, dt, f"v{i}"))
    n_ranks = (n_vehicles + 3) // 4
    reach = 25.0 + n_ranks * 14.0 + 14.0 * duration
    road_half = n_ranks * LANE_WIDTH_M + 1.5
    world = _roadside_world(rng, (-reach, reach), (-road_half, road_half))
    return trajectories, world


def _two_lane_highway_layout(rng, n_vehicles, duration, dt):
    # Two lanes per direction; opposing traffic passes at close lateral range.
    lane_ys = [-1.5 * LANE_WIDTH_M, -0.5 * LANE_WIDTH_M, 0.5 * LANE_WIDTH_M, 1.5 * LANE_WIDTH_M]
    lane_headings = [0.0, 0.0, math.pi, math.pi]
    lane_speed = rng.uniform(22.0, 32.0, size=4)
    trajectories = []
    for i in range(n_vehicles):
        lane = i % 4
        rank = i // 4
        h = lane_headings[lane]
        speed = float(lane_speed[lane])
        # Adjacent same-direction lanes are only 3 m apart laterally, so
        # stagger them longitudinally to keep the 5 m initial spacing.
        along = 18.0 * rank + 9.0 * (lane % 2) + float(rng.uniform(0.0, 4.0))
        # Opposing lanes start far downstream so both directions meet mid-rollout.
        if h == 0.0:
            x = -along
        else:
            x = (22.0 + 32.0) / 2.0 * duration / 2.0 + along
        trajectories.append(
            constant_velocity_trajectory(
                Pose(x, lane_ys[lane], 0.0, h), speed, duration, dt, f"v{i}"
            )
        )
    xs = [t.poses[0].x for t in trajectories]
    extent = (min(xs) - 20.0, max(xs) + 32.0 * duration + 20.0)
    world = _roadside_world(rng, extent, (lane_ys[0] - 1.5, lane_ys[-1] + 1.5))
    return trajectories, world


_LAYOUT_BUILDERS = {
    "straight": _straight_layout,
    "grid-intersection": _grid_intersection_layout,
    "two-lane-highway": _two_lane_highway_layout,
}


def generate_scenario(
    layout: str,
    n_vehicles: int,
    duration: float,
    dt: float,
    seed: int,
    scenario_id: str | None = None,
) -> Scenario:
    """Build a deterministic synthetic scenario on one of the parametric layouts."""
    if layout not in _LAYOUT_BUILDERS:
        raise InvalidParameterError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if n_vehicles < 2:
        raise InvalidParameterError("need at least 2 vehicles")
    if dt <= 0 or duration < 2 * dt:
        raise InvalidParameterError("need dt > 0 and duration >= 2*dt")

    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    trajectories, world = _LAYOUT_BUILDERS[layout](rng, n_vehicles, duration, dt)

    starts = np.array([[t.poses[0].x, t.poses[0].y] for t in trajectories])
    spacing = _min_pairwise_distance(np.column_stack([starts, np.zeros(len(starts))]))
    if spacing < MIN_INITIAL_SPACING_M:
        raise AssertionError(f"layout placed vehicles {spacing:.2f} m apart at start")
    if len(world) < 1000:
        # Top up ground sampling; layouts aim above this floor already.
        extra = _sample_plane(rng, (-50, -50, 0), (100, 0, 0), (0, 100, 0), 1000 - len(world))
        world = PointCloud(np.concatenate([world.points, extra], axis=0))

    for t in trajectories:
        t.validate_kinematics()

    ego_id = trajectories[int(rng.integers(0, n_vehicles))].vehicle_id
    return Scenario(
        scenario_id=scenario_id or f"{layout}-{seed}",
        duration=(len(trajectories[0].poses) - 1) * dt,
        dt=dt,
        trajectories=trajectories,
        ego_id=ego_id,
        world=world,
        rng_seed=seed,
    )


def corridor_world(
    length: float = 60.0,
    half_width: float = 5.0,
    wall_height: float = 6.0,
    points_per_m2: float = 220.0,
    n_obstacles: int = 4,
    seed: int = 0,
) -> PointCloud:
    """Dense closed corridor: walls, ground, ceiling, an end cap, and a few boxes.

    Every camera ray from inside hits some surface, so novel-view holes come
    from parallax occlusion and splat stretching rather than from empty sky.
    The sampling density is high enough that a single frame resolves the near
    walls without sampling gaps.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, 0xC0)))
    parts = []
    n_wall = int(length * wall_height * points_per_m2)
    parts.append(_sample_plane(rng, (0, half_width, 0), (length, 0, 0), (0, 0, wall_height), n_wall))
    parts.append(_sample_plane(rng, (0, -half_width, 0), (length, 0, 0), (0, 0, wall_height), n_wall))
    n_flat = int(length * 2 * half_width * points_per_m2 / 2)
    parts.append(_sample_plane(rng, (0, -half_width, 0), (length, 0, 0), (0, 2 * half_width, 0), n_flat))
    parts.append(
        _sample_plane(rng, (0, -half_width, wall_height), (length, 0, 0), (0, 2 * half_width, 0), n_flat)
    )
    n_cap = int(2 * half_width * wall_height * points_per_m2)
    parts.append(
        _sample_plane(rng, (length, -half_width, 0), (0, 2 * half_width, 0), (0, 0, wall_height), n_cap)
    )
    for i in range(n_obstacles):
        side = 1.0 if i % 2 == 0 else -1.0
        bx = length * (i + 1.0) / (n_obstacles + 1.0)
        by = side * (half_width - 1.3)
        size = (1.6, 1.6, 1.8)
        n_box = int(2 * (size[0] * size[2] + size[1] * size[2]) * points_per_m2)
        parts.append(_sample_box(rng, (bx, by, size[2] / 2), size, n_box))
    return PointCloud(np.concatenate(parts, axis=0))


def _resample_linear(ts: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.interp(grid, ts, values)


def import_trajectories(
    source: str | IO[str],
    dt: float | None = None,
    ego_id: str | None = None,
    scenario_id: str = "imported",
    v_max: float = DEFAULT_V_MAX,
) -> Scenario:
    """Load `vehicle_id,t,x,y,z,heading` CSV and resample every vehicle to a common dt.

    Timestamps must be strictly increasing per vehicle. Vehicles are clipped to
    their common time window, which becomes t = 0 of the scenario. When dt is
    not given it is inferred as the median sample spacing in the file.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return import_trajectories(fh, dt=dt, ego_id=ego_id, scenario_id=scenario_id, v_max=v_max)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise TrajectoryCsvError(1, "empty file") from None
    if [h.strip() for h in header] != TRAJECTORY_CSV_HEADER:
        raise TrajectoryCsvError(1, f"expected header {','.join(TRAJECTORY_CSV_HEADER)}")

    rows: dict[str, list[tuple[float, float, float, float, float]]] = {}
    last_t: dict[str, float] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 6:
            raise TrajectoryCsvError(line_no, f"expected 6 fields, got {len(row)}")
        vid = row[0].strip()
        try:
            t, x, y, z, heading = (float(v) for v in row[1:])
        except ValueError as exc:
            raise TrajectoryCsvError(line_no, f"bad numeric field ({exc})") from None
        if vid in last_t and t <= last_t[vid]:
            raise InconsistentVehicleError(vid, line_no)
        last_t[vid] = t
        rows.setdefault(vid, []).append((t, x, y, z, heading))

    if not rows:
        raise TrajectoryCsvError(2, "no data rows")
    for vid, samples in rows.items():
        if len(samples) < 2:
            raise TrajectoryCsvError(2, f"vehicle {vid!r} has fewer than 2 samples")

    t_start = max(s[0][0] for s in rows.values())
    t_end = min(s[-1][0] for s in rows.values())
    if dt is None:
        diffs = np.concatenate(
            [np.diff([r[0] for r in samples]) for samples in rows.values()]
        )
        dt = float(np.median(diffs))
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    n = int(math.floor((t_end - t_start) / dt + 1e-9)) + 1
    if n < 2:
        raise InvalidParameterError("vehicles share less than 2 samples of common time")
    grid = t_start + np.arange(n) * dt

    trajectories = []
    for vid in sorted(rows):
        arr = np.array(rows[vid])
        ts = arr[:, 0]
        xs = _resample_linear(ts, arr[:, 1], grid)
        ys = _resample_linear(ts, arr[:, 2], grid)
        zs = _resample_linear(ts, arr[:, 3], grid)
        hs = normalize_headings_array(_resample_linear(ts, np.unwrap(arr[:, 4]), grid))
        poses = [Pose(float(xs[i]), float(ys[i]), float(zs[i]), float(hs[i])) for i in range(n)]
        tr = Trajectory(vehicle_id=vid, dt=dt, poses=poses)
        tr.validate_kinematics(v_max)
        trajectories.append(tr)

    ego = ego_id if ego_id is not None else trajectories[0].vehicle_id
    return Scenario(
        scenario_id=scenario_id,
        duration=(n - 1) * dt,
        dt=dt,
        trajectories=trajectories,
        ego_id=ego,
        world=PointCloud.empty(),
        rng_seed=0,
    )


def normalize_headings_array(headings: np.ndarray) -> np.ndarray:
    return (headings + np.pi) % (2.0 * np.pi) - np.pi


def import_trajectories_text(text: str, **kwargs) -> Scenario:
    """Convenience wrapper for CSV content already in memory."""
    return import_trajectories(io.StringIO(text), **kwargs)
