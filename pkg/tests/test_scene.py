import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawshare.errors import InvalidParameterError
from rawshare.scene import (
    LAYOUTS,
    InconsistentVehicleError,
    Pose,
    Trajectory,
    TrajectoryCsvError,
    constant_velocity_trajectory,
    corridor_world,
    generate_scenario,
    import_trajectories_text,
)
from rawshare.wire import scenario_to_json


def test_generate_straight_sample_count():
    sc = generate_scenario("straight", 2, 10.0, 0.1, seed=7)
    assert len(sc.trajectories) == 2
    for t in sc.trajectories:
        assert len(t.poses) == 101  # duration/dt + 1


def test_generate_deterministic_bit_identical():
    a = generate_scenario("straight", 2, 10.0, 0.1, seed=7)
    b = generate_scenario("straight", 2, 10.0, 0.1, seed=7)
    assert scenario_to_json(a) == scenario_to_json(b)


def test_generate_different_seed_differs():
    a = generate_scenario("straight", 2, 10.0, 0.1, seed=7)
    b = generate_scenario("straight", 2, 10.0, 0.1, seed=8)
    assert scenario_to_json(a) != scenario_to_json(b)


def test_generate_rejects_bad_parameters():
    with pytest.raises(InvalidParameterError):
        generate_scenario("straight", 1, 10.0, 0.1, seed=0)
    with pytest.raises(InvalidParameterError):
        generate_scenario("straight", 2, 10.0, 0.0, seed=0)
    with pytest.raises(InvalidParameterError):
        generate_scenario("straight", 2, 0.1, 0.1, seed=0)
    with pytest.raises(InvalidParameterError):
        generate_scenario("roundabout", 2, 10.0, 0.1, seed=0)


@pytest.mark.parametrize("layout", LAYOUTS)
@pytest.mark.parametrize("seed", [0, 1, 99])
def test_layout_invariants(layout, seed):
    sc = generate_scenario(layout, 8, 10.0, 0.1, seed=seed)
    assert len(sc.world) >= 1000
    starts = np.array([[t.poses[0].x, t.poses[0].y] for t in sc.trajectories])
    d = np.sqrt(((starts[:, None, :] - starts[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 5.0
    for t in sc.trajectories:
        steps = np.diff(t.positions(), axis=0)
        assert np.sqrt((steps**2).sum(axis=1)).max() <= 40.0 * sc.dt + 1e-9
    assert sc.ego_id in sc.vehicle_ids


def test_constant_velocity_linear():
    tr = constant_velocity_trajectory(Pose(0, 0, 0, 0), 10.0, 1.0, 0.5)
    assert [p.x for p in tr.poses] == pytest.approx([0.0, 5.0, 10.0])
    assert all(p.y == 0 for p in tr.poses)


def test_constant_velocity_zero_speed():
    tr = constant_velocity_trajectory(Pose(3, 4, 1, 0.2), 0.0, 1.0, 0.5)
    assert all((p.x, p.y, p.z) == (3, 4, 1) for p in tr.poses)


def test_constant_velocity_heading_axis_symmetry():
    tr = constant_velocity_trajectory(Pose(0, 0, 0, math.pi / 2), 10.0, 1.0, 0.5)
    assert [p.y for p in tr.poses] == pytest.approx([0.0, 5.0, 10.0])
    assert [p.x for p in tr.poses] == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)


def test_constant_velocity_rejects_negative_speed():
    with pytest.raises(InvalidParameterError):
        constant_velocity_trajectory(Pose(0, 0), -1.0, 1.0, 0.5)


@given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
def test_heading_normalized_half_open(h):
    p = Pose(0, 0, 0, h)
    assert -math.pi <= p.heading < math.pi


def test_pose_rejects_non_finite():
    with pytest.raises(InvalidParameterError):
        Pose(math.nan, 0)
    with pytest.raises(InvalidParameterError):
        Pose(0, math.inf)


def test_trajectory_needs_two_samples():
    with pytest.raises(InvalidParameterError):
        Trajectory("v0", 0.1, [Pose(0, 0)])


def test_trajectory_kinematic_validation():
    tr = Trajectory("v0", 0.1, [Pose(0, 0), Pose(100, 0)])
    with pytest.raises(InvalidParameterError):
        tr.validate_kinematics(v_max=40.0)


CSV_2V = """vehicle_id,t,x,y,z,heading
a,0.0,0.0,0.0,0.0,0.0
a,0.1,1.0,0.0,0.0,0.0
a,0.2,2.0,0.0,0.0,0.0
b,0.0,0.0,3.0,0.0,0.0
b,0.1,1.0,3.0,0.0,0.0
b,0.2,2.0,3.0,0.0,0.0
"""


def test_import_two_vehicles():
    sc = import_trajectories_text(CSV_2V)
    assert sc.dt == pytest.approx(0.1)
    assert len(sc.trajectories) == 2
    assert sc.n_samples == 3
    assert sc.trajectory("a").poses[2].x == pytest.approx(2.0)


def test_import_decreasing_timestamps():
    bad = CSV_2V.replace("a,0.2", "a,0.05")
    with pytest.raises(InconsistentVehicleError):
        import_trajectories_text(bad)


def test_import_bad_header():
    with pytest.raises(TrajectoryCsvError):
        import_trajectories_text("vid,t,x,y,z,h\na,0,0,0,0,0\n")


def test_import_parse_error_carries_line_number():
    bad = CSV_2V.replace("a,0.1,1.0", "a,0.1,oops")
    with pytest.raises(TrajectoryCsvError) as exc:
        import_trajectories_text(bad)
    assert exc.value.line == 3


def test_import_downsample_retains_every_second_sample():
    # 0.05 s data imported at dt 0.1: interpolation nodes coincide with
    # every second source sample. Oracle: hand linear interpolation.
    ts = [0.0, 0.05, 0.10, 0.15, 0.20]
    xs = [0.0, 0.7, 1.0, 2.1, 3.0]
    rows = "\n".join(f"a,{t},{x},0.0,0.0,0.0" for t, x in zip(ts, xs))
    extra = "\n".join(f"b,{t},0.0,5.0,0.0,0.0" for t in ts)
    csv_text = "vehicle_id,t,x,y,z,heading\n" + rows + "\n" + extra + "\n"
    sc = import_trajectories_text(csv_text, dt=0.1)
    got = [p.x for p in sc.trajectory("a").poses]
    expected = [np.interp(t, ts, xs) for t in (0.0, 0.1, 0.2)]
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx([0.0, 1.0, 3.0])


@given(
    dt_new=st.sampled_from([0.02, 0.05, 0.07, 0.13]),
    vx=st.floats(min_value=-20, max_value=20, allow_nan=False),
    vy=st.floats(min_value=-20, max_value=20, allow_nan=False),
)
@settings(max_examples=25, deadline=None)
def test_import_linear_resampling_stays_on_line(dt_new, vx, vy):
    ts = np.arange(0, 1.01, 0.1)
    lines = ["vehicle_id,t,x,y,z,heading"]
    for t in ts:
        lines.append(f"a,{t},{vx * t},{vy * t},0.0,0.0")
        lines.append(f"b,{t},{vx * t + 1},{vy * t + 7},0.0,0.0")
    sc = import_trajectories_text("\n".join(lines) + "\n", dt=dt_new, v_max=1000.0)
    for i, p in enumerate(sc.trajectory("a").poses):
        t = i * dt_new
        assert math.hypot(p.x - vx * t, p.y - vy * t) <= 1e-9


def test_import_from_stream():
    sc = import_trajectories_text(CSV_2V, ego_id="b")
    assert sc.ego_id == "b"
    with pytest.raises(InvalidParameterError):
        import_trajectories_text(CSV_2V, ego_id="zzz")


def test_import_empty_file():
    with pytest.raises(TrajectoryCsvError):
        import_trajectories_text("vehicle_id,t,x,y,z,heading\n")


def test_corridor_world_deterministic_and_dense():
    a = corridor_world(seed=3)
    b = corridor_world(seed=3)
    assert np.array_equal(a.points, b.points)
    assert len(a) > 10000
