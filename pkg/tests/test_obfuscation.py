import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawshare.errors import InvalidParameterError
from rawshare.obfuscation import (
    ObfuscationPolicy,
    PseudonymPolicy,
    assign_pseudonym,
    emit_shared_stream,
    flatten_stream,
    forge_offsets,
    forge_pose,
    share_sample_indices,
)
from rawshare.scene import Pose, generate_scenario


def test_gaussian_sigma_zero_is_identity():
    policy = ObfuscationPolicy(kind="gaussian", sigma=0.0, seed=1)
    state = policy.init_state("a")
    forged, _ = forge_pose(policy, Pose(3, 4), 0, state)
    assert (forged.x, forged.y) == (3, 4)


def test_gaussian_rms_displacement_monte_carlo():
    # Planar RMS over n i.i.d. draws tends to sigma*sqrt(2) (two axes).
    sigma = 12.0
    policy = ObfuscationPolicy(kind="gaussian", sigma=sigma, seed=9)
    state = policy.init_state("a")
    off = forge_offsets(policy, state, 100_000)
    rms = math.sqrt(float((off**2).sum(axis=1).mean()))
    assert rms == pytest.approx(sigma * math.sqrt(2), rel=0.02)


def test_gaussian_mean_preservation():
    sigma = 8.0
    policy = ObfuscationPolicy(kind="gaussian", sigma=sigma, seed=4)
    off = forge_offsets(policy, policy.init_state("a"), 100_000)
    assert abs(float(off[:, 0].mean())) < 0.05 * sigma
    assert abs(float(off[:, 1].mean())) < 0.05 * sigma


def test_fixed_offset_distance_exact():
    policy = ObfuscationPolicy(kind="fixed-offset", radius=12.0, seed=2)
    state = policy.init_state("a")
    forged, _ = forge_pose(policy, Pose(0, 0), 0, state)
    assert math.hypot(forged.x, forged.y) == pytest.approx(12.0, abs=1e-9)


def test_fixed_offset_constant_within_pseudonym_lifetime():
    policy = ObfuscationPolicy(kind="fixed-offset", radius=5.0, seed=2)
    off = forge_offsets(policy, policy.init_state("a", epoch_frames=None), 50)
    assert np.allclose(off, off[0])


def test_fixed_offset_redrawn_per_epoch():
    policy = ObfuscationPolicy(kind="fixed-offset", radius=5.0, seed=2)
    off = forge_offsets(policy, policy.init_state("a", epoch_frames=10), 30)
    assert np.allclose(off[0:10], off[0])
    assert np.allclose(off[10:20], off[10])
    assert not np.allclose(off[0], off[10])
    assert not np.allclose(off[10], off[20])
    for row in off:
        assert math.hypot(*row) == pytest.approx(5.0, abs=1e-9)


@given(
    step=st.floats(min_value=0.1, max_value=10.0),
    max_radius=st.floats(min_value=0.5, max_value=30.0),
    seed=st.integers(min_value=0, max_value=2**32),
)
@settings(max_examples=30, deadline=None)
def test_walk_never_exceeds_max_radius(step, max_radius, seed):
    policy = ObfuscationPolicy(
        kind="smoothed-random-walk", step_sigma=step, max_radius=max_radius, seed=seed
    )
    off = forge_offsets(policy, policy.init_state("a"), 300)
    assert np.sqrt((off**2).sum(axis=1)).max() <= max_radius + 1e-9


def test_forge_random_access_matches_sequential():
    policy = ObfuscationPolicy(kind="gaussian", sigma=3.0, seed=11)
    seq_state = policy.init_state("a")
    sequential = forge_offsets(policy, seq_state, 40).copy()

    ra_state = policy.init_state("a")
    for idx in (17, 3, 39, 0, 17):
        forged, _ = forge_pose(policy, Pose(0, 0), idx, ra_state)
        assert (forged.x, forged.y) == pytest.approx(tuple(sequential[idx]), abs=0)


def test_forge_streams_deterministic_per_seed():
    for kind, kwargs in [
        ("gaussian", {"sigma": 5.0}),
        ("fixed-offset", {"radius": 5.0}),
        ("smoothed-random-walk", {"step_sigma": 1.0, "max_radius": 8.0}),
    ]:
        p = ObfuscationPolicy(kind=kind, seed=42, **kwargs)
        a = forge_offsets(p, p.init_state("x"), 64)
        b = forge_offsets(p, p.init_state("x"), 64)
        c = forge_offsets(p, p.init_state("y"), 64)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


def test_policy_validation():
    with pytest.raises(InvalidParameterError):
        ObfuscationPolicy(kind="bogus")
    with pytest.raises(InvalidParameterError):
        ObfuscationPolicy(kind="gaussian", sigma=-1.0)


def test_forge_preserves_z_and_heading():
    policy = ObfuscationPolicy(kind="gaussian", sigma=9.0, seed=0)
    forged, _ = forge_pose(policy, Pose(1, 2, 3.5, 0.7), 0, policy.init_state("a"))
    assert forged.z == 3.5
    assert forged.heading == pytest.approx(0.7)


def test_pseudonym_constant_single_token():
    policy = PseudonymPolicy()
    tokens = {assign_pseudonym(policy, "a", i) for i in range(100)}
    assert len(tokens) == 1


def test_pseudonym_rotation_counts_and_boundaries():
    policy = PseudonymPolicy(mode="rotate-every-k-frames", k=10)
    tokens = [assign_pseudonym(policy, "a", i) for i in range(30)]
    assert len(set(tokens)) == 3
    changes = [i for i in range(1, 30) if tokens[i] != tokens[i - 1]]
    assert changes == [10, 20]


def test_pseudonyms_distinct_across_sharers():
    policy = PseudonymPolicy()
    assert assign_pseudonym(policy, "a", 0) != assign_pseudonym(policy, "b", 0)


def test_pseudonym_policy_validation():
    with pytest.raises(InvalidParameterError):
        PseudonymPolicy(mode="rotate-every-k-frames")
    with pytest.raises(InvalidParameterError):
        PseudonymPolicy(mode="constant", k=5)


def test_emit_counts_at_full_rate():
    sc = generate_scenario("straight", 4, 10.0, 0.1, seed=1)
    streams = emit_shared_stream(sc, ObfuscationPolicy(kind="none"), PseudonymPolicy(), 10.0)
    assert len(streams) == 3  # ego emits nothing
    assert all(len(frames) == 100 for frames in streams.values())
    assert sc.ego_id not in streams


def test_emit_half_rate_takes_every_second_sample():
    idx = share_sample_indices(101, 0.1, 5.0)
    assert list(idx[:5]) == [0, 2, 4, 6, 8]
    assert len(idx) == 50


def test_emit_rejects_oversampling():
    with pytest.raises(InvalidParameterError):
        share_sample_indices(101, 0.1, 20.0)


def test_emit_none_policy_leaks_truth():
    sc = generate_scenario("straight", 3, 5.0, 0.1, seed=3)
    streams = emit_shared_stream(sc, ObfuscationPolicy(kind="none"), PseudonymPolicy())
    for vid, frames in streams.items():
        truth = sc.trajectory(vid)
        for k, f in enumerate(frames):
            p = truth.poses[int(round(f.t / sc.dt))]
            assert (f.forged_pose.x, f.forged_pose.y) == (p.x, p.y)


def test_emitted_frames_are_open_stack_and_time_ordered():
    sc = generate_scenario("straight", 3, 5.0, 0.1, seed=3)
    streams = emit_shared_stream(
        sc, ObfuscationPolicy(kind="gaussian", sigma=2.0, seed=1), PseudonymPolicy()
    )
    flat = flatten_stream(streams)
    assert all(f.stack_tag == "open" for f in flat)
    assert all(a.t <= b.t for a, b in zip(flat, flat[1:]))
