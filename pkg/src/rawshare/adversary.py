"""Receiver-side re-identification attack and its privacy metrics.

The adversary turns the anonymous shared-frame stream into tracks with a
greedy nearest-neighbor associator, observes physical vehicles within sensing
range, matches tracks to vehicles with an optimal assignment solver, and
scores the linkage with confusion rate and RMSE. A sweep runner repeats the
attack over many scenes, rollouts, and noise levels.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateScenarioError, InvalidParameterError
from .obfuscation import (
    ObfuscationPolicy,
    PseudonymPolicy,
    SharedFrame,
    forge_offsets,
    share_sample_indices,
)
from .scene import LAYOUTS, Scenario, generate_scenario

DEFAULT_GATE_RADIUS = 25.0
DEFAULT_SENSING_RADIUS = 100.0

_TIME_QUANTUM = 1e-6  # frames closer than 1 us are the same timestep


def _time_key(t: float) -> int:
    return int(round(t / _TIME_QUANTUM))


@dataclass
class InferredTrack:
    """Adversary-side time series built from shared frames."""

    track_id: int
    times: np.ndarray  # (n,) seconds, strictly increasing
    positions: np.ndarray  # (n, 3)
    source_pseudonyms: set[int] = field(default_factory=set)
    time_keys: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) < 1:
            raise InvalidParameterError("track needs at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("track timestamps must be strictly increasing")
        if self.time_keys is None:
            self.time_keys = np.array([_time_key(t) for t in self.times])

    @property
    def samples(self) -> list[tuple[float, np.ndarray]]:
        return [(float(t), p) for t, p in zip(self.times, self.positions)]


@dataclass
class ObservedTrack:
    """Physically observed vehicle positions within the ego's sensing range."""

    vehicle_id: str
    times: np.ndarray
    positions: np.ndarray
    time_keys: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("track timestamps must be strictly increasing")
        if self.time_keys is None:
            self.time_keys = np.array([_time_key(t) for t in self.times])

    @property
    def samples(self) -> list[tuple[float, np.ndarray]]:
        return [(float(t), p) for t, p in zip(self.times, self.positions)]


@dataclass
class CostMatrix:
    """Mean time-aligned distances between inferred tracks and observed vehicles."""

    entries: np.ndarray  # (tracks, vehicles); +inf marks a forbidden pair
    track_ids: list[int]
    vehicle_ids: list[str]


@dataclass
class AssignmentResult:
    """Optimal track-to-vehicle matching plus privacy metrics.

    `pairs` maps every track to a vehicle id or None (unmatched). confusion
    and RMSE fields are populated by `evaluate_privacy`; a bare assignment
    solve leaves them None.
    """

    pairs: list[tuple[int, str | None]]
    total_cost: float
    confusion_rate: float | None = None
    rmse: float | None = None
    rmse_matched: float | None = None


def _greedy_associate(
    dist: np.ndarray, gate_radius: float
) -> list[tuple[int, int]]:
    """Globally greedy track/frame pairs within the gate.

    Conflicts resolve by smaller distance, then lower track index, then lower
    frame index, so results are deterministic.
    """
    m, s = dist.shape
    if m == 0 or s == 0:
        return []
    tr, fr = np.nonzero(dist <= gate_radius)
    if tr.size == 0:
        return []
    d = dist[tr, fr]
    order = np.lexsort((fr, tr, d))
    track_used = np.zeros(m, dtype=bool)
    frame_used = np.zeros(s, dtype=bool)
    pairs = []
    for idx in order:
        ti, fi = int(tr[idx]), int(fr[idx])
        if track_used[ti] or frame_used[fi]:
            continue
        track_used[ti] = True
        frame_used[fi] = True
        pairs.append((ti, fi))
    return pairs


def _track_arrays(
    sample_keys: np.ndarray, positions: np.ndarray, order: np.ndarray, gate_radius: float
) -> np.ndarray:
    """Greedy nearest-neighbor association over pre-sorted frame arrays.

    Returns the track index of every frame (in the sorted order given).
    """
    n = len(order)
    track_of = np.full(n, -1, dtype=np.int64)
    last_pos = np.empty((n, 3))
    n_tracks = 0
    keys_sorted = sample_keys[order]
    pos_sorted = positions[order]
    boundaries = np.flatnonzero(np.diff(keys_sorted)) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [n]])
    for a, b in zip(starts, stops):
        group = pos_sorted[a:b]
        if n_tracks:
            diff = last_pos[:n_tracks, None, :] - group[None, :, :]
            dist = np.sqrt((diff * diff).sum(axis=2))
            pairs = _greedy_associate(dist, gate_radius)
        else:
            pairs = []
        claimed = set()
        for ti, fi in pairs:
            track_of[a + fi] = ti
            last_pos[ti] = group[fi]
            claimed.add(fi)
        for fi in range(b - a):
            if fi not in claimed:
                track_of[a + fi] = n_tracks
                last_pos[n_tracks] = group[fi]
                n_tracks += 1
    out = np.empty(n, dtype=np.int64)
    out[order] = track_of
    return out


def track_shared_frames(
    frames: Sequence[SharedFrame],
    gate_radius: float = DEFAULT_GATE_RADIUS,
    mode: str = "position",
) -> list[InferredTrack]:
    """Cluster time-ordered shared frames into inferred sharer tracks.

    The default associates purely on position, so pseudonym rotation does not
    help the sharer; mode "pseudonym" keys tracks on the pseudonym instead.
    """
    if mode not in ("position", "pseudonym"):
        raise InvalidParameterError(f"unknown tracking mode {mode!r}")
    if not frames:
        return []
    keys = np.array([_time_key(f.t) for f in frames])
    if np.any(np.diff(keys) < 0):
        raise InvalidParameterError("frames must be sorted by time")
    positions = np.array([[f.forged_pose.x, f.forged_pose.y, f.forged_pose.z] for f in frames])

    if mode == "pseudonym":
        track_of = np.empty(len(frames), dtype=np.int64)
        by_token: dict[int, int] = {}
        for i, f in enumerate(frames):
            if f.pseudonym not in by_token:
                by_token[f.pseudonym] = len(by_token)
            track_of[i] = by_token[f.pseudonym]
    else:
        track_of = _track_arrays(keys, positions, np.arange(len(frames)), gate_radius)

    n_tracks = int(track_of.max()) + 1
    tracks = []
    for tid in range(n_tracks):
        idx = np.flatnonzero(track_of == tid)
        tracks.append(
            InferredTrack(
                track_id=tid,
                times=np.array([frames[i].t for i in idx]),
                positions=positions[idx],
                source_pseudonyms={frames[i].pseudonym for i in idx},
                time_keys=keys[idx],
            )
        )
    return tracks


def observe_physical(scenario: Scenario, sensing_radius: float) -> list[ObservedTrack]:
    """True positions of non-ego vehicles while within sensing range of the ego."""
    if sensing_radius <= 0:
        raise InvalidParameterError("sensing_radius must be positive")
    ids, pos = scenario.position_tensor()
    ego_idx = ids.index(scenario.ego_id)
    rel = pos - pos[ego_idx][None, :, :]
    dist = np.sqrt((rel * rel).sum(axis=2))
    times = scenario.sample_times()
    tracks = []
    for v, vid in enumerate(ids):
        if v == ego_idx:
            continue
        mask = dist[v] <= sensing_radius
        if not mask.any():
            continue
        idx = np.flatnonzero(mask)
        tracks.append(
            ObservedTrack(
                vehicle_id=vid,
                times=times[idx],
                positions=pos[v][idx],
                time_keys=np.array([_time_key(t) for t in times[idx]]),
            )
        )
    return tracks


MIN_OVERLAP_SAMPLES = 3


def build_cost_matrix(
    inferred: Sequence[InferredTrack], observed: Sequence[ObservedTrack]
) -> CostMatrix:
    """Mean Euclidean distance over overlapping timestamps; +inf below 3 samples."""
    entries = np.full((len(inferred), len(observed)), np.inf)
    for i, trk in enumerate(inferred):
        for j, obs in enumerate(observed):
            common, ti, oi = np.intersect1d(
                trk.time_keys, obs.time_keys, assume_unique=True, return_indices=True
            )
            if common.size < MIN_OVERLAP_SAMPLES:
                continue
            diff = trk.positions[ti] - obs.positions[oi]
            entries[i, j] = float(np.sqrt((diff * diff).sum(axis=1)).mean())
    return CostMatrix(
        entries=entries,
        track_ids=[t.track_id for t in inferred],
        vehicle_ids=[o.vehicle_id for o in observed],
    )


def _solve_assignment(costs: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Max-cardinality min-cost partial injection over the finite entries.

    Rectangular and forbidden (+inf) entries are handled by padding to a
    square matrix with a large sentinel, solving, and dropping sentinel pairs.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return [], 0.0
    finite = np.isfinite(costs)
    if not finite.any():
        return [], 0.0
    sentinel = float(costs[finite].sum()) + 1.0
    n = max(costs.shape)
    padded = np.full((n, n), sentinel)
    padded[: costs.shape[0], : costs.shape[1]] = np.where(finite, costs, sentinel)
    rows, cols = linear_sum_assignment(padded)
    pairs = [
        (int(r), int(c))
        for r, c in zip(rows, cols)
        if r < costs.shape[0] and c < costs.shape[1] and finite[r, c]
    ]
    total = sum(float(costs[r, c]) for r, c in pairs)
    return pairs, total


def hungarian_assign(costs: CostMatrix | np.ndarray) -> AssignmentResult:
    """Optimal assignment over a cost matrix; forbidden pairs stay unmatched."""
    if isinstance(costs, CostMatrix):
        entries, track_ids, vehicle_ids = costs.entries, costs.track_ids, costs.vehicle_ids
    else:
        entries = np.asarray(costs, dtype=float)
        track_ids = list(range(entries.shape[0])) if entries.ndim == 2 else []
        vehicle_ids = [str(j) for j in range(entries.shape[1])] if entries.ndim == 2 else []
    raw_pairs, total = _solve_assignment(entries)
    matched = {r: c for r, c in raw_pairs}
    pairs: list[tuple[int, str | None]] = [
        (track_ids[i], vehicle_ids[matched[i]] if i in matched else None)
        for i in range(len(track_ids))
    ]
    return AssignmentResult(pairs=pairs, total_cost=total)


def _evaluate_arrays(
    scenario: Scenario,
    sample_idx: np.ndarray,
    positions: np.ndarray,
    sharer_vidx: np.ndarray,
    sensing_radius: float,
    gate_radius: float,
) -> AssignmentResult:
    """Shared fast path: tracking, matching, and metrics over flat frame arrays."""
    ids, pos = scenario.position_tensor()
    n_vehicles = len(ids)
    ego_idx = ids.index(scenario.ego_id)

    rel = pos - pos[ego_idx][None, :, :]
    observed = np.sqrt((rel * rel).sum(axis=2)) <= sensing_radius
    observed[ego_idx, :] = False
    if not observed.any():
        raise DegenerateScenarioError("no sharer is ever within sensing range of the ego")

    order = np.argsort(sample_idx, kind="stable")
    track_of = _track_arrays(sample_idx, positions, order, gate_radius)
    n_tracks = int(track_of.max()) + 1

    # Majority contributor per track decides its ground-truth sharer.
    contrib = np.zeros((n_tracks, n_vehicles), dtype=np.int64)
    np.add.at(contrib, (track_of, sharer_vidx), 1)
    majority = contrib.argmax(axis=1)

    # Mean time-aligned distance between every track and every observed vehicle.
    truth_at_frames = pos[:, sample_idx, :]  # (V, n, 3)
    diff = positions[None, :, :] - truth_at_frames
    dist_all = np.sqrt((diff * diff).sum(axis=2)).T  # (n, V)
    valid = observed[:, sample_idx].T  # (n, V)
    sums = np.zeros((n_tracks, n_vehicles))
    cnts = np.zeros((n_tracks, n_vehicles), dtype=np.int64)
    np.add.at(sums, track_of, np.where(valid, dist_all, 0.0))
    np.add.at(cnts, track_of, valid.astype(np.int64))
    with np.errstate(invalid="ignore"):
        costs = np.where(cnts >= MIN_OVERLAP_SAMPLES, sums / np.maximum(cnts, 1), np.inf)
    costs[:, ego_idx] = np.inf

    raw_pairs, total = _solve_assignment(costs)
    assigned = np.full(n_tracks, -1, dtype=np.int64)
    for r, c in raw_pairs:
        assigned[r] = c

    vehicle_ever_observed = observed.any(axis=1)
    scored = vehicle_ever_observed[majority]
    if not scored.any():
        raise DegenerateScenarioError("no track has an observable sharer")
    confused = scored & ((assigned == -1) | (assigned != majority))
    confusion_rate = float(confused.sum()) / float(scored.sum())

    truth_majority = pos[majority[track_of], sample_idx, :]
    sq = ((positions - truth_majority) ** 2).sum(axis=1)
    rmse = float(np.sqrt(sq.mean()))

    matched_frames = assigned[track_of] >= 0
    if matched_frames.any():
        truth_assigned = pos[assigned[track_of][matched_frames],
                             sample_idx[matched_frames], :]
        sq_m = ((positions[matched_frames] - truth_assigned) ** 2).sum(axis=1)
        rmse_matched = float(np.sqrt(sq_m.mean()))
    else:
        rmse_matched = None

    pairs = [
        (tid, ids[assigned[tid]] if assigned[tid] >= 0 else None) for tid in range(n_tracks)
    ]
    return AssignmentResult(
        pairs=pairs,
        total_cost=total,
        confusion_rate=confusion_rate,
        rmse=rmse,
        rmse_matched=rmse_matched,
    )


def _frames_to_arrays(
    scenario: Scenario, streams: Mapping[str, Sequence[SharedFrame]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids, _ = scenario.position_tensor()
    sample_idx = []
    positions = []
    sharer_vidx = []
    for sharer_id, frames in streams.items():
        v = ids.index(sharer_id)
        for f in frames:
            sample_idx.append(int(round(f.t / scenario.dt)))
            positions.append((f.forged_pose.x, f.forged_pose.y, f.forged_pose.z))
            sharer_vidx.append(v)
    return (
        np.asarray(sample_idx, dtype=np.int64),
        np.asarray(positions, dtype=float).reshape(-1, 3),
        np.asarray(sharer_vidx, dtype=np.int64),
    )


def evaluate_privacy(
    scenario: Scenario,
    streams: Mapping[str, Sequence[SharedFrame]],
    sensing_radius: float = DEFAULT_SENSING_RADIUS,
    gate_radius: float = DEFAULT_GATE_RADIUS,
) -> AssignmentResult:
    """Full attack pipeline: track, observe, match, and score one rollout.

    `streams` is keyed by true sharer id (as produced by emit_shared_stream);
    the keys are used only for scoring, never for association.
    """
    if not streams:
        raise DegenerateScenarioError("no shared frames to evaluate")
    sample_idx, positions, sharer_vidx = _frames_to_arrays(scenario, streams)
    if sample_idx.size == 0:
        raise DegenerateScenarioError("no shared frames to evaluate")
    return _evaluate_arrays(
        scenario, sample_idx, positions, sharer_vidx, sensing_radius, gate_radius
    )


@dataclass(frozen=True)
class SweepSpec:
    """Scene suite and adversary knobs for a noise-level sweep."""

    layouts: tuple[str, ...] = LAYOUTS
    n_scenes: int = 20
    n_vehicles: int = 8
    duration: float = 20.0
    dt: float = 0.1
    share_rate: float | None = None
    gate_radius: float = DEFAULT_GATE_RADIUS
    sensing_radius: float = DEFAULT_SENSING_RADIUS
    policy_kind: str = "gaussian"
    pseudonym: PseudonymPolicy = PseudonymPolicy()

    def __post_init__(self):
        if self.n_scenes < 1 or self.n_vehicles < 2:
            raise InvalidParameterError("need n_scenes >= 1 and n_vehicles >= 2")
        for layout in self.layouts:
            if layout not in LAYOUTS:
                raise InvalidParameterError(f"unknown layout {layout!r}")
        if self.policy_kind not in ("gaussian", "fixed-offset"):
            raise InvalidParameterError("sweep policy must be gaussian or fixed-offset")


def standard_suite() -> SweepSpec:
    """The default synthetic evaluation suite (20 scenes, 8 vehicles, 20 s at 10 Hz)."""
    return SweepSpec()


@dataclass
class SweepRow:
    sigma: float
    mean_confusion: float
    sd_confusion: float
    mean_rmse: float
    sd_rmse: float
    n_rollouts: int
    skipped: int
    mean_rmse_matched: float | None = None
    sd_rmse_matched: float | None = None


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def to_csv(self) -> str:
        lines = ["sigma,mean_confusion,sd_confusion,mean_rmse,sd_rmse,n_rollouts,skipped"]
        for r in self.rows:
            lines.append(
                ",".join(
                    [
                        repr(float(r.sigma)),
                        repr(float(r.mean_confusion)),
                        repr(float(r.sd_confusion)),
                        repr(float(r.mean_rmse)),
                        repr(float(r.sd_rmse)),
                        str(r.n_rollouts),
                        str(r.skipped),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def _scene_seed(master_seed: int, scene_idx: int) -> int:
    ss = np.random.SeedSequence((master_seed & 0xFFFFFFFFFFFFFFFF, 0x5C, scene_idx))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _make_policy(kind: str, level: float, seed: int) -> ObfuscationPolicy:
    if kind == "gaussian":
        return ObfuscationPolicy(kind="gaussian", sigma=level, seed=seed)
    return ObfuscationPolicy(kind="fixed-offset", radius=level, seed=seed)


def _emit_arrays(
    scenario: Scenario, policy: ObfuscationPolicy, pseudonym: PseudonymPolicy, share_rate: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-only equivalent of emit_shared_stream + _frames_to_arrays.

    Draws the identical noise streams, so metrics match the object pipeline
    exactly (asserted in the test suite).
    """
    ids, pos = scenario.position_tensor()
    indices = share_sample_indices(scenario.n_samples, scenario.dt, share_rate)
    epoch_frames = pseudonym.k if pseudonym.mode == "rotate-every-k-frames" else None
    all_idx, all_pos, all_vidx = [], [], []
    for v, traj in enumerate(scenario.trajectories):
        if traj.vehicle_id == scenario.ego_id:
            continue
        state = policy.init_state(traj.vehicle_id, epoch_frames=epoch_frames)
        offsets = forge_offsets(policy, state, len(indices))
        p = pos[v][indices].copy()
        p[:, 0] += offsets[:, 0]
        p[:, 1] += offsets[:, 1]
        all_idx.append(indices)
        all_pos.append(p)
        all_vidx.append(np.full(len(indices), v, dtype=np.int64))
    return (
        np.concatenate(all_idx),
        np.concatenate(all_pos, axis=0),
        np.concatenate(all_vidx),
    )


def _run_scene_sigma(
    spec: SweepSpec,
    scene_idx: int,
    sigma: float,
    rollouts_per_scene: int,
    master_seed: int,
) -> tuple[list[tuple[float, float, float]], int]:
    """All rollouts for one (scene, sigma) cell; deterministic in the arguments."""
    layout = spec.layouts[scene_idx % len(spec.layouts)]
    scenario = generate_scenario(
        layout,
        spec.n_vehicles,
        spec.duration,
        spec.dt,
        seed=_scene_seed(master_seed, scene_idx),
        scenario_id=f"scene{scene_idx}",
    )
    share_rate = spec.share_rate if spec.share_rate is not None else 1.0 / spec.dt
    results = []
    skipped = 0
    for r in range(rollouts_per_scene):
        rng = np.random.default_rng(
            np.random.SeedSequence((master_seed & 0xFFFFFFFFFFFFFFFF, 0x01, scene_idx, r))
        )
        ego = scenario.vehicle_ids[int(rng.integers(0, spec.n_vehicles))]
        policy_seed = int(rng.integers(0, 2**63))
        rollout = scenario.with_ego(ego)
        policy = _make_policy(spec.policy_kind, sigma, policy_seed)
        try:
            sample_idx, positions, sharer_vidx = _emit_arrays(
                rollout, policy, spec.pseudonym, share_rate
            )
            res = _evaluate_arrays(
                rollout, sample_idx, positions, sharer_vidx,
                spec.sensing_radius, spec.gate_radius,
            )
        except DegenerateScenarioError:
            skipped += 1
            continue
        results.append(
            (
                res.confusion_rate,
                res.rmse,
                res.rmse_matched if res.rmse_matched is not None else math.nan,
            )
        )
    return results, skipped


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def rollout_sweep(
    spec: SweepSpec,
    sigmas: Sequence[float],
    rollouts_per_scene: int,
    seed: int,
    n_jobs: int = 1,
) -> SweepTable:
    """Mean and spread of confusion rate and RMSE per noise level.

    The ego is re-drawn uniformly per rollout; rollout seeds are shared across
    sigma values so the sweep is a paired design. Degenerate rollouts are
    counted as skipped, never raised. Results are aggregated in a fixed order
    regardless of n_jobs.
    """
    if rollouts_per_scene < 1:
        raise InvalidParameterError("rollouts_per_scene must be >= 1")
    cells = [(si, ci) for si in range(len(sigmas)) for ci in range(spec.n_scenes)]
    outputs: dict[tuple[int, int], tuple[list, int]] = {}
    if n_jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = {
                pool.submit(
                    _run_scene_sigma, spec, ci, float(sigmas[si]), rollouts_per_scene, seed
                ): (si, ci)
                for si, ci in cells
            }
            for fut in concurrent.futures.as_completed(futures):
                outputs[futures[fut]] = fut.result()
    else:
        for si, ci in cells:
            outputs[(si, ci)] = _run_scene_sigma(
                spec, ci, float(sigmas[si]), rollouts_per_scene, seed
            )

    rows = []
    for si, sigma in enumerate(sigmas):
        confusions: list[float] = []
        rmses: list[float] = []
        rmses_matched: list[float] = []
        skipped = 0
        for ci in range(spec.n_scenes):
            results, skip = outputs[(si, ci)]
            skipped += skip
            for c, r, rm in results:
                confusions.append(c)
                rmses.append(r)
                if not math.isnan(rm):
                    rmses_matched.append(rm)
        mc, sc = _mean_sd(confusions)
        mr, sr = _mean_sd(rmses)
        mrm, srm = _mean_sd(rmses_matched) if rmses_matched else (None, None)
        rows.append(
            SweepRow(
                sigma=float(sigma),
                mean_confusion=mc,
                sd_confusion=sc,
                mean_rmse=mr,
                sd_rmse=sr,
                n_rollouts=len(confusions),
                skipped=skipped,
                mean_rmse_matched=mrm,
                sd_rmse_matched=srm,
            )
        )
    return SweepTable(rows=rows)
