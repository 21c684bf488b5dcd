"""Forged-pose generation and pseudonym management for shared perception frames.

Each sharer transforms its true pose under a configurable policy before
emission. Noise streams are buffered per sharer, so the value for a frame
index is a pure function of (policy seed, sharer id, frame index) regardless
of the order in which frames are requested.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvalidParameterError
from .scene import Pose, Scenario

POLICY_KINDS = ("none", "gaussian", "fixed-offset", "smoothed-random-walk")
PSEUDONYM_MODES = ("constant", "rotate-every-k-frames")

_U64 = 0xFFFFFFFFFFFFFFFF


def _sharer_key(sharer_id: str | int) -> int:
    """Stable 64-bit key for a sharer identifier."""
    if isinstance(sharer_id, int):
        return sharer_id & _U64
    digest = hashlib.blake2b(str(sharer_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class ObfuscationPolicy:
    """How a sharer's true pose is forged before emission.

    kind "none" passes poses through; "gaussian" adds i.i.d. planar noise per
    frame; "fixed-offset" applies one radius-length offset per pseudonym epoch;
    "smoothed-random-walk" drifts a bounded offset over time.
    """

    kind: str
    sigma: float = 0.0
    radius: float = 0.0
    step_sigma: float = 0.0
    max_radius: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidParameterError(f"unknown policy kind {self.kind!r}")
        for name in ("sigma", "radius", "step_sigma", "max_radius"):
            v = getattr(self, name)
            if v < 0 or not math.isfinite(v):
                raise InvalidParameterError(f"{name} must be finite and non-negative")

    def init_state(self, sharer_id: str | int, epoch_frames: int | None = None) -> "SharerState":
        """Fresh per-sharer noise state. epoch_frames is the pseudonym rotation
        period, used by fixed-offset policies to re-draw the offset angle."""
        key = _sharer_key(sharer_id)
        rng = np.random.default_rng(
            np.random.SeedSequence((self.seed & _U64, key, 0xF0F0))
        )
        return SharerState(sharer_key=key, epoch_frames=epoch_frames, rng=rng)


@dataclass
class SharerState:
    """Buffered noise streams for one sharer; grows monotonically with frame index."""

    sharer_key: int
    epoch_frames: int | None
    rng: np.random.Generator
    gaussian: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))
    walk: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def gaussian_noise(self, upto: int) -> np.ndarray:
        """Unit normal pairs for frames 0..upto-1."""
        if self.gaussian.shape[0] < upto:
            extra = self.rng.standard_normal((upto - self.gaussian.shape[0], 2))
            self.gaussian = np.concatenate([self.gaussian, extra], axis=0)
        return self.gaussian[:upto]

    def epoch_angles(self, upto_epoch: int) -> np.ndarray:
        """One uniform angle per pseudonym epoch 0..upto_epoch-1."""
        if self.angles.shape[0] < upto_epoch:
            extra = self.rng.uniform(0.0, 2.0 * math.pi, size=upto_epoch - self.angles.shape[0])
            self.angles = np.concatenate([self.angles, extra])
        return self.angles[:upto_epoch]

    def walk_offsets(self, upto: int, step_sigma: float, max_radius: float) -> np.ndarray:
        """Bounded random-walk offsets for frames 0..upto-1."""
        have = self.walk.shape[0]
        if have >= upto:
            return self.walk[:upto]
        out = np.empty((upto, 2))
        out[:have] = self.walk
        if have == 0:
            # Start uniformly inside the disk so frame 0 never leaks the true pose.
            r = max_radius * math.sqrt(self.rng.random())
            theta = self.rng.uniform(0.0, 2.0 * math.pi)
            out[0] = (r * math.cos(theta), r * math.sin(theta))
            have = 1
        steps = self.rng.normal(0.0, step_sigma, size=(upto - have, 2))
        cur = out[have - 1].copy()
        for i in range(upto - have):
            cur = cur + steps[i]
            norm = math.hypot(cur[0], cur[1])
            if norm > max_radius and norm > 0:
                cur = cur * (max_radius / norm)
            out[have + i] = cur
        self.walk = out
        return self.walk[:upto]


def forge_offsets(policy: ObfuscationPolicy, state: SharerState, n_frames: int) -> np.ndarray:
    """Planar forge offsets for frames 0..n_frames-1 under the policy."""
    if policy.kind == "none":
        return np.zeros((n_frames, 2))
    if policy.kind == "gaussian":
        return policy.sigma * state.gaussian_noise(n_frames)
    if policy.kind == "fixed-offset":
        ef = state.epoch_frames
        epochs = np.zeros(n_frames, dtype=int) if ef is None else np.arange(n_frames) // ef
        n_epochs = int(epochs[-1]) + 1 if n_frames else 0
        angles = state.epoch_angles(n_epochs)
        theta = angles[epochs]
        return policy.radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return state.walk_offsets(n_frames, policy.step_sigma, policy.max_radius)


def forge_pose(
    policy: ObfuscationPolicy,
    true_pose: Pose,
    frame_index: int,
    state: SharerState,
) -> tuple[Pose, SharerState]:
    """Forge one pose. z and heading pass through unchanged."""
    if frame_index < 0:
        raise InvalidParameterError("frame_index must be >= 0")
    off = forge_offsets(policy, state, frame_index + 1)[frame_index]
    forged = Pose(true_pose.x + float(off[0]), true_pose.y + float(off[1]),
                  true_pose.z, true_pose.heading)
    return forged, state


@dataclass(frozen=True)
class PseudonymPolicy:
    """Constant pseudonyms, or rotation every k emitted frames."""

    mode: str = "constant"
    k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PSEUDONYM_MODES:
            raise InvalidParameterError(f"unknown pseudonym mode {self.mode!r}")
        if self.mode == "rotate-every-k-frames":
            if self.k is None or self.k < 1:
                raise InvalidParameterError("rotation requires k >= 1")
        elif self.k is not None:
            raise InvalidParameterError("k is only valid for rotation mode")

    def epoch_of(self, frame_index: int) -> int:
        return 0 if self.mode == "constant" else frame_index // self.k


def assign_pseudonym(policy: PseudonymPolicy, sharer_id: str | int, frame_index: int) -> int:
    """64-bit pseudonym token for a sharer's frame; keyed hash of (seed, sharer, epoch)."""
    if frame_index < 0:
        raise InvalidParameterError("frame_index must be >= 0")
    epoch = policy.epoch_of(frame_index)
    h = hashlib.blake2b(digest_size=8, key=struct.pack("<Q", policy.seed & _U64))
    h.update(struct.pack("<QQ", _sharer_key(sharer_id), epoch))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class PayloadDescriptor:
    """Abstract description of the raw-sensor payload carried by a frame."""

    sensor_kind: str = "camera"
    nominal_rate: float = 10.0
    size_bytes: int = 0

    def __post_init__(self):
        if self.sensor_kind not in ("camera", "lidar", "radar"):
            raise InvalidParameterError(f"unknown sensor kind {self.sensor_kind!r}")
        if self.size_bytes < 0:
            raise InvalidParameterError("size_bytes must be >= 0")


@dataclass(frozen=True)
class SharedFrame:
    """One perception message as it appears on the wire."""

    pseudonym: int
    t: float
    forged_pose: Pose
    payload: PayloadDescriptor
    priority: str = "normal"
    stack_tag: str = "open"

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise InvalidParameterError("frame time must be finite")
        if self.priority not in ("normal", "elevated"):
            raise InvalidParameterError(f"unknown priority {self.priority!r}")
        if self.stack_tag not in ("open", "proprietary"):
            raise InvalidParameterError(f"unknown stack tag {self.stack_tag!r}")


def share_sample_indices(n_samples: int, dt: float, share_rate: float) -> np.ndarray:
    """Scenario sample indices shared at share_rate, by nearest-sample selection."""
    if share_rate <= 0:
        raise InvalidParameterError("share_rate must be positive")
    frame_rate = 1.0 / dt
    if share_rate > frame_rate + 1e-9:
        raise InvalidParameterError("share_rate cannot exceed the scenario frame rate")
    duration = (n_samples - 1) * dt
    n_frames = int(round(duration * share_rate))
    period = 1.0 / share_rate
    idx = np.rint(np.arange(n_frames) * period / dt).astype(int)
    return idx[idx < n_samples]


def emit_shared_stream(
    scenario: Scenario,
    policy: ObfuscationPolicy,
    pseudonyms: PseudonymPolicy,
    share_rate: float | None = None,
    payload: PayloadDescriptor | None = None,
) -> Mapping[str, list[SharedFrame]]:
    """Forged frame streams for every sharer (every vehicle except the ego).

    Returns a dict keyed by true sharer id; the adversary is expected to see
    only the flattened, time-ordered frames.
    """
    rate = share_rate if share_rate is not None else 1.0 / scenario.dt
    indices = share_sample_indices(scenario.n_samples, scenario.dt, rate)
    if payload is None:
        payload = PayloadDescriptor(sensor_kind="camera", nominal_rate=rate, size_bytes=0)
    epoch_frames = pseudonyms.k if pseudonyms.mode == "rotate-every-k-frames" else None

    streams: dict[str, list[SharedFrame]] = {}
    for traj in scenario.trajectories:
        if traj.vehicle_id == scenario.ego_id:
            continue
        state = policy.init_state(traj.vehicle_id, epoch_frames=epoch_frames)
        offsets = forge_offsets(policy, state, len(indices))
        positions = traj.positions()[indices]
        headings = traj.headings()[indices]
        frames = []
        for k, sample_idx in enumerate(indices):
            frames.append(
                SharedFrame(
                    pseudonym=assign_pseudonym(pseudonyms, traj.vehicle_id, k),
                    t=float(sample_idx * scenario.dt),
                    forged_pose=Pose(
                        float(positions[k, 0] + offsets[k, 0]),
                        float(positions[k, 1] + offsets[k, 1]),
                        float(positions[k, 2]),
                        float(headings[k]),
                    ),
                    payload=payload,
                    priority="normal",
                    stack_tag="open",
                )
            )
        streams[traj.vehicle_id] = frames
    return streams


def flatten_stream(streams: Mapping[str, list[SharedFrame]]) -> list[SharedFrame]:
    """Merge per-sharer streams into one time-ordered list (stable per sharer)."""
    all_frames = [f for frames in streams.values() for f in frames]
    all_frames.sort(key=lambda f: f.t)
    return all_frames
