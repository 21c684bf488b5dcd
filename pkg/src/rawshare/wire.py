"""Versioned binary codec for shared-frame streams, plus JSON mirrors.

Envelope layout (little-endian throughout):

    magic   4 bytes  b"SHRP"
    version u8       currently 1
    count   u32      number of frames
    frames  count x 59 bytes, each:
        pseudonym   u64
        t_micros    u64   frame time in microseconds (t >= 0)
        x, y, z     f64
        heading     f64
        priority    u8    0 normal, 1 elevated
        stack_tag   u8    0 open, 1 proprietary
        sensor_kind u8    0 camera, 1 lidar, 2 radar
        nominal_rate f32
        size_bytes  u32
    checksum u32     CRC32 of all preceding bytes

The binary form is authoritative; the JSON mirror exists for debugging and
the HTTP API. Frame times are quantized to whole microseconds on encode.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError
from .obfuscation import PayloadDescriptor, SharedFrame
from .scene import PointCloud, Pose, Scenario, Trajectory

MAGIC = b"SHRP"
VERSION = 1

_HEADER = struct.Struct("<4sBI")
_FRAME = struct.Struct("<QQddddBBBfI")
_CRC = struct.Struct("<I")

FRAME_SIZE = _FRAME.size  # 59
EMPTY_ENVELOPE_SIZE = _HEADER.size + _CRC.size  # 13

_PRIORITIES = ("normal", "elevated")
_STACK_TAGS = ("open", "proprietary")
_SENSOR_KINDS = ("camera", "lidar", "radar")


class WireError(ValueError):
    """Base for decode failures; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class BadMagicError(WireError):
    pass


class UnsupportedVersionError(WireError):
    pass


class ChecksumMismatchError(WireError):
    pass


class TruncatedPayloadError(WireError):
    pass


def encode(frames: Sequence[SharedFrame]) -> bytes:
    """Serialize time-sorted frames into one checksummed envelope."""
    parts = [_HEADER.pack(MAGIC, VERSION, len(frames))]
    last_t = None
    for f in frames:
        if last_t is not None and f.t < last_t:
            raise InvalidParameterError("frames must be time-sorted")
        last_t = f.t
        if f.t < 0:
            raise InvalidParameterError("frame time must be >= 0 for wire encoding")
        parts.append(
            _FRAME.pack(
                f.pseudonym & 0xFFFFFFFFFFFFFFFF,
                int(round(f.t * 1e6)),
                f.forged_pose.x,
                f.forged_pose.y,
                f.forged_pose.z,
                f.forged_pose.heading,
                _PRIORITIES.index(f.priority),
                _STACK_TAGS.index(f.stack_tag),
                _SENSOR_KINDS.index(f.payload.sensor_kind),
                f.payload.nominal_rate,
                f.payload.size_bytes,
            )
        )
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def decode(data: bytes) -> list[SharedFrame]:
    """Parse and validate an envelope; raises a distinct error per defect."""
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(
            f"need at least {_HEADER.size} header bytes, got {len(data)}", len(data)
        )
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    expected = _HEADER.size + count * FRAME_SIZE + _CRC.size
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"expected {expected} bytes for {count} frames, got {len(data)}",
            min(expected, len(data)),
        )
    (stored_crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    actual_crc = zlib.crc32(data[: expected - _CRC.size])
    if stored_crc != actual_crc:
        raise ChecksumMismatchError(
            f"checksum {stored_crc:#010x} != computed {actual_crc:#010x}",
            expected - _CRC.size,
        )
    frames = []
    for i in range(count):
        off = _HEADER.size + i * FRAME_SIZE
        (pseudonym, t_us, x, y, z, heading, prio, tag, kind, rate, size) = _FRAME.unpack_from(
            data, off
        )
        if prio >= len(_PRIORITIES) or tag >= len(_STACK_TAGS) or kind >= len(_SENSOR_KINDS):
            # Unreachable via single-byte corruption (CRC catches that first);
            # guards against well-checksummed but malformed producers.
            raise WireError(f"invalid enum value in frame {i}", off)
        frames.append(
            SharedFrame(
                pseudonym=pseudonym,
                t=t_us / 1e6,
                forged_pose=Pose(x, y, z, heading),
                payload=PayloadDescriptor(
                    sensor_kind=_SENSOR_KINDS[kind], nominal_rate=rate, size_bytes=size
                ),
                priority=_PRIORITIES[prio],
                stack_tag=_STACK_TAGS[tag],
            )
        )
    return frames


def frame_to_dict(f: SharedFrame) -> dict:
    return {
        "pseudonym": f.pseudonym,
        "t": f.t,
        "forged_pose": {
            "x": f.forged_pose.x,
            "y": f.forged_pose.y,
            "z": f.forged_pose.z,
            "heading": f.forged_pose.heading,
        },
        "payload": {
            "sensor_kind": f.payload.sensor_kind,
            "nominal_rate": f.payload.nominal_rate,
            "size_bytes": f.payload.size_bytes,
        },
        "priority": f.priority,
        "stack_tag": f.stack_tag,
    }


def frame_from_dict(d: dict) -> SharedFrame:
    pose = d["forged_pose"]
    payload = d["payload"]
    return SharedFrame(
        pseudonym=int(d["pseudonym"]),
        t=float(d["t"]),
        forged_pose=Pose(pose["x"], pose["y"], pose["z"], pose["heading"]),
        payload=PayloadDescriptor(
            sensor_kind=payload["sensor_kind"],
            nominal_rate=float(payload["nominal_rate"]),
            size_bytes=int(payload["size_bytes"]),
        ),
        priority=d["priority"],
        stack_tag=d["stack_tag"],
    )


def frames_to_json(frames: Sequence[SharedFrame]) -> str:
    doc = {"format_version": VERSION, "frames": [frame_to_dict(f) for f in frames]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def frames_from_json(text: str) -> list[SharedFrame]:
    doc = json.loads(text)
    if doc.get("format_version") != VERSION:
        raise UnsupportedVersionError(f"unsupported version {doc.get('format_version')}", 0)
    return [frame_from_dict(d) for d in doc["frames"]]


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "format_version": VERSION,
        "scenario_id": scenario.scenario_id,
        "duration": scenario.duration,
        "dt": scenario.dt,
        "ego_id": scenario.ego_id,
        "rng_seed": scenario.rng_seed,
        "trajectories": [
            {
                "vehicle_id": t.vehicle_id,
                "dt": t.dt,
                "poses": [[p.x, p.y, p.z, p.heading] for p in t.poses],
            }
            for t in scenario.trajectories
        ],
        "world": {"points": scenario.world.points.tolist()},
    }


def scenario_to_json(scenario: Scenario) -> str:
    return json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))


def scenario_from_dict(doc: dict) -> Scenario:
    if doc.get("format_version") != VERSION:
        raise UnsupportedVersionError(f"unsupported version {doc.get('format_version')}", 0)
    trajectories = [
        Trajectory(
            vehicle_id=t["vehicle_id"],
            dt=float(t["dt"]),
            poses=[Pose(*p) for p in t["poses"]],
        )
        for t in doc["trajectories"]
    ]
    world = PointCloud(np.asarray(doc["world"]["points"], dtype=float).reshape(-1, 3))
    return Scenario(
        scenario_id=doc["scenario_id"],
        duration=float(doc["duration"]),
        dt=float(doc["dt"]),
        trajectories=trajectories,
        ego_id=doc["ego_id"],
        world=world,
        rng_seed=int(doc["rng_seed"]),
    )


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))
