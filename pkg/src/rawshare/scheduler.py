"""Duty-cycled swap between a proprietary and an open sensor stack.

One sensor pipeline runs exactly one stack per grid slot. Open slots replace
proprietary slots on the shared grid (so the effective proprietary rate drops
below its nominal value; reports carry a note to that effect). Elevated
demands pull the next grid slot open ahead of the periodic cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import InvalidParameterError

OPEN = "open"
PROPRIETARY = "proprietary"

REPLACEMENT_NOTE = (
    "open slots replace proprietary slots on the shared sensor grid, so the "
    "effective proprietary rate is below its nominal period"
)

_US = 1_000_000  # internal time base: integer microseconds


class InfeasibleConfigError(ValueError):
    """Timeline construction rejected; message names the violated constraint."""


class NoOpenSlotError(RuntimeError):
    """No open slot exists at or after the requested time within the horizon."""


def _to_us(seconds: float) -> int:
    return int(round(seconds * _US))


@dataclass(frozen=True)
class StackConfig:
    """Timing model of the dual-stack pipeline; all times in seconds."""

    proprietary_period: float = 0.050
    open_period: float = 0.200
    swap_latency: float = 0.0
    compute_budget: float = 1.0
    e2e_deadline: float = 0.5
    proprietary_duration: float = 0.030
    open_duration: float = 0.040

    def __post_init__(self):
        if self.proprietary_period <= 0:
            raise InvalidParameterError("proprietary_period must be positive")
        if self.open_period < self.proprietary_period:
            raise InvalidParameterError("open_period must be >= proprietary_period")
        if self.swap_latency < 0:
            raise InvalidParameterError("swap_latency must be >= 0")
        if not 0 < self.compute_budget <= 1:
            raise InvalidParameterError("compute_budget must lie in (0, 1]")
        if self.e2e_deadline <= 0 or self.proprietary_duration <= 0 or self.open_duration <= 0:
            raise InvalidParameterError("durations and deadline must be positive")


@dataclass(frozen=True)
class DemandRequest:
    t: float
    recipient_id: str
    priority: str = "normal"

    def __post_init__(self):
        if self.priority not in ("normal", "elevated"):
            raise InvalidParameterError(f"unknown priority {self.priority!r}")
        if self.t < 0 or not math.isfinite(self.t):
            raise InvalidParameterError("demand time must be finite and >= 0")


@dataclass
class ScheduleSlot:
    start: float
    duration: float
    stack: str
    swap_overhead_before: float

    @property
    def completion(self) -> float:
        return self.start + self.swap_overhead_before + self.duration


@dataclass
class FrameRecord:
    """One produced frame; open frames list the demands they served."""

    t_produced: float
    stack: str
    served_requests: list[DemandRequest] = field(default_factory=list)
    e2e_latency: float = 0.0


@dataclass
class ScheduleTimeline:
    slots: list[ScheduleSlot]
    ledger: list[FrameRecord]
    horizon: float
    config: StackConfig
    unserved: list[DemandRequest] = field(default_factory=list)

    def open_slots(self) -> list[ScheduleSlot]:
        return [s for s in self.slots if s.stack == OPEN]


def build_timeline(
    config: StackConfig, demands: Sequence[DemandRequest], horizon: float
) -> ScheduleTimeline:
    """Lay out grid slots over the horizon and serve demands with open frames.

    Rejects configurations where any slot's swap overhead plus processing
    exceeds its grid period, or total utilization exceeds the compute budget.
    """
    if horizon <= 0:
        raise InvalidParameterError("horizon must be positive")
    demands = sorted(demands, key=lambda d: (d.t, d.recipient_id))
    pp_us = _to_us(config.proprietary_period)
    op_us = None if math.isinf(config.open_period) else _to_us(config.open_period)
    horizon_us = _to_us(horizon)
    n_slots = (horizon_us + pp_us - 1) // pp_us

    open_mask = [False] * n_slots
    if op_us is not None:
        for k in range(n_slots):
            if (k * pp_us) % op_us == 0:
                open_mask[k] = True
    for d in demands:
        if d.priority != "elevated":
            continue
        k = (_to_us(d.t) + pp_us - 1) // pp_us
        if k < n_slots:
            open_mask[k] = True

    slots: list[ScheduleSlot] = []
    prev_stack: str | None = None
    for k in range(n_slots):
        stack = OPEN if open_mask[k] else PROPRIETARY
        overhead = config.swap_latency if (prev_stack is not None and stack != prev_stack) else 0.0
        duration = config.open_duration if stack == OPEN else config.proprietary_duration
        if overhead + duration > config.proprietary_period + 1e-12:
            raise InfeasibleConfigError(
                f"slot {k} ({stack}) needs {overhead + duration:.6f} s but the grid "
                f"period is {config.proprietary_period:.6f} s"
            )
        slots.append(
            ScheduleSlot(
                start=k * pp_us / _US,
                duration=duration,
                stack=stack,
                swap_overhead_before=overhead,
            )
        )
        prev_stack = stack

    utilization = sum(s.duration + s.swap_overhead_before for s in slots) / horizon
    if utilization > config.compute_budget + 1e-12:
        raise InfeasibleConfigError(
            f"utilization {utilization:.6f} exceeds compute_budget {config.compute_budget:.6f}"
        )

    ledger = [FrameRecord(t_produced=s.completion, stack=s.stack) for s in slots]
    open_idx = [i for i, s in enumerate(slots) if s.stack == OPEN]
    unserved: list[DemandRequest] = []
    for d in demands:
        target = None
        for i in open_idx:
            if slots[i].start >= d.t - 1e-12:
                target = i
                break
        if target is None:
            unserved.append(d)
            continue
        rec = ledger[target]
        rec.served_requests.append(d)
        rec.e2e_latency = max(rec.e2e_latency, rec.t_produced - d.t)
    return ScheduleTimeline(
        slots=slots, ledger=ledger, horizon=horizon, config=config, unserved=unserved
    )


@dataclass
class RateReport:
    proprietary_hz: float
    open_hz: float
    swap_count: int
    utilization: float


def effective_rates(timeline: ScheduleTimeline) -> RateReport:
    """Produced-frame rates, swap count, and utilization of a timeline."""
    if not timeline.slots:
        raise InvalidParameterError("timeline has no slots")
    n_open = sum(1 for s in timeline.slots if s.stack == OPEN)
    n_prop = len(timeline.slots) - n_open
    swaps = sum(
        1
        for a, b in zip(timeline.slots, timeline.slots[1:])
        if a.stack != b.stack
    )
    util = sum(s.duration + s.swap_overhead_before for s in timeline.slots) / timeline.horizon
    return RateReport(
        proprietary_hz=n_prop / timeline.horizon,
        open_hz=n_open / timeline.horizon,
        swap_count=swaps,
        utilization=util,
    )


def e2e_latency(
    timeline: ScheduleTimeline, request: DemandRequest, network_delay: float = 0.0
) -> tuple[float, bool]:
    """Completion latency of the first open slot at or after the request time.

    Returns (latency, deadline_met). The timeline should have been built with
    the request in its demand set for elevated priorities to take effect.
    """
    if request.t > timeline.horizon:
        raise InvalidParameterError("request lies beyond the timeline horizon")
    for s in timeline.slots:
        if s.stack == OPEN and s.start >= request.t - 1e-12:
            latency = s.completion - request.t + network_delay
            return latency, latency <= timeline.config.e2e_deadline
    raise NoOpenSlotError(f"no open slot at or after t={request.t:.6f} s")


def timeline_to_csv(timeline: ScheduleTimeline) -> str:
    lines = ["start,duration,stack,overhead"]
    for s in timeline.slots:
        lines.append(
            f"{float(s.start)!r},{float(s.duration)!r},{s.stack},{float(s.swap_overhead_before)!r}"
        )
    return "\n".join(lines) + "\n"


def timeline_summary(timeline: ScheduleTimeline) -> dict:
    rates = effective_rates(timeline)
    return {
        "proprietary_hz": rates.proprietary_hz,
        "open_hz": rates.open_hz,
        "swap_count": rates.swap_count,
        "utilization": rates.utilization,
        "n_slots": len(timeline.slots),
        "unserved_demands": len(timeline.unserved),
        "note": REPLACEMENT_NOTE,
    }
