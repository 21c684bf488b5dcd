"""Pydantic request/response models for the HTTP API.

These mirror the core dataclasses; conversion helpers keep the service layer
thin. Binary wire payloads travel base64-encoded.
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from .. import adversary, billing, obfuscation, scene, scheduler

Priority = Literal["normal", "elevated"]
StackTag = Literal["open", "proprietary"]
SensorKind = Literal["camera", "lidar", "radar"]


class PoseModel(BaseModel):
    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0

    @classmethod
    def from_core(cls, p: scene.Pose) -> "PoseModel":
        return cls(x=p.x, y=p.y, z=p.z, heading=p.heading)

    def to_core(self) -> scene.Pose:
        return scene.Pose(self.x, self.y, self.z, self.heading)


class TrajectoryModel(BaseModel):
    vehicle_id: str
    dt: float
    poses: list[PoseModel]

    @classmethod
    def from_core(cls, t: scene.Trajectory) -> "TrajectoryModel":
        return cls(
            vehicle_id=t.vehicle_id, dt=t.dt, poses=[PoseModel.from_core(p) for p in t.poses]
        )

    def to_core(self) -> scene.Trajectory:
        return scene.Trajectory(
            vehicle_id=self.vehicle_id, dt=self.dt, poses=[p.to_core() for p in self.poses]
        )


class ScenarioModel(BaseModel):
    scenario_id: str
    duration: float
    dt: float
    ego_id: str
    rng_seed: int
    trajectories: list[TrajectoryModel]
    world_points: list[list[float]] = Field(default_factory=list)

    @classmethod
    def from_core(cls, s: scene.Scenario, include_world: bool = True) -> "ScenarioModel":
        return cls(
            scenario_id=s.scenario_id,
            duration=s.duration,
            dt=s.dt,
            ego_id=s.ego_id,
            rng_seed=s.rng_seed,
            trajectories=[TrajectoryModel.from_core(t) for t in s.trajectories],
            world_points=s.world.points.tolist() if include_world else [],
        )

    def to_core(self) -> scene.Scenario:
        return scene.Scenario(
            scenario_id=self.scenario_id,
            duration=self.duration,
            dt=self.dt,
            trajectories=[t.to_core() for t in self.trajectories],
            ego_id=self.ego_id,
            world=scene.PointCloud(np.asarray(self.world_points, dtype=float).reshape(-1, 3)),
            rng_seed=self.rng_seed,
        )


class GenerateScenarioRequest(BaseModel):
    layout: Literal["straight", "grid-intersection", "two-lane-highway"]
    n_vehicles: int = 8
    duration: float = 20.0
    dt: float = 0.1
    seed: int = 0
    include_world: bool = False


class ImportCsvRequest(BaseModel):
    csv_text: str
    dt: Optional[float] = None
    ego_id: Optional[str] = None


class PayloadModel(BaseModel):
    sensor_kind: SensorKind = "camera"
    nominal_rate: float = 10.0
    size_bytes: int = 0

    @classmethod
    def from_core(cls, p: obfuscation.PayloadDescriptor) -> "PayloadModel":
        return cls(sensor_kind=p.sensor_kind, nominal_rate=p.nominal_rate, size_bytes=p.size_bytes)

    def to_core(self) -> obfuscation.PayloadDescriptor:
        return obfuscation.PayloadDescriptor(
            sensor_kind=self.sensor_kind,
            nominal_rate=self.nominal_rate,
            size_bytes=self.size_bytes,
        )


class SharedFrameModel(BaseModel):
    pseudonym: int
    t: float
    forged_pose: PoseModel
    payload: PayloadModel = Field(default_factory=PayloadModel)
    priority: Priority = "normal"
    stack_tag: StackTag = "open"

    @classmethod
    def from_core(cls, f: obfuscation.SharedFrame) -> "SharedFrameModel":
        return cls(
            pseudonym=f.pseudonym,
            t=f.t,
            forged_pose=PoseModel.from_core(f.forged_pose),
            payload=PayloadModel.from_core(f.payload),
            priority=f.priority,
            stack_tag=f.stack_tag,
        )

    def to_core(self) -> obfuscation.SharedFrame:
        return obfuscation.SharedFrame(
            pseudonym=self.pseudonym,
            t=self.t,
            forged_pose=self.forged_pose.to_core(),
            payload=self.payload.to_core(),
            priority=self.priority,
            stack_tag=self.stack_tag,
        )


class ObfuscationPolicyModel(BaseModel):
    kind: Literal["none", "gaussian", "fixed-offset", "smoothed-random-walk"] = "gaussian"
    sigma: float = 0.0
    radius: float = 0.0
    step_sigma: float = 0.0
    max_radius: float = 0.0
    seed: int = 0

    def to_core(self) -> obfuscation.ObfuscationPolicy:
        return obfuscation.ObfuscationPolicy(
            kind=self.kind,
            sigma=self.sigma,
            radius=self.radius,
            step_sigma=self.step_sigma,
            max_radius=self.max_radius,
            seed=self.seed,
        )


class PseudonymPolicyModel(BaseModel):
    mode: Literal["constant", "rotate-every-k-frames"] = "constant"
    k: Optional[int] = None
    seed: int = 0

    def to_core(self) -> obfuscation.PseudonymPolicy:
        return obfuscation.PseudonymPolicy(mode=self.mode, k=self.k, seed=self.seed)


class EvaluatePrivacyRequest(BaseModel):
    scenario: ScenarioModel
    policy: ObfuscationPolicyModel = Field(default_factory=ObfuscationPolicyModel)
    pseudonym: PseudonymPolicyModel = Field(default_factory=PseudonymPolicyModel)
    share_rate: Optional[float] = None
    sensing_radius: float = 100.0
    gate_radius: float = 25.0


class AssignmentResultModel(BaseModel):
    pairs: list[tuple[int, Optional[str]]]
    total_cost: float
    confusion_rate: Optional[float] = None
    rmse: Optional[float] = None
    rmse_matched: Optional[float] = None

    @classmethod
    def from_core(cls, r: adversary.AssignmentResult) -> "AssignmentResultModel":
        return cls(
            pairs=[(tid, vid) for tid, vid in r.pairs],
            total_cost=r.total_cost,
            confusion_rate=r.confusion_rate,
            rmse=r.rmse,
            rmse_matched=r.rmse_matched,
        )


class ContextCurveRequest(BaseModel):
    image_width: int = 128
    image_height: int = 96
    fx: float = 110.0
    fy: float = 110.0
    context_lengths: list[int] = [1, 2, 4, 8]
    novel_offset: float = 2.0
    frame_step: float = 2.0
    camera_height: float = 1.5
    start_x: float = 6.0
    corridor_length: float = 60.0
    corridor_half_width: float = 5.0
    corridor_wall_height: float = 6.0
    corridor_density: float = 220.0
    seed: int = 0


class ContextPointModel(BaseModel):
    context_length: int
    novel_offset: float
    hole_fraction: float
    points_rendered: int


class StackConfigModel(BaseModel):
    proprietary_period: float = 0.050
    open_period: float = 0.200
    swap_latency: float = 0.0
    compute_budget: float = 1.0
    e2e_deadline: float = 0.5
    proprietary_duration: float = 0.030
    open_duration: float = 0.040

    def to_core(self) -> scheduler.StackConfig:
        return scheduler.StackConfig(
            proprietary_period=self.proprietary_period,
            open_period=self.open_period,
            swap_latency=self.swap_latency,
            compute_budget=self.compute_budget,
            e2e_deadline=self.e2e_deadline,
            proprietary_duration=self.proprietary_duration,
            open_duration=self.open_duration,
        )


class DemandModel(BaseModel):
    t: float
    recipient_id: str
    priority: Priority = "normal"

    def to_core(self) -> scheduler.DemandRequest:
        return scheduler.DemandRequest(t=self.t, recipient_id=self.recipient_id, priority=self.priority)

    @classmethod
    def from_core(cls, d: scheduler.DemandRequest) -> "DemandModel":
        return cls(t=d.t, recipient_id=d.recipient_id, priority=d.priority)


class TimelineRequest(BaseModel):
    config: StackConfigModel = Field(default_factory=StackConfigModel)
    demands: list[DemandModel] = Field(default_factory=list)
    horizon: float = 10.0


class SlotModel(BaseModel):
    start: float
    duration: float
    stack: StackTag
    swap_overhead_before: float


class FrameRecordModel(BaseModel):
    t_produced: float
    stack: StackTag
    served_requests: list[DemandModel] = Field(default_factory=list)
    e2e_latency: float = 0.0

    @classmethod
    def from_core(cls, r: scheduler.FrameRecord) -> "FrameRecordModel":
        return cls(
            t_produced=r.t_produced,
            stack=r.stack,
            served_requests=[DemandModel.from_core(d) for d in r.served_requests],
            e2e_latency=r.e2e_latency,
        )

    def to_core(self) -> scheduler.FrameRecord:
        return scheduler.FrameRecord(
            t_produced=self.t_produced,
            stack=self.stack,
            served_requests=[d.to_core() for d in self.served_requests],
            e2e_latency=self.e2e_latency,
        )


class TimelineResponse(BaseModel):
    slots: list[SlotModel]
    ledger: list[FrameRecordModel]
    unserved: list[DemandModel]
    proprietary_hz: float
    open_hz: float
    swap_count: int
    utilization: float
    note: str


class TariffModel(BaseModel):
    unit_cost: int = 1
    priority_multiplier: float = 1.0
    subscription_flat: int = 0

    def to_core(self) -> billing.Tariff:
        return billing.Tariff(
            unit_cost=self.unit_cost,
            priority_multiplier=self.priority_multiplier,
            subscription_flat=self.subscription_flat,
        )


class MeterRequest(BaseModel):
    ledger: list[FrameRecordModel]
    tariff: TariffModel = Field(default_factory=TariffModel)
    period_start: float = 0.0
    period_end: float = 1e9
    recipients: list[str] = Field(default_factory=list)


class LineItemModel(BaseModel):
    t: float
    priority: Priority
    amount: int


class InvoiceModel(BaseModel):
    recipient_id: str
    period: tuple[float, float]
    line_items: list[LineItemModel]
    subscription_flat: int
    total: int

    @classmethod
    def from_core(cls, inv: billing.Invoice) -> "InvoiceModel":
        return cls(
            recipient_id=inv.recipient_id,
            period=inv.period,
            line_items=[
                LineItemModel(t=i.t, priority=i.priority, amount=i.amount)
                for i in inv.line_items
            ],
            subscription_flat=inv.subscription_flat,
            total=inv.total,
        )

    def to_core(self) -> billing.Invoice:
        inv = billing.Invoice(
            recipient_id=self.recipient_id,
            period=self.period,
            subscription_flat=self.subscription_flat,
        )
        inv.line_items = [
            billing.LineItem(t=i.t, priority=i.priority, amount=i.amount) for i in self.line_items
        ]
        return inv


class SettleRequest(BaseModel):
    invoices_by_sharer: dict[str, list[InvoiceModel]]
    recipients: list[str] = Field(default_factory=list)


class SettleResponse(BaseModel):
    entries: dict[str, dict[str, int]]
    grand_total: int


class WireEncodeRequest(BaseModel):
    frames: list[SharedFrameModel]


class WireEncodeResponse(BaseModel):
    data_b64: str
    byte_count: int


class WireDecodeRequest(BaseModel):
    data_b64: str


class WireDecodeResponse(BaseModel):
    frames: list[SharedFrameModel]


class RunExperimentRequest(BaseModel):
    config: dict
    overrides: list[str] = Field(default_factory=list)
    seed: Optional[int] = None
    jobs: int = 1


class RunExperimentResponse(BaseModel):
    results_csv: str
    summary: dict
    plot_svg: str
    extra_files: dict[str, str] = Field(default_factory=dict)


class ValidateRequest(BaseModel):
    config: dict


class ViolationModel(BaseModel):
    path: str
    message: str


class ValidateResponse(BaseModel):
    valid: bool
    violations: list[ViolationModel]


class HealthResponse(BaseModel):
    status: str
    version: str
