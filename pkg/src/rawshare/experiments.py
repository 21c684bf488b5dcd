"""Experiment runner: reproducible studies emitting CSV, JSON, and SVG artifacts.

Four experiments are available: the noise-level privacy sweep, the novel-view
context-length study, the dual-stack schedule sweep, and a billing demo.
Given a config and a seed, every output byte except the summary timestamp is
deterministic.
"""

from __future__ import annotations

import copy
import datetime
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pydantic
import yaml
from scipy import stats

from . import __version__
from .adversary import SweepSpec, rollout_sweep
from .billing import Tariff, invoice_to_dict, meter, settle
from .nvs import (
    CameraIntrinsics,
    apply_random_mask,
    context_table_to_csv,
    depth_map_to_cloud,
    hole_fraction_vs_context,
    lateral_offset_pose,
    render_depth,
)
from .obfuscation import PseudonymPolicy
from .scene import LAYOUTS, PointCloud, Pose, corridor_world
from .scheduler import (
    DemandRequest,
    StackConfig,
    build_timeline,
    effective_rates,
    timeline_summary,
    timeline_to_csv,
)
from .svgplot import Series, line_chart

EXPERIMENTS = ("privacy-sweep", "nvs-context", "schedule", "billing-demo")
OUT_DIR_ENV = "RAWSHARE_OUT_DIR"

# Published large-scale anchor for the privacy sweep, reported for context
# next to desk-scale results; never a pass/fail target here.
REFERENCE_ANCHOR = {
    "offset_m": 12.0,
    "confusion_rate": 0.25,
    "rmse_m": 45.0,
    "note": (
        "reported large-scale dataset anchor at a 12 m offset; synthetic "
        "desk-scale runs check trends, not these absolute values"
    ),
}


class ConfigParseError(ValueError):
    """Config file could not be parsed into a valid experiment config."""

    def __init__(self, message: str, details: list | None = None):
        super().__init__(message)
        self.details = details or []


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def as_dict(self) -> dict:
        return {"path": self.path, "message": self.message}


class ConstraintViolationError(ValueError):
    def __init__(self, violations: list[Violation]):
        super().__init__(
            "; ".join(f"{v.path}: {v.message}" for v in violations) or "constraint violation"
        )
        self.violations = violations


class ScenarioSpecModel(pydantic.BaseModel):
    layouts: list[str] = list(LAYOUTS)
    n_scenes: int = 20
    n_vehicles: int = 8
    duration: float = 20.0
    dt: float = 0.1


class PrivacySpecModel(pydantic.BaseModel):
    sigmas: list[float] = [0.0, 2.0, 4.0, 8.0, 12.0, 16.0]
    rollouts_per_scene: int = 50
    share_rate: Optional[float] = None
    gate_radius: float = 25.0
    sensing_radius: float = 100.0
    policy_kind: str = "gaussian"
    pseudonym_mode: str = "constant"
    pseudonym_k: Optional[int] = None


class NvsSpecModel(pydantic.BaseModel):
    image_width: int = 128
    image_height: int = 96
    fx: float = 110.0
    fy: float = 110.0
    context_lengths: list[int] = [1, 2, 4, 8]
    novel_offset: float = 2.0
    frame_step: float = 2.0
    camera_height: float = 1.5
    start_x: float = 6.0
    mask_fraction: float = 0.0
    corridor_length: float = 60.0
    corridor_half_width: float = 5.0
    corridor_wall_height: float = 6.0
    corridor_density: float = 220.0


class ScheduleSpecModel(pydantic.BaseModel):
    proprietary_period: float = 0.050
    open_period: float = 0.200
    swap_latency_values: list[float] = [0.0, 0.002, 0.005, 0.008]
    proprietary_duration: float = 0.030
    open_duration: float = 0.040
    compute_budget: float = 1.0
    e2e_deadline: float = 0.5
    horizon: float = 10.0
    n_demands: int = 40
    elevated_fraction: float = 0.25
    network_delay: float = 0.01


class BillingSpecModel(pydantic.BaseModel):
    unit_cost: int = 100
    priority_multiplier: float = 2.0
    subscription_flat: int = 500
    n_sharers: int = 5
    n_recipients: int = 5
    request_counts: list[int] = [10, 20, 40, 80]
    elevated_fraction: float = 0.25
    horizon: float = 10.0


class ExperimentConfig(pydantic.BaseModel):
    experiment: Literal["privacy-sweep", "nvs-context", "schedule", "billing-demo"]
    seed: int = 0
    out_dir: Optional[str] = None
    scenario: ScenarioSpecModel = pydantic.Field(default_factory=ScenarioSpecModel)
    privacy: PrivacySpecModel = pydantic.Field(default_factory=PrivacySpecModel)
    nvs: NvsSpecModel = pydantic.Field(default_factory=NvsSpecModel)
    schedule: ScheduleSpecModel = pydantic.Field(default_factory=ScheduleSpecModel)
    billing: BillingSpecModel = pydantic.Field(default_factory=BillingSpecModel)

    model_config = pydantic.ConfigDict(extra="forbid")


def load_config_file(path: str | Path) -> dict:
    """Read a YAML (or JSON, which YAML subsumes) config file into a mapping."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigParseError("config must be a mapping at the top level")
    return raw


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides; values are parsed as YAML scalars."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigParseError(f"override {item!r} is not of the form key=value")
        path, _, value_text = item.partition("=")
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigParseError(f"override {item!r} has an empty key path")
        try:
            value = yaml.safe_load(value_text)
        except yaml.YAMLError:
            value = value_text
        node = out
        for k in keys[:-1]:
            nxt = node.get(k)
            if not isinstance(nxt, dict):
                nxt = {}
                node[k] = nxt
            node = nxt
        node[keys[-1]] = value
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    """Parse a raw mapping into a typed config; all type errors reported at once."""
    try:
        return ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        details = [
            {"path": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
            for e in exc.errors()
        ]
        raise ConfigParseError("invalid experiment config", details) from None


def validate_config(cfg: ExperimentConfig) -> list[Violation]:
    """Every semantic constraint checked without running; all violations listed."""
    v: list[Violation] = []
    sc = cfg.scenario
    if sc.dt <= 0:
        v.append(Violation("scenario.dt", "must be positive"))
    elif sc.duration < 2 * sc.dt:
        v.append(Violation("scenario.duration", "must be at least 2*dt"))
    if sc.n_vehicles < 2:
        v.append(Violation("scenario.n_vehicles", "need at least 2 vehicles"))
    if sc.n_scenes < 1:
        v.append(Violation("scenario.n_scenes", "need at least 1 scene"))
    for layout in sc.layouts:
        if layout not in LAYOUTS:
            v.append(Violation("scenario.layouts", f"unknown layout {layout!r}"))

    pr = cfg.privacy
    if any(s < 0 for s in pr.sigmas) or not pr.sigmas:
        v.append(Violation("privacy.sigmas", "need a non-empty list of non-negative values"))
    if pr.rollouts_per_scene < 1:
        v.append(Violation("privacy.rollouts_per_scene", "must be >= 1"))
    if pr.gate_radius <= 0:
        v.append(Violation("privacy.gate_radius", "must be positive"))
    if pr.sensing_radius <= 0:
        v.append(Violation("privacy.sensing_radius", "must be positive"))
    if pr.share_rate is not None and sc.dt > 0 and pr.share_rate > 1.0 / sc.dt + 1e-9:
        v.append(Violation("privacy.share_rate", "cannot exceed the scenario frame rate"))
    if pr.policy_kind not in ("gaussian", "fixed-offset"):
        v.append(Violation("privacy.policy_kind", "must be gaussian or fixed-offset"))
    if pr.pseudonym_mode not in ("constant", "rotate-every-k-frames"):
        v.append(Violation("privacy.pseudonym_mode", "unknown mode"))
    elif pr.pseudonym_mode == "rotate-every-k-frames" and (pr.pseudonym_k or 0) < 1:
        v.append(Violation("privacy.pseudonym_k", "rotation requires k >= 1"))
    elif pr.pseudonym_mode == "constant" and pr.pseudonym_k is not None:
        v.append(Violation("privacy.pseudonym_k", "only valid for rotation mode"))

    nv = cfg.nvs
    if nv.image_width < 1 or nv.image_height < 1:
        v.append(Violation("nvs.image_width", "image must be at least 1x1"))
    if nv.fx <= 0 or nv.fy <= 0:
        v.append(Violation("nvs.fx", "focal lengths must be positive"))
    if not nv.context_lengths or nv.context_lengths != sorted(nv.context_lengths):
        v.append(Violation("nvs.context_lengths", "must be non-empty and sorted ascending"))
    elif nv.context_lengths[0] < 1:
        v.append(Violation("nvs.context_lengths", "context lengths must be >= 1"))
    if not 0 <= nv.mask_fraction <= 1:
        v.append(Violation("nvs.mask_fraction", "must lie in [0, 1]"))
    if nv.frame_step <= 0 or nv.corridor_length <= 0 or nv.corridor_half_width <= 0:
        v.append(Violation("nvs.frame_step", "geometry parameters must be positive"))

    sd = cfg.schedule
    if sd.proprietary_period <= 0:
        v.append(Violation("schedule.proprietary_period", "must be positive"))
    if sd.open_period < sd.proprietary_period:
        v.append(
            Violation("schedule.open_period", "StackConfig: open_period must be >= proprietary_period")
        )
    if not 0 < sd.compute_budget <= 1:
        v.append(Violation("schedule.compute_budget", "must lie in (0, 1]"))
    if sd.proprietary_duration <= 0 or sd.open_duration <= 0 or sd.e2e_deadline <= 0:
        v.append(Violation("schedule.open_duration", "durations and deadline must be positive"))
    if sd.horizon <= 0:
        v.append(Violation("schedule.horizon", "must be positive"))
    if any(s < 0 for s in sd.swap_latency_values) or not sd.swap_latency_values:
        v.append(Violation("schedule.swap_latency_values", "need non-negative values"))
    if not 0 <= sd.elevated_fraction <= 1:
        v.append(Violation("schedule.elevated_fraction", "must lie in [0, 1]"))

    bl = cfg.billing
    if bl.unit_cost < 0 or bl.subscription_flat < 0:
        v.append(Violation("billing.unit_cost", "costs must be non-negative"))
    if bl.priority_multiplier < 1:
        v.append(Violation("billing.priority_multiplier", "must be >= 1"))
    if bl.n_sharers < 1 or bl.n_recipients < 1:
        v.append(Violation("billing.n_sharers", "need at least one sharer and recipient"))
    if not bl.request_counts or any(n < 0 for n in bl.request_counts):
        v.append(Violation("billing.request_counts", "need non-negative counts"))
    return v


@dataclass
class ExperimentArtifacts:
    results_csv: str
    summary: dict
    plot_svg: str
    extra_files: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, content in [
            ("results.csv", self.results_csv),
            ("summary.json", json.dumps(self.summary, indent=2, sort_keys=True) + "\n"),
            ("plot.svg", self.plot_svg),
            *self.extra_files.items(),
        ]:
            path = out / name
            path.write_text(content, encoding="utf-8")
            written.append(path)
        return written


def _base_summary(cfg: ExperimentConfig, seed: int) -> dict:
    return {
        "experiment": cfg.experiment,
        "seed": seed,
        "tool_version": __version__,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": cfg.model_dump(),
    }


def _run_privacy_sweep(cfg: ExperimentConfig, seed: int, jobs: int) -> ExperimentArtifacts:
    sc, pr = cfg.scenario, cfg.privacy
    pseudonym = (
        PseudonymPolicy()
        if pr.pseudonym_mode == "constant"
        else PseudonymPolicy(mode="rotate-every-k-frames", k=pr.pseudonym_k)
    )
    spec = SweepSpec(
        layouts=tuple(sc.layouts),
        n_scenes=sc.n_scenes,
        n_vehicles=sc.n_vehicles,
        duration=sc.duration,
        dt=sc.dt,
        share_rate=pr.share_rate,
        gate_radius=pr.gate_radius,
        sensing_radius=pr.sensing_radius,
        policy_kind=pr.policy_kind,
        pseudonym=pseudonym,
    )
    table = rollout_sweep(spec, pr.sigmas, pr.rollouts_per_scene, seed, n_jobs=jobs)

    sigmas = [r.sigma for r in table.rows]
    confusions = [r.mean_confusion for r in table.rows]
    rmses = [r.mean_rmse for r in table.rows]
    if len(sigmas) > 1:
        spearman = float(stats.spearmanr(sigmas, confusions).statistic)
    else:
        spearman = math.nan
    summary = _base_summary(cfg, seed)
    summary.update(
        {
            "rows": [
                {
                    "sigma": r.sigma,
                    "mean_confusion": r.mean_confusion,
                    "sd_confusion": r.sd_confusion,
                    "mean_rmse": r.mean_rmse,
                    "sd_rmse": r.sd_rmse,
                    "mean_rmse_matched": r.mean_rmse_matched,
                    "sd_rmse_matched": r.sd_rmse_matched,
                    "n_rollouts": r.n_rollouts,
                    "skipped": r.skipped,
                }
                for r in table.rows
            ],
            "spearman_confusion_vs_sigma": spearman,
            "reference_anchor": REFERENCE_ANCHOR,
        }
    )
    plot = line_chart(
        [Series("mean_confusion", sigmas, confusions), Series("mean_rmse", sigmas, rmses)],
        title="Privacy sweep",
        xlabel="noise level sigma (m)",
        ylabel="metric",
    )
    return ExperimentArtifacts(results_csv=table.to_csv(), summary=summary, plot_svg=plot)


def _run_nvs_context(cfg: ExperimentConfig, seed: int) -> ExperimentArtifacts:
    nv = cfg.nvs
    intrinsics = CameraIntrinsics(
        fx=nv.fx,
        fy=nv.fy,
        cx=nv.image_width / 2.0,
        cy=nv.image_height / 2.0,
        width=nv.image_width,
        height=nv.image_height,
    )
    world = corridor_world(
        length=nv.corridor_length,
        half_width=nv.corridor_half_width,
        wall_height=nv.corridor_wall_height,
        points_per_m2=nv.corridor_density,
        seed=seed,
    )
    n_frames = nv.context_lengths[-1]
    poses = [
        Pose(nv.start_x + i * nv.frame_step, 0.0, nv.camera_height, 0.0)
        for i in range(n_frames)
    ]
    rows = hole_fraction_vs_context(world, poses, nv.novel_offset, nv.context_lengths, intrinsics)

    # Export the richest novel render, optionally with the random-mask defense.
    captures = [
        depth_map_to_cloud(intrinsics, p, render_depth(intrinsics, p, world).depth)
        for p in poses
    ]
    fused = PointCloud.concatenate(captures)
    novel_pose = lateral_offset_pose(poses[-1], nv.novel_offset)
    novel = render_depth(intrinsics, novel_pose, fused).depth
    masked_fraction = None
    if nv.mask_fraction > 0:
        novel = apply_random_mask(novel, nv.mask_fraction, seed)
        masked_fraction = novel.hole_fraction()

    summary = _base_summary(cfg, seed)
    summary.update(
        {
            "rows": [
                {
                    "context_length": r.context_length,
                    "novel_offset": r.novel_offset,
                    "hole_fraction": r.hole_fraction,
                    "points_rendered": r.points_rendered,
                }
                for r in rows
            ],
            "hole_fraction_after_mask": masked_fraction,
            "world_points": len(world),
        }
    )
    plot = line_chart(
        [Series("hole_fraction", [r.context_length for r in rows], [r.hole_fraction for r in rows])],
        title="Novel-view holes vs fused context",
        xlabel="context_length (frames)",
        ylabel="hole_fraction",
    )
    return ExperimentArtifacts(
        results_csv=context_table_to_csv(rows),
        summary=summary,
        plot_svg=plot,
        extra_files={"novel_depth.txt": novel.to_ascii_grid()},
    )


def _synthetic_demands(
    n: int, horizon: float, elevated_fraction: float, n_recipients: int, seed: int
) -> list[DemandRequest]:
    rng = np.random.default_rng(np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, 0xDE)))
    times = np.sort(rng.uniform(0.0, horizon * 0.95, size=n))
    elevated = rng.random(n) < elevated_fraction
    recipients = rng.integers(0, n_recipients, size=n)
    return [
        DemandRequest(
            t=float(times[i]),
            recipient_id=f"r{int(recipients[i])}",
            priority="elevated" if elevated[i] else "normal",
        )
        for i in range(n)
    ]


def _run_schedule(cfg: ExperimentConfig, seed: int) -> ExperimentArtifacts:
    sd = cfg.schedule
    demands = _synthetic_demands(sd.n_demands, sd.horizon, sd.elevated_fraction, 4, seed)
    rows = []
    base_timeline = None
    for swap in sd.swap_latency_values:
        config = StackConfig(
            proprietary_period=sd.proprietary_period,
            open_period=sd.open_period,
            swap_latency=swap,
            compute_budget=sd.compute_budget,
            e2e_deadline=sd.e2e_deadline,
            proprietary_duration=sd.proprietary_duration,
            open_duration=sd.open_duration,
        )
        timeline = build_timeline(config, demands, sd.horizon)
        if base_timeline is None:
            base_timeline = timeline
        rates = effective_rates(timeline)
        latencies = [
            rec.t_produced - d.t + sd.network_delay
            for rec in timeline.ledger
            for d in rec.served_requests
        ]
        rows.append(
            {
                "swap_latency": swap,
                "open_hz": rates.open_hz,
                "proprietary_hz": rates.proprietary_hz,
                "swap_count": rates.swap_count,
                "utilization": rates.utilization,
                "mean_e2e_latency": float(np.mean(latencies)) if latencies else math.nan,
            }
        )

    header = "swap_latency,open_hz,proprietary_hz,swap_count,utilization,mean_e2e_latency"
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                [
                    repr(float(r["swap_latency"])),
                    repr(float(r["open_hz"])),
                    repr(float(r["proprietary_hz"])),
                    str(r["swap_count"]),
                    repr(float(r["utilization"])),
                    repr(float(r["mean_e2e_latency"])),
                ]
            )
        )
    results_csv = "\n".join(lines) + "\n"

    summary = _base_summary(cfg, seed)
    summary.update({"rows": rows, "base_timeline": timeline_summary(base_timeline)})
    plot = line_chart(
        [
            Series("utilization", [r["swap_latency"] for r in rows], [r["utilization"] for r in rows]),
            Series(
                "mean_e2e_latency",
                [r["swap_latency"] for r in rows],
                [r["mean_e2e_latency"] for r in rows],
            ),
        ],
        title="Stack-swap schedule sweep",
        xlabel="swap_latency (s)",
        ylabel="metric",
    )
    return ExperimentArtifacts(
        results_csv=results_csv,
        summary=summary,
        plot_svg=plot,
        extra_files={"timeline.csv": timeline_to_csv(base_timeline)},
    )


def _run_billing_demo(cfg: ExperimentConfig, seed: int) -> ExperimentArtifacts:
    bl = cfg.billing
    tariff = Tariff(
        unit_cost=bl.unit_cost,
        priority_multiplier=bl.priority_multiplier,
        subscription_flat=bl.subscription_flat,
    )
    recipients = [f"r{i}" for i in range(bl.n_recipients)]
    config = StackConfig()
    rows = []
    last_invoices = None
    last_matrix = None
    for idx, n_requests in enumerate(bl.request_counts):
        invoices_by_sharer = {}
        for s in range(bl.n_sharers):
            demands = _synthetic_demands(
                n_requests, bl.horizon, bl.elevated_fraction, bl.n_recipients,
                seed + 1000 * idx + s,
            )
            timeline = build_timeline(config, demands, bl.horizon)
            invoices_by_sharer[f"s{s}"] = meter(
                timeline.ledger, tariff, (0.0, bl.horizon + 1.0), recipients
            )
        matrix = settle(invoices_by_sharer, recipients)
        invoice_total = sum(inv.total for invs in invoices_by_sharer.values() for inv in invs)
        rows.append(
            {
                "n_requests": n_requests,
                "invoice_total": invoice_total,
                "settlement_total": matrix.grand_total(),
            }
        )
        last_invoices = invoices_by_sharer
        last_matrix = matrix

    lines = ["n_requests,invoice_total,settlement_total"]
    for r in rows:
        lines.append(f"{r['n_requests']},{r['invoice_total']},{r['settlement_total']}")
    results_csv = "\n".join(lines) + "\n"

    summary = _base_summary(cfg, seed)
    summary.update({"rows": rows, "conservation_exact": all(
        r["invoice_total"] == r["settlement_total"] for r in rows
    )})
    plot = line_chart(
        [Series("invoice_total", [r["n_requests"] for r in rows], [r["invoice_total"] for r in rows])],
        title="Billing demo",
        xlabel="n_requests per sharer",
        ylabel="minor units",
    )
    invoices_doc = {
        sharer: [invoice_to_dict(inv) for inv in invs] for sharer, invs in last_invoices.items()
    }
    return ExperimentArtifacts(
        results_csv=results_csv,
        summary=summary,
        plot_svg=plot,
        extra_files={
            "invoices.json": json.dumps(invoices_doc, indent=2, sort_keys=True) + "\n",
            "settlement.csv": last_matrix.to_csv(),
        },
    )


def run_experiment(
    cfg: ExperimentConfig, seed: int | None = None, jobs: int = 1
) -> ExperimentArtifacts:
    """Validate and run one experiment; raises ConstraintViolationError if invalid."""
    violations = validate_config(cfg)
    if violations:
        raise ConstraintViolationError(violations)
    effective_seed = cfg.seed if seed is None else seed
    if cfg.experiment == "privacy-sweep":
        return _run_privacy_sweep(cfg, effective_seed, jobs)
    if cfg.experiment == "nvs-context":
        return _run_nvs_context(cfg, effective_seed)
    if cfg.experiment == "schedule":
        return _run_schedule(cfg, effective_seed)
    return _run_billing_demo(cfg, effective_seed)


def resolve_out_dir(cfg: ExperimentConfig, flag_value: str | None) -> Path:
    """Output directory precedence: flag, then config, then env var, then ./out."""
    if flag_value:
        return Path(flag_value)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path("out")
