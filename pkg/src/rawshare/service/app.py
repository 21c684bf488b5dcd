"""FastAPI service wrapping the simulation core.

Every route is a thin adapter: parse the request model, call the core, and
serialize the result. Experiment artifacts are returned in the response body
so clients (including the CLI) decide where files land.
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..adversary import evaluate_privacy
from ..errors import DegenerateScenarioError, InvalidParameterError
from ..experiments import (
    ConfigParseError,
    ConstraintViolationError,
    apply_overrides,
    parse_config,
    run_experiment,
    validate_config,
)
from ..billing import meter, settle
from ..nvs import CameraIntrinsics, hole_fraction_vs_context
from ..obfuscation import emit_shared_stream
from ..scene import (
    InconsistentVehicleError,
    Pose,
    TrajectoryCsvError,
    corridor_world,
    generate_scenario,
    import_trajectories_text,
)
from ..scheduler import (
    InfeasibleConfigError,
    NoOpenSlotError,
    build_timeline,
    effective_rates,
    REPLACEMENT_NOTE,
)
from .. import wire
from . import schemas


def _error_response(status: int, kind: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"kind": kind, "message": message, **extra}})


def create_app() -> FastAPI:
    app = FastAPI(
        title="rawshare",
        version=__version__,
        description="Location-privacy evaluation service for raw-data cooperative perception",
    )

    @app.exception_handler(InvalidParameterError)
    async def _invalid_parameter(request: Request, exc: InvalidParameterError):
        return _error_response(400, "invalid-parameter", str(exc))

    @app.exception_handler(DegenerateScenarioError)
    async def _degenerate(request: Request, exc: DegenerateScenarioError):
        return _error_response(400, "degenerate-scenario", str(exc))

    @app.exception_handler(InfeasibleConfigError)
    async def _infeasible(request: Request, exc: InfeasibleConfigError):
        return _error_response(400, "infeasible-config", str(exc))

    @app.exception_handler(NoOpenSlotError)
    async def _no_open_slot(request: Request, exc: NoOpenSlotError):
        return _error_response(400, "no-open-slot", str(exc))

    @app.exception_handler(TrajectoryCsvError)
    async def _csv_error(request: Request, exc: TrajectoryCsvError):
        return _error_response(400, "csv-parse", str(exc), line=exc.line)

    @app.exception_handler(InconsistentVehicleError)
    async def _inconsistent(request: Request, exc: InconsistentVehicleError):
        return _error_response(400, "inconsistent-vehicle", str(exc), line=exc.line)

    @app.exception_handler(wire.WireError)
    async def _wire_error(request: Request, exc: wire.WireError):
        kinds = {
            wire.BadMagicError: "bad-magic",
            wire.UnsupportedVersionError: "unsupported-version",
            wire.ChecksumMismatchError: "checksum-mismatch",
            wire.TruncatedPayloadError: "truncated-payload",
        }
        return _error_response(
            400, kinds.get(type(exc), "wire-error"), str(exc), offset=exc.offset
        )

    @app.exception_handler(ConfigParseError)
    async def _config_parse(request: Request, exc: ConfigParseError):
        return _error_response(400, "config-parse", str(exc), details=exc.details)

    @app.exception_handler(ConstraintViolationError)
    async def _constraints(request: Request, exc: ConstraintViolationError):
        return _error_response(
            422,
            "constraint-violation",
            str(exc),
            violations=[v.as_dict() for v in exc.violations],
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/scenario/generate", response_model=schemas.ScenarioModel)
    def scenario_generate(req: schemas.GenerateScenarioRequest) -> schemas.ScenarioModel:
        scenario = generate_scenario(req.layout, req.n_vehicles, req.duration, req.dt, req.seed)
        return schemas.ScenarioModel.from_core(scenario, include_world=req.include_world)

    @app.post("/scenario/import-csv", response_model=schemas.ScenarioModel)
    def scenario_import(req: schemas.ImportCsvRequest) -> schemas.ScenarioModel:
        scenario = import_trajectories_text(req.csv_text, dt=req.dt, ego_id=req.ego_id)
        return schemas.ScenarioModel.from_core(scenario, include_world=False)

    @app.post("/privacy/evaluate", response_model=schemas.AssignmentResultModel)
    def privacy_evaluate(req: schemas.EvaluatePrivacyRequest) -> schemas.AssignmentResultModel:
        scenario = req.scenario.to_core()
        streams = emit_shared_stream(
            scenario, req.policy.to_core(), req.pseudonym.to_core(), req.share_rate
        )
        result = evaluate_privacy(scenario, streams, req.sensing_radius, req.gate_radius)
        return schemas.AssignmentResultModel.from_core(result)

    @app.post("/nvs/context-curve", response_model=list[schemas.ContextPointModel])
    def nvs_context(req: schemas.ContextCurveRequest) -> list[schemas.ContextPointModel]:
        intrinsics = CameraIntrinsics(
            fx=req.fx,
            fy=req.fy,
            cx=req.image_width / 2.0,
            cy=req.image_height / 2.0,
            width=req.image_width,
            height=req.image_height,
        )
        world = corridor_world(
            length=req.corridor_length,
            half_width=req.corridor_half_width,
            wall_height=req.corridor_wall_height,
            points_per_m2=req.corridor_density,
            seed=req.seed,
        )
        poses = [
            Pose(req.start_x + i * req.frame_step, 0.0, req.camera_height, 0.0)
            for i in range(req.context_lengths[-1])
        ]
        rows = hole_fraction_vs_context(
            world, poses, req.novel_offset, req.context_lengths, intrinsics
        )
        return [
            schemas.ContextPointModel(
                context_length=r.context_length,
                novel_offset=r.novel_offset,
                hole_fraction=r.hole_fraction,
                points_rendered=r.points_rendered,
            )
            for r in rows
        ]

    @app.post("/schedule/timeline", response_model=schemas.TimelineResponse)
    def schedule_timeline(req: schemas.TimelineRequest) -> schemas.TimelineResponse:
        timeline = build_timeline(
            req.config.to_core(), [d.to_core() for d in req.demands], req.horizon
        )
        rates = effective_rates(timeline)
        return schemas.TimelineResponse(
            slots=[
                schemas.SlotModel(
                    start=s.start,
                    duration=s.duration,
                    stack=s.stack,
                    swap_overhead_before=s.swap_overhead_before,
                )
                for s in timeline.slots
            ],
            ledger=[schemas.FrameRecordModel.from_core(r) for r in timeline.ledger],
            unserved=[schemas.DemandModel.from_core(d) for d in timeline.unserved],
            proprietary_hz=rates.proprietary_hz,
            open_hz=rates.open_hz,
            swap_count=rates.swap_count,
            utilization=rates.utilization,
            note=REPLACEMENT_NOTE,
        )

    @app.post("/billing/meter", response_model=list[schemas.InvoiceModel])
    def billing_meter(req: schemas.MeterRequest) -> list[schemas.InvoiceModel]:
        invoices = meter(
            [r.to_core() for r in req.ledger],
            req.tariff.to_core(),
            (req.period_start, req.period_end),
            req.recipients,
        )
        return [schemas.InvoiceModel.from_core(inv) for inv in invoices]

    @app.post("/billing/settle", response_model=schemas.SettleResponse)
    def billing_settle(req: schemas.SettleRequest) -> schemas.SettleResponse:
        matrix = settle(
            {
                sharer: [inv.to_core() for inv in invoices]
                for sharer, invoices in req.invoices_by_sharer.items()
            },
            req.recipients,
        )
        return schemas.SettleResponse(entries=matrix.entries, grand_total=matrix.grand_total())

    @app.post("/wire/encode", response_model=schemas.WireEncodeResponse)
    def wire_encode(req: schemas.WireEncodeRequest) -> schemas.WireEncodeResponse:
        data = wire.encode([f.to_core() for f in req.frames])
        return schemas.WireEncodeResponse(
            data_b64=base64.b64encode(data).decode("ascii"), byte_count=len(data)
        )

    @app.post("/wire/decode", response_model=schemas.WireDecodeResponse)
    def wire_decode(req: schemas.WireDecodeRequest) -> schemas.WireDecodeResponse:
        try:
            data = base64.b64decode(req.data_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise InvalidParameterError(f"invalid base64 payload: {exc}") from None
        frames = wire.decode(data)
        return schemas.WireDecodeResponse(
            frames=[schemas.SharedFrameModel.from_core(f) for f in frames]
        )

    @app.post("/experiments/run", response_model=schemas.RunExperimentResponse)
    def experiments_run(req: schemas.RunExperimentRequest) -> schemas.RunExperimentResponse:
        raw = apply_overrides(req.config, req.overrides)
        cfg = parse_config(raw)
        artifacts = run_experiment(cfg, seed=req.seed, jobs=req.jobs)
        return schemas.RunExperimentResponse(
            results_csv=artifacts.results_csv,
            summary=artifacts.summary,
            plot_svg=artifacts.plot_svg,
            extra_files=artifacts.extra_files,
        )

    @app.post("/experiments/validate", response_model=schemas.ValidateResponse)
    def experiments_validate(req: schemas.ValidateRequest) -> schemas.ValidateResponse:
        try:
            cfg = parse_config(req.config)
        except ConfigParseError as exc:
            violations = [schemas.ViolationModel(path=d["path"], message=d["message"]) for d in exc.details]
            return schemas.ValidateResponse(valid=False, violations=violations)
        violations = [
            schemas.ViolationModel(path=v.path, message=v.message) for v in validate_config(cfg)
        ]
        return schemas.ValidateResponse(valid=not violations, violations=violations)

    return app


app = create_app()
