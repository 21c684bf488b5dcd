"""Thin command-line client for the experiment service.

`run` and `validate` build the same request payloads the HTTP API accepts and
execute them in-process by default, or against a remote service when --server
is given. Artifact files are always written client-side from the response, so
local and remote runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from . import __version__
from .experiments import (
    ConfigParseError,
    ConstraintViolationError,
    apply_overrides,
    load_config_file,
    parse_config,
    resolve_out_dir,
    run_experiment,
    validate_config,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG_PARSE = 2
EXIT_CONSTRAINT = 3
EXIT_IO = 4


def _print_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": {"kind": kind, "message": message, **extra}}, sort_keys=True))


def _run_remote(server: str, payload: dict, client: httpx.Client | None) -> dict:
    own_client = client or httpx.Client(base_url=server, timeout=600.0)
    try:
        resp = own_client.post("/experiments/run", json=payload)
        body = resp.json()
        if resp.status_code != 200:
            err = body.get("error", {"kind": "server-error", "message": str(body)})
            raise RuntimeError(json.dumps(err, sort_keys=True))
        return body
    finally:
        if client is None:
            own_client.close()


def cmd_run(args: argparse.Namespace, client: httpx.Client | None = None) -> int:
    try:
        raw = apply_overrides(load_config_file(args.config), args.set or [])
        cfg = parse_config(raw)
    except ConfigParseError as exc:
        _print_error("config-parse", str(exc), details=exc.details)
        return EXIT_CONFIG_PARSE

    try:
        if args.server:
            payload = {
                "config": raw,
                "overrides": [],
                "seed": args.seed,
                "jobs": args.jobs,
            }
            body = _run_remote(args.server, payload, client)
            results_csv = body["results_csv"]
            summary = body["summary"]
            plot_svg = body["plot_svg"]
            extra_files = body.get("extra_files", {})
        else:
            artifacts = run_experiment(cfg, seed=args.seed, jobs=args.jobs)
            results_csv = artifacts.results_csv
            summary = artifacts.summary
            plot_svg = artifacts.plot_svg
            extra_files = artifacts.extra_files
    except ConstraintViolationError as exc:
        _print_error(
            "constraint-violation", str(exc), violations=[v.as_dict() for v in exc.violations]
        )
        return EXIT_CONSTRAINT
    except RuntimeError as exc:
        _print_error("server-error", str(exc))
        return EXIT_ERROR

    out_dir = resolve_out_dir(cfg, args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.csv").write_text(results_csv, encoding="utf-8")
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out_dir / "plot.svg").write_text(plot_svg, encoding="utf-8")
        for name, content in extra_files.items():
            (out_dir / name).write_text(content, encoding="utf-8")
    except OSError as exc:
        _print_error("io", f"cannot write artifacts: {exc}")
        return EXIT_IO
    print(f"wrote {out_dir / 'results.csv'}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        raw = load_config_file(args.config)
    except ConfigParseError as exc:
        _print_error("config-parse", str(exc), details=exc.details)
        return EXIT_CONFIG_PARSE
    try:
        cfg = parse_config(raw)
    except ConfigParseError as exc:
        print(json.dumps({"valid": False, "violations": exc.details}, indent=2, sort_keys=True))
        return EXIT_CONSTRAINT
    violations = validate_config(cfg)
    print(
        json.dumps(
            {"valid": not violations, "violations": [v.as_dict() for v in violations]},
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK if not violations else EXIT_CONSTRAINT


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rawshare", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rawshare {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", help="path to the YAML config")
    run.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config entry by dotted path (repeatable)",
    )
    run.add_argument("--out", metavar="DIR", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--jobs", type=int, default=1, help="parallel rollout workers")
    run.add_argument("--server", default=None, help="run via a remote service URL")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config", help="path to the YAML config")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "validate":
        return cmd_validate(args)
    return cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
