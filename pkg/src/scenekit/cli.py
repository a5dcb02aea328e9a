"""Command-line entry point.

Subcommands mirror the pipeline stages plus reporting and the mock backend
runner. Exit codes: 0 ok, 2 validation problem, 3 backend failure or
missing backend outputs, 4 pose non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import backend as backend_mod
from . import pipeline
from .errors import (
    ContractViolation,
    DegenerateInput,
    MissingArtifactError,
    OptimizationFailure,
    ValidationError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_NONCONVERGENCE = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenekit",
        description="Deterministic single-view indoor reconstruction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--output-root", default=None, help="override output root")
        p.add_argument("--seed", type=int, default=None, help="override root seed")
        p.add_argument("--workers", type=int, default=1, help="instance-level parallelism")
        return p

    add_stage("analyze", "fuse semantics and depth")
    add_stage("amodal", "build inpainting requests and submit backend jobs")
    add_stage("compose", "register and refine instances, assemble the scene")
    add_stage("eval", "evaluate the composed scene against ground truth")

    rep = sub.add_parser("report", help="summarize a pipeline output tree")
    rep.add_argument("--output-root", required=True)
    rep.add_argument("--json", action="store_true", help="machine-readable output")

    mock = sub.add_parser("mock-backends", help="process pending jobs with mock rules")
    mock.add_argument("--backend-root", default=None, help="job root (default: env or ./backend_jobs)")
    mock.add_argument(
        "--rule",
        action="append",
        default=None,
        metavar="KIND=RULE",
        help="override a mock rule, e.g. amodal_inpaint=identity",
    )
    return parser


def _load_config(args) -> pipeline.PipelineConfig:
    overrides = {}
    if args.output_root is not None:
        overrides["output_root"] = args.output_root
    if args.seed is not None:
        overrides["seed"] = args.seed
    return pipeline.PipelineConfig.from_json_file(args.config, overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command in ("analyze", "amodal", "compose", "eval"):
            stage = "evaluate" if args.command == "eval" else args.command
            cfg = _load_config(args)
            report = pipeline.run_stage(stage, cfg)
            status = "cached" if report.cache_hit else "done"
            print(f"{report.stage}: {status} ({report.elapsed_s:.2f}s)")
            for artifact in report.artifacts:
                print(f"  {artifact}")
            for warning in report.warnings:
                print(f"  warning: {warning}")
            return EXIT_OK
        if args.command == "report":
            payload = pipeline.gather_report(args.output_root)
            if args.json:
                print(json.dumps(payload, indent=2, sort_keys=True))
            else:
                print(pipeline.format_report(payload))
            return EXIT_OK
        if args.command == "mock-backends":
            rules = None
            if args.rule:
                rules = {}
                for spec in args.rule:
                    kind, _, rule = spec.partition("=")
                    if not rule:
                        raise ValidationError(f"bad --rule {spec!r}, expected KIND=RULE")
                    rules[kind] = rule
            results = backend_mod.run_mock_backends(args.backend_root, rules)
            done = sum(1 for s in results.values() if s == "done")
            print(f"mock-backends: {done}/{len(results)} jobs done")
            failed = {k: v for k, v in results.items() if v.startswith("failed")}
            for job_id, status in failed.items():
                print(f"  {job_id}: {status}")
            return EXIT_BACKEND if failed else EXIT_OK
        raise ValidationError(f"unknown command {args.command!r}")
    except pipeline.BackendPendingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except pipeline.NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OptimizationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValidationError, ContractViolation, DegenerateInput, MissingArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
