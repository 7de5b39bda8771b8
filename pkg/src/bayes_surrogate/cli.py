"""Command-line entry point: ``run``, ``sweep``, ``curve`` and ``validate``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, checks
from .config import config_to_dict, dump_config, load_config
from .errors import ConfigError, PipelineError, SurrogateError
from .pipeline import eta_sweep, learning_curve, run_pipeline, write_report_artifacts, write_table
from .sampler import jsonl_progress

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _str_list(text: str) -> list[str]:
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayes-surrogate",
                                     description="Surrogate-accelerated Bayesian parameter estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes for independent cells")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
        return p

    experiment("run", "run the three-phase pipeline once")
    p = experiment("sweep", "pipeline runs over a complexity x scheme grid")
    p.add_argument("--etas", type=_int_list, required=True, help="e.g. 5,10,15,20")
    p.add_argument("--schemes", type=_str_list, required=True, help="e.g. lhc,posterior,mixed")
    p = experiment("curve", "cross-validated learning curve over training-set sizes")
    p.add_argument("--sizes", type=_int_list, required=True, help="e.g. 100,500,1000,1500")

    p = sub.add_parser("validate", help="run the built-in oracle checks")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def _error_record(exc: BaseException) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        record.update(field=exc.field, line=exc.line)
    if isinstance(exc, PipelineError):
        record["failed_phase"] = exc.report.failed_phase
    return record


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2))


def _experiment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {"command": args.command, "config_path": str(args.config), "out_dir": str(out),
                "version": __version__, "start": _now(), "end": None, "config": None,
                "status": "running"}
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        manifest["config"] = config_to_dict(cfg)
        manifest["config_toml"] = dump_config(cfg)
        _write_manifest(manifest_path, manifest)
        progress = jsonl_progress(sys.stderr) if args.verbose else None
        if args.command == "run":
            try:
                report = run_pipeline(cfg, progress)
            except PipelineError as exc:
                write_report_artifacts(exc.report, out)
                raise
            write_report_artifacts(report, out)
            print(f"cv mean pearson {report.cv_pearson:.4f}, rmse {report.cv_rmse:.4g}; "
                  f"estimation rmse {report.estimation_rmse:.4g}")
        elif args.command == "sweep":
            rows = eta_sweep(cfg, args.etas, args.schemes, jobs=args.jobs)
            write_table(out / "sweep.csv", rows)
        else:
            rows = learning_curve(cfg, args.sizes, jobs=args.jobs)
            write_table(out / "learning_curve.csv", rows)
    except (SurrogateError, OSError) as exc:
        record = _error_record(exc)
        manifest.update(status="failed", end=_now(), error=record)
        _write_manifest(manifest_path, manifest)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_FAILURE
    manifest.update(status="ok", end=_now())
    _write_manifest(manifest_path, manifest)
    return EXIT_OK


def _validate(args) -> int:
    ok = True
    for result in checks.run_all(corrupt_gradient=args.corrupt_gradient):
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
        ok &= result.passed
    return EXIT_OK if ok else EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _validate(args)
    return _experiment(args)


if __name__ == "__main__":
    sys.exit(main())
