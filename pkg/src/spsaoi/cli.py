"""Command-line entry point: ``spsaoi MODE [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration,
3 I/O error.  Failures print a JSON error report on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from .config import ConfigError
from .experiment import MODES, ExperimentSpec, OutputError, load_yaml, merge_overrides, run
from .pmf import DomainError

ENV_OUT = "SPSAOI_OUT"
ENV_THREADS = "SPSAOI_THREADS"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spsaoi",
        description="AoI under semi-persistent scheduling: simulation, analytic pmf, validation.")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", help="YAML experiment file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, dotted keys allowed (repeatable); "
                             "V, m, p_E are shorthands for the system fields")
    parser.add_argument("--out", help=f"output directory (env {ENV_OUT})")
    parser.add_argument("--seed", type=int, help="simulation seed")
    parser.add_argument("--threads", type=int, help=f"worker processes for sweeps (env {ENV_THREADS})")
    parser.add_argument("--format", help="comma-separated subset of csv,json")
    parser.add_argument("--dump-trace", action="store_true", help="write the binary trace dump")
    return parser


def parse_overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value of {key}: {exc}") from None
    return out


def resolve_spec(args, environ=None) -> ExperimentSpec:
    """Config file < environment < command-line flags."""
    environ = os.environ if environ is None else environ
    data = load_yaml(args.config) if args.config else {}
    overrides = {"mode": args.mode}
    if environ.get(ENV_OUT):
        overrides["output_dir"] = environ[ENV_OUT]
    if environ.get(ENV_THREADS):
        try:
            overrides["threads"] = int(environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    overrides.update(parse_overrides(args.overrides))
    if args.out:
        overrides["output_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.format:
        overrides["formats"] = args.format
    if args.dump_trace:
        overrides["dump_trace"] = True
    if args.seed is not None:
        overrides["system.seed"] = args.seed
    return ExperimentSpec.from_mapping(merge_overrides(data, overrides))


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = resolve_spec(args)
    except (ConfigError, DomainError) as exc:
        return _fail(2, "config", exc)
    except OutputError as exc:
        return _fail(3, "io", exc)
    try:
        summary = run(spec)
    except (ConfigError, DomainError) as exc:
        return _fail(2, "config", exc)
    except OSError as exc:
        return _fail(3, "io", exc)
    except Exception as exc:  # noqa: BLE001 - report every failure as JSON
        return _fail(1, type(exc).__name__, exc)
    print(json.dumps({"mode": spec.mode, "output_dir": str(spec.output_dir),
                      "points": len(summary.get("points", [summary]))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
