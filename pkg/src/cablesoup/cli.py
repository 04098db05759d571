"""Command-line experiment runner.

    cablesoup <experiment> --seed N [--config FILE] [--out DIR] [--workers K] [--key value ...]

Settings resolve as built-in defaults < ``key=value`` config file < flags.
Each run writes ``<out>/<experiment>/report.json`` plus plain CSV/JSON data
files. Exit codes: 0 success, 1 statistical check not met, 2 usage or input
error (a JSON error record goes to stderr and ``error.json``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, io
from .errors import CableSoupError, UsageError
from .experiments import DEFAULTS, RUNNERS, default_workers

ENV_OUTPUT = "CABLESOUP_OUTPUT_DIR"
DEFAULT_OUTPUT = "cablesoup-output"

TYPES = {
    "graph": str,
    "c": float,
    "J": int,
    "route": str,
    "j_min": int,
    "input": str,
    "a": float,
    "eta": float,
    "replicas": int,
    "tolerance": float,
    "delta": float,
    "x0": float,
    "alpha": float,
    "k": int,
    "tau0": float,
    "h": float,
    "x": float,
    "step": float,
    "cs": str,
    "vertex": str,
    "l": float,
    "seed": int,
    "workers": int,
    "out": str,
}

RANGES = {
    "c": lambda v: v > 0,
    "J": lambda v: 1 <= v <= 26,
    "j_min": lambda v: v >= 0,
    "a": lambda v: v > 0,
    "eta": lambda v: 0 <= v < 1,
    "replicas": lambda v: v >= 1,
    "tolerance": lambda v: v > 0,
    "delta": lambda v: v >= 0,
    "x0": lambda v: v >= 0,
    "alpha": lambda v: 0 < v < 1,
    "k": lambda v: v >= 1,
    "h": lambda v: v > 0,
    "x": lambda v: v >= 0,
    "step": lambda v: v > 0,
    "l": lambda v: v > 0,
    "seed": lambda v: v >= 0,
    "workers": lambda v: v >= 1,
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cablesoup", description="Cable-graph loop-soup experiments.")
    parser.add_argument("--version", action="version", version=f"cablesoup {__version__}")
    sub = parser.add_subparsers(dest="experiment", metavar="experiment")
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int, help="root seed (required here or in the config)")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
        p.add_argument("--workers", type=int, help="worker processes (default: available cores)")
        for key, value in defaults.items():
            p.add_argument(_flag(key), dest=key, type=TYPES[key], default=None,
                           help=f"default: {value}")
    return parser


def read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(experiment: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[experiment])
    cfg.update({"seed": None, "workers": None, "out": None})
    if args.config:
        for key, value in read_config(args.config).items():
            if key not in cfg:
                raise UsageError(f"unknown setting {key!r} for {experiment}")
            cfg[key] = value
    for key in list(cfg):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key, value in cfg.items():
        if value is None or value == "":
            cfg[key] = None
            continue
        try:
            cfg[key] = TYPES[key](value)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {value!r}") from None
        if key in RANGES and not RANGES[key](cfg[key]):
            raise UsageError(f"{key}={cfg[key]!r} is out of range")
    if cfg["seed"] is None:
        raise UsageError("a seed is required (--seed or seed= in the config)")
    if cfg["workers"] is None:
        cfg["workers"] = default_workers()
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(ENV_OUTPUT, DEFAULT_OUTPUT)
    return cfg


def _error_record(exc: BaseException, experiment, argv) -> dict:
    return {
        "error": type(exc).__name__,
        "message": str(exc),
        "experiment": experiment,
        "argv": list(argv),
    }


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints its own message; keep its code for --help/--version
        if exc.code in (0, None):
            return 0
        print(json.dumps(_error_record(UsageError("bad command line"), None, argv)), file=sys.stderr)
        return 2
    if args.experiment is None:
        parser.print_help(sys.stderr)
        return 2

    out_dir = None
    try:
        cfg = resolve(args.experiment, args)
        out_dir = Path(cfg["out"]) / args.experiment
        out_dir.mkdir(parents=True, exist_ok=True)
        results, passed = RUNNERS[args.experiment]({k: v for k, v in cfg.items()}, out_dir, cfg["workers"])
    except (CableSoupError, OSError, ValueError) as exc:
        record = _error_record(exc, args.experiment, argv)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if out_dir is not None:
            try:
                io.write_json(out_dir / "error.json", record)
            except OSError:
                pass
        return 2
    except Exception as exc:  # pragma: no cover - unexpected failures still get a record
        record = _error_record(exc, args.experiment, argv)
        record["traceback"] = traceback.format_exc()
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2

    report_cfg = {k: v for k, v in cfg.items() if k not in ("workers", "out")}
    report = {
        "experiment": args.experiment,
        "version": __version__,
        "config": report_cfg,
        "seed": cfg["seed"],
        "passed": bool(passed),
        "results": results,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    io.write_json(out_dir / "report.json", report)
    status = "PASS" if passed else "FAIL"
    print(f"{args.experiment}: {status} -> {out_dir / 'report.json'}")
    return 0 if passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
