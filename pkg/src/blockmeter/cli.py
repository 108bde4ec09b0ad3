"""Command-line entry points: run, serve, report.

Exit codes: 0 success (failed transactions are data, not errors),
1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from .config import ConfigError, load_config, validate_config
from .monitor import load_records, load_samples
from .orchestrator import run_experiment, start_serve
from .report import ReportError, compare, export, summarize, write_compare

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

LISTEN_ENV = "BLOCKMETER_LISTEN"


def cmd_run(config_path: str, out_dir: str, seed_override: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=seed_override)
    try:
        result = run_experiment(cfg, out_dir)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"run complete: {result.submitted} submitted, {result.committed} committed, "
          f"{result.submitted - result.committed} failed -> {result.out_dir}")
    return EXIT_OK


def cmd_serve(config_path: str, out_dir: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    try:
        handle = start_serve(cfg, out_dir, listen_override=os.environ.get(LISTEN_ENV))
    except OSError as exc:
        print(f"cannot start gateway: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    stop = threading.Event()

    def on_signal(signum, frame) -> None:
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    print(f"serving on {handle.base_url}; transaction paths: "
          + ", ".join(f"/api/{b}/transactions" for b in handle.adapters)
          + " (interrupt to stop)")
    stop.wait()
    handle.stop()
    print(f"stopped; records in {handle.out_dir}")
    return EXIT_OK


def cmd_report(dirs: list[str], labels: list[str] | None = None,
               compare_out: str = "compare.csv") -> int:
    """Regenerate summary exports for each run dir; compare across many."""
    reports = []
    for d in dirs:
        run_dir = Path(d)
        records_path = run_dir / "records.jsonl"
        resources_path = run_dir / "resources.jsonl"
        meta_path = run_dir / "meta.json"
        for p in (records_path, resources_path, meta_path):
            if not p.exists():
                print(f"missing {p}", file=sys.stderr)
                return EXIT_RUNTIME
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            cfg = validate_config(meta["config"])
            records = load_records(records_path)
            samples = load_samples(resources_path)
            report = summarize(records, samples, cfg, t0_ns=meta.get("t0_ns"))
            export(report, run_dir)
        except (ConfigError, ReportError, KeyError, ValueError, OSError) as exc:
            print(f"{run_dir}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        reports.append(report)
        print(f"summary regenerated in {run_dir}")

    if len(reports) > 1:
        if labels is None:
            labels = [Path(d).name for d in dirs]
        if len(labels) != len(reports):
            print("need one label per directory", file=sys.stderr)
            return EXIT_CONFIG
        try:
            rows = compare(reports, labels)
        except ReportError as exc:
            print(f"compare failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        path = write_compare(rows, compare_out)
        print(f"comparison written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockmeter",
        description="Measure latency, throughput, and resource use of "
                    "transaction backends behind an HTTP gateway.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment end to end")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_serve = sub.add_parser("serve", help="run the gateway for external load drivers")
    p_serve.add_argument("--config", required=True, help="experiment config JSON")
    p_serve.add_argument("--out", default=None, help="output directory (default: config out_dir)")

    p_report = sub.add_parser("report", help="regenerate reports; compare multiple runs")
    p_report.add_argument("dirs", nargs="+", help="run output directories")
    p_report.add_argument("--labels", default=None, help="comma-separated labels for compare")
    p_report.add_argument("--compare-out", default="compare.csv",
                          help="where to write compare.csv for multi-dir reports")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "serve":
        return cmd_serve(args.config, args.out)
    labels = args.labels.split(",") if args.labels else None
    return cmd_report(args.dirs, labels, args.compare_out)


if __name__ == "__main__":
    sys.exit(main())
