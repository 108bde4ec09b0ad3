"""Aggregation of records and samples into summaries, exports, comparisons.

Latency statistics use nearest-rank percentiles (no interpolation) and are
reported in milliseconds. Per-step throughput buckets commits by completion
time inside the step's window; latency and success statistics go by each
record's start time, since a transaction belongs to the load step that
emitted it. The leading warmup fraction of every step is excluded from both.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .model import (
    STATUS_COMMITTED,
    ExperimentConfig,
    ResourceSample,
    TransactionRecord,
    latency_of,
)
from .monitor import throughput_series

SUMMARY_FILES = ("summary.json", "summary.csv", "throughput.csv",
                 "latency_vs_load.csv", "resources.csv")


class ReportError(RuntimeError):
    pass


def percentile(values: Sequence[int | float], q: float):
    """Nearest-rank percentile: element at 1-based rank ceil(q * n)."""
    if not values:
        raise ReportError("no data")
    if not 0 < q <= 1:
        raise ReportError(f"q out of range: {q}")
    ordered = sorted(values)
    return ordered[max(1, math.ceil(q * len(ordered))) - 1]


@dataclass(frozen=True)
class StepStats:
    target_tps: float
    duration_s: float
    attempted: int
    committed: int
    achieved_tps: float
    success_rate: float | None
    latency_mean_ms: float | None
    latency_p50_ms: float | None
    latency_p95_ms: float | None
    latency_p99_ms: float | None
    latency_max_ms: float | None


@dataclass(frozen=True)
class NodeStats:
    node_id: str
    cpu_mean: float
    cpu_max: float
    mem_max_bytes: int


@dataclass(frozen=True)
class SummaryReport:
    steps: tuple[StepStats, ...]
    nodes: tuple[NodeStats, ...]
    totals: dict
    throughput: tuple[int, ...]
    samples: tuple[ResourceSample, ...]
    warmup_fraction: float

    def step_grid(self) -> tuple[float, ...]:
        return tuple(s.target_tps for s in self.steps)


def _latency_stats(latencies_ns: list[int]) -> dict:
    if not latencies_ns:
        return {k: None for k in ("latency_mean_ms", "latency_p50_ms", "latency_p95_ms",
                                  "latency_p99_ms", "latency_max_ms")}
    ms = [ns / 1e6 for ns in latencies_ns]
    return {
        "latency_mean_ms": sum(ms) / len(ms),
        "latency_p50_ms": percentile(ms, 0.50),
        "latency_p95_ms": percentile(ms, 0.95),
        "latency_p99_ms": percentile(ms, 0.99),
        "latency_max_ms": max(ms),
    }


def summarize(records: Sequence[TransactionRecord], samples: Sequence[ResourceSample],
              config: ExperimentConfig, t0_ns: int | None = None) -> SummaryReport:
    """Aggregate one experiment into per-step and per-node statistics.

    Step windows tile [t0, t0 + total schedule duration); t0 defaults to the
    earliest record start so that externally driven (serve-mode) captures
    align to the moment traffic actually began.
    """
    if t0_ns is None:
        t0_ns = min((r.start_ns for r in records), default=0)
    warmup = config.warmup_fraction

    bounds = []
    offset = t0_ns
    for step in config.schedule:
        dur_ns = round(step.duration_s * 1e9)
        bounds.append((offset, offset + dur_ns))
        offset += dur_ns
    span_end = offset

    for r in records:
        if r.start_ns < t0_ns or r.start_ns >= span_end:
            raise ReportError(
                f"record {r.tx_id} starts at {r.start_ns} outside the schedule span "
                f"[{t0_ns}, {span_end})")

    steps = []
    for step, (lo, hi) in zip(config.schedule, bounds):
        # Counts cover the whole step so that per-step attempted/committed
        # sum to the run totals; the warmup prefix is excluded only from the
        # rate and latency statistics it would bias.
        measured_lo = lo + round((hi - lo) * warmup)
        in_step = [r for r in records if lo <= r.start_ns < hi]
        committed = [r for r in in_step if r.status == STATUS_COMMITTED]
        measured_commits = [r for r in committed if r.start_ns >= measured_lo]
        commits_in_window = sum(
            1 for r in records
            if r.status == STATUS_COMMITTED and r.end_ns is not None
            and measured_lo <= r.end_ns < hi)
        window_s = (hi - measured_lo) / 1e9
        steps.append(StepStats(
            target_tps=step.rate_tps,
            duration_s=step.duration_s,
            attempted=len(in_step),
            committed=len(committed),
            achieved_tps=commits_in_window / window_s if window_s > 0 else 0.0,
            success_rate=len(committed) / len(in_step) if in_step else None,
            **_latency_stats([latency_of(r) for r in measured_commits]),
        ))

    by_node: dict[str, list[ResourceSample]] = {}
    for sample in samples:
        by_node.setdefault(sample.node_id, []).append(sample)
    nodes = tuple(
        NodeStats(
            node_id=node,
            cpu_mean=sum(s.cpu_fraction for s in node_samples) / len(node_samples),
            cpu_max=max(s.cpu_fraction for s in node_samples),
            mem_max_bytes=max(s.mem_bytes for s in node_samples),
        )
        for node, node_samples in sorted(by_node.items()))

    committed_total = sum(1 for r in records if r.status == STATUS_COMMITTED)
    totals = {
        "submitted": len(records),
        "committed": committed_total,
        "failed": len(records) - committed_total,
    }
    return SummaryReport(
        steps=tuple(steps),
        nodes=nodes,
        totals=totals,
        throughput=tuple(throughput_series(records, 1.0, t0_ns)),
        samples=tuple(samples),
        warmup_fraction=warmup,
    )


def report_to_dict(report: SummaryReport) -> dict:
    return {
        "steps": [asdict(s) for s in report.steps],
        "nodes": [asdict(n) for n in report.nodes],
        "totals": report.totals,
        "throughput": list(report.throughput),
        "samples": [asdict(s) for s in report.samples],
        "warmup_fraction": report.warmup_fraction,
    }


def report_from_dict(d: dict) -> SummaryReport:
    return SummaryReport(
        steps=tuple(StepStats(**s) for s in d["steps"]),
        nodes=tuple(NodeStats(**n) for n in d["nodes"]),
        totals=dict(d["totals"]),
        throughput=tuple(d["throughput"]),
        samples=tuple(ResourceSample(**s) for s in d["samples"]),
        warmup_fraction=d["warmup_fraction"],
    )


def load_summary(path: Path | str) -> SummaryReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


_SUMMARY_COLUMNS = ("target_tps", "duration_s", "attempted", "committed", "achieved_tps",
                    "success_rate", "latency_mean_ms", "latency_p50_ms", "latency_p95_ms",
                    "latency_p99_ms", "latency_max_ms")


def _cell(value) -> str:
    return "" if value is None else repr(value) if isinstance(value, float) else str(value)


def export(report: SummaryReport, out_dir: Path | str) -> list[Path]:
    """Write the five plot-ready artifacts into out_dir.

    summary.json holds the whole report; the CSVs carry one series each,
    matching the axes a load/latency/resource plot needs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "summary.json"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(report), fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    written.append(path)

    def write_csv(name: str, header: Sequence[str], rows) -> None:
        p = out / name
        try:
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as exc:
            raise ReportError(f"cannot write {p}: {exc}") from exc
        written.append(p)

    write_csv("summary.csv", _SUMMARY_COLUMNS,
              ([_cell(getattr(s, col)) for col in _SUMMARY_COLUMNS] for s in report.steps))
    write_csv("throughput.csv", ("t_s", "count"),
              ((i, c) for i, c in enumerate(report.throughput)))
    write_csv("latency_vs_load.csv", ("target_tps", "p50_ms", "p95_ms", "p99_ms"),
              ([_cell(s.target_tps), _cell(s.latency_p50_ms), _cell(s.latency_p95_ms),
                _cell(s.latency_p99_ms)] for s in report.steps))
    write_csv("resources.csv", ("node", "t_s", "cpu", "mem_mb"),
              ([s.node_id, _cell(s.t_ns / 1e9), _cell(s.cpu_fraction),
                _cell(s.mem_bytes / (1024 * 1024))] for s in report.samples))
    return written


def compare(reports: Sequence[SummaryReport], labels: Sequence[str]) -> list[dict]:
    """Wide per-step table across runs sharing one rate-step grid."""
    if len(reports) != len(labels):
        raise ReportError("one label per report required")
    if not reports:
        raise ReportError("no reports to compare")
    grid = reports[0].step_grid()
    for label, report in zip(labels, reports):
        if report.step_grid() != grid:
            diverging = sorted(set(report.step_grid()) ^ set(grid))
            raise ReportError(
                f"step grid of {label!r} diverges from {labels[0]!r} at rates {diverging}")
    rows = []
    for i, target in enumerate(grid):
        row: dict = {"target_tps": target}
        for label, report in zip(labels, reports):
            row[f"{label}_achieved_tps"] = report.steps[i].achieved_tps
            row[f"{label}_p95_ms"] = report.steps[i].latency_p95_ms
        rows.append(row)
    return rows


def write_compare(rows: list[dict], path: Path | str) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(rows[0]) if rows else ["target_tps"]
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row[col]) for col in header])
    return path
