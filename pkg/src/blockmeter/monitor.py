"""Performance monitor: transaction records, throughput, resource sampling.

Finalized transaction records and resource samples are persisted as JSON
lines (one object per line) so files stay appendable and crash-safe. Stores
are append-only: a finalized record is never mutated or removed.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from pathlib import Path
from typing import Callable, Iterable, Sequence

import psutil
import requests

from .model import (
    STATUS_COMMITTED,
    STATUS_TIMEOUT,
    ResourceSample,
    TransactionRecord,
)

log = logging.getLogger(__name__)

MIN_SAMPLE_INTERVAL_S = 1.0


class MonitorError(RuntimeError):
    pass


def record_to_json(record: TransactionRecord) -> str:
    return json.dumps({
        "tx_id": record.tx_id,
        "start_ns": record.start_ns,
        "end_ns": record.end_ns,
        "status": record.status,
        "backend_id": record.backend_id,
        "workload_kind": record.workload_kind,
    }, separators=(",", ":"))


def record_from_json(line: str) -> TransactionRecord:
    d = json.loads(line)
    return TransactionRecord(
        tx_id=d["tx_id"], start_ns=d["start_ns"], end_ns=d["end_ns"],
        status=d["status"], backend_id=d["backend_id"], workload_kind=d["workload_kind"])


def sample_to_json(sample: ResourceSample) -> str:
    return json.dumps({
        "node_id": sample.node_id,
        "t_ns": sample.t_ns,
        "cpu_fraction": sample.cpu_fraction,
        "mem_bytes": sample.mem_bytes,
    }, separators=(",", ":"))


def sample_from_json(line: str) -> ResourceSample:
    d = json.loads(line)
    return ResourceSample(node_id=d["node_id"], t_ns=d["t_ns"],
                          cpu_fraction=d["cpu_fraction"], mem_bytes=d["mem_bytes"])


def load_records(path: Path) -> list[TransactionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_json(line) for line in fh if line.strip()]


def load_samples(path: Path) -> list[ResourceSample]:
    with open(path, encoding="utf-8") as fh:
        return [sample_from_json(line) for line in fh if line.strip()]


class _Open:
    __slots__ = ("start_ns", "backend_id", "workload_kind")

    def __init__(self, start_ns: int, backend_id: str, workload_kind: str) -> None:
        self.start_ns = start_ns
        self.backend_id = backend_id
        self.workload_kind = workload_kind


class Monitor:
    """Collects start/end timestamps and persists finalized records.

    Safe for concurrent use from many gateway requests; file appends are
    serialized through one lock. Paths are optional so the monitor can run
    purely in memory.
    """

    def __init__(self, records_path: Path | str | None = None,
                 resources_path: Path | str | None = None) -> None:
        self._lock = threading.Lock()
        self._open: dict[str, _Open] = {}
        self._records: list[TransactionRecord] = []
        self._samples: list[ResourceSample] = []
        self._last_sample_ns: dict[str, int] = {}
        self._records_fh = open(records_path, "a", encoding="utf-8") if records_path else None
        self._resources_fh = open(resources_path, "a", encoding="utf-8") if resources_path else None

    def record_start(self, tx_id: str, t_ns: int, backend_id: str = "", workload_kind: str = "") -> None:
        with self._lock:
            if tx_id in self._open:
                raise MonitorError(f"duplicate start for {tx_id}")
            self._open[tx_id] = _Open(t_ns, backend_id, workload_kind)

    def record_end(self, tx_id: str, t_ns: int, status: str) -> TransactionRecord:
        with self._lock:
            entry = self._open.get(tx_id)
            if entry is None:
                raise MonitorError(f"unknown tx_id {tx_id}")
            if t_ns < entry.start_ns:
                raise MonitorError(f"clock inversion for {tx_id}")
            del self._open[tx_id]
            record = TransactionRecord(
                tx_id=tx_id, start_ns=entry.start_ns, end_ns=t_ns, status=status,
                backend_id=entry.backend_id, workload_kind=entry.workload_kind)
            self._append_record(record)
            return record

    def try_record_end(self, tx_id: str, t_ns: int, status: str) -> TransactionRecord | None:
        """record_end that tolerates a record already finalized at shutdown."""
        try:
            return self.record_end(tx_id, t_ns, status)
        except MonitorError:
            return None

    def finalize_open(self, t_ns: int) -> list[TransactionRecord]:
        """Shutdown rule: close every open record as a timeout at t_ns."""
        with self._lock:
            finalized = []
            for tx_id, entry in sorted(self._open.items(), key=lambda kv: kv[1].start_ns):
                record = TransactionRecord(
                    tx_id=tx_id, start_ns=entry.start_ns, end_ns=max(t_ns, entry.start_ns),
                    status=STATUS_TIMEOUT, backend_id=entry.backend_id,
                    workload_kind=entry.workload_kind)
                self._append_record(record)
                finalized.append(record)
            self._open.clear()
            return finalized

    def _append_record(self, record: TransactionRecord) -> None:
        self._records.append(record)
        if self._records_fh is not None:
            self._records_fh.write(record_to_json(record) + "\n")
            self._records_fh.flush()

    def append_samples(self, samples: Iterable[ResourceSample]) -> None:
        with self._lock:
            for sample in samples:
                last = self._last_sample_ns.get(sample.node_id)
                if last is not None and sample.t_ns <= last:
                    raise MonitorError(f"non-increasing sample time for {sample.node_id}")
                self._last_sample_ns[sample.node_id] = sample.t_ns
                self._samples.append(sample)
                if self._resources_fh is not None:
                    self._resources_fh.write(sample_to_json(sample) + "\n")
            if self._resources_fh is not None:
                self._resources_fh.flush()

    def lookup(self, tx_id: str) -> TransactionRecord | _Open | None:
        with self._lock:
            entry = self._open.get(tx_id)
            if entry is not None:
                return entry
            for record in reversed(self._records):
                if record.tx_id == tx_id:
                    return record
            return None

    @property
    def records(self) -> list[TransactionRecord]:
        with self._lock:
            return list(self._records)

    @property
    def samples(self) -> list[ResourceSample]:
        with self._lock:
            return list(self._samples)

    @property
    def open_count(self) -> int:
        with self._lock:
            return len(self._open)

    def close(self) -> None:
        with self._lock:
            for fh in (self._records_fh, self._resources_fh):
                if fh is not None:
                    fh.close()
            self._records_fh = self._resources_fh = None


def throughput_series(records: Sequence[TransactionRecord], window_s: float = 1.0,
                      t0_ns: int = 0) -> list[int]:
    """Committed-transaction counts per tumbling window aligned to t0.

    Only committed records count, bucketed by completion time. The series
    spans through the last finalized record even if nothing committed.
    """
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    window_ns = round(window_s * 1e9)
    ends = [r.end_ns for r in records if r.end_ns is not None]
    if not ends:
        return []
    span = max(ends) - t0_ns
    counts = [0] * (span // window_ns + 1)
    for r in records:
        if r.status == STATUS_COMMITTED and r.end_ns is not None:
            counts[(r.end_ns - t0_ns) // window_ns] += 1
    return counts


class ResourceSampler:
    """Fixed-interval sampler feeding ResourceSamples into the monitor.

    Runs on its own thread with drift-free scheduling (tick k fires at
    t0 + k * interval). A failing source skips that batch with a logged gap
    marker and the sampler keeps going. Samples carry collection-completion
    time, stamped by the source.
    """

    def __init__(self, source: Callable[[], list[ResourceSample] | None], monitor: Monitor,
                 interval_s: float = 3.0) -> None:
        if interval_s <= 0:
            raise ValueError("interval_s must be > 0")
        self._source = source
        self._monitor = monitor
        self.interval_s = interval_s
        self.batches = 0
        self.gaps = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="resource-sampler", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=self.interval_s + 5)
            self._thread = None

    def sample_once(self) -> bool:
        try:
            samples = self._source()
        except Exception as exc:
            self.gaps += 1
            log.warning("resource sample gap: %s", exc)
            return False
        if not samples:
            self.gaps += 1
            log.warning("resource sample gap: source returned no samples")
            return False
        self._monitor.append_samples(samples)
        self.batches += 1
        return True

    def _run(self) -> None:
        t0 = time.monotonic()
        tick = 1
        while not self._stop.is_set():
            due = t0 + tick * self.interval_s
            delay = due - time.monotonic()
            if delay > 0 and self._stop.wait(delay):
                break
            self.sample_once()
            tick += 1


def local_process_source(clock: Callable[[], int], node_id: str = "local-process",
                         ) -> Callable[[], list[ResourceSample]]:
    """Samples CPU and RSS of this process, as a sampler source."""
    proc = psutil.Process()
    proc.cpu_percent(interval=None)  # prime the delta-based counter

    def read() -> list[ResourceSample]:
        cpu = proc.cpu_percent(interval=None) / 100.0
        mem = proc.memory_info().rss
        return [ResourceSample(node_id=node_id, t_ns=clock(), cpu_fraction=cpu, mem_bytes=mem)]

    return read


def container_stats_source(stats_endpoint: str, container_ids: Sequence[str],
                           clock: Callable[[], int], timeout_s: float = 10.0,
                           ) -> Callable[[], list[ResourceSample]]:
    """One-shot container-statistics client, as a sampler source.

    Queries GET {stats_endpoint}/containers/{id}/stats?stream=false per node
    and extracts cpu and memory totals from the engine's JSON.
    """
    session = requests.Session()
    base = stats_endpoint.rstrip("/")

    def read_one(cid: str) -> ResourceSample:
        resp = session.get(f"{base}/containers/{cid}/stats", params={"stream": "false"},
                           timeout=timeout_s)
        resp.raise_for_status()
        stats = resp.json()
        cpu_stats = stats["cpu_stats"]
        pre_stats = stats.get("precpu_stats", {})
        cpu_delta = (cpu_stats["cpu_usage"]["total_usage"]
                     - pre_stats.get("cpu_usage", {}).get("total_usage", 0))
        system_delta = (cpu_stats.get("system_cpu_usage", 0)
                        - pre_stats.get("system_cpu_usage", 0))
        online = cpu_stats.get("online_cpus") or 1
        cpu = (cpu_delta / system_delta) * online if system_delta > 0 else 0.0
        mem = stats["memory_stats"]["usage"]
        return ResourceSample(node_id=cid, t_ns=clock(), cpu_fraction=max(cpu, 0.0), mem_bytes=mem)

    def read() -> list[ResourceSample]:
        return [read_one(cid) for cid in container_ids]

    return read
