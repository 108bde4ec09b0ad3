"""End-to-end experiment execution and the standalone serve mode.

Two execution styles:

* Orchestrated runs against a simulated backend drive the simulation clock
  directly (virtual time): a "5 minute" schedule finishes in seconds and,
  with a fixed seed, produces byte-identical records across runs. All
  virtual timestamps count from 0 at experiment start.
* Serve mode and runs against remote backends use the real monotonic clock,
  normalized to 0 at startup so persisted timestamps stay epoch-relative.
"""

from __future__ import annotations

import base64
import heapq
import json
import logging
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .adapters import Adapter
from .config import build_adapter, config_to_dict
from .gateway import GatewayCore, GatewayServer, parse_listen, random_tx_id, seeded_tx_id_gen
from .loadgen import ArrivalPlan, PayloadRow, build_plan, inject, load_csv
from .model import (
    STATUS_COMMITTED,
    STATUS_TIMEOUT,
    ExperimentConfig,
    TransactionRequest,
    UserAccount,
    derive_seed,
)
from .monitor import Monitor, ResourceSampler, container_stats_source
from .report import SummaryReport, export, summarize
from .simnet import SIMNET_BACKENDS, build_sim, profile_for_request
from .workload import account_map, create_users, generate_payload, sign

log = logging.getLogger(__name__)

MANIFEST = ("records.jsonl", "resources.jsonl", "meta.json", "summary.json",
            "summary.csv", "throughput.csv", "latency_vs_load.csv", "resources.csv")

DEBUG_TRACE_KEY = "debug_trace"


class OrchestratorError(RuntimeError):
    pass


@dataclass
class RunResult:
    out_dir: Path
    report: SummaryReport
    submitted: int
    committed: int
    late_commits: int
    rejected_backlog: int


def _split_params(backend_params: dict) -> tuple[dict, bool]:
    params = dict(backend_params)
    debug = bool(params.pop(DEBUG_TRACE_KEY, False))
    return params, debug


def _csv_rows(cfg: ExperimentConfig, accounts: dict[str, UserAccount]) -> list[PayloadRow] | None:
    if cfg.csv_path is None:
        return None
    rows = load_csv(cfg.csv_path)
    unknown = sorted({r.user_id for r in rows} - set(accounts))
    if unknown:
        raise OrchestratorError(f"csv rows reference unknown users: {', '.join(unknown)}")
    return rows


def _make_plan(cfg: ExperimentConfig, rows: list[PayloadRow] | None) -> ArrivalPlan:
    return build_plan(cfg.schedule, cfg.user_count, cfg.seed, cfg.arrival_process,
                      n_override=len(rows) if rows is not None else None)


def _request_for(cfg: ExperimentConfig, users: Sequence[UserAccount],
                 accounts: dict[str, UserAccount], rows: list[PayloadRow] | None,
                 tx_id: str, payload_index: int, user_index: int,
                 ) -> tuple[UserAccount, TransactionRequest]:
    if rows is not None:
        row = rows[payload_index]
        user = accounts[row.user_id]
        function, args = row.function, list(row.args)
        payload = base64.b64decode(row.payload_b64)
    else:
        user = users[user_index]
        function, args, payload = generate_payload(cfg.workload, cfg.seed, payload_index)
    request = TransactionRequest(tx_id=tx_id, user_id=user.user_id, function=function,
                                 args=tuple(args), payload=payload, backend_id=cfg.backend_id)
    return user, request


def write_meta(out_dir: Path, cfg: ExperimentConfig, mode: str, clock: str,
               t0_ns: int | None, counters: dict) -> None:
    meta = {
        "artifact": "blockmeter",
        "version": __version__,
        "mode": mode,
        "clock": clock,
        "t0_ns": t0_ns,
        "seed": cfg.seed,
        "signature_scheme": "ed25519",
        "created_unix": time.time(),
        "counters": counters,
        "config": config_to_dict(cfg),
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def check_manifest(out_dir: Path) -> list[str]:
    return [name for name in MANIFEST if not (out_dir / name).exists()]


def run_virtual(cfg: ExperimentConfig, out_dir: Path | str) -> RunResult:
    """Deterministic orchestrated run against a simulated backend.

    The arrival plan, gateway pipeline, simulation, sampler, and drain all
    happen on the virtual clock; commits and deadline expiries are finalized
    in timestamp order so the record stream is reproducible byte for byte.
    """
    if cfg.backend_id not in SIMNET_BACKENDS:
        raise OrchestratorError(f"virtual runs require a simulated backend, got {cfg.backend_id!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    users = create_users(cfg.user_count, cfg.seed)
    accounts = account_map(users)
    rows = _csv_rows(cfg, accounts)
    plan = _make_plan(cfg, rows)

    params, debug = _split_params(cfg.backend_params)
    trace: list | None = [] if debug else None
    sim = build_sim(cfg.backend_id, params, cfg.seed, trace)
    monitor = Monitor(out / "records.jsonl", out / "resources.jsonl")
    tx_id_gen = seeded_tx_id_gen(random.Random(derive_seed(cfg.seed, "tx-id")))

    interval_ns = round(cfg.sample_interval_s * 1e9)
    next_sample_ns = interval_ns
    timeout_ns = cfg.submit_timeout_ns
    open_txs: set[str] = set()
    deadlines: list[tuple[int, str]] = []
    late_commits = 0
    rejected_backlog = 0

    def finalize_commits(events) -> None:
        nonlocal late_commits
        for ev in events:
            if ev.tx_id in open_txs:
                open_txs.discard(ev.tx_id)
                monitor.record_end(ev.tx_id, ev.commit_ns, STATUS_COMMITTED)
            else:
                late_commits += 1

    def pump(until_ns: int) -> None:
        # Interleave commit events and deadline expiries in time order:
        # within each slice up to the next deadline, every commit for a
        # still-open transaction is necessarily within its own deadline.
        while True:
            boundary = until_ns
            if deadlines and deadlines[0][0] < boundary:
                boundary = deadlines[0][0]
            finalize_commits(sim.advance(boundary))
            while deadlines and deadlines[0][0] <= boundary:
                d, tx_id = heapq.heappop(deadlines)
                if tx_id in open_txs:
                    open_txs.discard(tx_id)
                    monitor.record_end(tx_id, d, STATUS_TIMEOUT)
            if boundary >= until_ns:
                return

    def pump_sampled(until_ns: int) -> None:
        nonlocal next_sample_ns
        while next_sample_ns <= until_ns:
            pump(next_sample_ns)
            monitor.append_samples(sim.snapshot(next_sample_ns))
            next_sample_ns += interval_ns
        pump(until_ns)

    for entry in plan.entries:
        pump_sampled(entry.arrival_ns)
        if len(open_txs) >= cfg.inflight_cap:
            rejected_backlog += 1
            continue
        tx_id = tx_id_gen()
        user, request = _request_for(cfg, users, accounts, rows, tx_id,
                                     entry.payload_index, entry.user_index)
        monitor.record_start(tx_id, entry.arrival_ns, cfg.backend_id, cfg.workload.kind)
        sign(user, request)  # pre-processing step; zero-cost in virtual time
        sim.enqueue(tx_id, profile_for_request(request), entry.arrival_ns)
        open_txs.add(tx_id)
        heapq.heappush(deadlines, (entry.arrival_ns + timeout_ns, tx_id))

    while open_txs:
        candidates = [deadlines[0][0]] if deadlines else []
        nxt = sim.next_event_ns()
        if nxt is not None:
            candidates.append(nxt)
        if not candidates:
            raise OrchestratorError("open transactions but no pending events")
        pump_sampled(min(candidates))

    if trace is not None:
        with open(out / "trace.jsonl", "w", encoding="utf-8") as fh:
            for ev in trace:
                fh.write(json.dumps(ev, separators=(",", ":")) + "\n")

    monitor.close()
    records = monitor.records
    report = summarize(records, monitor.samples, cfg, t0_ns=0)
    export(report, out)
    write_meta(out, cfg, mode="run", clock="virtual", t0_ns=0,
               counters={"late_commits": late_commits, "rejected_backlog": rejected_backlog})
    missing = check_manifest(out)
    if missing:
        raise OrchestratorError(f"incomplete output manifest, missing: {', '.join(missing)}")
    committed = sum(1 for r in records if r.status == STATUS_COMMITTED)
    return RunResult(out_dir=out, report=report, submitted=len(records), committed=committed,
                     late_commits=late_commits, rejected_backlog=rejected_backlog)


def _resource_source(adapter: Adapter, backend_params: dict,
                     clock: Callable[[], int]) -> Callable[[], list] | None:
    stats_endpoint = backend_params.get("stats_endpoint")
    container_ids = backend_params.get("container_ids")
    if stats_endpoint and container_ids:
        return container_stats_source(stats_endpoint, container_ids, clock)
    probe = adapter.resource_samples()
    if probe is None:
        return None
    return adapter.resource_samples


def run_realtime(cfg: ExperimentConfig, out_dir: Path | str,
                 max_workers: int = 256) -> RunResult:
    """Orchestrated run on the real clock (for remote backends)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    users = create_users(cfg.user_count, cfg.seed)
    accounts = account_map(users)
    rows = _csv_rows(cfg, accounts)
    plan = _make_plan(cfg, rows)
    bodies = _plan_bodies(cfg, users, rows, plan)

    epoch = time.monotonic_ns()
    clock = lambda: time.monotonic_ns() - epoch  # noqa: E731
    params, _ = _split_params(cfg.backend_params)
    adapter = build_adapter(cfg.backend_id, params, cfg.seed, clock)
    adapter.start()
    monitor = Monitor(out / "records.jsonl", out / "resources.jsonl")
    core = GatewayCore(
        adapters={cfg.backend_id: adapter}, accounts=accounts, monitor=monitor,
        clock=clock, submit_timeout_ns=cfg.submit_timeout_ns, inflight_cap=cfg.inflight_cap,
        workload_kind=cfg.workload.kind,
        tx_id_gen=seeded_tx_id_gen(random.Random(derive_seed(cfg.seed, "tx-id"))))
    source = _resource_source(adapter, params, clock)
    sampler = ResourceSampler(source, monitor, cfg.sample_interval_s) if source else None
    if sampler:
        sampler.start()

    try:
        inject(plan, lambda body: core.handle_submit(cfg.backend_id, body), bodies,
               max_workers=max_workers, request_timeout_s=cfg.submit_timeout_s + 30)
    finally:
        if sampler:
            sampler.stop()
        adapter.stop()
        monitor.finalize_open(clock())
        monitor.close()

    records = monitor.records
    report = summarize(records, monitor.samples, cfg, t0_ns=None)
    export(report, out)
    late = getattr(adapter, "late_commits", 0)
    write_meta(out, cfg, mode="run", clock="real", t0_ns=None,
               counters={"late_commits": late, "rejected_backlog": core.rejected_backlog})
    missing = check_manifest(out)
    if missing:
        raise OrchestratorError(f"incomplete output manifest, missing: {', '.join(missing)}")
    committed = sum(1 for r in records if r.status == STATUS_COMMITTED)
    return RunResult(out_dir=out, report=report, submitted=len(records), committed=committed,
                     late_commits=late, rejected_backlog=core.rejected_backlog)


def _plan_bodies(cfg: ExperimentConfig, users: Sequence[UserAccount],
                 rows: list[PayloadRow] | None, plan: ArrivalPlan) -> list[dict]:
    if rows is not None:
        return [rows[e.payload_index].body() for e in plan.entries]
    bodies = []
    for e in plan.entries:
        function, args, payload = generate_payload(cfg.workload, cfg.seed, e.payload_index)
        bodies.append({
            "user_id": users[e.user_index].user_id,
            "function": function,
            "args": args,
            "payload_b64": base64.b64encode(payload).decode("ascii"),
        })
    return bodies


def run_experiment(cfg: ExperimentConfig, out_dir: Path | str) -> RunResult:
    """Dispatch to virtual or real-time execution by backend kind."""
    if cfg.backend_id in SIMNET_BACKENDS:
        return run_virtual(cfg, out_dir)
    return run_realtime(cfg, out_dir)


class ServeHandle:
    """A running gateway stack: HTTP server, adapters, monitor, sampler."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, server: GatewayServer,
                 core: GatewayCore, monitor: Monitor, adapters: dict[str, Adapter],
                 sampler: ResourceSampler | None, clock: Callable[[], int]) -> None:
        self.cfg = cfg
        self.out_dir = out_dir
        self.server = server
        self.core = core
        self.monitor = monitor
        self.adapters = adapters
        self.sampler = sampler
        self.clock = clock
        self._stopped = False

    @property
    def base_url(self) -> str:
        return self.server.base_url

    def submit_url(self, backend_id: str | None = None) -> str:
        return f"{self.base_url}/api/{backend_id or self.cfg.backend_id}/transactions"

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self.server.stop()
        if self.sampler:
            self.sampler.stop()
        for adapter in self.adapters.values():
            adapter.stop()
        # In-flight work is finalized per the shutdown rule: open records
        # become timeouts stamped at shutdown time.
        self.monitor.finalize_open(self.clock())
        late = sum(getattr(a, "late_commits", 0) for a in self.adapters.values())
        write_meta(self.out_dir, self.cfg, mode="serve", clock="real", t0_ns=None,
                   counters={"late_commits": late,
                             "rejected_backlog": self.core.rejected_backlog})
        self.monitor.close()


def start_serve(cfg: ExperimentConfig, out_dir: Path | str | None = None,
                listen_override: str | None = None) -> ServeHandle:
    """Start the gateway + backends + sampler for externally driven load."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epoch = time.monotonic_ns()
    clock = lambda: time.monotonic_ns() - epoch  # noqa: E731

    users = create_users(cfg.user_count, cfg.seed)
    accounts = account_map(users)
    monitor = Monitor(out / "records.jsonl", out / "resources.jsonl")

    adapters: dict[str, Adapter] = {}
    sources = []
    specs = [(cfg.backend_id, cfg.backend_params)] + list(cfg.extra_backends)
    for backend_id, raw_params in specs:
        params, _ = _split_params(raw_params)
        adapter = build_adapter(backend_id, params, cfg.seed, clock)
        adapter.start()
        adapters[backend_id] = adapter
        source = _resource_source(adapter, params, clock)
        if source is not None:
            sources.append(source)

    core = GatewayCore(adapters=adapters, accounts=accounts, monitor=monitor, clock=clock,
                       submit_timeout_ns=cfg.submit_timeout_ns, inflight_cap=cfg.inflight_cap,
                       workload_kind=cfg.workload.kind, tx_id_gen=random_tx_id)

    sampler = None
    if sources:
        def combined() -> list:
            samples = []
            for src in sources:
                samples.extend(src() or [])
            return samples

        sampler = ResourceSampler(combined, monitor, cfg.sample_interval_s)
        sampler.start()

    host, port = parse_listen(listen_override or cfg.listen)
    server = GatewayServer(core, host, port)
    server.start()
    write_meta(out, cfg, mode="serve", clock="real", t0_ns=None,
               counters={"late_commits": 0, "rejected_backlog": 0})
    log.info("serving on %s (backends: %s)", server.base_url, ", ".join(adapters))
    return ServeHandle(cfg, out, server, core, monitor, adapters, sampler, clock)
