"""Deterministic discrete-event simulations of two consensus pipelines.

Two backends are provided:

* ``simnet-fabric``  -- endorse / order / validate: transactions occupy the
  earliest-free endorser, endorsed transactions queue for batching, and each
  cut block passes through a single sequential validation stage before all
  of its members commit at the same instant.
* ``simnet-sawtooth`` -- transactions queue directly for batching; each block
  first waits out a leader-election delay (minimum of one exponential draw
  per validator), then executes its transactions one by one on the
  transaction processor, committing each as it finishes.

Blocks are cut from the pending queue when either the size threshold B is
reached or the oldest pending transaction has aged past the batch timeout T.

The core is single-owner: one logical driver calls ``enqueue``/``advance``/
``snapshot``; it is wrapped by ``RealTimeSimAdapter`` for concurrent use.
All internal times are integer nanoseconds on the caller's clock.
"""

from __future__ import annotations

import dataclasses
import heapq
import random
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .adapters import Adapter, AdapterDescriptor
from .model import (
    STATUS_COMMITTED,
    STATUS_REJECTED,
    STATUS_TIMEOUT,
    CommitReceipt,
    ResourceSample,
    SignedTransaction,
    TransactionRequest,
    WorkloadProfile,
    derive_seed,
)
from .workload import verify

MEM_BASE_BYTES_DEFAULT = 64 * 1024 * 1024
MEM_PER_TX_BYTES_DEFAULT = 2048


@dataclass(frozen=True)
class FabricSimParams:
    endorser_count: int = 2
    block_size: int = 10
    batch_timeout_s: float = 2.0
    base_service_s: float = 0.001
    data_coeff_s_per_byte: float = 5e-7
    cpu_coeff_s_per_iter: float = 5e-9
    validate_per_block_s: float = 0.002
    validate_per_tx_s: float = 0.0005
    jitter: float = 0.0
    mem_base_bytes: int = MEM_BASE_BYTES_DEFAULT
    mem_per_tx_bytes: int = MEM_PER_TX_BYTES_DEFAULT

    def __post_init__(self) -> None:
        if self.endorser_count < 1:
            raise ValueError("endorser_count: must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size: must be >= 1")
        if self.batch_timeout_s <= 0:
            raise ValueError("batch_timeout_s: must be > 0")
        for name in ("base_service_s", "data_coeff_s_per_byte", "cpu_coeff_s_per_iter",
                     "validate_per_block_s", "validate_per_tx_s", "jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")


@dataclass(frozen=True)
class SawtoothSimParams:
    validator_count: int = 1
    mean_wait_s: float = 2.0
    block_size: int = 10
    batch_timeout_s: float = 2.0
    base_service_s: float = 0.001
    data_coeff_s_per_byte: float = 5e-7
    cpu_coeff_s_per_iter: float = 5e-9
    jitter: float = 0.0
    mem_base_bytes: int = MEM_BASE_BYTES_DEFAULT
    mem_per_tx_bytes: int = MEM_PER_TX_BYTES_DEFAULT

    def __post_init__(self) -> None:
        if self.validator_count < 1:
            raise ValueError("validator_count: must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size: must be >= 1")
        if self.batch_timeout_s <= 0:
            raise ValueError("batch_timeout_s: must be > 0")
        for name in ("mean_wait_s", "base_service_s", "data_coeff_s_per_byte",
                     "cpu_coeff_s_per_iter", "jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")


def params_from_dict(cls, overrides: dict):
    """Build a params dataclass from a config map, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"unknown backend_params: {', '.join(unknown)}")
    return cls(**overrides)


def service_time(profile: WorkloadProfile, params, rng: random.Random | None = None) -> float:
    """Per-transaction execution cost in seconds.

    base + data coefficient * payload bytes + cpu coefficient * iterations,
    optionally scaled by multiplicative jitter uniform in [1-j, 1+j].
    """
    s = (params.base_service_s
         + params.data_coeff_s_per_byte * profile.payload_bytes
         + params.cpu_coeff_s_per_iter * profile.cpu_iterations)
    if params.jitter > 0:
        if rng is None:
            raise ValueError("jitter requires an RNG")
        s *= rng.uniform(1.0 - params.jitter, 1.0 + params.jitter)
    return s


def poet_wait(rng: random.Random, validator_count: int, mean_wait_s: float) -> float:
    """Leader-election wait: minimum of one exponential draw per validator."""
    if validator_count < 1:
        raise ValueError("validator_count: must be >= 1")
    if mean_wait_s <= 0:
        return 0.0
    return min(rng.expovariate(1.0 / mean_wait_s) for _ in range(validator_count))


def profile_for_request(request: TransactionRequest) -> WorkloadProfile:
    """Effective cost profile of a wire transaction.

    The simulators charge by what the transaction actually carries: payload
    length, plus a loop count taken from the first argument of "compute"
    calls. This keeps externally injected (CSV) traffic cost-realistic.
    """
    iterations = 0
    if request.function == "compute" and request.args and request.args[0].isdigit():
        iterations = int(request.args[0])
    size = len(request.payload)
    if iterations > 0:
        kind = "cpu_heavy"
    elif size > 1024:
        kind = "data_heavy"
    else:
        kind = "simple"
    return WorkloadProfile(kind=kind, payload_bytes=size, cpu_iterations=iterations)


def fabric_capacity_tps(params: FabricSimParams, profile: WorkloadProfile) -> float:
    """Sustainable throughput: endorsement-bound vs block-pipeline-bound."""
    svc = (params.base_service_s
           + params.data_coeff_s_per_byte * profile.payload_bytes
           + params.cpu_coeff_s_per_iter * profile.cpu_iterations)
    endorse = params.endorser_count / svc if svc > 0 else float("inf")
    per_block = params.validate_per_block_s + params.block_size * params.validate_per_tx_s
    pipeline = params.block_size / per_block if per_block > 0 else float("inf")
    return min(endorse, pipeline)


def sawtooth_capacity_tps(params: SawtoothSimParams, profile: WorkloadProfile) -> float:
    svc = (params.base_service_s
           + params.data_coeff_s_per_byte * profile.payload_bytes
           + params.cpu_coeff_s_per_iter * profile.cpu_iterations)
    per_block = params.mean_wait_s / params.validator_count + params.block_size * svc
    return params.block_size / per_block if per_block > 0 else float("inf")


@dataclass(frozen=True)
class CommitEvent:
    tx_id: str
    commit_ns: int
    block_id: int
    block_size: int


@dataclass
class _SimTx:
    seq: int
    tx_id: str
    service_ns: int


@dataclass
class _Block:
    block_id: int
    txs: list[_SimTx]
    cut_ns: int
    trigger: str


class _NodeUsage:
    """Busy-interval ledger for one node; yields cpu fraction per snapshot window."""

    def __init__(self) -> None:
        self._segments: deque[tuple[int, int]] = deque()
        self._last_snap_ns = 0

    def add(self, start_ns: int, end_ns: int) -> None:
        if end_ns > start_ns:
            self._segments.append((start_ns, end_ns))

    def cpu_fraction(self, now_ns: int) -> float:
        window = now_ns - self._last_snap_ns
        if window <= 0:
            return 0.0
        busy = 0
        for start, end in self._segments:
            if start >= now_ns:
                break
            busy += min(end, now_ns) - max(start, self._last_snap_ns)
        while self._segments and self._segments[0][1] <= now_ns:
            self._segments.popleft()
        self._last_snap_ns = now_ns
        return busy / window


class Batcher:
    """Pending FIFO with the two block-cut triggers (size B, age T)."""

    def __init__(self, block_size: int, batch_timeout_ns: int) -> None:
        self.block_size = block_size
        self.batch_timeout_ns = batch_timeout_ns
        self.pending: deque[tuple[_SimTx, int]] = deque()

    def add(self, tx: _SimTx, now_ns: int) -> None:
        self.pending.append((tx, now_ns))

    def oldest_age_ns(self, now_ns: int) -> int | None:
        if not self.pending:
            return None
        return now_ns - self.pending[0][1]

    def cut(self, now_ns: int) -> list[_SimTx] | None:
        """Cut the first min(B, pending) transactions if a trigger holds."""
        if not self.pending:
            return None
        size_ready = len(self.pending) >= self.block_size
        aged = now_ns - self.pending[0][1] >= self.batch_timeout_ns
        if not (size_ready or aged):
            return None
        take = min(self.block_size, len(self.pending))
        return [self.pending.popleft()[0] for _ in range(take)]


class SimCore:
    """Event-driven backbone shared by both simulated pipelines."""

    def __init__(self, backend_id: str, seed: int, trace: list | None = None) -> None:
        self.backend_id = backend_id
        self.rng = random.Random(derive_seed(seed, "simnet", backend_id))
        self.trace = trace
        self.clock_ns = 0
        self.enqueued_count = 0
        self.committed_count = 0
        self.block_count = 0
        self._heap: list[tuple[int, int, Callable[[int, object], None], object]] = []
        self._seq = 0
        self._arrival_seq = 0
        self._out: list[CommitEvent] = []
        self._usage: dict[str, _NodeUsage] = {n: _NodeUsage() for n in self.node_ids()}

    # -- subclass surface -------------------------------------------------
    def node_ids(self) -> list[str]:
        raise NotImplementedError

    def ledger_nodes(self) -> frozenset[str]:
        raise NotImplementedError

    def _accept(self, tx: _SimTx, t_ns: int) -> None:
        raise NotImplementedError

    # -- driver surface ---------------------------------------------------
    @property
    def in_flight_count(self) -> int:
        return self.enqueued_count - self.committed_count

    def enqueue(self, tx_id: str, profile: WorkloadProfile, t_ns: int) -> None:
        if t_ns < self.clock_ns:
            raise ValueError("enqueue time precedes simulation clock")
        svc = service_time(profile, self.params, self.rng)
        tx = _SimTx(seq=self._arrival_seq, tx_id=tx_id, service_ns=round(svc * 1e9))
        self._arrival_seq += 1
        self.enqueued_count += 1
        self._trace(t_ns, "enqueue", tx=tx_id)
        self._accept(tx, t_ns)

    def advance(self, until_ns: int) -> list[CommitEvent]:
        """Run all events with timestamps <= until_ns; return their commits."""
        if until_ns < self.clock_ns:
            raise ValueError("cannot advance backwards")
        out: list[CommitEvent] = []
        self._out = out
        while self._heap and self._heap[0][0] <= until_ns:
            t, _, fn, arg = heapq.heappop(self._heap)
            self.clock_ns = t
            fn(t, arg)
        self.clock_ns = until_ns
        self._out = []
        return out

    def next_event_ns(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def snapshot(self, now_ns: int) -> list[ResourceSample]:
        """Per-node resource state; call after advancing to now_ns.

        Memory on ledger-holding nodes grows linearly with committed count;
        other nodes stay at the base footprint. CPU is the busy fraction of
        the interval since the previous snapshot.
        """
        params = self.params
        ledger = self.ledger_nodes()
        samples = []
        for node in self.node_ids():
            mem = params.mem_base_bytes
            if node in ledger:
                mem += params.mem_per_tx_bytes * self.committed_count
            samples.append(ResourceSample(
                node_id=node,
                t_ns=now_ns,
                cpu_fraction=self._usage[node].cpu_fraction(now_ns),
                mem_bytes=mem,
            ))
        return samples

    # -- internals ---------------------------------------------------------
    def _schedule(self, t_ns: int, fn: Callable[[int, object], None], arg: object = None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t_ns, self._seq, fn, arg))

    def _emit(self, tx: _SimTx, t_ns: int, block: _Block) -> None:
        self.committed_count += 1
        self._trace(t_ns, "commit", tx=tx.tx_id, block=block.block_id)
        self._out.append(CommitEvent(
            tx_id=tx.tx_id, commit_ns=t_ns, block_id=block.block_id, block_size=len(block.txs)))

    def _trace(self, t_ns: int, ev: str, **fields) -> None:
        if self.trace is not None:
            self.trace.append({"t_ns": t_ns, "ev": ev, **fields})


class FabricSim(SimCore):
    """Endorse on k servers, batch, then validate each block sequentially."""

    def __init__(self, params: FabricSimParams, seed: int, trace: list | None = None,
                 backend_id: str = "simnet-fabric") -> None:
        self.params = params
        self._endorser_busy_ns = [0] * params.endorser_count
        super().__init__(backend_id, seed, trace)
        self._batcher = Batcher(params.block_size, round(params.batch_timeout_s * 1e9))
        self._timeout_ns = self._batcher.batch_timeout_ns
        self._vb_ns = round(params.validate_per_block_s * 1e9)
        self._vt_ns = round(params.validate_per_tx_s * 1e9)
        self._release_floor_ns = 0
        self._block_queue: deque[_Block] = deque()
        self._validator_busy = False

    def node_ids(self) -> list[str]:
        return [f"endorser-{i}" for i in range(self.params.endorser_count)] + ["orderer", "peer"]

    def ledger_nodes(self) -> frozenset[str]:
        return frozenset({"peer"})

    def _accept(self, tx: _SimTx, t_ns: int) -> None:
        # Earliest-free endorser; completion precomputed since service time
        # is fixed at arrival. Busy state only changes through arrivals, and
        # arrivals are fed in nondecreasing time order.
        idx = min(range(len(self._endorser_busy_ns)), key=self._endorser_busy_ns.__getitem__)
        start = max(t_ns, self._endorser_busy_ns[idx])
        done = start + tx.service_ns
        self._endorser_busy_ns[idx] = done
        self._usage[f"endorser-{idx}"].add(start, done)
        # Hold completions back so the ordering queue preserves arrival
        # order even when service times differ across transactions.
        release = max(done, self._release_floor_ns)
        self._release_floor_ns = release
        self._schedule(release, self._enter_pending, tx)

    def _enter_pending(self, t_ns: int, tx: _SimTx) -> None:
        self._batcher.add(tx, t_ns)
        self._trace(t_ns, "pending", tx=tx.tx_id)
        self._schedule(t_ns + self._timeout_ns, self._timeout_check, None)
        while len(self._batcher.pending) >= self._batcher.block_size:
            self._cut(t_ns, "size")

    def _timeout_check(self, t_ns: int, _arg: object) -> None:
        age = self._batcher.oldest_age_ns(t_ns)
        if age is not None and age >= self._timeout_ns:
            self._cut(t_ns, "timeout")

    def _cut(self, t_ns: int, trigger: str) -> None:
        txs = self._batcher.cut(t_ns)
        if txs is None:
            return
        self.block_count += 1
        block = _Block(block_id=self.block_count, txs=txs, cut_ns=t_ns, trigger=trigger)
        self._trace(t_ns, "block_cut", block=block.block_id, size=len(txs), trigger=trigger)
        self._block_queue.append(block)
        if not self._validator_busy:
            self._start_block(t_ns)

    def _start_block(self, t_ns: int) -> None:
        block = self._block_queue.popleft()
        self._validator_busy = True
        dur = self._vb_ns + self._vt_ns * len(block.txs)
        self._usage["peer"].add(t_ns, t_ns + dur)
        self._schedule(t_ns + dur, self._block_done, block)

    def _block_done(self, t_ns: int, block: _Block) -> None:
        # Validation finished: the whole block commits at one instant.
        for tx in block.txs:
            self._emit(tx, t_ns, block)
        self._validator_busy = False
        if self._block_queue:
            self._start_block(t_ns)


class SawtoothSim(SimCore):
    """Batch, wait out leader election, then execute transactions in turn."""

    def __init__(self, params: SawtoothSimParams, seed: int, trace: list | None = None,
                 backend_id: str = "simnet-sawtooth") -> None:
        self.params = params
        super().__init__(backend_id, seed, trace)
        self._batcher = Batcher(params.block_size, round(params.batch_timeout_s * 1e9))
        self._timeout_ns = self._batcher.batch_timeout_ns
        self._block_queue: deque[_Block] = deque()
        self._processor_busy = False

    def node_ids(self) -> list[str]:
        return [f"validator-{i}" for i in range(self.params.validator_count)] + ["processor"]

    def ledger_nodes(self) -> frozenset[str]:
        return frozenset({"processor"})

    def _accept(self, tx: _SimTx, t_ns: int) -> None:
        self._schedule(t_ns, self._enter_pending, tx)

    def _enter_pending(self, t_ns: int, tx: _SimTx) -> None:
        self._batcher.add(tx, t_ns)
        self._trace(t_ns, "pending", tx=tx.tx_id)
        self._schedule(t_ns + self._timeout_ns, self._timeout_check, None)
        while len(self._batcher.pending) >= self._batcher.block_size:
            self._cut(t_ns, "size")

    def _timeout_check(self, t_ns: int, _arg: object) -> None:
        age = self._batcher.oldest_age_ns(t_ns)
        if age is not None and age >= self._timeout_ns:
            self._cut(t_ns, "timeout")

    def _cut(self, t_ns: int, trigger: str) -> None:
        txs = self._batcher.cut(t_ns)
        if txs is None:
            return
        self.block_count += 1
        block = _Block(block_id=self.block_count, txs=txs, cut_ns=t_ns, trigger=trigger)
        self._trace(t_ns, "block_cut", block=block.block_id, size=len(txs), trigger=trigger)
        self._block_queue.append(block)
        if not self._processor_busy:
            self._start_block(t_ns)

    def _start_block(self, t_ns: int) -> None:
        block = self._block_queue.popleft()
        self._processor_busy = True
        wait_ns = round(poet_wait(self.rng, self.params.validator_count, self.params.mean_wait_s) * 1e9)
        self._trace(t_ns, "poet", block=block.block_id, wait_ns=wait_ns)
        self._schedule(t_ns + wait_ns, self._exec_next, (block, 0))

    def _exec_next(self, t_ns: int, arg: object) -> None:
        block, idx = arg
        tx = block.txs[idx]
        self._usage["processor"].add(t_ns, t_ns + tx.service_ns)
        self._schedule(t_ns + tx.service_ns, self._exec_done, (block, idx))

    def _exec_done(self, t_ns: int, arg: object) -> None:
        block, idx = arg
        self._emit(block.txs[idx], t_ns, block)
        if idx + 1 < len(block.txs):
            self._exec_next(t_ns, (block, idx + 1))
            return
        self._processor_busy = False
        if self._block_queue:
            self._start_block(t_ns)


SIMNET_BACKENDS = ("simnet-fabric", "simnet-sawtooth")


def build_sim(backend_id: str, params_dict: dict, seed: int, trace: list | None = None) -> SimCore:
    if backend_id == "simnet-fabric":
        return FabricSim(params_from_dict(FabricSimParams, params_dict), seed, trace)
    if backend_id == "simnet-sawtooth":
        return SawtoothSim(params_from_dict(SawtoothSimParams, params_dict), seed, trace)
    raise ValueError(f"unknown simulated backend {backend_id!r}")


class _Waiter:
    __slots__ = ("event", "receipt")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.receipt: CommitReceipt | None = None


class RealTimeSimAdapter(Adapter):
    """Drives a SimCore against a real clock and serves concurrent submits.

    A worker thread advances the simulation to "now" whenever the next
    simulated event is due or a new transaction arrives, and wakes the
    submitting threads as their commits appear. Commits that surface after
    a submitter already timed out are counted, not re-delivered.
    """

    def __init__(self, backend_id: str, params_dict: dict, seed: int,
                 clock: Callable[[], int], trace: list | None = None) -> None:
        self.backend_id = backend_id
        self._params_dict = dict(params_dict)
        self._core = build_sim(backend_id, params_dict, seed, trace)
        self._clock = clock
        self._cond = threading.Condition()
        self._waiters: dict[str, _Waiter] = {}
        self._abandoned: set[str] = set()
        self.late_commits = 0
        self._running = False
        self._thread: threading.Thread | None = None

    @property
    def descriptor(self) -> AdapterDescriptor:
        return AdapterDescriptor(backend_id=self.backend_id, kind="simulated", params=self._params_dict)

    def start(self) -> None:
        with self._cond:
            if self._running:
                return
            self._running = True
        self._thread = threading.Thread(target=self._run, name=f"sim-{self.backend_id}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            if not self._running:
                return
            self._running = False
            now = self._clock()
            self._deliver(self._core.advance(max(now, self._core.clock_ns)))
            # Anyone still waiting is finalized as a timeout at shutdown.
            for tx_id, waiter in list(self._waiters.items()):
                waiter.receipt = CommitReceipt(tx_id=tx_id, status=STATUS_TIMEOUT, reason="shutdown")
                waiter.event.set()
            self._waiters.clear()
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def submit(self, tx: SignedTransaction, deadline_ns: int) -> CommitReceipt:
        tx_id = tx.request.tx_id
        if not verify(tx):
            return CommitReceipt(tx_id=tx_id, status=STATUS_REJECTED, reason="bad signature")
        waiter = _Waiter()
        with self._cond:
            now = max(self._clock(), self._core.clock_ns)
            self._core.enqueue(tx_id, profile_for_request(tx.request), now)
            self._waiters[tx_id] = waiter
            self._cond.notify_all()
        waiter.event.wait(max(0.0, (deadline_ns - self._clock()) / 1e9))
        with self._cond:
            if waiter.receipt is not None:
                return waiter.receipt
            self._waiters.pop(tx_id, None)
            self._abandoned.add(tx_id)
        return CommitReceipt(tx_id=tx_id, status=STATUS_TIMEOUT, reason="deadline exceeded")

    def resource_samples(self) -> list[ResourceSample]:
        with self._cond:
            now = max(self._clock(), self._core.clock_ns)
            self._deliver(self._core.advance(now))
            return self._core.snapshot(now)

    @property
    def core(self) -> SimCore:
        return self._core

    def _deliver(self, events: list[CommitEvent]) -> None:
        for ev in events:
            waiter = self._waiters.pop(ev.tx_id, None)
            if waiter is not None:
                waiter.receipt = CommitReceipt(
                    tx_id=ev.tx_id, status=STATUS_COMMITTED,
                    commit_ns=ev.commit_ns, block_id=ev.block_id)
                waiter.event.set()
            elif ev.tx_id in self._abandoned:
                self._abandoned.discard(ev.tx_id)
                self.late_commits += 1

    def _run(self) -> None:
        with self._cond:
            while self._running:
                now = max(self._clock(), self._core.clock_ns)
                self._deliver(self._core.advance(now))
                nxt = self._core.next_event_ns()
                if nxt is None:
                    self._cond.wait()
                    continue
                delay = (nxt - self._clock()) / 1e9
                self._cond.wait(min(max(delay, 0.0005), 0.25))
