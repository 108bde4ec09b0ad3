"""Shared domain types and the canonical transaction serialization.

Everything here is an immutable value object; instances are safe to share
across threads. All timestamps are monotonic-clock nanoseconds relative to
the experiment epoch (virtual nanoseconds in orchestrated simulator runs).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

TxStatus = str

STATUS_COMMITTED = "committed"
STATUS_REJECTED = "rejected"
STATUS_TIMEOUT = "timeout"
STATUS_ERROR = "error"
STATUSES = (STATUS_COMMITTED, STATUS_REJECTED, STATUS_TIMEOUT, STATUS_ERROR)

WORKLOAD_KINDS = ("simple", "data_heavy", "cpu_heavy")

MAX_PAYLOAD_BYTES = 16 * 1024 * 1024


class ModelError(ValueError):
    """Raised when a domain value violates its invariants."""


@dataclass(frozen=True)
class WorkloadProfile:
    """Shape of the per-transaction work: payload size and compute loops."""

    kind: str
    payload_bytes: int = 0
    cpu_iterations: int = 0

    def __post_init__(self) -> None:
        if self.kind not in WORKLOAD_KINDS:
            raise ModelError(f"workload.kind: unknown kind {self.kind!r}")
        if self.payload_bytes < 0:
            raise ModelError("workload.payload_bytes: must be >= 0")
        if self.cpu_iterations < 0:
            raise ModelError("workload.cpu_iterations: must be >= 0")
        if self.kind == "simple" and self.payload_bytes > 1024:
            raise ModelError("workload.payload_bytes: simple profile caps payloads at 1024 bytes")


@dataclass(frozen=True)
class UserAccount:
    user_id: str
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class TransactionRequest:
    tx_id: str
    user_id: str
    function: str
    args: tuple[str, ...]
    payload: bytes
    backend_id: str

    def __post_init__(self) -> None:
        if not self.function:
            raise ModelError("function: must be non-empty")
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class SignedTransaction:
    request: TransactionRequest
    signature: bytes
    signer_public_key: bytes


@dataclass(frozen=True)
class CommitReceipt:
    tx_id: str
    status: TxStatus
    commit_ns: int | None = None
    block_id: int | None = None
    reason: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ModelError(f"receipt.status: unknown status {self.status!r}")
        if self.status == STATUS_COMMITTED and self.commit_ns is None:
            raise ModelError("receipt.commit_ns: required for committed receipts")


@dataclass(frozen=True)
class TransactionRecord:
    """One measured transaction: the unit every report is built from."""

    tx_id: str
    start_ns: int
    end_ns: int | None
    status: TxStatus
    backend_id: str
    workload_kind: str

    def __post_init__(self) -> None:
        if self.end_ns is not None and self.end_ns < self.start_ns:
            raise ModelError(f"record {self.tx_id}: end_ns precedes start_ns")


def latency_of(record: TransactionRecord) -> int:
    """Nanoseconds between submission and completion of a finalized record."""
    if record.end_ns is None:
        raise ModelError(f"record {record.tx_id}: record not finalized")
    if record.end_ns < record.start_ns:
        raise ModelError(f"record {record.tx_id}: end_ns precedes start_ns")
    return record.end_ns - record.start_ns


@dataclass(frozen=True)
class ResourceSample:
    node_id: str
    t_ns: int
    cpu_fraction: float
    mem_bytes: int

    def __post_init__(self) -> None:
        if self.mem_bytes < 0:
            raise ModelError("sample.mem_bytes: must be >= 0")
        if self.cpu_fraction < 0:
            raise ModelError("sample.cpu_fraction: must be >= 0")


@dataclass(frozen=True)
class RateStep:
    rate_tps: float
    duration_s: float

    def __post_init__(self) -> None:
        if self.rate_tps < 0:
            raise ModelError("rate_tps: must be >= 0")
        if self.duration_s <= 0:
            raise ModelError("duration_s: must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    backend_id: str
    workload: WorkloadProfile
    schedule: tuple[RateStep, ...]
    backend_params: dict = field(default_factory=dict)
    user_count: int = 10
    seed: int = 42
    warmup_fraction: float = 0.1
    sample_interval_s: float = 3.0
    inflight_cap: int = 100_000
    submit_timeout_s: float = 30.0
    arrival_process: str = "uniform"
    csv_path: str | None = None
    listen: str = "127.0.0.1:8380"
    out_dir: str = "blockmeter-out"
    extra_backends: tuple[tuple[str, dict], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if not self.schedule:
            raise ModelError("schedule: must be non-empty")
        if self.user_count < 1:
            raise ModelError("user_count: must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ModelError("warmup_fraction: must be in [0, 1)")

    @property
    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.schedule)

    @property
    def submit_timeout_ns(self) -> int:
        return round(self.submit_timeout_s * 1e9)


def _packed(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def canonical_bytes(request: TransactionRequest) -> bytes:
    """Injective, deterministic byte encoding of a request.

    Fixed field order (tx_id, user_id, function, args, payload, backend_id)
    with a big-endian u32 length prefix on every segment; args additionally
    carry a u32 element count so arg boundaries cannot be forged by
    concatenation.
    """
    out = [
        _packed(request.tx_id.encode("utf-8")),
        _packed(request.user_id.encode("utf-8")),
        _packed(request.function.encode("utf-8")),
        struct.pack(">I", len(request.args)),
    ]
    out.extend(_packed(a.encode("utf-8")) for a in request.args)
    out.append(_packed(request.payload))
    out.append(_packed(request.backend_id.encode("utf-8")))
    return b"".join(out)


def derive_seed(seed: int, *labels: str | int) -> int:
    """Stable 64-bit sub-seed for an independent RNG stream.

    Hash-derived so streams for different purposes (key material, payloads,
    simulator draws) never overlap even when the root seed is reused.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "big", signed=False))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")
