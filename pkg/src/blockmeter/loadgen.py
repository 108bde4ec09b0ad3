"""Open-loop, rate-controlled transaction injector with CSV ingestion.

The injector dispatches every request at its scheduled time regardless of
outstanding responses (open loop): a scheduler walks the arrival plan and
hands each due request to a worker pool, while responses are collected as
they arrive. Scheduling lateness is recorded, never corrected, so overload
shows up in the data instead of being smoothed away by catch-up bursts.
"""

from __future__ import annotations

import base64
import binascii
import csv
import random
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .model import RateStep, derive_seed

CSV_COLUMNS = ("user_id", "function", "args", "payload_b64")
ARGS_SEPARATOR = ";"

# An in-process target takes the JSON body and returns (http_status, response dict).
InProcessTarget = Callable[[dict], tuple[int, dict]]


class LoadgenError(ValueError):
    pass


@dataclass(frozen=True)
class PayloadRow:
    user_id: str
    function: str
    args: tuple[str, ...]
    payload_b64: str

    def body(self) -> dict:
        return {
            "user_id": self.user_id,
            "function": self.function,
            "args": list(self.args),
            "payload_b64": self.payload_b64,
        }


def load_csv(path: Path | str) -> list[PayloadRow]:
    """Parse a payload file: header user_id,function,args,payload_b64.

    The args cell is a ';'-joined list (empty cell means no args); the
    payload cell is base64 and may be empty.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise LoadgenError(f"{path}: missing header column(s): {', '.join(missing)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            user_id = (raw.get("user_id") or "").strip()
            function = (raw.get("function") or "").strip()
            if not user_id or not function:
                raise LoadgenError(f"{path}: line {lineno}: user_id and function must be non-empty")
            args_cell = raw.get("args") or ""
            args = tuple(args_cell.split(ARGS_SEPARATOR)) if args_cell else ()
            payload_b64 = (raw.get("payload_b64") or "").strip()
            try:
                base64.b64decode(payload_b64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise LoadgenError(f"{path}: line {lineno}: invalid payload_b64: {exc}") from exc
            rows.append(PayloadRow(user_id=user_id, function=function,
                                   args=args, payload_b64=payload_b64))
    return rows


def write_csv(path: Path | str, rows: Sequence[PayloadRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([row.user_id, row.function,
                             ARGS_SEPARATOR.join(row.args), row.payload_b64])


@dataclass(frozen=True)
class PlanEntry:
    arrival_ns: int
    payload_index: int
    user_index: int


@dataclass(frozen=True)
class ArrivalPlan:
    entries: tuple[PlanEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def span_ns(self) -> int:
        return self.entries[-1].arrival_ns if self.entries else 0

    def per_second_counts(self) -> list[int]:
        if not self.entries:
            return []
        counts = [0] * (self.span_ns // 1_000_000_000 + 1)
        for e in self.entries:
            counts[e.arrival_ns // 1_000_000_000] += 1
        return counts


def build_plan(schedule: Sequence[RateStep], user_count: int, seed: int,
               process: str = "uniform", n_override: int | None = None) -> ArrivalPlan:
    """Arrival times for the whole schedule.

    Each step contributes round(rate * duration) arrivals: uniformly spaced
    at 1/rate by default, or (with process="poisson") at sorted uniform
    offsets, which is a Poisson process conditioned on that count. Users
    rotate round-robin; payload indices count up globally. With n_override
    the plan is clipped or extended (at the final step's rate) to exactly
    that many arrivals, for CSV-driven runs.
    """
    if not schedule:
        raise LoadgenError("schedule: must be non-empty")
    if process not in ("uniform", "poisson"):
        raise LoadgenError(f"unknown arrival process {process!r}")
    if user_count < 1:
        raise LoadgenError("user_count: must be >= 1")
    rng = random.Random(derive_seed(seed, "arrivals"))

    arrivals: list[int] = []
    offset_ns = 0
    for step in schedule:
        if step.rate_tps < 0:
            raise LoadgenError("rate_tps: must be >= 0")
        dur_ns = round(step.duration_s * 1e9)
        n = round(step.rate_tps * step.duration_s)
        if n > 0:
            if process == "uniform":
                gap = 1e9 / step.rate_tps
                arrivals.extend(offset_ns + round(i * gap) for i in range(n))
            else:
                offsets = sorted(rng.randrange(dur_ns) for _ in range(n))
                arrivals.extend(offset_ns + o for o in offsets)
        offset_ns += dur_ns

    if n_override is not None:
        if len(arrivals) >= n_override:
            arrivals = arrivals[:n_override]
        else:
            # Keep emitting at the final step's rate until the count is met.
            last_rate = next((s.rate_tps for s in reversed(schedule) if s.rate_tps > 0), 0.0)
            if last_rate <= 0:
                raise LoadgenError("cannot extend plan: schedule has no positive rate")
            gap_ns = round(1e9 / last_rate)
            t = arrivals[-1] if arrivals else -gap_ns
            while len(arrivals) < n_override:
                t += gap_ns
                arrivals.append(t)

    entries = tuple(
        PlanEntry(arrival_ns=t, payload_index=i, user_index=i % user_count)
        for i, t in enumerate(arrivals))
    return ArrivalPlan(entries=entries)


@dataclass(frozen=True)
class InjectionAttempt:
    payload_index: int
    scheduled_ns: int
    actual_send_ns: int
    http_status: int
    tx_id: str | None = None
    status: str | None = None
    error: str | None = None


def inject(plan: ArrivalPlan, target: str | InProcessTarget, bodies: Sequence[dict],
           max_workers: int = 256, request_timeout_s: float = 60.0) -> list[InjectionAttempt]:
    """Dispatch the plan against a gateway URL or in-process handler.

    Returns one entry per plan element, in payload order, with the actual
    send time stamped inside the worker just before the request goes out.
    Connection failures are recorded per entry and injection continues.
    """
    if isinstance(target, str):
        local = threading.local()

        def call(body: dict) -> tuple[int, dict]:
            session = getattr(local, "session", None)
            if session is None:
                session = local.session = requests.Session()
            resp = session.post(target, json=body, timeout=request_timeout_s)
            try:
                payload = resp.json()
            except ValueError:
                payload = {}
            return resp.status_code, payload
    else:
        call = target

    t0 = time.monotonic_ns()

    def fire(entry: PlanEntry) -> InjectionAttempt:
        actual = time.monotonic_ns() - t0
        try:
            status_code, payload = call(bodies[entry.payload_index])
        except Exception as exc:
            return InjectionAttempt(
                payload_index=entry.payload_index, scheduled_ns=entry.arrival_ns,
                actual_send_ns=actual, http_status=0, error=str(exc))
        return InjectionAttempt(
            payload_index=entry.payload_index, scheduled_ns=entry.arrival_ns,
            actual_send_ns=actual, http_status=status_code,
            tx_id=payload.get("tx_id"), status=payload.get("status"),
            error=payload.get("error"))

    futures: list[Future] = []
    with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="inject") as pool:
        for entry in plan.entries:
            delay = (t0 + entry.arrival_ns - time.monotonic_ns()) / 1e9
            if delay > 0:
                time.sleep(delay)
            futures.append(pool.submit(fire, entry))
        results = [f.result() for f in futures]
    results.sort(key=lambda a: a.payload_index)
    return results
