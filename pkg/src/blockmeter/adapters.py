"""Backend adapter contract and the generic remote-HTTP adapter.

An adapter turns a signed transaction into a backend submission and always
returns exactly one receipt per submit call, no later than the caller's
deadline. Failures are receipts, never exceptions: the measurement is the
product, and a timeout or an unreachable backend is a valid data point.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass
from typing import Callable

import requests

from .model import (
    STATUS_COMMITTED,
    STATUS_ERROR,
    STATUS_REJECTED,
    STATUS_TIMEOUT,
    STATUSES,
    CommitReceipt,
    ResourceSample,
    SignedTransaction,
)
from .workload import verify


@dataclass(frozen=True)
class AdapterDescriptor:
    backend_id: str
    kind: str  # "simulated" or "remote"
    params: dict


class Adapter:
    """Contract implemented by every backend adapter."""

    backend_id: str

    @property
    def descriptor(self) -> AdapterDescriptor:
        raise NotImplementedError

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def submit(self, tx: SignedTransaction, deadline_ns: int) -> CommitReceipt:
        """Submit and block until commitment, rejection, error, or deadline.

        deadline_ns is absolute on the experiment clock. A transaction that
        has not committed by the deadline yields a timeout receipt; a commit
        surfacing afterwards is discarded (tracked as a late commit by
        adapters that can observe it).
        """
        raise NotImplementedError

    def resource_samples(self) -> list[ResourceSample] | None:
        """Current resource state of the backend's nodes, if observable."""
        return None


def wire_body(tx: SignedTransaction) -> dict:
    """JSON wire format POSTed to remote middleware."""
    r = tx.request
    return {
        "tx_id": r.tx_id,
        "user_id": r.user_id,
        "function": r.function,
        "args": list(r.args),
        "payload_b64": base64.b64encode(r.payload).decode("ascii"),
        "signature_b64": base64.b64encode(tx.signature).decode("ascii"),
        "public_key_b64": base64.b64encode(tx.signer_public_key).decode("ascii"),
    }


class RemoteHttpAdapter(Adapter):
    """Bridges to an externally deployed platform through HTTP middleware.

    The middleware answers {"tx_id", "status", "commit_time_ms"}; network
    round-trip time lands inside the measured latency by design.
    """

    def __init__(self, backend_id: str, endpoint: str,
                 clock: Callable[[], int] = time.monotonic_ns) -> None:
        self.backend_id = backend_id
        self.endpoint = endpoint
        self._clock = clock
        self._local = threading.local()

    @property
    def descriptor(self) -> AdapterDescriptor:
        return AdapterDescriptor(backend_id=self.backend_id, kind="remote",
                                 params={"endpoint": self.endpoint})

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def submit(self, tx: SignedTransaction, deadline_ns: int) -> CommitReceipt:
        tx_id = tx.request.tx_id
        if not verify(tx):
            return CommitReceipt(tx_id=tx_id, status=STATUS_REJECTED, reason="bad signature")
        remaining_s = (deadline_ns - self._clock()) / 1e9
        if remaining_s <= 0:
            return CommitReceipt(tx_id=tx_id, status=STATUS_TIMEOUT, reason="deadline exceeded")
        try:
            resp = self._session().post(self.endpoint, json=wire_body(tx), timeout=remaining_s)
        except requests.Timeout:
            return CommitReceipt(tx_id=tx_id, status=STATUS_TIMEOUT, reason="deadline exceeded")
        except requests.RequestException as exc:
            return CommitReceipt(tx_id=tx_id, status=STATUS_ERROR, reason=str(exc))
        if not 200 <= resp.status_code < 300:
            return CommitReceipt(tx_id=tx_id, status=STATUS_ERROR, reason=str(resp.status_code))
        try:
            body = resp.json()
            status = body["status"]
        except (ValueError, KeyError) as exc:
            return CommitReceipt(tx_id=tx_id, status=STATUS_ERROR, reason=f"bad response: {exc}")
        if status == STATUS_COMMITTED:
            return CommitReceipt(tx_id=tx_id, status=STATUS_COMMITTED, commit_ns=self._clock())
        if status in STATUSES:
            return CommitReceipt(tx_id=tx_id, status=status, reason=str(body.get("reason", "")))
        return CommitReceipt(tx_id=tx_id, status=STATUS_ERROR, reason=f"unknown status {status!r}")
