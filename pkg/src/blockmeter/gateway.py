"""HTTP transaction gateway: one submission path per registered backend.

The request-handling core is plain Python so the injector can call it
in-process (bypassing TCP) while serve mode wraps it in a threading HTTP
server. A submission is synchronous: the response goes out only once the
backend's receipt is in, and by then the finalized record is in the monitor.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import re
import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping

from .adapters import Adapter
from .model import (
    MAX_PAYLOAD_BYTES,
    TransactionRecord,
    TransactionRequest,
    UserAccount,
)
from .monitor import Monitor
from .workload import sign

log = logging.getLogger(__name__)

_SUBMIT_RE = re.compile(r"^/api/([^/]+)/transactions$")
_STATUS_RE = re.compile(r"^/api/transactions/([^/]+)$")


class BodyError(ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(message)
        self.field = field


def random_tx_id() -> str:
    return secrets.token_hex(16)


def seeded_tx_id_gen(rng) -> Callable[[], str]:
    """128-bit hex ids drawn from the experiment RNG, for reproducible runs."""
    lock = threading.Lock()

    def gen() -> str:
        with lock:
            return f"{rng.getrandbits(128):032x}"

    return gen


class GatewayCore:
    """Validates, stamps, signs, and routes submissions; concurrency-safe."""

    def __init__(self, adapters: Mapping[str, Adapter], accounts: Mapping[str, UserAccount],
                 monitor: Monitor, *, clock: Callable[[], int], submit_timeout_ns: int,
                 inflight_cap: int = 100_000, workload_kind: str = "simple",
                 tx_id_gen: Callable[[], str] = random_tx_id) -> None:
        self.adapters = dict(adapters)
        self.accounts = dict(accounts)
        self.monitor = monitor
        self.clock = clock
        self.submit_timeout_ns = submit_timeout_ns
        self.inflight_cap = inflight_cap
        self.workload_kind = workload_kind
        self.tx_id_gen = tx_id_gen
        self.rejected_backlog = 0
        self._inflight = 0
        self._lock = threading.Lock()

    def parse_body(self, body: Mapping) -> tuple[UserAccount, str, list[str], bytes]:
        if not isinstance(body, Mapping):
            raise BodyError("body", "body must be a JSON object")
        user_id = body.get("user_id")
        if not user_id or not isinstance(user_id, str):
            raise BodyError("user_id", "user_id must be a non-empty string")
        account = self.accounts.get(user_id)
        if account is None:
            raise BodyError("user_id", f"unknown user_id {user_id!r}")
        function = body.get("function")
        if not function or not isinstance(function, str):
            raise BodyError("function", "function must be a non-empty string")
        args = body.get("args", [])
        if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
            raise BodyError("args", "args must be a list of strings")
        payload_b64 = body.get("payload_b64", "") or ""
        if not isinstance(payload_b64, str):
            raise BodyError("payload_b64", "payload_b64 must be a base64 string")
        try:
            payload = base64.b64decode(payload_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise BodyError("payload_b64", f"invalid base64: {exc}") from exc
        if len(payload) > MAX_PAYLOAD_BYTES:
            raise BodyError("payload_b64", "payload exceeds 16 MiB")
        return account, function, args, payload

    def handle_submit(self, backend_id: str, body: Mapping) -> tuple[int, dict]:
        adapter = self.adapters.get(backend_id)
        if adapter is None:
            return 404, {"error": f"unknown backend {backend_id!r}"}
        try:
            account, function, args, payload = self.parse_body(body)
        except BodyError as exc:
            return 400, {"error": str(exc), "field": exc.field}

        with self._lock:
            if self._inflight >= self.inflight_cap:
                self.rejected_backlog += 1
                return 503, {"error": "backlog cap exceeded"}
            self._inflight += 1

        try:
            tx_id = self.tx_id_gen()
            start_ns = self.clock()
            self.monitor.record_start(tx_id, start_ns, backend_id, self.workload_kind)
            request = TransactionRequest(tx_id=tx_id, user_id=account.user_id,
                                         function=function, args=tuple(args),
                                         payload=payload, backend_id=backend_id)
            signed = sign(account, request)
            receipt = adapter.submit(signed, start_ns + self.submit_timeout_ns)
            end_ns = max(self.clock(), start_ns)
            record = self.monitor.try_record_end(tx_id, end_ns, receipt.status)
            latency_ms = ((record.end_ns - record.start_ns) / 1e6) if record else None
            return 200, {"tx_id": tx_id, "status": receipt.status, "latency_ms": latency_ms}
        finally:
            with self._lock:
                self._inflight -= 1

    def handle_status(self, tx_id: str) -> tuple[int, dict]:
        entry = self.monitor.lookup(tx_id)
        if entry is None:
            return 404, {"error": f"unknown tx_id {tx_id!r}"}
        if isinstance(entry, TransactionRecord):
            return 200, {
                "tx_id": entry.tx_id, "status": entry.status,
                "start_ns": entry.start_ns, "end_ns": entry.end_ns,
                "backend_id": entry.backend_id, "workload_kind": entry.workload_kind,
            }
        return 200, {"tx_id": tx_id, "status": "pending", "start_ns": entry.start_ns}

    @property
    def inflight(self) -> int:
        with self._lock:
            return self._inflight


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    core: GatewayCore  # set on the subclass built per server

    def _send_json(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        if self.path == "/healthz":
            data = b"ok"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
            return
        match = _STATUS_RE.match(self.path)
        if match:
            self._send_json(*self.core.handle_status(match.group(1)))
            return
        self._send_json(404, {"error": "not found"})

    def do_POST(self) -> None:  # noqa: N802
        match = _SUBMIT_RE.match(self.path)
        if not match:
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            body = json.loads(raw) if raw else {}
        except (ValueError, OSError) as exc:
            self._send_json(400, {"error": f"malformed body: {exc}", "field": "body"})
            return
        self._send_json(*self.core.handle_submit(match.group(1), body))

    def log_message(self, fmt: str, *args) -> None:
        log.debug("gateway http: " + fmt, *args)


class GatewayServer:
    """Threading HTTP shell around a GatewayCore."""

    def __init__(self, core: GatewayCore, host: str = "127.0.0.1", port: int = 8380) -> None:
        handler = type("BoundHandler", (_Handler,), {"core": core})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[0], self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="gateway-http", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {listen!r}")
    return host, int(port)
