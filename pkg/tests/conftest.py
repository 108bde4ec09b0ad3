from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from blockmeter.config import validate_config


def make_config(**overrides):
    raw = {
        "backend_id": "simnet-fabric",
        "workload": {"kind": "simple"},
        "schedule": [{"rate_tps": 50, "duration_s": 5}],
    }
    raw.update(overrides)
    return validate_config(json.dumps(raw))


class MiddlewareStub:
    """Loopback HTTP middleware that answers the remote wire format."""

    def __init__(self, status="committed", http_status=200, delay_s=0.0):
        self.seen = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                import time

                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                outer.seen.append(body)
                if delay_s:
                    time.sleep(delay_s)
                if http_status != 200:
                    self.send_response(http_status)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                data = json.dumps({
                    "tx_id": body["tx_id"], "status": status, "commit_time_ms": 1.0,
                }).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[0], self._httpd.server_address[1]
        return f"http://{host}:{port}/submit"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def middleware_stub():
    with MiddlewareStub() as stub:
        yield stub
