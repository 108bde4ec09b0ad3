from __future__ import annotations

import base64
import threading
import time

import pytest
import requests

from blockmeter.gateway import GatewayCore, GatewayServer
from blockmeter.model import STATUS_COMMITTED, CommitReceipt, SignedTransaction
from blockmeter.monitor import Monitor
from blockmeter.adapters import Adapter, AdapterDescriptor
from blockmeter.workload import account_map, create_users

SECOND = 1_000_000_000


class InstantAdapter(Adapter):
    """Commits everything immediately; optional artificial delay."""

    def __init__(self, backend_id="simnet-fabric", delay_s=0.0, clock=time.monotonic_ns):
        self.backend_id = backend_id
        self.delay_s = delay_s
        self._clock = clock

    @property
    def descriptor(self):
        return AdapterDescriptor(self.backend_id, "simulated", {})

    def submit(self, tx: SignedTransaction, deadline_ns: int) -> CommitReceipt:
        if self.delay_s:
            time.sleep(self.delay_s)
        return CommitReceipt(tx_id=tx.request.tx_id, status=STATUS_COMMITTED,
                             commit_ns=self._clock())


def make_core(adapter=None, inflight_cap=100_000, monitor=None):
    epoch = time.monotonic_ns()
    clock = lambda: time.monotonic_ns() - epoch  # noqa: E731
    adapter = adapter or InstantAdapter(clock=clock)
    monitor = monitor if monitor is not None else Monitor()
    users = create_users(3, 42)
    core = GatewayCore(adapters={adapter.backend_id: adapter}, accounts=account_map(users),
                       monitor=monitor, clock=clock, submit_timeout_ns=30 * SECOND,
                       inflight_cap=inflight_cap)
    return core, monitor


def body(**overrides):
    base = {"user_id": "user-0", "function": "create", "args": ["a"], "payload_b64": ""}
    base.update(overrides)
    return base


class TestHandleSubmit:
    def test_happy_path_produces_matching_record(self):
        core, monitor = make_core()
        status, resp = core.handle_submit("simnet-fabric", body())
        assert status == 200
        assert resp["status"] == "committed"
        assert resp["latency_ms"] >= 0
        records = monitor.records
        assert len(records) == 1
        assert records[0].tx_id == resp["tx_id"]
        assert records[0].status == "committed"

    def test_unknown_backend_404(self):
        core, _ = make_core()
        status, resp = core.handle_submit("nosuch", body())
        assert status == 404

    def test_unknown_user_400_names_field(self):
        core, _ = make_core()
        status, resp = core.handle_submit("simnet-fabric", body(user_id="ghost"))
        assert status == 400
        assert resp["field"] == "user_id"

    def test_missing_function_400(self):
        core, _ = make_core()
        status, resp = core.handle_submit("simnet-fabric", body(function=""))
        assert status == 400
        assert resp["field"] == "function"

    def test_bad_base64_400(self):
        core, _ = make_core()
        status, resp = core.handle_submit("simnet-fabric", body(payload_b64="%%%"))
        assert status == 400
        assert resp["field"] == "payload_b64"

    def test_oversized_payload_400(self):
        core, _ = make_core()
        big = base64.b64encode(bytes(17 * 1024 * 1024)).decode()
        status, resp = core.handle_submit("simnet-fabric", body(payload_b64=big))
        assert status == 400
        assert resp["field"] == "payload_b64"

    def test_payload_roundtrip_to_adapter(self):
        seen = {}

        class Capture(InstantAdapter):
            def submit(self, tx, deadline_ns):
                seen["payload"] = tx.request.payload
                seen["args"] = tx.request.args
                return super().submit(tx, deadline_ns)

        core, _ = make_core(adapter=Capture())
        payload = base64.b64encode(b"hello").decode()
        core.handle_submit("simnet-fabric", body(payload_b64=payload, args=["x", "y"]))
        assert seen["payload"] == b"hello"
        assert seen["args"] == ("x", "y")

    def test_burst_over_cap_gets_503_and_no_records(self):
        core, monitor = make_core(adapter=InstantAdapter(delay_s=0.5), inflight_cap=5)
        results = []
        lock = threading.Lock()

        def one():
            status, resp = core.handle_submit("simnet-fabric", body())
            with lock:
                results.append(status)

        threads = [threading.Thread(target=one) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == [200] * 5 + [503] * 3
        assert len(monitor.records) == 5
        assert core.rejected_backlog == 3


class TestHandleStatus:
    def test_committed_lookup(self):
        core, _ = make_core()
        _, resp = core.handle_submit("simnet-fabric", body())
        status, found = core.handle_status(resp["tx_id"])
        assert status == 200
        assert found["status"] == "committed"
        assert found["end_ns"] >= found["start_ns"]

    def test_pending_lookup(self):
        core, monitor = make_core(adapter=InstantAdapter(delay_s=0.4))
        out = {}

        def submit():
            _, out["resp"] = core.handle_submit("simnet-fabric", body())

        t = threading.Thread(target=submit)
        t.start()
        deadline = time.monotonic() + 2
        while monitor.open_count == 0 and time.monotonic() < deadline:
            time.sleep(0.01)
        tx_id = next(iter(monitor._open))  # single in-flight tx
        status, found = core.handle_status(tx_id)
        assert status == 200
        assert found["status"] == "pending"
        assert "end_ns" not in found
        t.join()

    def test_unknown_404(self):
        core, _ = make_core()
        assert core.handle_status("never-seen")[0] == 404


class TestHTTPServer:
    @pytest.fixture
    def server(self):
        core, monitor = make_core()
        server = GatewayServer(core, "127.0.0.1", 0)
        server.start()
        yield server
        server.stop()

    def test_healthz(self, server):
        r = requests.get(server.base_url + "/healthz", timeout=5)
        assert (r.status_code, r.text) == (200, "ok")

    def test_submit_and_status_over_http(self, server):
        r = requests.post(server.base_url + "/api/simnet-fabric/transactions",
                          json=body(), timeout=5)
        assert r.status_code == 200
        tx_id = r.json()["tx_id"]
        s = requests.get(server.base_url + f"/api/transactions/{tx_id}", timeout=5)
        assert s.json()["status"] == "committed"

    def test_unknown_path_404(self, server):
        assert requests.post(server.base_url + "/api/nosuch/transactions",
                             json=body(), timeout=5).status_code == 404
        assert requests.get(server.base_url + "/nope", timeout=5).status_code == 404

    def test_malformed_json_400(self, server):
        r = requests.post(server.base_url + "/api/simnet-fabric/transactions",
                          data=b"{not json", headers={"Content-Type": "application/json"},
                          timeout=5)
        assert r.status_code == 400
