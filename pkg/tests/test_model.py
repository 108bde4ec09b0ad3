from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockmeter.config import config_to_dict, validate_config
from blockmeter.model import (
    ModelError,
    TransactionRecord,
    TransactionRequest,
    WorkloadProfile,
    canonical_bytes,
    derive_seed,
    latency_of,
)


def req(**overrides) -> TransactionRequest:
    base = dict(tx_id="tx-1", user_id="user-0", function="create",
                args=("a", "b"), payload=b"\x00\x01", backend_id="simnet-fabric")
    base.update(overrides)
    return TransactionRequest(**base)


class TestCanonicalBytes:
    def test_deterministic(self):
        assert canonical_bytes(req()) == canonical_bytes(req())

    def test_single_arg_change_differs(self):
        assert canonical_bytes(req(args=("a", "c"))) != canonical_bytes(req())

    def test_empty_args_and_payload_well_formed(self):
        data = canonical_bytes(req(args=(), payload=b""))
        assert isinstance(data, bytes) and len(data) > 0

    def test_arg_boundaries_not_forgeable(self):
        # "ab" as one arg vs two args "a","b" must encode differently.
        assert canonical_bytes(req(args=("ab",))) != canonical_bytes(req(args=("a", "b")))

    FIELDS = ("tx_id", "user_id", "function", "backend_id")

    @given(
        base=st.fixed_dictionaries({f: st.text(min_size=1, max_size=8) for f in FIELDS}),
        args=st.lists(st.text(max_size=6), max_size=4),
        payload=st.binary(max_size=32),
        mutate=st.sampled_from(FIELDS + ("args", "payload")),
        extra=st.text(min_size=1, max_size=3),
    )
    def test_injective_under_field_mutation(self, base, args, payload, mutate, extra):
        original = TransactionRequest(args=tuple(args), payload=payload, **base)
        changed = dict(base, args=tuple(args), payload=payload)
        if mutate == "args":
            changed["args"] = tuple(args) + (extra,)
        elif mutate == "payload":
            changed["payload"] = payload + extra.encode()
        else:
            changed[mutate] = base[mutate] + extra
        mutated = TransactionRequest(**changed)
        assert canonical_bytes(original) != canonical_bytes(mutated)


class TestLatency:
    def test_zero_latency(self):
        r = TransactionRecord("t", 100, 100, "committed", "b", "simple")
        assert latency_of(r) == 0

    def test_subtraction(self):
        r = TransactionRecord("t", 1_000_000, 3_500_000, "committed", "b", "simple")
        assert latency_of(r) == 2_500_000

    def test_inverted_timestamps_rejected(self):
        with pytest.raises(ModelError):
            TransactionRecord("t", 5, 3, "committed", "b", "simple")

    def test_unfinalized_record_errors(self):
        r = TransactionRecord("t", 5, None, "committed", "b", "simple")
        with pytest.raises(ModelError, match="not finalized"):
            latency_of(r)


class TestWorkloadProfile:
    def test_simple_payload_cap(self):
        with pytest.raises(ModelError):
            WorkloadProfile(kind="simple", payload_bytes=2048)

    def test_negative_rejected(self):
        with pytest.raises(ModelError):
            WorkloadProfile(kind="data_heavy", payload_bytes=-1)


class TestConfigDefaults:
    def test_minimal_config_gets_documented_defaults(self):
        cfg = validate_config(json.dumps({
            "backend_id": "simnet-fabric",
            "workload": {"kind": "simple"},
            "schedule": [{"rate_tps": 10, "duration_s": 5}],
        }))
        assert cfg.seed == 42
        assert cfg.warmup_fraction == 0.1
        assert cfg.sample_interval_s == 3.0
        assert cfg.inflight_cap == 100_000
        assert cfg.submit_timeout_s == 30.0
        assert cfg.user_count == 10
        assert cfg.backend_params == {}  # simulator defaults B=10, T=2.0 apply downstream

    def test_data_heavy_default_payload(self):
        cfg = validate_config(json.dumps({
            "backend_id": "simnet-fabric",
            "workload": {"kind": "data_heavy"},
            "schedule": [{"rate_tps": 1, "duration_s": 1}],
        }))
        assert cfg.workload.payload_bytes == 10240

    def test_roundtrip_is_fixed_point(self):
        cfg = validate_config(json.dumps({
            "backend_id": "simnet-sawtooth",
            "backend_params": {"mean_wait_s": 1.5},
            "workload": {"kind": "cpu_heavy", "cpu_iterations": 5},
            "schedule": [{"rate_tps": 3, "duration_s": 2}],
            "seed": 7,
        }))
        again = validate_config(json.dumps(config_to_dict(cfg)))
        assert again == cfg
        assert config_to_dict(again) == config_to_dict(cfg)


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(42, "x") == derive_seed(42, "x")
    assert derive_seed(42, "x") != derive_seed(42, "y")
    assert derive_seed(42, "x", 1) != derive_seed(42, "x", 2)


def test_record_json_shape():
    record = TransactionRecord("t1", 10, 20, "committed", "simnet-fabric", "simple")
    d = dataclasses.asdict(record)
    assert set(d) == {"tx_id", "start_ns", "end_ns", "status", "backend_id", "workload_kind"}
