"""Experiment configuration: JSON schema, defaults, validation.

validate_config applies the documented defaults to omitted fields and
rejects bad input with a message naming every invalid field, so a config
can be fixed in one pass.
"""

from __future__ import annotations

import json
from pathlib import Path

from .adapters import Adapter, RemoteHttpAdapter
from .model import ExperimentConfig, ModelError, RateStep, WorkloadProfile
from .monitor import MIN_SAMPLE_INTERVAL_S
from .simnet import (
    SIMNET_BACKENDS,
    FabricSimParams,
    RealTimeSimAdapter,
    SawtoothSimParams,
    params_from_dict,
)

_WORKLOAD_PAYLOAD_DEFAULTS = {"simple": 0, "data_heavy": 10240, "cpu_heavy": 32}
_WORKLOAD_ITER_DEFAULTS = {"simple": 0, "data_heavy": 0, "cpu_heavy": 100_000}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


def _registered_backends() -> str:
    return ", ".join(SIMNET_BACKENDS) + ", or any id with backend_params.endpoint (remote)"


def validate_config(raw: str | dict) -> ExperimentConfig:
    """Parse JSON text (or an already-decoded object) into an ExperimentConfig."""
    if isinstance(raw, str):
        try:
            data = json.loads(raw)
        except ValueError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    else:
        data = raw
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a JSON object"])

    problems: list[str] = []

    def fail(field: str, message: str) -> None:
        problems.append(f"{field}: {message}")

    backend_id = data.get("backend_id")
    if not backend_id or not isinstance(backend_id, str):
        fail("backend_id", "required string")
        backend_id = ""
    backend_params = data.get("backend_params", {})
    if not isinstance(backend_params, dict):
        fail("backend_params", "must be an object")
        backend_params = {}

    if backend_id:
        if backend_id in SIMNET_BACKENDS:
            cls = FabricSimParams if backend_id == "simnet-fabric" else SawtoothSimParams
            try:
                # debug_trace is an orchestrator flag, not a simulator knob
                params_from_dict(cls, {k: v for k, v in backend_params.items()
                                       if k != "debug_trace"})
            except (TypeError, ValueError) as exc:
                fail("backend_params", str(exc))
        elif not backend_params.get("endpoint"):
            fail("backend_id", f"unknown backend {backend_id!r}; registered: {_registered_backends()}")

    workload_raw = data.get("workload", {})
    if not isinstance(workload_raw, dict):
        fail("workload", "must be an object")
        workload_raw = {}
    kind = workload_raw.get("kind")
    workload = None
    if not kind or not isinstance(kind, str):
        fail("workload.kind", "required: one of simple, data_heavy, cpu_heavy")
    else:
        try:
            workload = WorkloadProfile(
                kind=kind,
                payload_bytes=int(workload_raw.get("payload_bytes",
                                                   _WORKLOAD_PAYLOAD_DEFAULTS.get(kind, 0))),
                cpu_iterations=int(workload_raw.get("cpu_iterations",
                                                    _WORKLOAD_ITER_DEFAULTS.get(kind, 0))),
            )
        except (ModelError, ValueError, TypeError) as exc:
            fail("workload", str(exc))

    schedule: list[RateStep] = []
    schedule_raw = data.get("schedule")
    if not isinstance(schedule_raw, list) or not schedule_raw:
        fail("schedule", "required: non-empty list of {rate_tps, duration_s}")
    else:
        for i, step_raw in enumerate(schedule_raw):
            if not isinstance(step_raw, dict):
                fail(f"schedule[{i}]", "must be an object")
                continue
            try:
                rate = float(step_raw["rate_tps"])
            except (KeyError, TypeError, ValueError):
                fail(f"schedule[{i}].rate_tps", "required number")
                continue
            try:
                duration = float(step_raw["duration_s"])
            except (KeyError, TypeError, ValueError):
                fail(f"schedule[{i}].duration_s", "required number")
                continue
            if rate < 0:
                fail(f"schedule[{i}].rate_tps", "must be >= 0")
            elif duration <= 0:
                fail(f"schedule[{i}].duration_s", "must be > 0")
            else:
                schedule.append(RateStep(rate_tps=rate, duration_s=duration))

    def number(field: str, default, *, minimum=None, floor=None):
        value = data.get(field, default)
        try:
            value = type(default)(value)
        except (TypeError, ValueError):
            fail(field, f"must be a {type(default).__name__}")
            return default
        if minimum is not None and value < minimum:
            fail(field, f"must be >= {minimum}")
            return default
        if floor is not None:
            value = max(value, floor)
        return value

    user_count = number("user_count", 10, minimum=1)
    seed = number("seed", 42, minimum=0)
    warmup_fraction = number("warmup_fraction", 0.1, minimum=0.0)
    if warmup_fraction >= 1:
        fail("warmup_fraction", "must be < 1")
        warmup_fraction = 0.1
    sample_interval_s = number("sample_interval_s", 3.0, minimum=0.0, floor=MIN_SAMPLE_INTERVAL_S)
    inflight_cap = number("inflight_cap", 100_000, minimum=1)
    submit_timeout_s = number("submit_timeout_s", 30.0, minimum=0.0)

    arrival_process = data.get("arrival_process", "uniform")
    if arrival_process not in ("uniform", "poisson"):
        fail("arrival_process", "must be 'uniform' or 'poisson'")

    csv_path = data.get("csv_path")
    if csv_path is not None and not isinstance(csv_path, str):
        fail("csv_path", "must be a string path")

    listen = data.get("listen", "127.0.0.1:8380")
    if not isinstance(listen, str) or ":" not in listen:
        fail("listen", "must be host:port")

    out_dir = data.get("out_dir", "blockmeter-out")
    if not isinstance(out_dir, str):
        fail("out_dir", "must be a string path")

    extra_backends: list[tuple[str, dict]] = []
    extra_raw = data.get("extra_backends", [])
    if not isinstance(extra_raw, list):
        fail("extra_backends", "must be a list")
    else:
        for i, item in enumerate(extra_raw):
            if (not isinstance(item, dict) or not isinstance(item.get("backend_id"), str)
                    or not isinstance(item.get("backend_params", {}), dict)):
                fail(f"extra_backends[{i}]", "must be {backend_id, backend_params?}")
                continue
            extra_backends.append((item["backend_id"], item.get("backend_params", {})))

    known = {"backend_id", "backend_params", "workload", "schedule", "user_count", "seed",
             "warmup_fraction", "sample_interval_s", "inflight_cap", "submit_timeout_s",
             "arrival_process", "csv_path", "listen", "out_dir", "extra_backends"}
    for key in sorted(set(data) - known):
        fail(key, "unknown field")

    if problems:
        raise ConfigError(problems)
    assert workload is not None
    return ExperimentConfig(
        backend_id=backend_id,
        backend_params=dict(backend_params),
        workload=workload,
        schedule=tuple(schedule),
        user_count=user_count,
        seed=seed,
        warmup_fraction=warmup_fraction,
        sample_interval_s=sample_interval_s,
        inflight_cap=inflight_cap,
        submit_timeout_s=submit_timeout_s,
        arrival_process=arrival_process,
        csv_path=csv_path,
        listen=listen,
        out_dir=out_dir,
        extra_backends=tuple(extra_backends),
    )


def load_config(path: Path | str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return validate_config(text)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "backend_id": cfg.backend_id,
        "backend_params": dict(cfg.backend_params),
        "workload": {
            "kind": cfg.workload.kind,
            "payload_bytes": cfg.workload.payload_bytes,
            "cpu_iterations": cfg.workload.cpu_iterations,
        },
        "schedule": [{"rate_tps": s.rate_tps, "duration_s": s.duration_s} for s in cfg.schedule],
        "user_count": cfg.user_count,
        "seed": cfg.seed,
        "warmup_fraction": cfg.warmup_fraction,
        "sample_interval_s": cfg.sample_interval_s,
        "inflight_cap": cfg.inflight_cap,
        "submit_timeout_s": cfg.submit_timeout_s,
        "arrival_process": cfg.arrival_process,
        "csv_path": cfg.csv_path,
        "listen": cfg.listen,
        "out_dir": cfg.out_dir,
        "extra_backends": [{"backend_id": b, "backend_params": p} for b, p in cfg.extra_backends],
    }


def build_adapter(backend_id: str, backend_params: dict, seed: int, clock) -> Adapter:
    """Instantiate the adapter a config names: built-in simulation or remote."""
    if backend_id in SIMNET_BACKENDS:
        return RealTimeSimAdapter(backend_id, backend_params, seed, clock)
    endpoint = backend_params.get("endpoint")
    if not endpoint:
        raise ConfigError([f"backend_id: unknown backend {backend_id!r}; "
                           f"registered: {_registered_backends()}"])
    return RemoteHttpAdapter(backend_id, endpoint, clock)
