"""Deterministic discrete-cost simulator for single callback runs.

One callback executes from its entry with a simulated millisecond clock,
under a device profile (latency, bandwidth, CPU factor, battery) and an
optional intent-blocking policy. Every UI update appends a functional
checkpoint; entry/exit clocks are the performance checkpoints; network,
cache, and intent activity is recorded as events. Identical arguments always
produce an identical trace — wall time never leaks into one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable

from .digest import fnv1a64_hex
from .model import (
    AppModel,
    BranchOp,
    ComputeOp,
    ExitOp,
    LogOp,
    NetRequestOp,
    Node,
    PrefetchOp,
    SendIntentOp,
    UiUpdateOp,
    model_hash,
)
from .pipeline import OsPolicy, TechniqueManifest, compose_pipeline, run_pipeline
from .testgen import path_id_of

STEP_BUDGET = 10000

NFP_METRICS = ("sim_time_ms", "net_bytes", "net_requests", "cache_hits")

RationalLike = Fraction | int | str


def _as_fraction(value: RationalLike) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


@dataclass(frozen=True)
class DeviceProfile:
    """Simulated device conditions. Rational fields stay exact Fractions so
    cost arithmetic is reproducible to the bit."""

    net_latency_ms: int = 100
    net_bandwidth_kbps: int = 1000
    battery_pct: int = 100
    battery_drain_pct_per_s: Fraction = Fraction(0)
    cpu_factor: Fraction = Fraction(1)
    cache_hit_ms: int = 1
    prefetch_battery_min: int = 20

    def __post_init__(self):
        object.__setattr__(
            self, "battery_drain_pct_per_s", _as_fraction(self.battery_drain_pct_per_s)
        )
        object.__setattr__(self, "cpu_factor", _as_fraction(self.cpu_factor))
        problems = []
        if self.net_latency_ms < 0:
            problems.append("net_latency_ms must be non-negative")
        if self.net_bandwidth_kbps <= 0:
            problems.append("net_bandwidth_kbps must be positive")
        if not 0 <= self.battery_pct <= 100:
            problems.append("battery_pct must be in 0..100")
        if self.battery_drain_pct_per_s < 0:
            problems.append("battery_drain_pct_per_s must be non-negative")
        if self.cpu_factor <= 0:
            problems.append("cpu_factor must be positive")
        if self.cache_hit_ms < 0:
            problems.append("cache_hit_ms must be non-negative")
        if not 0 <= self.prefetch_battery_min <= 100:
            problems.append("prefetch_battery_min must be in 0..100")
        if problems:
            raise ValueError("invalid device profile: " + "; ".join(problems))

    def battery_at(self, clock_ms: int) -> Fraction:
        level = self.battery_pct - self.battery_drain_pct_per_s * Fraction(clock_ms, 1000)
        return max(Fraction(0), level)

    INT_FIELDS = (
        "net_latency_ms",
        "net_bandwidth_kbps",
        "battery_pct",
        "cache_hit_ms",
        "prefetch_battery_min",
    )
    RATIONAL_FIELDS = ("battery_drain_pct_per_s", "cpu_factor")

    @classmethod
    def from_env(cls, env: dict[str, int | Fraction | str]) -> "DeviceProfile":
        """Profile with defaults overridden by environment entries; entries
        that are not profile fields are rejected."""
        kwargs: dict[str, Any] = {}
        for key, value in env.items():
            if key in cls.INT_FIELDS:
                kwargs[key] = int(value)
            elif key in cls.RATIONAL_FIELDS:
                kwargs[key] = _as_fraction(value)
            else:
                raise KeyError(f"unknown device profile field {key!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class UiCheckpoint:
    seq: int
    widget: str
    value: str
    digest: str  # digest of "widget=value"


@dataclass(frozen=True)
class NetEvent:
    url: str
    outcome: str  # "hit" | "miss" | "prefetch" | "prefetch-skipped"
    bytes: int
    cost_ms: int


@dataclass(frozen=True)
class IntentEvent:
    action: str
    outcome: str  # "delivered" | "blocked"


@dataclass(frozen=True)
class RunTrace:
    callback: str
    inputs: dict[str, int]
    executed: tuple[str, ...]
    path_id: str
    ui_checkpoints: tuple[UiCheckpoint, ...]
    nfp: dict[str, int]
    entry_clock_ms: int
    exit_clock_ms: int
    net_events: tuple[NetEvent, ...]
    intent_events: tuple[IntentEvent, ...]
    termination: str  # "normal" | "error:<kind>"

    def is_normal(self) -> bool:
        return self.termination == "normal"

    @property
    def sim_time_ms(self) -> int:
        return self.nfp["sim_time_ms"]


def response_content(url: str) -> str:
    """The simulated body every fetch of a URL yields: its digest, hex-rendered."""
    return fnv1a64_hex(url.encode("utf-8"))


def _resp_bytes_for(model: AppModel, url: str) -> int:
    """Size a prefetch of `url` transfers: the first request in the model with
    that literal URL defines it (prefetch points always come from one)."""
    for cb in model.callbacks:
        for node in cb.nodes:
            if isinstance(node.op, NetRequestOp) and node.op.url.literal_value() == url:
                return node.op.resp_bytes
    return 0


def execute_callback(
    model: AppModel,
    callback_name: str,
    inputs: dict[str, int],
    profile: DeviceProfile | None = None,
    os_policy: OsPolicy | None = None,
    warm_cache: set[str] | frozenset[str] | None = None,
) -> RunTrace:
    """Interpret one callback with the given inputs and return its trace.

    Per-node costs (ms): compute ceil(cost × cpu_factor); ui_update 1; log 1;
    send_intent 1; branch 0; net_request cache_hit_ms on hit, otherwise
    latency + ceil(bytes × 8 / bandwidth); prefetch 0 (it models work done in
    earlier idle time) and runs only while battery is at or above the
    prefetch threshold. Errors end the trace, they are not raised.
    """
    profile = profile or DeviceProfile()
    os_policy = os_policy or OsPolicy.empty()
    cb = model.callback(callback_name)
    missing = [p for p in cb.params if p not in inputs]
    if missing:
        raise ValueError(f"inputs missing for params {missing} of {callback_name!r}")

    node_map = cb.node_map()
    cache: set[str] = set(warm_cache or ())
    responses: dict[str, str] = {url: response_content(url) for url in cache}

    clock = 0
    net_bytes = 0
    net_requests = 0
    cache_hits = 0
    executed: list[str] = []
    ui_checkpoints: list[UiCheckpoint] = []
    net_events: list[NetEvent] = []
    intent_events: list[IntentEvent] = []
    termination = "normal"

    current: str | None = cb.entry
    steps = 0
    while current is not None:
        if steps == STEP_BUDGET:
            termination = "error:budget-exhausted"
            break
        steps += 1
        node = node_map[current]
        executed.append(node.id)
        op = node.op

        if isinstance(op, ExitOp):
            break
        if isinstance(op, ComputeOp):
            clock += math.ceil(op.cost_ms * profile.cpu_factor)
            current = node.next
        elif isinstance(op, BranchOp):
            value = inputs[op.var]
            holds = {
                "<": value < op.const,
                "<=": value <= op.const,
                "==": value == op.const,
                "!=": value != op.const,
                ">": value > op.const,
                ">=": value >= op.const,
            }[op.cmp]
            current = node.then if holds else node.else_
        elif isinstance(op, UiUpdateOp):
            expr = op.value
            if expr.kind == "lit":
                rendered = expr.value
            elif expr.kind == "var":
                rendered = str(inputs[expr.value])
            else:  # resp
                if expr.value not in responses:
                    termination = "error:uninitialized-response"
                    break
                rendered = responses[expr.value]
            clock += 1
            ui_checkpoints.append(
                UiCheckpoint(
                    seq=len(ui_checkpoints),
                    widget=op.widget,
                    value=rendered,
                    digest=fnv1a64_hex(f"{op.widget}={rendered}".encode("utf-8")),
                )
            )
            current = node.next
        elif isinstance(op, NetRequestOp):
            url = op.url.resolve(inputs)
            net_requests += 1
            if url in cache:
                cost = profile.cache_hit_ms
                cache_hits += 1
                net_events.append(NetEvent(url, "hit", 0, cost))
            else:
                transfer = math.ceil(Fraction(op.resp_bytes * 8, profile.net_bandwidth_kbps))
                cost = profile.net_latency_ms + transfer
                net_bytes += op.resp_bytes
                responses[url] = response_content(url)
                if op.cacheable:
                    cache.add(url)
                net_events.append(NetEvent(url, "miss", op.resp_bytes, cost))
            clock += cost
            current = node.next
        elif isinstance(op, PrefetchOp):
            if profile.battery_at(clock) >= profile.prefetch_battery_min:
                size = _resp_bytes_for(model, op.url)
                net_bytes += size
                responses[op.url] = response_content(op.url)
                cache.add(op.url)
                net_events.append(NetEvent(op.url, "prefetch", size, 0))
            else:
                net_events.append(NetEvent(op.url, "prefetch-skipped", 0, 0))
            current = node.next
        elif isinstance(op, LogOp):
            clock += 1
            current = node.next
        elif isinstance(op, SendIntentOp):
            clock += 1
            outcome = "blocked" if os_policy.blocks(op.action) else "delivered"
            intent_events.append(IntentEvent(op.action, outcome))
            current = node.next
        else:  # pragma: no cover - op kinds are closed
            raise TypeError(f"unknown op {op!r}")

    return RunTrace(
        callback=callback_name,
        inputs=dict(inputs),
        executed=tuple(executed),
        path_id=path_id_of(executed),
        ui_checkpoints=tuple(ui_checkpoints),
        nfp={
            "sim_time_ms": clock,
            "net_bytes": net_bytes,
            "net_requests": net_requests,
            "cache_hits": cache_hits,
        },
        entry_clock_ms=0,
        exit_clock_ms=clock,
        net_events=tuple(net_events),
        intent_events=tuple(intent_events),
        termination=termination,
    )


def trace_to_json_dict(trace: RunTrace) -> dict[str, Any]:
    return {
        "callback": trace.callback,
        "inputs": {k: trace.inputs[k] for k in sorted(trace.inputs)},
        "executed": list(trace.executed),
        "path_id": trace.path_id,
        "ui_checkpoints": [
            {"seq": c.seq, "widget": c.widget, "value": c.value, "digest": c.digest}
            for c in trace.ui_checkpoints
        ],
        "nfp": {k: trace.nfp[k] for k in NFP_METRICS},
        "entry_clock_ms": trace.entry_clock_ms,
        "exit_clock_ms": trace.exit_clock_ms,
        "net_events": [
            {"url": e.url, "outcome": e.outcome, "bytes": e.bytes, "cost_ms": e.cost_ms}
            for e in trace.net_events
        ],
        "intent_events": [
            {"action": e.action, "outcome": e.outcome} for e in trace.intent_events
        ],
        "termination": trace.termination,
    }


# --------------------------------------------------------------------------
# Unit testing of techniques
# --------------------------------------------------------------------------

class UnitTestError(Exception):
    """The unit-test document itself is unusable (bad keys, missing input,
    technique mismatch) — distinct from the test failing."""


@dataclass(frozen=True)
class UnitResult:
    test_id: str
    outcome: str  # "pass" | "fail"
    reason: str | None
    nfp: dict[str, int]  # includes wall-clock execution_time_ms

    def passed(self) -> bool:
        return self.outcome == "pass"


_EXPECT_KINDS = ("model_hash", "facts")


def _facts_to_jsonable(data: Any) -> Any:
    """Analyzer outputs as plain JSON values for exact comparison."""
    if isinstance(data, list):
        return [_facts_to_jsonable(x) for x in data]
    if hasattr(data, "__dataclass_fields__"):
        return {
            name: _facts_to_jsonable(getattr(data, name))
            for name in data.__dataclass_fields__
        }
    if isinstance(data, tuple):
        return [_facts_to_jsonable(x) for x in data]
    return data


def run_unit_test(
    manifest: TechniqueManifest,
    doc: dict[str, Any],
    load_text: Callable[[str], str],
) -> UnitResult:
    """Run one technique-level unit test: execute the pipeline (or a single
    component) on the referenced input model and compare the produced artifact
    against the documented expectation.

    `load_text` resolves the document's `input` reference to model text;
    it raises UnitTestError when the input does not exist.
    """
    from .model import parse_app_model  # late import; avoids cycle at module load

    required = {"id", "technique", "op", "input", "expect"}
    if not isinstance(doc, dict) or set(doc) != required:
        raise UnitTestError(
            f"unit-test document must have exactly keys {sorted(required)}"
        )
    if doc["technique"] != manifest.technique_id:
        raise UnitTestError(
            f"unknown technique {doc['technique']!r}; this manifest is "
            f"{manifest.technique_id!r}"
        )
    expect = doc["expect"]
    if not isinstance(expect, dict) or set(expect) != {"kind", "value"}:
        raise UnitTestError("expect must be an object with keys kind, value")
    if expect["kind"] not in _EXPECT_KINDS:
        raise UnitTestError(f"unknown expectation kind {expect['kind']!r}")

    model = parse_app_model(load_text(doc["input"]))
    pipeline = compose_pipeline(manifest)

    started = time.perf_counter()
    artifacts = run_pipeline(pipeline, model)
    elapsed_ms = int((time.perf_counter() - started) * 1000)

    op = doc["op"]
    outcome, reason = "pass", None
    if expect["kind"] == "model_hash":
        if op != "pipeline" and op not in {c.name for c in manifest.components}:
            raise UnitTestError(f"op {op!r} names no component of the technique")
        produced = artifacts.instrumented_model
        if produced is None:
            outcome, reason = "fail", "pipeline produced no instrumented model"
        else:
            got = model_hash(produced)
            if got != expect["value"]:
                outcome, reason = "fail", f"model hash {got} != expected {expect['value']}"
    else:  # facts
        if op not in artifacts.facts:
            raise UnitTestError(f"op {op!r} names no analyzer component with facts")
        got_json = _facts_to_jsonable(artifacts.facts[op].data)
        if got_json != expect["value"]:
            outcome, reason = "fail", "facts differ from expectation"

    return UnitResult(
        test_id=doc["id"],
        outcome=outcome,
        reason=reason,
        nfp={"execution_time_ms": elapsed_ms},
    )


def accuracy(results: list[UnitResult]) -> Fraction:
    """Fraction of passing results; empty input is a caller error."""
    if not results:
        raise ValueError("accuracy of zero results is undefined")
    return Fraction(sum(1 for r in results if r.passed()), len(results))
