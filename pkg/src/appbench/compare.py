"""Pair comparison of original/instrumented traces and report aggregation.

The functional verdict (UI checkpoint sequences equal, both runs terminated
normally) decides pass/fail; performance is an orthogonal flag judged against
a tolerance. Reports serialize canonically and end with a digest over their
own body, so byte-identical reports <=> equal digests.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .digest import fnv1a64_hex
from .executor import RunTrace
from .model import canonical_json
from .testgen import TestSuite, suite_to_json_dict


@dataclass(frozen=True)
class Divergence:
    """First functional disagreement: checkpoint index plus both sides'
    (widget, value) — None on a side that ran out of checkpoints."""

    index: int
    original: tuple[str, str] | None
    instrumented: tuple[str, str] | None


@dataclass(frozen=True)
class FunctionalVerdict:
    status: str  # "pass" | "fail" | "skipped"
    divergence: Divergence | None = None
    reason: str | None = None


@dataclass(frozen=True)
class PairVerdict:
    test_id: str
    callback: str
    source: str  # "original" | "instrumented-only"
    functional: FunctionalVerdict
    perf_ok: bool
    orig_time_ms: int | None
    instr_time_ms: int
    delta_ms: int | None
    ratio: Fraction | None
    nfp_deltas: dict[str, int | None]
    errors: tuple[str, ...]

    def compared(self) -> bool:
        return self.functional.status != "skipped"

    def passed(self) -> bool:
        return self.functional.status == "pass"


_DELTA_METRICS = ("net_bytes", "net_requests", "cache_hits")


def _first_divergence(orig: RunTrace, instr: RunTrace) -> Divergence | None:
    a, b = orig.ui_checkpoints, instr.ui_checkpoints
    for i in range(min(len(a), len(b))):
        if (a[i].widget, a[i].value) != (b[i].widget, b[i].value):
            return Divergence(i, (a[i].widget, a[i].value), (b[i].widget, b[i].value))
    if len(a) != len(b):
        i = min(len(a), len(b))
        return Divergence(
            i,
            (a[i].widget, a[i].value) if i < len(a) else None,
            (b[i].widget, b[i].value) if i < len(b) else None,
        )
    return None


def compare_traces(
    orig: RunTrace | None,
    instr: RunTrace,
    perf_tolerance: Fraction = Fraction(0),
    test_id: str | None = None,
) -> PairVerdict:
    """Judge one test's pair of traces.

    With no original trace (the callback only exists instrumented) the
    functional verdict is skipped and performance fields describe the
    instrumented side alone, vacuously within tolerance.
    """
    if perf_tolerance < 0:
        raise ValueError("perf_tolerance must be non-negative")
    errors = []
    if orig is not None and not orig.is_normal():
        errors.append(f"original: {orig.termination}")
    if not instr.is_normal():
        errors.append(f"instrumented: {instr.termination}")

    if orig is None:
        return PairVerdict(
            test_id=test_id or f"{instr.callback}:{instr.path_id}",
            callback=instr.callback,
            source="instrumented-only",
            functional=FunctionalVerdict("skipped", reason="added callback"),
            perf_ok=True,
            orig_time_ms=None,
            instr_time_ms=instr.sim_time_ms,
            delta_ms=None,
            ratio=None,
            nfp_deltas={m: None for m in _DELTA_METRICS},
            errors=tuple(errors),
        )

    divergence = _first_divergence(orig, instr)
    if divergence is None and not errors:
        functional = FunctionalVerdict("pass")
    elif divergence is not None:
        functional = FunctionalVerdict("fail", divergence=divergence)
    else:
        functional = FunctionalVerdict("fail", reason="; ".join(errors))

    orig_time = orig.sim_time_ms
    instr_time = instr.sim_time_ms
    perf_ok = Fraction(instr_time) <= Fraction(orig_time) * (1 + perf_tolerance)
    if orig_time == 0:
        ratio = Fraction(1) if instr_time == 0 else None
    else:
        ratio = Fraction(instr_time, orig_time)
    return PairVerdict(
        test_id=test_id or f"{orig.callback}:{orig.path_id}",
        callback=orig.callback,
        source="original",
        functional=functional,
        perf_ok=perf_ok,
        orig_time_ms=orig_time,
        instr_time_ms=instr_time,
        delta_ms=instr_time - orig_time,
        ratio=ratio,
        nfp_deltas={m: instr.nfp[m] - orig.nfp[m] for m in _DELTA_METRICS},
        errors=tuple(errors),
    )


@dataclass(frozen=True)
class DiffReport:
    suite: TestSuite
    verdicts: tuple[PairVerdict, ...]
    passes: int
    compared: int
    accuracy: Fraction  # passes/compared; 1 when nothing was compared
    callback_deltas: dict[str, dict[str, int]]
    environment: dict[str, Any]
    metrics: tuple[str, ...]  # delta metrics the report discloses
    digest: str

    def all_passed(self) -> bool:
        return self.passes == self.compared


def aggregate_report(
    suite: TestSuite,
    verdicts: list[PairVerdict],
    environment: dict[str, Any],
    metrics: tuple[str, ...] = _DELTA_METRICS,
) -> DiffReport:
    """Fold verdicts into the differential report and seal it with a digest.

    Accuracy counts only compared (non-skipped) verdicts; a run that compared
    nothing is vacuously accurate. Per-callback aggregates sum the times of
    compared verdicts. `metrics` restricts which NFP deltas the report
    discloses (simulated time is always present).
    """
    unknown = [m for m in metrics if m not in _DELTA_METRICS]
    if unknown:
        raise ValueError(f"unknown delta metrics: {unknown}")
    expected = {t.test_id for t in suite.generated}
    got = {v.test_id for v in verdicts}
    if expected != got:
        raise ValueError(
            f"verdicts do not match the suite: missing {sorted(expected - got)}, "
            f"unexpected {sorted(got - expected)}"
        )

    compared = [v for v in verdicts if v.compared()]
    passes = sum(1 for v in compared if v.passed())
    acc = Fraction(passes, len(compared)) if compared else Fraction(1)

    deltas: dict[str, dict[str, int]] = {}
    for v in compared:
        agg = deltas.setdefault(
            v.callback, {"orig_time_ms": 0, "instr_time_ms": 0, "delta_ms": 0}
        )
        agg["orig_time_ms"] += v.orig_time_ms or 0
        agg["instr_time_ms"] += v.instr_time_ms
        agg["delta_ms"] += v.delta_ms or 0

    body = _report_body(suite, tuple(verdicts), passes, len(compared), acc,
                        deltas, environment, metrics)
    digest = fnv1a64_hex(canonical_json(body).encode("utf-8"))
    return DiffReport(
        suite=suite,
        verdicts=tuple(verdicts),
        passes=passes,
        compared=len(compared),
        accuracy=acc,
        callback_deltas=deltas,
        environment=dict(environment),
        metrics=tuple(metrics),
        digest=digest,
    )


def _verdict_to_json(v: PairVerdict, metrics: tuple[str, ...]) -> dict[str, Any]:
    functional: dict[str, Any] = {"status": v.functional.status}
    if v.functional.divergence is not None:
        d = v.functional.divergence
        functional["divergence"] = {
            "index": d.index,
            "original": list(d.original) if d.original else None,
            "instrumented": list(d.instrumented) if d.instrumented else None,
        }
    if v.functional.reason is not None:
        functional["reason"] = v.functional.reason
    return {
        "test_id": v.test_id,
        "callback": v.callback,
        "source": v.source,
        "functional": functional,
        "perf_ok": v.perf_ok,
        "orig_time_ms": v.orig_time_ms,
        "instr_time_ms": v.instr_time_ms,
        "delta_ms": v.delta_ms,
        "ratio": None if v.ratio is None else float(v.ratio),
        "nfp_deltas": {m: v.nfp_deltas[m] for m in metrics},
        "errors": list(v.errors),
    }


def _report_body(
    suite: TestSuite,
    verdicts: tuple[PairVerdict, ...],
    passes: int,
    compared: int,
    accuracy: Fraction,
    callback_deltas: dict[str, dict[str, int]],
    environment: dict[str, Any],
    metrics: tuple[str, ...],
) -> dict[str, Any]:
    return {
        "suite": suite_to_json_dict(suite),
        "verdicts": [_verdict_to_json(v, metrics) for v in verdicts],
        "passes": passes,
        "compared": compared,
        "accuracy": float(accuracy),
        "callback_deltas": {
            name: callback_deltas[name] for name in sorted(callback_deltas)
        },
        "environment": environment,
    }


def report_to_json_dict(report: DiffReport) -> dict[str, Any]:
    """Canonical report document; the digest key is last and covers
    everything before it."""
    body = _report_body(
        report.suite,
        report.verdicts,
        report.passes,
        report.compared,
        report.accuracy,
        report.callback_deltas,
        report.environment,
        report.metrics,
    )
    body["digest"] = report.digest
    return body


def report_to_json_text(report: DiffReport) -> str:
    return canonical_json(report_to_json_dict(report))


def verify_report_digest(doc: dict[str, Any]) -> bool:
    """Recompute a parsed report's digest over its body (everything but the
    digest key, in stored order)."""
    body = {k: v for k, v in doc.items() if k != "digest"}
    return fnv1a64_hex(canonical_json(body).encode("utf-8")) == doc.get("digest")
