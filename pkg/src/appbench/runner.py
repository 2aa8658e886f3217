"""Script execution: turn a parsed script into a reproducible report.

Statements run in order. Benchmarks and techniques load from the workspace or
from repository pools (through an injected resolver, so the engine behaves
identically under the CLI and the service). Reports echo content digests, not
source paths — where an artifact came from must never change the bytes of the
report. Wall-clock readings live in a segregated, non-digested section.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .compare import DiffReport, aggregate_report, compare_traces, report_to_json_dict
from .diffing import CallbackDiff, diff_apps, diff_to_json_dict
from .digest import fnv1a64_hex
from .dsl import (
    ApplyStmt,
    BenchmarkDecl,
    DiffTestStmt,
    Script,
    Source,
    TechniqueDecl,
    UnitTestStmt,
    format_number,
)
from .executor import (
    DeviceProfile,
    RunTrace,
    UnitTestError,
    accuracy,
    execute_callback,
    run_unit_test,
    trace_to_json_dict,
)
from .model import AppModel, canonical_json, model_hash, parse_app_model
from .pipeline import (
    OsPolicy,
    TechniqueManifest,
    compose_pipeline,
    load_manifest,
    manifest_to_json_dict,
    run_pipeline,
)
from .testgen import GenConfig, TestCase, generate_tests

import json

DEFAULT_LOOP_BOUND = 2
DEFAULT_MAX_PATHS = 256

# pool each source kind resolves against
POOL_FOR_BENCHMARK = "benchmarks"
POOL_FOR_TECHNIQUE = "microservices"
POOL_FOR_SCRIPT = "scripts"

PoolResolver = Callable[[str, str], str]  # (pool, entry id) -> payload text


class ScriptRunError(Exception):
    """A statement could not be executed; names the statement."""


@dataclass(frozen=True)
class ScriptReport:
    """Digested body + digest + segregated wall-clock section."""

    body: dict[str, Any]
    digest: str
    wall_clock: dict[str, Any]

    def to_json_dict(self) -> dict[str, Any]:
        return {**self.body, "digest": self.digest, "wall_clock": self.wall_clock}

    def to_json_text(self) -> str:
        return canonical_json(self.to_json_dict())

    def ok(self) -> bool:
        return bool(self.body["summary"]["ok"])


def report_body_text(doc: dict[str, Any]) -> str:
    """Canonical text of a report document with wall-clock (and the digest
    itself) stripped: the bytes reproducibility claims are made over."""
    body = {k: v for k, v in doc.items() if k not in ("digest", "wall_clock")}
    return canonical_json(body)


@dataclass
class _ModelBinding:
    """A named model plus the runtime context its technique attached."""

    model: AppModel
    digest: str
    os_policy: OsPolicy | None = None
    backend_config: dict[str, str] = field(default_factory=dict)
    monitor_config: dict[str, str] = field(default_factory=dict)


def _profile_with_overrides(profile: DeviceProfile, overrides: dict[str, str]) -> DeviceProfile:
    """Apply device-monitor config entries (strings) over a base profile."""
    if not overrides:
        return profile
    merged: dict[str, Any] = {
        name: getattr(profile, name)
        for name in DeviceProfile.INT_FIELDS + DeviceProfile.RATIONAL_FIELDS
    }
    for key, value in overrides.items():
        if key in DeviceProfile.INT_FIELDS:
            merged[key] = int(value)
        elif key in DeviceProfile.RATIONAL_FIELDS:
            merged[key] = Fraction(value)
        else:
            raise KeyError(f"unknown device profile field {key!r} in monitor config")
    return DeviceProfile(**merged)


def _profile_echo(profile: DeviceProfile) -> dict[str, Any]:
    echo: dict[str, Any] = {}
    for name in sorted(DeviceProfile.INT_FIELDS + DeviceProfile.RATIONAL_FIELDS):
        value = getattr(profile, name)
        echo[name] = value if isinstance(value, int) else format_number(value)
    return echo


def environment_echo(
    profile: DeviceProfile,
    loop_bound: int,
    max_paths: int,
    perf_tolerance: Fraction,
    monitored: tuple[str, ...],
) -> dict[str, Any]:
    """The environment section every report embeds, rendered exactly (rationals
    as decimal strings) so identical environments serialize identically."""
    return {
        "profile": _profile_echo(profile),
        "loop_bound": loop_bound,
        "max_paths": max_paths,
        "perf_tolerance": format_number(perf_tolerance),
        "monitored": list(monitored),
    }


ALL_METRICS = ("cache_hits", "net_bytes", "net_requests", "sim_time_ms")


def run_difftest(
    original: AppModel,
    instrumented: AppModel,
    profile: DeviceProfile | None = None,
    config: GenConfig = GenConfig(),
    perf_tolerance: Fraction = Fraction(0),
    monitored: tuple[str, ...] = ALL_METRICS,
    diff: CallbackDiff | None = None,
    orig_policy: OsPolicy | None = None,
    instr_policy: OsPolicy | None = None,
) -> tuple[CallbackDiff, DiffReport]:
    """The full differential chain over two bare models: diff, generate,
    execute both sides per test, compare, aggregate.

    Passing `diff` overrides change detection (e.g. to force-test every
    callback); by default the apps are diffed structurally.
    """
    profile = profile or DeviceProfile()
    if diff is None:
        diff = diff_apps(original, instrumented)
    suite = generate_tests(original, instrumented, diff, config)
    verdicts = []
    for test in suite.generated:
        instr_trace = execute_callback(
            instrumented, test.callback, test.inputs, profile=profile,
            os_policy=instr_policy,
        )
        orig_trace = None
        if test.source == "original":
            orig_trace = execute_callback(
                original, test.callback, test.inputs, profile=profile,
                os_policy=orig_policy,
            )
        verdicts.append(
            compare_traces(orig_trace, instr_trace, perf_tolerance, test_id=test.test_id)
        )
    env = environment_echo(
        profile, config.loop_bound, config.max_paths, perf_tolerance, monitored
    )
    delta_metrics = tuple(
        m for m in ("net_bytes", "net_requests", "cache_hits") if m in monitored
    )
    report = aggregate_report(suite, verdicts, env, metrics=delta_metrics)
    return diff, report


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", text)


class _Runner:
    def __init__(
        self,
        script: Script,
        workspace: Path,
        resolve_pool: PoolResolver | None,
        out_dir: Path | None,
    ):
        self.script = script
        self.workspace = workspace
        self.resolve_pool = resolve_pool
        self.out_dir = out_dir
        self.models: dict[str, _ModelBinding] = {}
        self.techniques: dict[str, TechniqueManifest] = {}

        env = script.environment()
        profile_env = {
            k: v
            for k, v in env.items()
            if k in DeviceProfile.INT_FIELDS + DeviceProfile.RATIONAL_FIELDS
        }
        self.profile = DeviceProfile.from_env(profile_env)
        self.loop_bound = int(env.get("loop_bound", DEFAULT_LOOP_BOUND))
        self.max_paths = int(env.get("max_paths", DEFAULT_MAX_PATHS))
        self.perf_tolerance = Fraction(env.get("perf_tolerance", 0))
        self.monitored = script.monitored_metrics()

    # -- source loading ----------------------------------------------------

    def _source_text(self, source: Source, pool: str) -> str:
        if source.kind == "file":
            path = self.workspace / source.ref
            if not path.is_file():
                raise ScriptRunError(f"no such file: {source.ref}")
            return path.read_text(encoding="utf-8")
        if self.resolve_pool is None:
            raise ScriptRunError(
                f"pool:{source.ref} cannot resolve — no repository attached"
            )
        try:
            return self.resolve_pool(pool, source.ref)
        except KeyError:
            raise ScriptRunError(f"no entry {source.ref} in pool {pool!r}") from None

    def _input_text(self, ref: str) -> str:
        """Unit-test input references: workspace path, or pool:<id> into the
        benchmarks pool."""
        if ref.startswith("pool:"):
            return self._source_text(Source("pool", ref[len("pool:"):]), POOL_FOR_BENCHMARK)
        return self._source_text(Source("file", ref), POOL_FOR_BENCHMARK)

    # -- statement execution ------------------------------------------------

    def run(self) -> ScriptReport:
        started = time.perf_counter()
        statements: list[dict[str, Any]] = []
        unit_results = []
        unit_wall: dict[str, int] = {}
        difftests_ok: list[bool] = []

        for stmt in self.script.statements:
            try:
                if isinstance(stmt, BenchmarkDecl):
                    statements.append(self._do_benchmark(stmt))
                elif isinstance(stmt, TechniqueDecl):
                    statements.append(self._do_technique(stmt))
                elif isinstance(stmt, ApplyStmt):
                    statements.append(self._do_apply(stmt))
                elif isinstance(stmt, UnitTestStmt):
                    entry, result = self._do_unittest(stmt)
                    statements.append(entry)
                    unit_results.append(result)
                    unit_wall[result.test_id] = result.nfp["execution_time_ms"]
                elif isinstance(stmt, DiffTestStmt):
                    entry, report = self._do_difftest(stmt)
                    statements.append(entry)
                    difftests_ok.append(report.all_passed())
                # environment/monitor statements configured the run up front
            except ScriptRunError:
                raise
            except Exception as exc:
                raise ScriptRunError(
                    f"statement at line {stmt.line} failed: {exc}"
                ) from exc

        unit_ok = all(r.passed() for r in unit_results)
        summary = {
            "unit_tests": len(unit_results),
            "unit_accuracy": float(accuracy(unit_results)) if unit_results else None,
            "difftests": len(difftests_ok),
            "ok": unit_ok and all(difftests_ok),
        }
        body = {
            "environment": self._environment_echo(),
            "statements": statements,
            "summary": summary,
        }
        digest = fnv1a64_hex(canonical_json(body).encode("utf-8"))
        wall_clock = {
            "total_ms": int((time.perf_counter() - started) * 1000),
            "unit_tests": unit_wall,
        }
        report = ScriptReport(body=body, digest=digest, wall_clock=wall_clock)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "report.json").write_text(
                report.to_json_text(), encoding="utf-8"
            )
        return report

    def _environment_echo(self) -> dict[str, Any]:
        return environment_echo(
            self.profile, self.loop_bound, self.max_paths,
            self.perf_tolerance, self.monitored,
        )

    def _do_benchmark(self, stmt: BenchmarkDecl) -> dict[str, Any]:
        model = parse_app_model(self._source_text(stmt.source, POOL_FOR_BENCHMARK))
        binding = _ModelBinding(model, model_hash(model))
        self.models[stmt.alias] = binding
        return {"kind": "benchmark", "alias": stmt.alias, "model_digest": binding.digest}

    def _do_technique(self, stmt: TechniqueDecl) -> dict[str, Any]:
        manifest = load_manifest(self._source_text(stmt.source, POOL_FOR_TECHNIQUE))
        compose_pipeline(manifest)  # surface composition errors at declaration
        self.techniques[stmt.alias] = manifest
        digest = fnv1a64_hex(
            canonical_json(manifest_to_json_dict(manifest)).encode("utf-8")
        )
        return {
            "kind": "technique",
            "alias": stmt.alias,
            "technique_id": manifest.technique_id,
            "manifest_digest": digest,
        }

    def _do_apply(self, stmt: ApplyStmt) -> dict[str, Any]:
        manifest = self.techniques[stmt.technique]
        base = self.models[stmt.benchmark]
        artifacts = run_pipeline(compose_pipeline(manifest), base.model)
        produced = artifacts.instrumented_model or base.model
        binding = _ModelBinding(
            model=produced,
            digest=model_hash(produced),
            os_policy=artifacts.os_policy,
            backend_config=dict(artifacts.backend_config),
            monitor_config=dict(artifacts.monitor_config),
        )
        self.models[stmt.alias] = binding
        return {"kind": "apply", "alias": stmt.alias, "model_digest": binding.digest}

    def _do_unittest(self, stmt: UnitTestStmt) -> tuple[dict[str, Any], Any]:
        manifest = self.techniques[stmt.technique]
        doc_text = self._source_text(stmt.source, POOL_FOR_SCRIPT)
        try:
            doc = json.loads(doc_text)
        except json.JSONDecodeError as exc:
            raise ScriptRunError(f"unit-test document is not JSON: {exc}") from exc

        def load_input(ref: str) -> str:
            try:
                return self._input_text(ref)
            except ScriptRunError as exc:
                raise UnitTestError(str(exc)) from exc

        result = run_unit_test(manifest, doc, load_input)
        entry = {
            "kind": "unittest",
            "technique": stmt.technique,
            "test_id": result.test_id,
            "outcome": result.outcome,
            "reason": result.reason,
        }
        return entry, result

    def _execute_pair(
        self, test: TestCase, orig: _ModelBinding, instr: _ModelBinding
    ) -> tuple[RunTrace | None, RunTrace]:
        instr_profile = _profile_with_overrides(self.profile, instr.monitor_config)
        instr_trace = execute_callback(
            instr.model,
            test.callback,
            test.inputs,
            profile=instr_profile,
            os_policy=instr.os_policy,
        )
        if test.source == "instrumented-only":
            return None, instr_trace
        orig_profile = _profile_with_overrides(self.profile, orig.monitor_config)
        orig_trace = execute_callback(
            orig.model,
            test.callback,
            test.inputs,
            profile=orig_profile,
            os_policy=orig.os_policy,
        )
        return orig_trace, instr_trace

    def _do_difftest(self, stmt: DiffTestStmt) -> tuple[dict[str, Any], DiffReport]:
        orig = self.models[stmt.original]
        instr = self.models[stmt.instrumented]
        diff = diff_apps(orig.model, instr.model)
        config = GenConfig(
            loop_bound=stmt.bound if stmt.bound is not None else self.loop_bound,
            max_paths=stmt.max_paths if stmt.max_paths is not None else self.max_paths,
        )
        tolerance = (
            Fraction(stmt.perf_tolerance)
            if stmt.perf_tolerance is not None
            else self.perf_tolerance
        )
        suite = generate_tests(orig.model, instr.model, diff, config)

        verdicts = []
        traces: list[tuple[str, RunTrace]] = []
        for test in suite.generated:
            orig_trace, instr_trace = self._execute_pair(test, orig, instr)
            verdicts.append(
                compare_traces(orig_trace, instr_trace, tolerance, test_id=test.test_id)
            )
            base = _safe_name(test.test_id)
            if orig_trace is not None:
                traces.append((f"{base}.orig", orig_trace))
            traces.append((f"{base}.instr", instr_trace))

        delta_metrics = tuple(
            m for m in ("net_bytes", "net_requests", "cache_hits") if m in self.monitored
        )
        report = aggregate_report(
            suite, verdicts, self._environment_echo(), metrics=delta_metrics
        )
        if self.out_dir is not None:
            trace_dir = self.out_dir / "traces" / _safe_name(stmt.name)
            trace_dir.mkdir(parents=True, exist_ok=True)
            for name, trace in traces:
                (trace_dir / f"{name}.trace.json").write_text(
                    canonical_json(trace_to_json_dict(trace)), encoding="utf-8"
                )
        entry = {
            "kind": "difftest",
            "name": stmt.name,
            "diff": diff_to_json_dict(diff),
            "report": report_to_json_dict(report),
        }
        return entry, report


def run_script(
    script: Script,
    workspace: Path,
    resolve_pool: PoolResolver | None = None,
    out_dir: Path | None = None,
) -> ScriptReport:
    """Execute a parsed script and return its report.

    File sources resolve relative to `workspace`; `pool:` sources go through
    `resolve_pool` (pool name, entry id -> payload text). When `out_dir` is
    given, report.json and per-difftest trace files are written beneath it.
    """
    return _Runner(script, workspace, resolve_pool, out_dir).run()
