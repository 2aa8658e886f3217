from __future__ import annotations

import json
from fractions import Fraction

import pytest

from appbench.diffing import CallbackDiff
from appbench.dsl import parse_script
from appbench.executor import DeviceProfile
from appbench.model import parse_app_model
from appbench.runner import (
    ScriptRunError,
    environment_echo,
    report_body_text,
    run_difftest,
    run_script,
)
from appbench.testgen import GenConfig
from test_digest import ref_fnv1a64


def _run_quickstart(workspace, **kwargs):
    script = parse_script((workspace / "quickstart.dscr").read_text())
    return run_script(script, workspace, **kwargs)


def test_quickstart_report(workspace):
    report = _run_quickstart(workspace)
    assert report.ok()
    assert report.body["summary"] == {
        "unit_tests": 0,
        "unit_accuracy": None,
        "difftests": 1,
        "ok": True,
    }

    stmts = report.body["statements"]
    assert [s["kind"] for s in stmts] == ["benchmark", "technique", "apply", "difftest"]
    assert stmts[0] == {
        "kind": "benchmark",
        "alias": "shop",
        "model_digest": "2d9c56c6a2668100",
    }
    assert stmts[1]["technique_id"] == "prefetch"
    assert len(stmts[1]["manifest_digest"]) == 16
    assert stmts[2] == {
        "kind": "apply",
        "alias": "shop_prefetch",
        "model_digest": "5af03ec81eb8f768",
    }

    diffstmt = stmts[3]
    assert diffstmt["name"] == "prefetch_speedup"
    assert diffstmt["diff"]["modified"] == ["onClick#buy"]
    inner = diffstmt["report"]
    assert (inner["passes"], inner["compared"], inner["accuracy"]) == (2, 2, 1.0)
    # prefetching turns the 123 ms cold path into the 7 ms warm one
    assert inner["callback_deltas"] == {
        "onClick#buy": {"orig_time_ms": 130, "instr_time_ms": 14, "delta_ms": -116}
    }
    by_input = {v["test_id"]: v for v in inner["verdicts"]}
    times = sorted((v["orig_time_ms"], v["instr_time_ms"]) for v in by_input.values())
    assert times == [(7, 7), (123, 7)]
    warm = next(v for v in by_input.values() if v["orig_time_ms"] == 123)
    assert warm["nfp_deltas"] == {"net_bytes": 0, "net_requests": 0, "cache_hits": 1}
    assert all(v["perf_ok"] for v in by_input.values())

    env = report.body["environment"]
    assert env["profile"]["battery_pct"] == 80
    assert env["profile"]["net_latency_ms"] == 100
    assert env["profile"]["cpu_factor"] == "1"
    assert env["loop_bound"] == 2 and env["max_paths"] == 256
    assert env["perf_tolerance"] == "0"
    assert env["monitored"] == ["cache_hits", "net_bytes", "net_requests", "sim_time_ms"]


def test_runs_are_reproducible_to_the_byte(workspace):
    first = _run_quickstart(workspace)
    second = _run_quickstart(workspace)
    assert first.body == second.body
    assert first.digest == second.digest
    # wall-clock lives outside the digested body
    doc = first.to_json_dict()
    assert set(doc) == set(first.body) | {"digest", "wall_clock"}
    assert report_body_text(doc) == report_body_text(second.to_json_dict())


def test_report_digest_covers_exactly_the_body(workspace):
    report = _run_quickstart(workspace)
    body_text = json.dumps(report.body, indent=2, ensure_ascii=True) + "\n"
    assert report.digest == format(ref_fnv1a64(body_text.encode("utf-8")), "016x")


def test_out_dir_gets_report_and_traces(workspace, tmp_path):
    out = tmp_path / "out"
    report = _run_quickstart(workspace, out_dir=out)
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk == json.loads(report.to_json_text())

    trace_dir = out / "traces" / "prefetch_speedup"
    traces = sorted(p.name for p in trace_dir.iterdir())
    assert len(traces) == 4  # two tests, original + instrumented each
    assert all(t.endswith((".orig.trace.json", ".instr.trace.json")) for t in traces)
    one = json.loads((trace_dir / traces[0]).read_text())
    assert one["callback"] == "onClick#buy"


def test_missing_source_file_is_a_run_error(workspace):
    script = parse_script('benchmark b = "nowhere.app.json"')
    with pytest.raises(ScriptRunError) as err:
        run_script(script, workspace)
    assert "nowhere.app.json" in str(err.value)


def test_broken_statement_error_names_its_line(workspace):
    (workspace / "bad.app.json").write_text("not json at all")
    script = parse_script('benchmark b = "bad.app.json"')
    with pytest.raises(ScriptRunError) as err:
        run_script(script, workspace)
    assert "statement at line 1 failed" in str(err.value)


def test_pool_sources_reproduce_file_based_reports(workspace):
    model_text = (workspace / "shopping.app.json").read_text()
    manifest_text = (workspace / "prefetch.manifest.json").read_text()
    pools = {
        "benchmarks": {"shopid": model_text},
        "microservices": {"prefid": manifest_text},
    }

    def resolver(pool: str, entry_id: str) -> str:
        return pools[pool][entry_id]

    pooled = parse_script(
        "environment { battery_pct = 80; net_bandwidth_kbps = 1000; "
        "net_latency_ms = 100; }\n"
        "monitor cache_hits, net_bytes, net_requests\n"
        "benchmark shop = pool:shopid\n"
        "technique prefetch = pool:prefid\n"
        "apply prefetch to shop as shop_prefetch\n"
        "difftest prefetch_speedup { original = shop; instrumented = shop_prefetch; }\n"
    )
    from_pool = run_script(pooled, workspace, resolve_pool=resolver)
    from_files = _run_quickstart(workspace)
    # reports echo digests, never paths: both routes yield identical bytes
    assert report_body_text(from_pool.to_json_dict()) == report_body_text(
        from_files.to_json_dict()
    )


def test_pool_source_without_repository_fails(workspace):
    script = parse_script("benchmark b = pool:abc")
    with pytest.raises(ScriptRunError) as err:
        run_script(script, workspace)
    assert "no repository attached" in str(err.value)


def test_unknown_pool_entry_is_a_run_error(workspace):
    def resolver(pool: str, entry_id: str) -> str:
        raise KeyError(entry_id)

    script = parse_script("benchmark b = pool:abc")
    with pytest.raises(ScriptRunError) as err:
        run_script(script, workspace, resolve_pool=resolver)
    assert "no entry abc" in str(err.value)


def test_monitor_selection_restricts_reported_deltas(workspace):
    script = parse_script(
        "monitor cache_hits\n"
        'benchmark shop = "shopping.app.json"\n'
        'technique prefetch = "prefetch.manifest.json"\n'
        "apply prefetch to shop as fast\n"
        "difftest d { original = shop; instrumented = fast; }\n"
    )
    report = run_script(script, workspace)
    assert report.body["environment"]["monitored"] == ["cache_hits", "sim_time_ms"]
    inner = report.body["statements"][-1]["report"]
    for verdict in inner["verdicts"]:
        assert list(verdict["nfp_deltas"]) == ["cache_hits"]


def test_difftest_clauses_override_script_environment(workspace):
    base = (
        'benchmark shop = "shopping.app.json"\n'
        'technique logger = "logger.manifest.json"\n'
        "apply logger to shop as logged\n"
    )
    strict = run_script(
        parse_script(base + "difftest d { original = shop; instrumented = logged; }"),
        workspace,
    )
    inner = strict.body["statements"][-1]["report"]
    assert inner["accuracy"] == 1.0  # logging preserves checkpoints
    assert all(not v["perf_ok"] for v in inner["verdicts"])  # but costs time

    relaxed = run_script(
        parse_script(
            base
            + "difftest d { original = shop; instrumented = logged; "
            "bound = 1; max_paths = 32; perf_tolerance = 0.5; }"
        ),
        workspace,
    )
    inner = relaxed.body["statements"][-1]["report"]
    assert inner["suite"]["loop_bound"] == 1
    assert inner["suite"]["max_paths"] == 32
    assert all(v["perf_ok"] for v in inner["verdicts"])
    # the override is per-difftest; the report environment echoes script scope
    assert relaxed.body["environment"]["perf_tolerance"] == "0"


def test_unittest_statement_flows_into_the_summary(workspace):
    script = parse_script(
        'technique prefetch = "prefetch.manifest.json"\n'
        'unittest "prefetch_shopping.utest.json" on prefetch\n'
    )
    report = run_script(script, workspace)
    assert report.ok()
    assert report.body["summary"]["unit_tests"] == 1
    assert report.body["summary"]["unit_accuracy"] == 1.0
    echo = report.body["statements"][-1]
    assert echo == {
        "kind": "unittest",
        "technique": "prefetch",
        "test_id": "prefetch-shopping-01",
        "outcome": "pass",
        "reason": None,
    }
    assert report.wall_clock["unit_tests"].keys() == {"prefetch-shopping-01"}


def test_failing_difftest_turns_ok_false(workspace):
    script = parse_script(
        'benchmark shop = "shopping.app.json"\n'
        'technique fault = "fault.manifest.json"\n'
        "apply fault to shop as broken\n"
        "difftest d { original = shop; instrumented = broken; }\n"
    )
    report = run_script(script, workspace)
    assert not report.ok()
    inner = report.body["statements"][-1]["report"]
    assert inner["accuracy"] == 0.5  # the untouched branch still agrees
    failing = [v for v in inner["verdicts"] if v["functional"]["status"] == "fail"]
    assert len(failing) == 1
    assert failing[0]["functional"]["divergence"]["index"] == 0
    assert failing[0]["functional"]["divergence"]["instrumented"] == ["label1", "FAULT"]


def test_run_difftest_accepts_a_forced_diff(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    forced = CallbackDiff(modified=model.callback_names(), added=(), removed=(), unchanged=())
    diff, report = run_difftest(model, model, diff=forced)
    assert diff is forced
    assert report.compared == 2 and report.accuracy == Fraction(1)
    assert all(v.delta_ms == 0 for v in report.verdicts)
    # without forcing, identical models produce no tests at all
    diff, report = run_difftest(model, model)
    assert diff.modified == () and report.compared == 0


def test_run_difftest_honors_profile_and_config(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    forced = CallbackDiff(model.callback_names(), (), (), ())
    profile = DeviceProfile(net_latency_ms=50)
    _, report = run_difftest(
        model, model, profile=profile, config=GenConfig(loop_bound=1, max_paths=8),
        perf_tolerance=Fraction(1, 10), monitored=("sim_time_ms", "net_bytes"),
        diff=forced,
    )
    assert report.compared == 2
    assert report.environment["profile"]["net_latency_ms"] == 50
    assert report.environment["loop_bound"] == 1
    assert report.environment["perf_tolerance"] == "0.1"
    assert report.metrics == ("net_bytes",)


def test_environment_echo_renders_rationals_exactly():
    echo = environment_echo(
        DeviceProfile(cpu_factor=Fraction(3, 4)), 2, 256, Fraction(1, 8), ("sim_time_ms",)
    )
    assert echo["profile"]["cpu_factor"] == "0.75"
    assert echo["perf_tolerance"] == "0.125"
    assert echo["monitored"] == ["sim_time_ms"]
