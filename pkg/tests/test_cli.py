from __future__ import annotations

import json
import subprocess
import sys

import pytest

from appbench.cli import EXIT_OK, EXIT_USAGE, EXIT_VERDICT, main
from appbench.model import parse_app_model, serialize_app_model


def _ws(workspace, name: str) -> str:
    return str(workspace / name)


def test_validate_ok(workspace, capsys):
    assert main(["validate", _ws(workspace, "shopping.app.json")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out == "ok: shopping v1.0, 1 callback(s)\n"


def test_validate_rejects_bad_documents(workspace, capsys):
    bad = workspace / "bad.app.json"
    bad.write_text("{")
    assert main(["validate", str(bad)]) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err

    bad.write_text('{"app_id": "x", "version": "1", "callbacks": [], "junk": 1}')
    assert main(["validate", str(bad)]) == EXIT_USAGE
    capsys.readouterr()
    assert main(["validate", _ws(workspace, "nowhere.app.json")]) == EXIT_USAGE
    assert "no such file" in capsys.readouterr().err


def test_hash_prints_model_and_callback_digests(workspace, capsys):
    assert main(["hash", _ws(workspace, "shopping.app.json")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "2d9c56c6a2668100  shopping"
    assert len(lines) == 2  # one callback
    digest, name = lines[1].split("  ")
    assert len(digest) == 16 and name == "onClick#buy"


def test_pipeline_writes_the_instrumented_model(workspace, capsys):
    out = workspace / "instrumented.app.json"
    code = main([
        "pipeline",
        _ws(workspace, "prefetch.manifest.json"),
        _ws(workspace, "shopping.app.json"),
        "-o", str(out),
    ])
    assert code == EXIT_OK
    produced = parse_app_model(out.read_text())
    assert serialize_app_model(produced) == out.read_text()
    printed = capsys.readouterr().out
    assert "prefetch:" in printed
    assert "facts urls" in printed and "facts points" in printed


def test_diff_emits_canonical_json(workspace, capsys):
    code = main([
        "diff",
        _ws(workspace, "shopping.app.json"),
        _ws(workspace, "shopping_fault.app.json"),
    ])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc == {
        "modified": ["onClick#buy"],
        "added": [],
        "removed": [],
        "unchanged": [],
    }


def test_gen_emits_the_suite(workspace, capsys):
    code = main([
        "gen",
        _ws(workspace, "shopping.app.json"),
        _ws(workspace, "shopping_fault.app.json"),
        "--bound", "1",
        "--max-paths", "16",
    ])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["loop_bound"] == 1 and doc["max_paths"] == 16
    assert [t["inputs"] for t in doc["generated"]] == [{"x": -1000}, {"x": 10}]


def test_difftest_exit_reflects_the_verdict(workspace, capsys):
    report_path = workspace / "report.json"
    ok = main([
        "difftest",
        _ws(workspace, "shopping.app.json"),
        _ws(workspace, "shopping.app.json"),
        "-o", str(report_path),
    ])
    assert ok == EXIT_OK  # identical models: nothing to compare, vacuous pass
    assert json.loads(report_path.read_text())["compared"] == 0

    failing = main([
        "difftest",
        _ws(workspace, "shopping.app.json"),
        _ws(workspace, "shopping_fault.app.json"),
        "-o", str(report_path),
    ])
    assert failing == EXIT_VERDICT
    doc = json.loads(report_path.read_text())
    assert doc["accuracy"] == 0.5
    out = capsys.readouterr().out
    assert "passes=1/2 accuracy=0.5" in out


def test_difftest_env_flags_reach_the_simulation(workspace):
    report_path = workspace / "report.json"
    code = main([
        "difftest",
        _ws(workspace, "shopping.app.json"),
        _ws(workspace, "shopping_fault.app.json"),
        "-o", str(report_path),
        "--net_latency_ms", "5",
        "--loop_bound", "1",
        "--perf_tolerance", "0.5",
        "--cpu_factor", "2",
    ])
    assert code == EXIT_VERDICT  # the fault still diverges
    env = json.loads(report_path.read_text())["environment"]
    assert env["profile"]["net_latency_ms"] == 5
    assert env["profile"]["cpu_factor"] == "2"
    assert env["loop_bound"] == 1
    assert env["perf_tolerance"] == "0.5"


def test_unittest_pass_and_fail(workspace, capsys):
    code = main([
        "unittest",
        _ws(workspace, "prefetch_shopping.utest.json"),
        _ws(workspace, "prefetch.manifest.json"),
    ])
    assert code == EXIT_OK
    assert "prefetch-shopping-01: pass" in capsys.readouterr().out

    doc = json.loads((workspace / "prefetch_shopping.utest.json").read_text())
    doc["expect"]["value"] = "0" * 16
    (workspace / "broken.utest.json").write_text(json.dumps(doc))
    code = main([
        "unittest",
        _ws(workspace, "broken.utest.json"),
        _ws(workspace, "prefetch.manifest.json"),
    ])
    assert code == EXIT_VERDICT
    assert ": fail" in capsys.readouterr().out

    doc["technique"] = "other"
    (workspace / "broken.utest.json").write_text(json.dumps(doc))
    code = main([
        "unittest",
        _ws(workspace, "broken.utest.json"),
        _ws(workspace, "prefetch.manifest.json"),
    ])
    assert code == EXIT_USAGE  # unusable document, not a failing test


def test_script_runs_in_a_workspace(workspace, capsys):
    code = main([
        "script", _ws(workspace, "quickstart.dscr"),
        "-w", str(workspace),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "ok=True" in out
    report = json.loads((workspace / "report.json").read_text())
    assert report["summary"]["ok"] is True
    assert (workspace / "traces" / "prefetch_speedup").is_dir()


def test_script_with_pool_sources_needs_a_repo(workspace, tmp_path, capsys):
    script = workspace / "pooled.dscr"
    script.write_text("benchmark b = pool:2d9c56c6a2668100\n")
    assert main(["script", str(script), "-w", str(workspace)]) == EXIT_USAGE

    from appbench.repo import Repository

    repo_dir = tmp_path / "repo"
    Repository(repo_dir).put_entry(
        "benchmarks", (workspace / "shopping.app.json").read_text()
    )
    code = main(["script", str(script), "-w", str(workspace), "--repo", str(repo_dir)])
    assert code == EXIT_OK
    capsys.readouterr()


def test_fmt_canonicalizes_scripts(workspace, capsys):
    messy = workspace / "messy.dscr"
    messy.write_text('  benchmark   b="shopping.app.json"   # note\n')
    assert main(["fmt", str(messy)]) == EXIT_OK
    first = capsys.readouterr().out
    assert first == 'benchmark b = "shopping.app.json"\n'

    # formatting is a fixpoint: fmt of fmt output is identical
    (workspace / "formatted.dscr").write_text(first)
    assert main(["fmt", str(workspace / "formatted.dscr")]) == EXIT_OK
    assert capsys.readouterr().out == first

    assert main(["fmt", _ws(workspace, "nowhere.dscr")]) == EXIT_USAGE
    capsys.readouterr()
    bad = workspace / "bad.dscr"
    bad.write_text("difftest { }")
    assert main(["fmt", str(bad)]) == EXIT_USAGE
    capsys.readouterr()


def test_fixtures_subcommand_copies_the_bundled_corpus(tmp_path, capsys, fixdir):
    target = tmp_path / "examples"
    assert main(["fixtures", str(target)]) == EXIT_OK
    written = sorted(p.name for p in target.iterdir())
    assert written == sorted(p.name for p in fixdir.iterdir() if p.is_file())
    for name in written:
        assert (target / name).read_text() == (fixdir / name).read_text()
    assert len(capsys.readouterr().out.splitlines()) == len(written)


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_USAGE


def test_module_entry_point_smoke(workspace):
    proc = subprocess.run(
        [sys.executable, "-m", "appbench", "hash", _ws(workspace, "shopping.app.json")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == EXIT_OK
    assert proc.stdout.splitlines()[0] == "2d9c56c6a2668100  shopping"
