from __future__ import annotations

import json

import pytest

from appbench.model import canonical_json, model_hash, parse_app_model
from appbench.pipeline import (
    ComponentKind,
    CompositionError,
    ManifestError,
    OsPolicy,
    StageError,
    compose_pipeline,
    load_manifest,
    manifest_to_json_dict,
    registered_impls,
    run_pipeline,
)

BUILTINS = (
    "ccfg_ir",
    "string_analyzer",
    "callback_analyzer",
    "prefetch_instrumenter",
    "logger_instrumenter",
    "fault_instrumenter",
    "os_policy",
    "proxy_cache",
    "device_monitor",
)

KIND_NAMES = (
    "IntermediateRepresenter",
    "StaticAnalyzer",
    "AppInstrumenter",
    "OsInstrumenter",
    "DeviceMonitor",
    "BackendService",
)


def _manifest(components, technique_id="t") -> str:
    return canonical_json(
        {"technique_id": technique_id, "description": "", "components": components}
    )


def test_all_builtin_impls_registered():
    assert set(BUILTINS) <= set(registered_impls())


def test_component_kind_names_are_exact():
    assert tuple(k.value for k in ComponentKind) == KIND_NAMES


def test_fixture_manifest_loads_and_round_trips(workspace):
    text = (workspace / "prefetch.manifest.json").read_text(encoding="utf-8")
    manifest = load_manifest(text)
    assert manifest.technique_id == "prefetch"
    assert [c.name for c in manifest.components] == [
        "ir",
        "urls",
        "points",
        "injector",
        "proxy",
    ]
    assert canonical_json(manifest_to_json_dict(manifest)) == text
    # reloading the round-tripped document yields the same manifest
    assert load_manifest(canonical_json(manifest_to_json_dict(manifest))) == manifest


def test_unknown_manifest_keys_rejected():
    with pytest.raises(ManifestError):
        load_manifest('{"technique_id": "t", "description": "", "components": [], "x": 1}')


def test_missing_manifest_keys_rejected():
    with pytest.raises(ManifestError):
        load_manifest('{"technique_id": "t", "components": []}')


def test_unknown_impl_rejected():
    with pytest.raises(ManifestError) as err:
        load_manifest(
            _manifest([{"name": "a", "kind": "StaticAnalyzer", "impl": "nope"}])
        )
    assert "nope" in str(err.value)


def test_impl_kind_mismatch_rejected():
    with pytest.raises(ManifestError) as err:
        load_manifest(
            _manifest([{"name": "a", "kind": "StaticAnalyzer", "impl": "ccfg_ir"}])
        )
    assert "ccfg_ir" in str(err.value)


def test_mode_only_valid_on_instrumenters():
    with pytest.raises(ManifestError):
        load_manifest(
            _manifest(
                [{"name": "a", "kind": "IntermediateRepresenter", "impl": "ccfg_ir", "mode": "manual"}]
            )
        )


def test_bad_mode_rejected():
    with pytest.raises(ManifestError):
        load_manifest(
            _manifest(
                [{"name": "a", "kind": "AppInstrumenter", "impl": "logger_instrumenter", "mode": "psychic"}]
            )
        )


def test_duplicate_component_names_rejected():
    with pytest.raises(ManifestError):
        load_manifest(
            _manifest(
                [
                    {"name": "a", "kind": "IntermediateRepresenter", "impl": "ccfg_ir"},
                    {"name": "a", "kind": "StaticAnalyzer", "impl": "string_analyzer"},
                ]
            )
        )


def test_config_must_map_strings_to_strings():
    with pytest.raises(ManifestError):
        load_manifest(
            _manifest(
                [{"name": "a", "kind": "BackendService", "impl": "proxy_cache", "config": {"n": 1}}]
            )
        )


def test_analyzer_needing_ir_must_follow_a_representer():
    manifest = load_manifest(
        _manifest([{"name": "urls", "kind": "StaticAnalyzer", "impl": "string_analyzer"}])
    )
    with pytest.raises(CompositionError) as err:
        compose_pipeline(manifest)
    assert "urls" in str(err.value)


def test_instrumenter_reads_must_precede_it():
    manifest = load_manifest(
        _manifest(
            [
                {
                    "name": "injector",
                    "kind": "AppInstrumenter",
                    "impl": "prefetch_instrumenter",
                    "config": {"reads": "points"},
                },
                {"name": "ir", "kind": "IntermediateRepresenter", "impl": "ccfg_ir"},
                {"name": "urls", "kind": "StaticAnalyzer", "impl": "string_analyzer"},
                {
                    "name": "points",
                    "kind": "StaticAnalyzer",
                    "impl": "callback_analyzer",
                    "config": {"reads": "urls"},
                },
            ]
        )
    )
    with pytest.raises(CompositionError) as err:
        compose_pipeline(manifest)
    assert "injector" in str(err.value) and "points" in str(err.value)


def test_reads_of_unknown_component_rejected():
    manifest = load_manifest(
        _manifest(
            [
                {"name": "ir", "kind": "IntermediateRepresenter", "impl": "ccfg_ir"},
                {
                    "name": "urls",
                    "kind": "StaticAnalyzer",
                    "impl": "string_analyzer",
                    "config": {"reads": "ghost"},
                },
            ]
        )
    )
    with pytest.raises(CompositionError) as err:
        compose_pipeline(manifest)
    assert "ghost" in str(err.value)


def test_intrinsic_reads_enforced_without_config():
    # callback_analyzer needs string_analyzer facts even when `reads` is absent
    manifest = load_manifest(
        _manifest(
            [
                {"name": "ir", "kind": "IntermediateRepresenter", "impl": "ccfg_ir"},
                {"name": "points", "kind": "StaticAnalyzer", "impl": "callback_analyzer"},
            ]
        )
    )
    with pytest.raises(CompositionError):
        compose_pipeline(manifest)


def test_runtime_components_have_no_stage(workspace):
    text = (workspace / "prefetch.manifest.json").read_text(encoding="utf-8")
    pipeline = compose_pipeline(load_manifest(text))
    assert [c.name for c in pipeline.stages] == ["ir", "urls", "points", "injector"]
    assert [c.name for c in pipeline.runtime] == ["proxy"]


def test_run_pipeline_collects_artifacts(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    text = (workspace / "prefetch.manifest.json").read_text(encoding="utf-8")
    artifacts = run_pipeline(compose_pipeline(load_manifest(text)), model)
    assert artifacts.ir is not None
    assert set(artifacts.facts) == {"urls", "points"}
    assert artifacts.facts["urls"].impl == "string_analyzer"
    assert artifacts.backend_config == {"cache": "enabled"}
    assert artifacts.instrumented_model is not None
    # frozen: digest of the prefetch-instrumented shopping model
    assert model_hash(artifacts.instrumented_model) == "5af03ec81eb8f768"
    # the input model is untouched
    assert model_hash(model) == "2d9c56c6a2668100"


def test_analyzers_read_the_original_model_instrumenters_chain(workspace):
    # logger then fault: the fault mutation must land on the logger's output
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    manifest = load_manifest(
        _manifest(
            [
                {"name": "log", "kind": "AppInstrumenter", "impl": "logger_instrumenter"},
                {
                    "name": "mutate",
                    "kind": "AppInstrumenter",
                    "impl": "fault_instrumenter",
                    "config": {"callback": "onClick#buy", "widget": "label1"},
                },
            ]
        )
    )
    artifacts = run_pipeline(compose_pipeline(manifest), model)
    produced = artifacts.instrumented_model
    node_ids = {n.id for n in produced.callback("onClick#buy").nodes}
    assert any(i.startswith("log_") for i in node_ids)  # logger ran
    values = [
        n.op.value.value
        for n in produced.callback("onClick#buy").nodes
        if n.op.kind == "ui_update"
    ]
    assert "FAULT" in values  # fault applied on top


def test_stage_failure_is_wrapped_with_the_stage_name(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    manifest = load_manifest(
        _manifest(
            [
                {
                    "name": "mutate",
                    "kind": "AppInstrumenter",
                    "impl": "fault_instrumenter",
                    "config": {"callback": "missing#cb", "widget": "w"},
                }
            ]
        )
    )
    with pytest.raises(StageError) as err:
        run_pipeline(compose_pipeline(manifest), model)
    assert err.value.stage == "mutate"


def test_manual_mode_uses_supplied_model_or_does_nothing(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    manifest = load_manifest(
        _manifest(
            [{"name": "inj", "kind": "AppInstrumenter", "impl": "logger_instrumenter", "mode": "manual"}]
        )
    )
    pipeline = compose_pipeline(manifest)
    # no manual payload: a no-op
    assert run_pipeline(pipeline, model).instrumented_model is None
    # manual payload: used verbatim (and validated)
    fault_text = (workspace / "shopping_fault.app.json").read_text(encoding="utf-8")
    artifacts = run_pipeline(pipeline, model, run_config={"manual_model_json": fault_text})
    assert model_hash(artifacts.instrumented_model) == "905ffb8a51d9afb5"


def test_instrumenter_output_is_validated(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    manifest = load_manifest(
        _manifest(
            [{"name": "inj", "kind": "AppInstrumenter", "impl": "logger_instrumenter", "mode": "manual"}]
        )
    )
    broken = json.loads((workspace / "shopping.app.json").read_text())
    broken["callbacks"][0]["entry"] = "ghost"
    with pytest.raises(StageError) as err:
        run_pipeline(
            compose_pipeline(manifest),
            model,
            run_config={"manual_model_json": canonical_json(broken)},
        )
    assert err.value.stage == "inj"


def test_os_policy_stage(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    manifest = load_manifest(
        _manifest(
            [
                {
                    "name": "guard",
                    "kind": "OsInstrumenter",
                    "impl": "os_policy",
                    "config": {"blocked": "app.SHARE,net.SYNC"},
                }
            ]
        )
    )
    artifacts = run_pipeline(compose_pipeline(manifest), model)
    assert artifacts.os_policy == OsPolicy(frozenset({"app.SHARE", "net.SYNC"}))
    assert artifacts.os_policy.blocks("app.SHARE")
    assert not artifacts.os_policy.blocks("app.VIEW")
    assert artifacts.instrumented_model is None
