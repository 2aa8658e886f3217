"""Technique manifests and the pipeline composer.

A technique is declared as an ordered list of components, each one of six
kinds, each naming a registered built-in implementation. Composition checks
the workflow order (IR before analyzers that consume it, analyzers before the
instrumenters that read their facts); running produces analysis facts, an
instrumented model, an OS policy, and runtime configuration — never mutating
the input model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .model import AppModel, ModelValidationError, validate_app_model


class ComponentKind(Enum):
    INTERMEDIATE_REPRESENTER = "IntermediateRepresenter"
    STATIC_ANALYZER = "StaticAnalyzer"
    APP_INSTRUMENTER = "AppInstrumenter"
    OS_INSTRUMENTER = "OsInstrumenter"
    DEVICE_MONITOR = "DeviceMonitor"
    BACKEND_SERVICE = "BackendService"


class ManifestError(Exception):
    """Manifest document is malformed or references unknown kinds/impls."""


class CompositionError(Exception):
    """Component ordering violates the workflow; names the offending pair."""


class StageError(Exception):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ComponentDecl:
    name: str
    kind: ComponentKind
    impl: str
    mode: str = "automatic"  # instrumenters only: automatic | manual
    config: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TechniqueManifest:
    technique_id: str
    description: str
    components: tuple[ComponentDecl, ...]

    def component(self, name: str) -> ComponentDecl:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(f"no component named {name!r}")


@dataclass(frozen=True)
class OsPolicy:
    blocked_intent_actions: frozenset[str]

    @classmethod
    def empty(cls) -> "OsPolicy":
        return cls(frozenset())

    def blocks(self, action: str) -> bool:
        return action in self.blocked_intent_actions


@dataclass(frozen=True)
class FactSet:
    """One analyzer's output: which impl produced it plus the data itself."""

    impl: str
    data: Any


@dataclass
class PipelineArtifacts:
    """Everything a pipeline run produced. Facts are keyed by component name;
    monitor/backend config is runtime configuration for the executor side."""

    ir: Any = None
    facts: dict[str, FactSet] = field(default_factory=dict)
    instrumented_model: AppModel | None = None
    os_policy: OsPolicy | None = None
    backend_config: dict[str, str] = field(default_factory=dict)
    monitor_config: dict[str, str] = field(default_factory=dict)

    def facts_by_impl(self, impl: str) -> list[Any]:
        """Data of every fact set a given implementation produced, in stage order."""
        return [fs.data for fs in self.facts.values() if fs.impl == impl]


@dataclass
class StageContext:
    """What a built-in component sees when it runs."""

    model: AppModel  # original model (analysis target)
    current_model: AppModel  # original, or the previous instrumenter's output
    artifacts: PipelineArtifacts
    config: dict[str, str]
    mode: str
    run_config: dict[str, str]


@dataclass(frozen=True)
class BuiltinComponent:
    """A registered in-process implementation addressable from manifests."""

    impl: str
    kind: ComponentKind
    run: Callable[[StageContext], Any]
    requires_ir: bool = False  # analyzers that consume the IR artifact
    reads_impls: tuple[str, ...] = ()  # impls whose facts this component needs


_REGISTRY: dict[str, BuiltinComponent] = {}


def register_component(component: BuiltinComponent) -> None:
    if component.impl in _REGISTRY:
        raise ValueError(f"built-in component {component.impl!r} already registered")
    _REGISTRY[component.impl] = component


def get_component(impl: str) -> BuiltinComponent:
    try:
        return _REGISTRY[impl]
    except KeyError:
        raise KeyError(f"unknown built-in component {impl!r}") from None


def registered_impls() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


# --------------------------------------------------------------------------
# Manifest loading
# --------------------------------------------------------------------------

_KINDS_BY_NAME = {k.value: k for k in ComponentKind}
_INSTRUMENTER_KINDS = (ComponentKind.APP_INSTRUMENTER, ComponentKind.OS_INSTRUMENTER)


def load_manifest(text: str) -> TechniqueManifest:
    """Parse and validate a technique manifest document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not well-formed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a JSON object")
    allowed = {"technique_id", "description", "components"}
    unknown = set(raw) - allowed
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    missing = allowed - set(raw)
    if missing:
        raise ManifestError(f"missing manifest keys: {sorted(missing)}")
    technique_id = raw["technique_id"]
    description = raw["description"]
    if not isinstance(technique_id, str) or not technique_id:
        raise ManifestError("technique_id must be a non-empty string")
    if not isinstance(description, str):
        raise ManifestError("description must be a string")
    if not isinstance(raw["components"], list):
        raise ManifestError("components must be a list")

    components: list[ComponentDecl] = []
    seen: set[str] = set()
    for i, c in enumerate(raw["components"]):
        where = f"components[{i}]"
        if not isinstance(c, dict):
            raise ManifestError(f"{where}: must be an object")
        extra = set(c) - {"name", "kind", "impl", "mode", "config"}
        if extra:
            raise ManifestError(f"{where}: unknown keys {sorted(extra)}")
        for key in ("name", "kind", "impl"):
            if not isinstance(c.get(key), str) or not c.get(key):
                raise ManifestError(f"{where}: {key} must be a non-empty string")
        if c["kind"] not in _KINDS_BY_NAME:
            raise ManifestError(f"{where}: unknown component kind {c['kind']!r}")
        kind = _KINDS_BY_NAME[c["kind"]]
        if c["name"] in seen:
            raise ManifestError(f"{where}: duplicate component name {c['name']!r}")
        seen.add(c["name"])
        try:
            builtin = get_component(c["impl"])
        except KeyError:
            raise ManifestError(f"{where}: unknown impl {c['impl']!r}") from None
        if builtin.kind is not kind:
            raise ManifestError(
                f"{where}: impl {c['impl']!r} is a {builtin.kind.value}, "
                f"declared as {kind.value}"
            )
        mode = c.get("mode", "automatic")
        if "mode" in c and kind not in _INSTRUMENTER_KINDS:
            raise ManifestError(f"{where}: mode is only valid on instrumenters")
        if mode not in ("automatic", "manual"):
            raise ManifestError(f"{where}: mode must be automatic or manual, got {mode!r}")
        config = c.get("config", {})
        if not isinstance(config, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in config.items()
        ):
            raise ManifestError(f"{where}: config must map strings to strings")
        components.append(ComponentDecl(c["name"], kind, c["impl"], mode, dict(config)))
    return TechniqueManifest(technique_id, description, tuple(components))


def manifest_to_json_dict(manifest: TechniqueManifest) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "technique_id": manifest.technique_id,
        "description": manifest.description,
        "components": [],
    }
    for c in manifest.components:
        entry: dict[str, Any] = {"name": c.name, "kind": c.kind.value, "impl": c.impl}
        if c.kind in _INSTRUMENTER_KINDS:
            entry["mode"] = c.mode
        if c.config:
            entry["config"] = dict(sorted(c.config.items()))
        doc["components"].append(entry)
    return doc


# --------------------------------------------------------------------------
# Composition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Pipeline:
    """A validated, ordered technique: stages run in order, runtime-only
    components (monitor/backend) contribute configuration without a stage."""

    manifest: TechniqueManifest
    stages: tuple[ComponentDecl, ...]
    runtime: tuple[ComponentDecl, ...]


def _reads_of(decl: ComponentDecl) -> tuple[str, ...]:
    """Component names this declaration reads facts from, per its config."""
    reads = decl.config.get("reads", "")
    return tuple(name.strip() for name in reads.split(",") if name.strip())


def compose_pipeline(manifest: TechniqueManifest) -> Pipeline:
    """Order-check the manifest and split stages from runtime-only components.

    Rules: an analyzer that consumes the IR must come after an
    IntermediateRepresenter; an instrumenter must come after every analyzer it
    reads facts from (declared `reads` config and the impl's intrinsic needs).
    """
    stages: list[ComponentDecl] = []
    runtime: list[ComponentDecl] = []
    seen_ir = False
    impls_seen: set[str] = set()
    names_seen: set[str] = set()
    by_name = {c.name: c for c in manifest.components}

    for decl in manifest.components:
        builtin = get_component(decl.impl)
        if decl.kind in (ComponentKind.DEVICE_MONITOR, ComponentKind.BACKEND_SERVICE):
            runtime.append(decl)
            names_seen.add(decl.name)
            impls_seen.add(decl.impl)
            continue
        if builtin.requires_ir and not seen_ir:
            raise CompositionError(
                f"component {decl.name!r} consumes the IR but no "
                "IntermediateRepresenter precedes it"
            )
        for wanted in _reads_of(decl):
            if wanted not in by_name:
                raise CompositionError(
                    f"component {decl.name!r} reads facts from unknown component {wanted!r}"
                )
            if wanted not in names_seen:
                raise CompositionError(
                    f"component {decl.name!r} reads facts from {wanted!r}, "
                    "which does not precede it"
                )
        for impl in builtin.reads_impls:
            if impl not in impls_seen:
                raise CompositionError(
                    f"component {decl.name!r} needs facts from a {impl!r} "
                    "component, but none precedes it"
                )
        if decl.kind is ComponentKind.INTERMEDIATE_REPRESENTER:
            seen_ir = True
        stages.append(decl)
        names_seen.add(decl.name)
        impls_seen.add(decl.impl)
    return Pipeline(manifest, tuple(stages), tuple(runtime))


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

def run_pipeline(
    pipeline: Pipeline,
    model: AppModel,
    run_config: dict[str, str] | None = None,
) -> PipelineArtifacts:
    """Run every stage in order over the model, collecting artifacts.

    Analysis stages read the original model; instrumenters chain, each reading
    the previous instrumenter's output. The input model is never modified.
    """
    run_config = dict(run_config or {})
    artifacts = PipelineArtifacts()
    for decl in pipeline.runtime:
        if decl.kind is ComponentKind.BACKEND_SERVICE:
            artifacts.backend_config.update(decl.config)
        else:
            artifacts.monitor_config.update(decl.config)

    for decl in pipeline.stages:
        builtin = get_component(decl.impl)
        current = artifacts.instrumented_model or model
        ctx = StageContext(
            model=model,
            current_model=current,
            artifacts=artifacts,
            config=decl.config,
            mode=decl.mode,
            run_config=run_config,
        )
        try:
            result = builtin.run(ctx)
        except Exception as exc:
            raise StageError(decl.name, exc) from exc
        if decl.kind is ComponentKind.INTERMEDIATE_REPRESENTER:
            artifacts.ir = result
        elif decl.kind is ComponentKind.STATIC_ANALYZER:
            artifacts.facts[decl.name] = FactSet(decl.impl, result)
        elif decl.kind is ComponentKind.APP_INSTRUMENTER:
            if result is not None:
                violations = validate_app_model(result)
                if violations:
                    raise StageError(decl.name, ModelValidationError(violations))
                artifacts.instrumented_model = result
        elif decl.kind is ComponentKind.OS_INSTRUMENTER:
            artifacts.os_policy = result
    return artifacts
