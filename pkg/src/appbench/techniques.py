"""Built-in pipeline components, one or more per component kind.

Analysis side: a callback-CFG intermediate representation, a URL string
analyzer, and a prefetch-point callback analyzer. Transform side: prefetch,
logger, and fault app instrumenters plus an intent-blocking OS policy. The
proxy-cache backend and device monitor carry runtime configuration only.

All transforms are pure: they build new models and never touch their input.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    AppModel,
    Callback,
    LogOp,
    NetRequestOp,
    Node,
    PrefetchOp,
    UiUpdateOp,
    ValueExpr,
    parse_app_model,
)
from .pipeline import (
    BuiltinComponent,
    ComponentKind,
    OsPolicy,
    StageContext,
    register_component,
)


class TechniqueError(Exception):
    """A component was asked to do something its inputs don't support."""


# --------------------------------------------------------------------------
# Intermediate representation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CallbackIr:
    name: str
    node_count: int
    edge_count: int
    adjacency: tuple[tuple[str, tuple[str, ...]], ...]  # (node id, successor ids)
    op_kinds: frozenset[str]


@dataclass(frozen=True)
class CcfgIr:
    callbacks: tuple[CallbackIr, ...]

    def callback(self, name: str) -> CallbackIr:
        for cb in self.callbacks:
            if cb.name == name:
                return cb
        raise KeyError(f"no callback named {name!r} in IR")


def ccfg_ir(model: AppModel) -> CcfgIr:
    """Per-callback control-flow summary: counts, adjacency, op kinds."""
    out = []
    for cb in model.callbacks:
        adjacency = tuple((n.id, n.successors()) for n in cb.nodes)
        out.append(
            CallbackIr(
                name=cb.name,
                node_count=len(cb.nodes),
                edge_count=sum(len(succ) for _, succ in adjacency),
                adjacency=adjacency,
                op_kinds=frozenset(n.op.kind for n in cb.nodes),
            )
        )
    return CcfgIr(tuple(out))


# --------------------------------------------------------------------------
# Analyzers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UrlFact:
    """Whether a request's URL is statically known. Resolved means every part
    is literal; any variable part makes it dynamic."""

    callback: str
    node_id: str
    resolution: str  # "resolved" | "dynamic"
    url: str | None  # concatenated literal when resolved

    def is_resolved(self) -> bool:
        return self.resolution == "resolved"


def string_analyzer(model: AppModel, ir: CcfgIr) -> list[UrlFact]:
    """One fact per net_request node, in callback then node-id order."""
    facts: list[UrlFact] = []
    for cb in model.callbacks:
        for node in cb.nodes:
            if not isinstance(node.op, NetRequestOp):
                continue
            url = node.op.url.literal_value()
            if url is None:
                facts.append(UrlFact(cb.name, node.id, "dynamic", None))
            else:
                facts.append(UrlFact(cb.name, node.id, "resolved", url))
    return facts


@dataclass(frozen=True)
class PrefetchPoint:
    """A (callback, url) pair worth prefetching: the URL is statically known
    and the request that uses it is cacheable."""

    callback: str
    url: str


def callback_analyzer(model: AppModel, url_facts: list[UrlFact]) -> list[PrefetchPoint]:
    """Prefetch points from resolved, cacheable requests; duplicates collapsed."""
    points: list[PrefetchPoint] = []
    seen: set[tuple[str, str]] = set()
    for fact in url_facts:
        if not fact.is_resolved():
            continue
        cb = model.callback(fact.callback)
        node = cb.node_map()[fact.node_id]
        if not isinstance(node.op, NetRequestOp) or not node.op.cacheable:
            continue
        key = (fact.callback, fact.url)
        if key in seen:
            continue
        seen.add(key)
        points.append(PrefetchPoint(fact.callback, fact.url))
    return points


# --------------------------------------------------------------------------
# App instrumenters
# --------------------------------------------------------------------------

def _fresh_id(base: str, used: set[str]) -> str:
    candidate = base
    while candidate in used:
        candidate += "_"
    used.add(candidate)
    return candidate


def prefetch_instrumenter(model: AppModel, points: list[PrefetchPoint]) -> AppModel:
    """Insert a prefetch node as the new entry of each pointed-at callback.

    The old entry becomes the prefetch node's successor; untouched callbacks
    keep their canonical bytes.
    """
    urls_by_callback: dict[str, list[str]] = {}
    for point in points:
        urls_by_callback.setdefault(point.callback, []).append(point.url)
    known = set(model.callback_names())
    for name in urls_by_callback:
        if name not in known:
            raise TechniqueError(f"prefetch point references unknown callback {name!r}")

    callbacks = []
    for cb in model.callbacks:
        urls = urls_by_callback.get(cb.name)
        if not urls:
            callbacks.append(cb)
            continue
        used = {n.id for n in cb.nodes}
        nodes = list(cb.nodes)
        entry = cb.entry
        for url in urls:
            i = 0
            while f"pf{i}" in used:
                i += 1
            node_id = f"pf{i}"
            used.add(node_id)
            nodes.append(Node(node_id, PrefetchOp(url), next=entry))
            entry = node_id
        callbacks.append(Callback(cb.name, cb.params, entry, tuple(nodes)))
    return AppModel(model.app_id, model.version, tuple(callbacks))


def logger_instrumenter(model: AppModel) -> AppModel:
    """Give every ui_update and net_request node an immediately preceding log
    node tagged with the logged node's id. UI-visible behavior is unchanged;
    each log node costs simulated time, which is the point."""
    callbacks = []
    for cb in model.callbacks:
        logged = [n.id for n in cb.nodes if isinstance(n.op, (UiUpdateOp, NetRequestOp))]
        if not logged:
            callbacks.append(cb)
            continue
        used = {n.id for n in cb.nodes}
        log_ids = {target: _fresh_id(f"log_{target}", used) for target in logged}

        def redirect(target: str | None) -> str | None:
            if target is None:
                return None
            return log_ids.get(target, target)

        nodes = [
            Node(n.id, n.op, next=redirect(n.next), then=redirect(n.then), else_=redirect(n.else_))
            for n in cb.nodes
        ]
        for target, log_id in log_ids.items():
            nodes.append(Node(log_id, LogOp(tag=target), next=target))
        entry = log_ids.get(cb.entry, cb.entry)
        callbacks.append(Callback(cb.name, cb.params, entry, tuple(nodes)))
    return AppModel(model.app_id, model.version, tuple(callbacks))


def fault_instrumenter(model: AppModel, callback: str, widget: str) -> AppModel:
    """Replace the first matching ui_update's value with the literal "FAULT".

    A deliberate single-point mutation proving the testbed catches functional
    divergence.
    """
    try:
        target_cb = model.callback(callback)
    except KeyError:
        raise TechniqueError(f"fault target callback {callback!r} not found") from None
    mutated = None
    nodes = []
    for node in target_cb.nodes:
        if (
            mutated is None
            and isinstance(node.op, UiUpdateOp)
            and node.op.widget == widget
        ):
            mutated = node.id
            nodes.append(
                Node(
                    node.id,
                    UiUpdateOp(widget, ValueExpr("lit", "FAULT")),
                    next=node.next,
                    then=node.then,
                    else_=node.else_,
                )
            )
        else:
            nodes.append(node)
    if mutated is None:
        raise TechniqueError(
            f"callback {callback!r} has no ui_update for widget {widget!r}"
        )
    callbacks = tuple(
        Callback(cb.name, cb.params, cb.entry, tuple(nodes)) if cb.name == callback else cb
        for cb in model.callbacks
    )
    return AppModel(model.app_id, model.version, callbacks)


# --------------------------------------------------------------------------
# OS policy
# --------------------------------------------------------------------------

def os_policy_instrumenter(config: dict[str, str]) -> OsPolicy:
    """Build an intent-blocking policy from the comma-separated `blocked` list."""
    blocked = config.get("blocked", "")
    actions = frozenset(a for a in blocked.split(",") if a)
    return OsPolicy(actions)


# --------------------------------------------------------------------------
# Registration
# --------------------------------------------------------------------------

def _run_manual_or(ctx: StageContext, automatic) -> AppModel | None:
    """Manual-mode instrumenters do nothing unless the run supplies a model
    out of band (run config key `manual_model_json`)."""
    if ctx.mode == "manual":
        text = ctx.run_config.get("manual_model_json")
        return parse_app_model(text) if text is not None else None
    return automatic()


def _run_ccfg_ir(ctx: StageContext) -> CcfgIr:
    return ccfg_ir(ctx.model)


def _run_string_analyzer(ctx: StageContext) -> list[UrlFact]:
    return string_analyzer(ctx.model, ctx.artifacts.ir)


def _run_callback_analyzer(ctx: StageContext) -> list[PrefetchPoint]:
    url_facts: list[UrlFact] = []
    for data in ctx.artifacts.facts_by_impl("string_analyzer"):
        url_facts.extend(data)
    return callback_analyzer(ctx.model, url_facts)


def _run_prefetch_instrumenter(ctx: StageContext) -> AppModel | None:
    def automatic() -> AppModel:
        points: list[PrefetchPoint] = []
        for data in ctx.artifacts.facts_by_impl("callback_analyzer"):
            points.extend(data)
        return prefetch_instrumenter(ctx.current_model, points)

    return _run_manual_or(ctx, automatic)


def _run_logger_instrumenter(ctx: StageContext) -> AppModel | None:
    return _run_manual_or(ctx, lambda: logger_instrumenter(ctx.current_model))


def _run_fault_instrumenter(ctx: StageContext) -> AppModel | None:
    def automatic() -> AppModel:
        callback = ctx.config.get("callback")
        widget = ctx.config.get("widget")
        if not callback or not widget:
            raise TechniqueError(
                "fault_instrumenter needs config keys 'callback' and 'widget'"
            )
        return fault_instrumenter(ctx.current_model, callback, widget)

    return _run_manual_or(ctx, automatic)


def _run_os_policy(ctx: StageContext) -> OsPolicy:
    return os_policy_instrumenter(ctx.config)


def _run_noop(ctx: StageContext) -> None:
    return None


def _register_all() -> None:
    register_component(BuiltinComponent(
        "ccfg_ir", ComponentKind.INTERMEDIATE_REPRESENTER, _run_ccfg_ir))
    register_component(BuiltinComponent(
        "string_analyzer", ComponentKind.STATIC_ANALYZER, _run_string_analyzer,
        requires_ir=True))
    register_component(BuiltinComponent(
        "callback_analyzer", ComponentKind.STATIC_ANALYZER, _run_callback_analyzer,
        reads_impls=("string_analyzer",)))
    register_component(BuiltinComponent(
        "prefetch_instrumenter", ComponentKind.APP_INSTRUMENTER,
        _run_prefetch_instrumenter, reads_impls=("callback_analyzer",)))
    register_component(BuiltinComponent(
        "logger_instrumenter", ComponentKind.APP_INSTRUMENTER,
        _run_logger_instrumenter))
    register_component(BuiltinComponent(
        "fault_instrumenter", ComponentKind.APP_INSTRUMENTER,
        _run_fault_instrumenter))
    register_component(BuiltinComponent(
        "os_policy", ComponentKind.OS_INSTRUMENTER, _run_os_policy))
    register_component(BuiltinComponent(
        "proxy_cache", ComponentKind.BACKEND_SERVICE, _run_noop))
    register_component(BuiltinComponent(
        "device_monitor", ComponentKind.DEVICE_MONITOR, _run_noop))


_register_all()
