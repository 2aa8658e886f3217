"""App-model documents: a serializable app as named callbacks, each a
control-flow graph of statements.

The document format is JSON text (`.app.json`). Top-level keys are exactly
`app_id`, `version`, `callbacks`; callbacks carry `name`, `params`, `entry`,
`nodes`; nodes carry `id`, `op` and, depending on the op kind, `next` or
`then`/`else`. Unknown keys anywhere are validation errors.

Canonical form: callbacks in declaration order, nodes sorted by id, keys in a
fixed order, two-space indentation, trailing newline. The canonical bytes feed
content addressing and callback hashing, so they must never vary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

from .digest import fnv1a64_hex

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1

CMP_OPS = ("<", "<=", "==", "!=", ">", ">=")


class ModelSyntaxError(Exception):
    """Document is not well-formed JSON. Carries the position of the defect."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ModelValidationError(Exception):
    """Document parsed but violates the format; lists every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__(
            "invalid app model:\n" + "\n".join(f"  - {v}" for v in violations)
        )
        self.violations = list(violations)


@dataclass(frozen=True)
class UrlExpr:
    """URL built from literal and input-variable parts, e.g. https://api/ + x."""

    parts: tuple[tuple[str, str], ...]  # ("lit", text) or ("var", param name)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple((k, v) for k, v in self.parts))

    @classmethod
    def literal(cls, url: str) -> "UrlExpr":
        return cls((("lit", url),))

    def is_literal(self) -> bool:
        return all(kind == "lit" for kind, _ in self.parts)

    def literal_value(self) -> str | None:
        """Concatenation of the parts when fully literal, else None."""
        if not self.is_literal():
            return None
        return "".join(text for _, text in self.parts)

    def referenced_vars(self) -> tuple[str, ...]:
        return tuple(text for kind, text in self.parts if kind == "var")

    def resolve(self, inputs: dict[str, int]) -> str:
        return "".join(
            text if kind == "lit" else str(inputs[text]) for kind, text in self.parts
        )


@dataclass(frozen=True)
class ValueExpr:
    """Rendered value of a UI update: a literal, an input variable, or the
    most recent response received for a literal URL."""

    kind: str  # "lit" | "var" | "resp"
    value: str

    def __post_init__(self):
        if self.kind not in ("lit", "var", "resp"):
            raise ValueError(f"bad value-expression kind: {self.kind!r}")


@dataclass(frozen=True)
class ComputeOp:
    cost_ms: int
    kind = "compute"


@dataclass(frozen=True)
class BranchOp:
    var: str
    cmp: str
    const: int
    kind = "branch"


@dataclass(frozen=True)
class UiUpdateOp:
    widget: str
    value: ValueExpr
    kind = "ui_update"


@dataclass(frozen=True)
class NetRequestOp:
    url: UrlExpr
    resp_bytes: int
    cacheable: bool
    kind = "net_request"


@dataclass(frozen=True)
class PrefetchOp:
    url: str  # literal URL only
    kind = "prefetch"


@dataclass(frozen=True)
class LogOp:
    tag: str
    kind = "log"


@dataclass(frozen=True)
class SendIntentOp:
    action: str
    kind = "send_intent"


@dataclass(frozen=True)
class ExitOp:
    kind = "exit"


Op = Union[
    ComputeOp, BranchOp, UiUpdateOp, NetRequestOp, PrefetchOp, LogOp, SendIntentOp, ExitOp
]


@dataclass(frozen=True)
class Node:
    id: str
    op: Op
    next: str | None = None
    then: str | None = None
    else_: str | None = None

    def successors(self) -> tuple[str, ...]:
        if isinstance(self.op, ExitOp):
            return ()
        if isinstance(self.op, BranchOp):
            return (self.then, self.else_)  # type: ignore[return-value]
        return (self.next,)  # type: ignore[return-value]


@dataclass(frozen=True)
class Callback:
    """One user-interaction handler. Nodes are normalized to id order on
    construction so structural equality and serialization ignore listing order."""

    name: str
    params: tuple[str, ...]
    entry: str
    nodes: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(
            self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id))
        )

    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}


@dataclass(frozen=True)
class AppModel:
    app_id: str
    version: str
    callbacks: tuple[Callback, ...]

    def __post_init__(self):
        object.__setattr__(self, "callbacks", tuple(self.callbacks))

    def callback(self, name: str) -> Callback:
        for cb in self.callbacks:
            if cb.name == name:
                return cb
        raise KeyError(f"no callback named {name!r}")

    def callback_names(self) -> tuple[str, ...]:
        return tuple(cb.name for cb in self.callbacks)


# --------------------------------------------------------------------------
# Decoding (JSON document -> model), collecting every violation
# --------------------------------------------------------------------------

_OP_FIELDS = {
    "compute": ("cost_ms",),
    "branch": ("var", "cmp", "const"),
    "ui_update": ("widget", "value"),
    "net_request": ("url", "resp_bytes", "cacheable"),
    "prefetch": ("url",),
    "log": ("tag",),
    "send_intent": ("action",),
    "exit": (),
}


class _Decoder:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, msg: str) -> None:
        self.errors.append(msg)

    def require_keys(self, obj: dict, allowed: tuple[str, ...], required: tuple[str, ...], where: str) -> bool:
        ok = True
        for key in obj:
            if key not in allowed:
                self.fail(f"{where}: unknown key {key!r}")
                ok = False
        for key in required:
            if key not in obj:
                self.fail(f"{where}: missing key {key!r}")
                ok = False
        return ok

    def expect_str(self, value: Any, where: str) -> str | None:
        if isinstance(value, str) and value:
            return value
        self.fail(f"{where}: expected a non-empty string, got {value!r}")
        return None

    def expect_int(self, value: Any, where: str, minimum: int | None = None) -> int | None:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"{where}: expected an integer, got {value!r}")
            return None
        if not I64_MIN <= value <= I64_MAX:
            self.fail(f"{where}: integer out of signed 64-bit range: {value}")
            return None
        if minimum is not None and value < minimum:
            self.fail(f"{where}: must be >= {minimum}, got {value}")
            return None
        return value

    def decode_url(self, raw: Any, where: str) -> UrlExpr | None:
        if not isinstance(raw, list) or not raw:
            self.fail(f"{where}: url must be a non-empty list of parts")
            return None
        parts: list[tuple[str, str]] = []
        for i, part in enumerate(raw):
            pwhere = f"{where} part {i}"
            if not isinstance(part, dict) or len(part) != 1:
                self.fail(f"{pwhere}: each url part is one of {{\"lit\": ...}} or {{\"var\": ...}}")
                return None
            (key, value), = part.items()
            if key not in ("lit", "var"):
                self.fail(f"{pwhere}: unknown part kind {key!r}")
                return None
            text = self.expect_str(value, pwhere) if key == "var" else value
            if key == "lit" and not isinstance(value, str):
                self.fail(f"{pwhere}: literal must be a string")
                return None
            if key == "var" and text is None:
                return None
            parts.append((key, value))
        return UrlExpr(tuple(parts))

    def decode_value_expr(self, raw: Any, where: str) -> ValueExpr | None:
        if not isinstance(raw, dict) or len(raw) != 1:
            self.fail(f"{where}: value must be exactly one of {{\"lit\"|\"var\"|\"resp\": ...}}")
            return None
        (key, value), = raw.items()
        if key not in ("lit", "var", "resp"):
            self.fail(f"{where}: unknown value kind {key!r}")
            return None
        if not isinstance(value, str):
            self.fail(f"{where}: value payload must be a string")
            return None
        return ValueExpr(key, value)

    def decode_op(self, raw: Any, where: str) -> Op | None:
        if not isinstance(raw, dict):
            self.fail(f"{where}: op must be an object")
            return None
        kind = raw.get("kind")
        if kind not in _OP_FIELDS:
            self.fail(f"{where}: unknown op kind {kind!r}")
            return None
        if not self.require_keys(raw, ("kind",) + _OP_FIELDS[kind], ("kind",) + _OP_FIELDS[kind], where):
            return None
        if kind == "compute":
            cost = self.expect_int(raw["cost_ms"], f"{where}.cost_ms", minimum=0)
            return None if cost is None else ComputeOp(cost)
        if kind == "branch":
            var = self.expect_str(raw["var"], f"{where}.var")
            cmp = raw["cmp"]
            if cmp not in CMP_OPS:
                self.fail(f"{where}.cmp: unknown comparator {cmp!r}")
                cmp = None
            const = self.expect_int(raw["const"], f"{where}.const")
            if None in (var, cmp, const):
                return None
            return BranchOp(var, cmp, const)
        if kind == "ui_update":
            widget = self.expect_str(raw["widget"], f"{where}.widget")
            value = self.decode_value_expr(raw["value"], f"{where}.value")
            if widget is None or value is None:
                return None
            return UiUpdateOp(widget, value)
        if kind == "net_request":
            url = self.decode_url(raw["url"], f"{where}.url")
            size = self.expect_int(raw["resp_bytes"], f"{where}.resp_bytes", minimum=0)
            cacheable = raw["cacheable"]
            if not isinstance(cacheable, bool):
                self.fail(f"{where}.cacheable: expected a boolean")
                cacheable = None
            if url is None or size is None or cacheable is None:
                return None
            return NetRequestOp(url, size, cacheable)
        if kind == "prefetch":
            url = self.expect_str(raw["url"], f"{where}.url")
            return None if url is None else PrefetchOp(url)
        if kind == "log":
            tag = self.expect_str(raw["tag"], f"{where}.tag")
            return None if tag is None else LogOp(tag)
        if kind == "send_intent":
            action = self.expect_str(raw["action"], f"{where}.action")
            return None if action is None else SendIntentOp(action)
        return ExitOp()

    def decode_node(self, raw: Any, where: str) -> Node | None:
        if not isinstance(raw, dict):
            self.fail(f"{where}: node must be an object")
            return None
        op_raw = raw.get("op")
        kind = op_raw.get("kind") if isinstance(op_raw, dict) else None
        if kind == "branch":
            allowed = ("id", "op", "then", "else")
            required = allowed
        elif kind == "exit":
            allowed = required = ("id", "op")
        else:
            allowed = required = ("id", "op", "next")
        if not self.require_keys(raw, allowed, required, where):
            return None
        node_id = self.expect_str(raw.get("id"), f"{where}.id")
        op = self.decode_op(op_raw, f"{where}.op")
        if node_id is None or op is None:
            return None
        succ = {}
        for key in ("next", "then", "else"):
            if key in raw:
                target = self.expect_str(raw[key], f"{where}.{key}")
                if target is None:
                    return None
                succ[key] = target
        return Node(node_id, op, next=succ.get("next"), then=succ.get("then"), else_=succ.get("else"))

    def decode_callback(self, raw: Any, where: str) -> Callback | None:
        if not isinstance(raw, dict):
            self.fail(f"{where}: callback must be an object")
            return None
        keys = ("name", "params", "entry", "nodes")
        if not self.require_keys(raw, keys, keys, where):
            return None
        name = self.expect_str(raw["name"], f"{where}.name")
        entry = self.expect_str(raw["entry"], f"{where}.entry")
        params_raw = raw["params"]
        params: list[str] | None = []
        if not isinstance(params_raw, list):
            self.fail(f"{where}.params: expected a list of names")
            params = None
        else:
            for i, p in enumerate(params_raw):
                got = self.expect_str(p, f"{where}.params[{i}]")
                if got is None:
                    params = None
                    break
                params.append(got)
        nodes_raw = raw["nodes"]
        if not isinstance(nodes_raw, list):
            self.fail(f"{where}.nodes: expected a list of nodes")
            return None
        nodes = []
        for i, n in enumerate(nodes_raw):
            node = self.decode_node(n, f"{where}.nodes[{i}]")
            if node is None:
                return None
            nodes.append(node)
        if name is None or entry is None or params is None:
            return None
        return Callback(name, tuple(params), entry, tuple(nodes))

    def decode_model(self, raw: Any) -> AppModel | None:
        if not isinstance(raw, dict):
            self.fail("top level: expected an object")
            return None
        keys = ("app_id", "version", "callbacks")
        if not self.require_keys(raw, keys, keys, "top level"):
            return None
        app_id = self.expect_str(raw["app_id"], "app_id")
        version = self.expect_str(raw["version"], "version")
        cbs_raw = raw["callbacks"]
        if not isinstance(cbs_raw, list):
            self.fail("callbacks: expected a list")
            return None
        callbacks = []
        for i, cb in enumerate(cbs_raw):
            decoded = self.decode_callback(cb, f"callbacks[{i}]")
            if decoded is None:
                return None
            callbacks.append(decoded)
        if app_id is None or version is None:
            return None
        return AppModel(app_id, version, tuple(callbacks))


# --------------------------------------------------------------------------
# Semantic validation over constructed models
# --------------------------------------------------------------------------

def validate_app_model(model: AppModel) -> list[str]:
    """Check every structural invariant; returns all violations (empty = valid).

    Applies equally to parsed documents and programmatically built models, so
    instrumenter outputs can be re-checked.
    """
    violations: list[str] = []
    seen_names: set[str] = set()
    for cb in model.callbacks:
        if cb.name in seen_names:
            violations.append(f"duplicate callback name {cb.name!r}")
        seen_names.add(cb.name)
        violations.extend(_validate_callback(cb))
    return violations


def _validate_callback(cb: Callback) -> list[str]:
    where = f"callback {cb.name!r}"
    violations: list[str] = []
    ids: set[str] = set()
    for node in cb.nodes:
        if node.id in ids:
            violations.append(f"{where}: duplicate node id {node.id!r}")
        ids.add(node.id)
    seen_params: set[str] = set()
    for p in cb.params:
        if p in seen_params:
            violations.append(f"{where}: duplicate param {p!r}")
        seen_params.add(p)
    declared = set(cb.params)

    if cb.entry not in ids:
        violations.append(f"{where}: entry {cb.entry!r} names a missing node")

    exits = [n.id for n in cb.nodes if isinstance(n.op, ExitOp)]
    if len(exits) != 1:
        violations.append(
            f"{where}: expected exactly one exit node, found {len(exits)}"
        )

    for node in cb.nodes:
        nwhere = f"{where}, node {node.id!r}"
        for label, target in (("next", node.next), ("then", node.then), ("else", node.else_)):
            if target is not None and target not in ids:
                violations.append(f"{nwhere}: {label} targets missing node {target!r}")
        op = node.op
        if isinstance(op, BranchOp):
            if op.var not in declared:
                violations.append(f"{nwhere}: branch references undeclared variable {op.var!r}")
        elif isinstance(op, UiUpdateOp):
            if op.value.kind == "var" and op.value.value not in declared:
                violations.append(f"{nwhere}: value references undeclared variable {op.value.value!r}")
        elif isinstance(op, NetRequestOp):
            for var in op.url.referenced_vars():
                if var not in declared:
                    violations.append(f"{nwhere}: url references undeclared variable {var!r}")
            if not op.url.parts:
                violations.append(f"{nwhere}: url must have at least one part")

    # exit must be reachable from entry
    if cb.entry in ids and len(exits) == 1:
        node_map = cb.node_map()
        reached: set[str] = set()
        frontier = [cb.entry]
        while frontier:
            current = frontier.pop()
            if current in reached:
                continue
            reached.add(current)
            for succ in node_map[current].successors():
                if succ in node_map and succ not in reached:
                    frontier.append(succ)
        if exits[0] not in reached:
            violations.append(f"{where}: exit node {exits[0]!r} unreachable from entry")
    return violations


def parse_app_model(text: str) -> AppModel:
    """Parse and fully validate an app-model document.

    Raises ModelSyntaxError for malformed JSON (with position) and
    ModelValidationError listing every violated invariant otherwise.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    decoder = _Decoder()
    model = decoder.decode_model(raw)
    if model is None:
        raise ModelValidationError(decoder.errors)
    violations = decoder.errors + validate_app_model(model)
    if violations:
        raise ModelValidationError(violations)
    return model


# --------------------------------------------------------------------------
# Canonical serialization and hashing
# --------------------------------------------------------------------------

def _url_to_json(url: UrlExpr) -> list[dict[str, str]]:
    return [{kind: text} for kind, text in url.parts]


def _value_to_json(value: ValueExpr) -> dict[str, str]:
    return {value.kind: value.value}


def _op_to_json(op: Op) -> dict[str, Any]:
    if isinstance(op, ComputeOp):
        return {"kind": "compute", "cost_ms": op.cost_ms}
    if isinstance(op, BranchOp):
        return {"kind": "branch", "var": op.var, "cmp": op.cmp, "const": op.const}
    if isinstance(op, UiUpdateOp):
        return {"kind": "ui_update", "widget": op.widget, "value": _value_to_json(op.value)}
    if isinstance(op, NetRequestOp):
        return {
            "kind": "net_request",
            "url": _url_to_json(op.url),
            "resp_bytes": op.resp_bytes,
            "cacheable": op.cacheable,
        }
    if isinstance(op, PrefetchOp):
        return {"kind": "prefetch", "url": op.url}
    if isinstance(op, LogOp):
        return {"kind": "log", "tag": op.tag}
    if isinstance(op, SendIntentOp):
        return {"kind": "send_intent", "action": op.action}
    return {"kind": "exit"}


def node_to_json_dict(node: Node) -> dict[str, Any]:
    doc: dict[str, Any] = {"id": node.id, "op": _op_to_json(node.op)}
    if isinstance(node.op, BranchOp):
        doc["then"] = node.then
        doc["else"] = node.else_
    elif not isinstance(node.op, ExitOp):
        doc["next"] = node.next
    return doc


def callback_to_json_dict(cb: Callback) -> dict[str, Any]:
    return {
        "name": cb.name,
        "params": list(cb.params),
        "entry": cb.entry,
        "nodes": [node_to_json_dict(n) for n in cb.nodes],
    }


def model_to_json_dict(model: AppModel) -> dict[str, Any]:
    return {
        "app_id": model.app_id,
        "version": model.version,
        "callbacks": [callback_to_json_dict(cb) for cb in model.callbacks],
    }


def canonical_json(doc: Any) -> str:
    """The one JSON rendering used for every canonical artifact: two-space
    indent, ASCII-only, insertion key order, trailing newline."""
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def serialize_app_model(model: AppModel) -> str:
    return canonical_json(model_to_json_dict(model))


def serialize_callback(cb: Callback) -> str:
    return canonical_json(callback_to_json_dict(cb))


def canonical_hash(cb: Callback) -> str:
    """Digest of a callback's canonical serialization: the modified/unchanged
    detector for diffing. Invariant under node listing order, sensitive to any
    op, edge, or parameter change."""
    return fnv1a64_hex(serialize_callback(cb).encode("utf-8"))


def model_hash(model: AppModel) -> str:
    """Digest of the whole model's canonical bytes (content addressing)."""
    return fnv1a64_hex(serialize_app_model(model).encode("utf-8"))
