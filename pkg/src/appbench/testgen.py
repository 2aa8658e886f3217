"""Path-sensitive test generation over changed callbacks.

Enumerate every entry-to-exit path (bounded loop unrolling, depth-first, then
before else), turn each path's branch outcomes into interval constraints,
solve for a witness input, and collect the feasible paths as test cases.
Infeasible paths are recorded, not errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .diffing import CallbackDiff
from .digest import fnv1a64_hex
from .intervals import Atom, solve
from .model import AppModel, BranchOp, Callback, ExitOp, Node


class PathExplosion(Exception):
    """More paths than the configured ceiling; names the callback."""

    def __init__(self, callback: str, max_paths: int):
        super().__init__(
            f"callback {callback!r} has more than {max_paths} bounded paths"
        )
        self.callback = callback
        self.max_paths = max_paths


@dataclass(frozen=True)
class Path:
    """One bounded entry-to-exit walk. The id digests the node ids joined by
    "/" so executed traces can be matched back to generated paths."""

    callback: str
    nodes: tuple[str, ...]
    path_id: str

    @classmethod
    def of(cls, callback: str, nodes: tuple[str, ...]) -> "Path":
        return cls(callback, nodes, path_id_of(nodes))


def path_id_of(node_ids: tuple[str, ...] | list[str]) -> str:
    return fnv1a64_hex("/".join(node_ids).encode("utf-8"))


def _successor_ids(node: Node) -> list[str]:
    """Deterministic successor order; a branch whose arms join immediately
    counts as one successor (the two walks would be the same path)."""
    if isinstance(node.op, ExitOp):
        return []
    if isinstance(node.op, BranchOp):
        if node.then == node.else_:
            return [node.then]  # type: ignore[list-item]
        return [node.then, node.else_]  # type: ignore[list-item]
    return [node.next]  # type: ignore[list-item]


def _back_edges(cb: Callback) -> set[tuple[str, str]]:
    """Edges that close a cycle, found by DFS from entry (gray-target rule)."""
    node_map = cb.node_map()
    white, gray, black = 0, 1, 2
    color: dict[str, int] = {}
    back: set[tuple[str, str]] = set()
    stack: list[tuple[str, list[str], int]] = [
        (cb.entry, _successor_ids(node_map[cb.entry]), 0)
    ]
    color[cb.entry] = gray
    while stack:
        u, children, i = stack.pop()
        advanced = False
        while i < len(children):
            v = children[i]
            i += 1
            if color.get(v, white) == gray:
                back.add((u, v))
            elif color.get(v, white) == white:
                stack.append((u, children, i))
                color[v] = gray
                stack.append((v, _successor_ids(node_map[v]), 0))
                advanced = True
                break
        if not advanced:
            color[u] = black
    return back


def enumerate_paths(
    cb: Callback, loop_bound: int = 2, max_paths: int = 256
) -> list[Path]:
    """All entry-to-exit paths traversing no back edge more than loop_bound
    times, in depth-first order with then explored before else."""
    node_map = cb.node_map()
    back = _back_edges(cb)
    paths: list[Path] = []
    # Each frame is (node ids so far, per-back-edge traversal counts).
    frontier: list[tuple[list[str], dict[tuple[str, str], int]]] = [([cb.entry], {})]
    while frontier:
        walked, counts = frontier.pop()
        node = node_map[walked[-1]]
        if isinstance(node.op, ExitOp):
            if len(paths) >= max_paths:
                raise PathExplosion(cb.name, max_paths)
            paths.append(Path.of(cb.name, tuple(walked)))
            continue
        for succ in reversed(_successor_ids(node)):
            edge = (node.id, succ)
            if edge in back:
                taken = counts.get(edge, 0)
                if taken >= loop_bound:
                    continue
                next_counts = dict(counts)
                next_counts[edge] = taken + 1
            else:
                next_counts = counts
            frontier.append((walked + [succ], next_counts))
    return paths


def path_atoms(path: Path, cb: Callback) -> list[Atom]:
    """Branch constraints the path imposes: taking then asserts the atom,
    taking else asserts its negation; joined arms assert nothing."""
    node_map = cb.node_map()
    atoms: list[Atom] = []
    for u_id, v_id in zip(path.nodes, path.nodes[1:]):
        node = node_map[u_id]
        if isinstance(node.op, BranchOp) and node.then != node.else_:
            atom = Atom(node.op.var, node.op.cmp, node.op.const)
            atoms.append(atom if v_id == node.then else atom.negated())
    return atoms


def solve_path_condition(
    path: Path, cb: Callback, domain: tuple[int, int] | None = None
) -> dict[str, int] | None:
    """Witness inputs executing exactly this path, or None when infeasible."""
    return solve(path_atoms(path, cb), list(cb.params), domain=domain)


@dataclass(frozen=True)
class GenConfig:
    loop_bound: int = 2
    max_paths: int = 256
    # Hard restriction of every input's domain, applied before any constraint.
    # None = full signed-64-bit range with the solver's soft witness clamp.
    domain: tuple[int, int] | None = None


@dataclass(frozen=True)
class TestCase:
    callback: str
    inputs: dict[str, int]
    source: str  # "original" | "instrumented-only"
    expected_path_id: str

    @property
    def test_id(self) -> str:
        return f"{self.callback}:{self.expected_path_id}"


@dataclass(frozen=True)
class TestSuite:
    generated: tuple[TestCase, ...]
    skipped_infeasible: tuple[tuple[str, str], ...]  # (path_id, reason)
    loop_bound: int
    max_paths: int


def generate_tests(
    original: AppModel,
    instrumented: AppModel,
    diff: CallbackDiff,
    config: GenConfig = GenConfig(),
) -> TestSuite:
    """One test case per feasible path of each changed callback.

    Modified callbacks are enumerated on the original (it defines expected
    behavior; the same inputs then replay on both sides); added callbacks only
    exist on the instrumented side. Unchanged and removed callbacks generate
    nothing.
    """
    generated: list[TestCase] = []
    skipped: list[tuple[str, str]] = []

    def gen_for(cb: Callback, source: str) -> None:
        for path in enumerate_paths(cb, config.loop_bound, config.max_paths):
            inputs = solve_path_condition(path, cb, domain=config.domain)
            if inputs is None:
                skipped.append((path.path_id, "infeasible path condition"))
            else:
                generated.append(TestCase(cb.name, inputs, source, path.path_id))

    for name in sorted(diff.modified):
        gen_for(original.callback(name), "original")
    for name in sorted(diff.added):
        gen_for(instrumented.callback(name), "instrumented-only")
    return TestSuite(tuple(generated), tuple(skipped), config.loop_bound, config.max_paths)


def suite_to_json_dict(suite: TestSuite) -> dict[str, Any]:
    return {
        "loop_bound": suite.loop_bound,
        "max_paths": suite.max_paths,
        "generated": [
            {
                "callback": t.callback,
                "inputs": {k: t.inputs[k] for k in sorted(t.inputs)},
                "source": t.source,
                "expected_path_id": t.expected_path_id,
            }
            for t in suite.generated
        ],
        "skipped_infeasible": [
            {"path_id": pid, "reason": reason} for pid, reason in suite.skipped_infeasible
        ],
    }
