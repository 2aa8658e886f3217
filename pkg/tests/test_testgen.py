from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appbench.diffing import CallbackDiff, diff_apps
from appbench.executor import execute_callback
from appbench.model import (
    AppModel,
    BranchOp,
    Callback,
    ComputeOp,
    ExitOp,
    Node,
    parse_app_model,
)
from appbench.techniques import fault_instrumenter, prefetch_instrumenter
from appbench.techniques import PrefetchPoint
from appbench.testgen import (
    GenConfig,
    PathExplosion,
    enumerate_paths,
    generate_tests,
    path_id_of,
    solve_path_condition,
    suite_to_json_dict,
)
from modelgen import random_callback
from test_digest import ref_fnv1a64


def brute_paths_dag(cb: Callback) -> set[tuple[str, ...]]:
    """Exhaustive entry-to-exit enumeration for loop-free callbacks — an
    oracle needing no bound or back-edge logic at all."""
    node_map = cb.node_map()
    out: set[tuple[str, ...]] = set()

    def walk(node_id: str, prefix: tuple[str, ...]):
        node = node_map[node_id]
        prefix = prefix + (node_id,)
        succs = node.successors()
        if not succs:
            out.add(prefix)
            return
        for succ in dict.fromkeys(succs):  # then == else collapses to one
            walk(succ, prefix)

    walk(cb.entry, ())
    return out


def _loop_callback() -> Callback:
    # n0 guards a loop whose body n1 jumps back to it
    return Callback(
        "loop#cb",
        ("x",),
        "n0",
        (
            Node("n0", BranchOp("x", "<", 3), then="n1", else_="n2"),
            Node("n1", ComputeOp(1), next="n0"),
            Node("n2", ExitOp()),
        ),
    )


def test_path_id_is_digest_of_joined_node_ids():
    assert path_id_of(("n0", "n1")) == format(ref_fnv1a64(b"n0/n1"), "016x")
    assert path_id_of(["a"]) == format(ref_fnv1a64(b"a"), "016x")


def test_shopping_paths_then_before_else(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    paths = enumerate_paths(model.callback("onClick#buy"))
    assert [p.nodes for p in paths] == [
        ("n0", "n1", "n2", "n4", "n5"),
        ("n0", "n1", "n3", "n4", "n5"),
    ]


def test_loop_paths_bounded_by_back_edge_count():
    cb = _loop_callback()
    # hand-derived: 0, 1, and 2 traversals of the back edge n1 -> n0
    assert [p.nodes for p in enumerate_paths(cb, loop_bound=2)] == [
        ("n0", "n1", "n0", "n1", "n0", "n2"),
        ("n0", "n1", "n0", "n2"),
        ("n0", "n2"),
    ]
    assert [p.nodes for p in enumerate_paths(cb, loop_bound=0)] == [("n0", "n2")]


def test_loop_iteration_paths_are_infeasible_with_immutable_inputs():
    # taking the loop once requires x < 3 and then x >= 3: contradiction
    cb = _loop_callback()
    paths = enumerate_paths(cb, loop_bound=2)
    witnesses = [solve_path_condition(p, cb) for p in paths]
    feasible = [w for w in witnesses if w is not None]
    assert feasible == [{"x": 3}]  # only the zero-iteration path


def test_self_loop_counts_its_own_back_edge():
    cb = Callback(
        "self#cb",
        ("x",),
        "n0",
        (
            Node("n0", BranchOp("x", ">", 0), then="n0", else_="n1"),
            Node("n1", ExitOp()),
        ),
    )
    paths = enumerate_paths(cb, loop_bound=2)
    assert [p.nodes for p in paths] == [
        ("n0", "n0", "n0", "n1"),
        ("n0", "n0", "n1"),
        ("n0", "n1"),
    ]


def test_branch_with_coinciding_targets_yields_one_unconstrained_path():
    cb = Callback(
        "same#cb",
        ("x",),
        "n0",
        (
            Node("n0", BranchOp("x", "<", 5), then="n1", else_="n1"),
            Node("n1", ExitOp()),
        ),
    )
    paths = enumerate_paths(cb)
    assert [p.nodes for p in paths] == [("n0", "n1")]
    assert solve_path_condition(paths[0], cb) == {"x": 0}


def test_enumeration_is_deterministic():
    rng = random.Random(7)
    cb = random_callback(rng, "r#cb", max_branches=4)
    assert enumerate_paths(cb) == enumerate_paths(cb)


def test_path_explosion_raises_beyond_cap():
    # 9 diamonds in sequence: 2^9 = 512 distinct paths
    n = 9
    nodes = []
    for i in range(n):
        nodes.append(Node(f"b{i}", BranchOp("x", "<", i), then=f"t{i}", else_=f"e{i}"))
        nodes.append(Node(f"t{i}", ComputeOp(0), next=f"b{i + 1}" if i + 1 < n else "end"))
        nodes.append(Node(f"e{i}", ComputeOp(1), next=f"b{i + 1}" if i + 1 < n else "end"))
    nodes.append(Node("end", ExitOp()))
    cb = Callback("wide#cb", ("x",), "b0", tuple(nodes))
    with pytest.raises(PathExplosion) as err:
        enumerate_paths(cb, max_paths=256)
    assert err.value.callback == "wide#cb"
    assert len(enumerate_paths(cb, max_paths=512)) == 512


def test_generate_tests_for_shopping_fixture(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    instrumented = prefetch_instrumenter(
        model, [PrefetchPoint("onClick#buy", "https://api/a")]
    )
    suite = generate_tests(model, instrumented, diff_apps(model, instrumented))
    # frozen: one branch, both sides feasible, clamped minima as witnesses
    assert [t.inputs for t in suite.generated] == [{"x": -1000}, {"x": 10}]
    assert all(t.callback == "onClick#buy" for t in suite.generated)
    assert all(t.source == "original" for t in suite.generated)
    assert suite.skipped_infeasible == ()
    assert suite.loop_bound == 2 and suite.max_paths == 256


def test_unchanged_callbacks_generate_nothing(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    suite = generate_tests(model, model, diff_apps(model, model))
    assert suite.generated == () and suite.skipped_infeasible == ()


def test_expected_path_comes_from_the_original_side(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    mutated = fault_instrumenter(model, "onClick#buy", "label1")
    suite = generate_tests(model, mutated, diff_apps(model, mutated))
    for test in suite.generated:
        trace = execute_callback(model, test.callback, test.inputs)
        assert trace.path_id == test.expected_path_id


def test_added_callbacks_enumerate_on_the_instrumented_side():
    original = AppModel("a", "1", ())
    extra = Callback(
        "new#cb", ("x",), "n0",
        (Node("n0", BranchOp("x", "<", 0), then="n1", else_="n1"), Node("n1", ExitOp())),
    )
    instrumented = AppModel("a", "1", (extra,))
    suite = generate_tests(original, instrumented, diff_apps(original, instrumented))
    assert [t.source for t in suite.generated] == ["instrumented-only"]
    assert suite.generated[0].test_id.startswith("new#cb:")


def test_infeasible_paths_are_listed():
    cb = _loop_callback()
    model = AppModel("a", "1", (cb,))
    diff = CallbackDiff(modified=("loop#cb",), added=(), removed=(), unchanged=())
    suite = generate_tests(model, model, diff)
    assert len(suite.generated) == 1
    assert len(suite.skipped_infeasible) == 2
    for path_id, reason in suite.skipped_infeasible:
        assert reason == "infeasible path condition"
        assert len(path_id) == 16


def test_generation_over_modified_callbacks_is_name_sorted():
    cbs = tuple(
        Callback(
            name, ("x",), "n0",
            (Node("n0", ComputeOp(1), next="n1"), Node("n1", ExitOp())),
        )
        for name in ("zeta#cb", "alpha#cb")
    )
    model = AppModel("a", "1", cbs)
    diff = CallbackDiff(
        modified=("zeta#cb", "alpha#cb"), added=(), removed=(), unchanged=()
    )
    suite = generate_tests(model, model, diff)
    assert [t.callback for t in suite.generated] == ["alpha#cb", "zeta#cb"]


def test_suite_json_shape(workspace):
    model = parse_app_model((workspace / "shopping.app.json").read_text())
    mutated = fault_instrumenter(model, "onClick#buy", "label1")
    doc = suite_to_json_dict(generate_tests(model, mutated, diff_apps(model, mutated)))
    assert doc["loop_bound"] == 2 and doc["max_paths"] == 256
    assert [t["inputs"] for t in doc["generated"]] == [{"x": -1000}, {"x": 10}]
    assert all(
        set(t) == {"callback", "inputs", "source", "expected_path_id"}
        for t in doc["generated"]
    )


@settings(max_examples=60)
@given(st.integers(0, 10**9))
def test_enumeration_matches_brute_force_on_random_dags(seed):
    cb = random_callback(random.Random(seed), "r#cb", max_branches=4)
    enumerated = {p.nodes for p in enumerate_paths(cb)}
    assert enumerated == brute_paths_dag(cb)


@settings(max_examples=60)
@given(st.integers(0, 10**9))
def test_generated_tests_replay_their_expected_path(seed):
    cb = random_callback(random.Random(seed), "r#cb", max_branches=4)
    model = AppModel("a", "1", (cb,))
    diff = CallbackDiff(modified=(cb.name,), added=(), removed=(), unchanged=())
    suite = generate_tests(model, model, diff)
    for test in suite.generated:
        trace = execute_callback(model, test.callback, test.inputs)
        assert trace.is_normal()
        assert trace.path_id == test.expected_path_id
