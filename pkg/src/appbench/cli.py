"""Command-line entry point.

Machine-readable artifacts go to files and are byte-identical to the library
serializations; standard output carries a short human summary. Exit codes:
0 success, 1 verdict failure (a difftest or unit test failed), 2 usage or
input parse error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from .compare import report_to_json_text
from .diffing import diff_apps, diff_to_json_dict
from .dsl import ENV_INT_KEYS, ENV_RATIONAL_KEYS, ScriptError, format_script, parse_script
from .executor import DeviceProfile, UnitTestError, run_unit_test
from .model import (
    ModelSyntaxError,
    ModelValidationError,
    canonical_hash,
    canonical_json,
    model_hash,
    parse_app_model,
    serialize_app_model,
)
from .pipeline import (
    CompositionError,
    ManifestError,
    StageError,
    compose_pipeline,
    load_manifest,
    run_pipeline,
)
from .runner import ScriptRunError, run_difftest, run_script
from .techniques import TechniqueError
from .testgen import GenConfig, PathExplosion, generate_tests, suite_to_json_dict

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    ModelSyntaxError,
    ModelValidationError,
    ManifestError,
    CompositionError,
    StageError,
    ScriptError,
    ScriptRunError,
    UnitTestError,
    TechniqueError,
    PathExplosion,
    FileNotFoundError,
    json.JSONDecodeError,
)


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _load_model(path: str):
    return parse_app_model(_read(path))


def _env_from_args(args: argparse.Namespace) -> dict:
    env = {}
    for key in ENV_INT_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            env[key] = value
    for key in ENV_RATIONAL_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            env[key] = Fraction(value)
    return env


def _add_env_flags(parser: argparse.ArgumentParser) -> None:
    for key in ENV_INT_KEYS:
        parser.add_argument(f"--{key}", type=int, metavar="N")
    for key in ENV_RATIONAL_KEYS:
        parser.add_argument(f"--{key}", type=str, metavar="R")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    print(f"ok: {model.app_id} v{model.version}, {len(model.callbacks)} callback(s)")
    return EXIT_OK


def cmd_hash(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    print(f"{model_hash(model)}  {model.app_id}")
    for cb in model.callbacks:
        print(f"{canonical_hash(cb)}  {cb.name}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    manifest = load_manifest(_read(args.manifest))
    model = _load_model(args.model)
    pipeline = compose_pipeline(manifest)
    artifacts = run_pipeline(pipeline, model)
    produced = artifacts.instrumented_model or model
    Path(args.out).write_text(serialize_app_model(produced), encoding="utf-8")
    changed = artifacts.instrumented_model is not None
    print(f"{manifest.technique_id}: {len(pipeline.stages)} stage(s) ran")
    for name, fact_set in artifacts.facts.items():
        size = len(fact_set.data) if isinstance(fact_set.data, list) else 1
        print(f"  facts {name} ({fact_set.impl}): {size} item(s)")
    if artifacts.os_policy is not None:
        blocked = ", ".join(sorted(artifacts.os_policy.blocked_intent_actions)) or "-"
        print(f"  os policy blocks: {blocked}")
    print(f"wrote {'instrumented' if changed else 'unchanged'} model to {args.out}")
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    diff = diff_apps(_load_model(args.original), _load_model(args.instrumented))
    sys.stdout.write(canonical_json(diff_to_json_dict(diff)))
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    original = _load_model(args.original)
    instrumented = _load_model(args.instrumented)
    diff = diff_apps(original, instrumented)
    config = GenConfig(loop_bound=args.bound, max_paths=args.max_paths)
    suite = generate_tests(original, instrumented, diff, config)
    sys.stdout.write(canonical_json(suite_to_json_dict(suite)))
    return EXIT_OK


def cmd_difftest(args: argparse.Namespace) -> int:
    original = _load_model(args.original)
    instrumented = _load_model(args.instrumented)
    env = _env_from_args(args)
    profile = DeviceProfile.from_env(
        {k: v for k, v in env.items()
         if k in DeviceProfile.INT_FIELDS + DeviceProfile.RATIONAL_FIELDS}
    )
    config = GenConfig(
        loop_bound=int(env.get("loop_bound", 2)),
        max_paths=int(env.get("max_paths", 256)),
    )
    tolerance = Fraction(env.get("perf_tolerance", 0))
    diff, report = run_difftest(
        original, instrumented, profile=profile, config=config,
        perf_tolerance=tolerance,
    )
    Path(args.out).write_text(report_to_json_text(report), encoding="utf-8")
    if diff.removed:
        print(f"warning: callbacks removed by instrumentation: {', '.join(diff.removed)}")
    print(
        f"modified={len(diff.modified)} added={len(diff.added)} "
        f"tests={len(report.suite.generated)} "
        f"passes={report.passes}/{report.compared} accuracy={float(report.accuracy)}"
    )
    print(f"report written to {args.out} (digest {report.digest})")
    return EXIT_OK if report.all_passed() else EXIT_VERDICT


def cmd_unittest(args: argparse.Namespace) -> int:
    manifest = load_manifest(_read(args.manifest))
    doc = json.loads(_read(args.utest))
    base = Path(args.utest).parent

    def load_input(ref: str) -> str:
        path = base / ref
        if not path.is_file():
            raise UnitTestError(f"missing input file: {ref}")
        return path.read_text(encoding="utf-8")

    result = run_unit_test(manifest, doc, load_input)
    detail = f" ({result.reason})" if result.reason else ""
    print(f"{result.test_id}: {result.outcome}{detail} "
          f"[{result.nfp['execution_time_ms']} ms]")
    return EXIT_OK if result.passed() else EXIT_VERDICT


def cmd_script(args: argparse.Namespace) -> int:
    script = parse_script(_read(args.script))
    workspace = Path(args.workspace)
    if not workspace.is_dir():
        raise ScriptRunError(f"workspace is not a directory: {workspace}")
    resolve_pool = None
    if args.repo:
        from .repo import Repository

        resolve_pool = Repository(Path(args.repo)).payload_text
    report = run_script(script, workspace, resolve_pool=resolve_pool, out_dir=workspace)
    summary = report.body["summary"]
    print(
        f"statements={len(report.body['statements'])} "
        f"unit_tests={summary['unit_tests']} difftests={summary['difftests']} "
        f"ok={summary['ok']}"
    )
    print(f"report written to {workspace / 'report.json'} (digest {report.digest})")
    return EXIT_OK if report.ok() else EXIT_VERDICT


def cmd_fmt(args: argparse.Namespace) -> int:
    sys.stdout.write(format_script(parse_script(_read(args.script))))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .repo import Repository
    from .service import create_app

    app = create_app(Repository(Path(args.repo)))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_fixtures(args: argparse.Namespace) -> int:
    from importlib import resources

    target = Path(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in resources.files("appbench").joinpath("fixtures").iterdir():
        if entry.is_file() and not entry.name.startswith("__"):
            (target / entry.name).write_text(entry.read_text(encoding="utf-8"),
                                             encoding="utf-8")
            written.append(entry.name)
    for name in sorted(written):
        print(f"wrote {target / name}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="appbench",
        description="App-model analysis pipelines, differential testing, and "
        "a reproducible artifact repository.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an app-model document")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("hash", help="content digests of a model and its callbacks")
    p.add_argument("model")
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("pipeline", help="run a technique pipeline over a model")
    p.add_argument("manifest")
    p.add_argument("model")
    p.add_argument("-o", "--out", required=True, help="output model path")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("diff", help="diff two models at callback granularity")
    p.add_argument("original")
    p.add_argument("instrumented")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("gen", help="generate path-sensitive tests for the diff")
    p.add_argument("original")
    p.add_argument("instrumented")
    p.add_argument("--bound", type=int, default=2, help="loop bound (default 2)")
    p.add_argument("--max-paths", type=int, default=256, dest="max_paths")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("difftest", help="full differential test of two models")
    p.add_argument("original")
    p.add_argument("instrumented")
    p.add_argument("-o", "--out", required=True, help="report output path")
    _add_env_flags(p)
    p.set_defaults(func=cmd_difftest)

    p = sub.add_parser("unittest", help="run a technique unit test")
    p.add_argument("utest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_unittest)

    p = sub.add_parser("script", help="run a test script in a workspace")
    p.add_argument("script")
    p.add_argument("-w", "--workspace", required=True)
    p.add_argument("--repo", help="repository directory for pool: sources")
    p.set_defaults(func=cmd_script)

    p = sub.add_parser("fmt", help="canonically format a script to stdout")
    p.add_argument("script")
    p.set_defaults(func=cmd_fmt)

    p = sub.add_parser("serve", help="serve a repository over HTTP")
    p.add_argument("--repo", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fixtures", help="copy the bundled example fixtures to a directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything unexpected is an internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
