"""App-model analysis pipelines, a differential-testing testbed over a
deterministic simulator, a test-scripting language, and a content-addressed
artifact repository with a REST service."""

from __future__ import annotations

__version__ = "0.1.0"

from . import techniques as _techniques  # registers the built-in components
from .compare import aggregate_report, compare_traces
from .diffing import CallbackDiff, diff_apps
from .digest import fnv1a64, fnv1a64_hex
from .dsl import format_script, parse_script
from .executor import DeviceProfile, RunTrace, execute_callback, run_unit_test
from .model import (
    AppModel,
    Callback,
    canonical_hash,
    model_hash,
    parse_app_model,
    serialize_app_model,
)
from .pipeline import TechniqueManifest, compose_pipeline, load_manifest, run_pipeline
from .runner import run_difftest, run_script
from .testgen import GenConfig, enumerate_paths, generate_tests, solve_path_condition

__all__ = [
    "__version__",
    "AppModel",
    "Callback",
    "CallbackDiff",
    "DeviceProfile",
    "GenConfig",
    "RunTrace",
    "TechniqueManifest",
    "aggregate_report",
    "canonical_hash",
    "compare_traces",
    "compose_pipeline",
    "diff_apps",
    "enumerate_paths",
    "execute_callback",
    "fnv1a64",
    "fnv1a64_hex",
    "format_script",
    "generate_tests",
    "load_manifest",
    "model_hash",
    "parse_app_model",
    "parse_script",
    "run_difftest",
    "run_pipeline",
    "run_script",
    "run_unit_test",
    "serialize_app_model",
    "solve_path_condition",
]
