from __future__ import annotations

import shutil
from pathlib import Path

import pytest
from hypothesis import settings

import appbench
from appbench import testgen

settings.register_profile("suite", derandomize=True, max_examples=100, deadline=None)
settings.load_profile("suite")

# suite dataclasses, not test classes — keep pytest from trying to collect them
testgen.TestCase.__test__ = False
testgen.TestSuite.__test__ = False

FIXTURES = Path(appbench.__file__).parent / "fixtures"

FIXTURE_NAMES = (
    "shopping.app.json",
    "shopping_fault.app.json",
    "prefetch.manifest.json",
    "logger.manifest.json",
    "fault.manifest.json",
    "prefetch_shopping.utest.json",
    "quickstart.dscr",
)


@pytest.fixture(scope="session")
def fixdir() -> Path:
    return FIXTURES


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    """A throwaway directory holding a copy of every bundled fixture."""
    for name in FIXTURE_NAMES:
        shutil.copy(FIXTURES / name, tmp_path / name)
    return tmp_path
