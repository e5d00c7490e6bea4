from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from longprm.core import AnnotatedTrace, read_dataset

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

GOLDEN_PATH = (Path(__file__).resolve().parent.parent
               / "src" / "longprm" / "assets" / "golden_trace.jsonl")

# Local-event pattern of the golden fixture (see scripts/make_golden_fixture.py):
# four sound steps, a fresh slip, two continuations on it, a re-check that
# repeats the mistake, a correction, and a sound finish.
GOLDEN_LABELS = (1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1)


@pytest.fixture(scope="session")
def golden() -> AnnotatedTrace:
    return read_dataset(GOLDEN_PATH)[0]


@pytest.fixture()
def golden_path() -> Path:
    return GOLDEN_PATH
