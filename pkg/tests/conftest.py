import json
from pathlib import Path
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kdsteal.config import PipelineConfig
from kdsteal.data import SyntheticSpec, gen_dataset
from kdsteal.pipeline import run_pipeline

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA_DIR = Path(__file__).parent / "data"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(n_classes=4, dim=6, train_per_class=60, test_per_class=30, modes=2, seed=3)
    return gen_dataset(spec)


@pytest.fixture(scope="session")
def baseline():
    return json.loads((DATA_DIR / "reference_baseline.json").read_text())


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The reference blobs-10 experiment, 5 seeds, default config. Runs once."""
    out = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    report = run_pipeline(PipelineConfig(), out)
    return report, time.perf_counter() - t0, out


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
