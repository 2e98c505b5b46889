import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lrlab.data import generate_synthetic, split, SplitPlan  # noqa: E402
from lrlab.nn import build_model, desk_spec, train_classifier  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    ds = generate_synthetic(3, 400)
    return split(ds, SplitPlan((0.5, 0.2, 0.15, 0.15), 3))


@pytest.fixture(scope="session")
def small_model(small_data):
    """Desk model briefly trained on a 200-sample split; accurate enough to attack."""
    train = small_data[0]
    m = build_model(desk_spec(), (1, 28, 28), 4, seed=5)
    m, _ = train_classifier(m, train, epochs=4, batch=16, lr=2e-3, seed=5)
    return m


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
