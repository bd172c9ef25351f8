import sys
import numpy as np
import pytest

from otafl.model import LocalDataset


def random_dataset(rng, n=12, num_features=4, num_classes=3):
    x = rng.standard_normal((n, num_features))
    y = rng.integers(0, num_classes, size=n)
    return LocalDataset(x, y, num_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy():
    """Three-sample, two-class set used by several hand-checked examples."""
    x = np.array([[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]])
    y = np.array([0, 1, 1])
    return LocalDataset(x, y, 2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
