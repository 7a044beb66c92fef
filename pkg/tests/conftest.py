import numpy as np
import pytest
from hypothesis import settings

from cleansweep.core import Dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_dataset(X, y, mask=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = [f"f{j}" for j in range(X.shape[1])]
    return Dataset(X, np.asarray(y), names, np.arange(len(X)), mask)


@pytest.fixture
def blobs():
    """Two well separated Gaussian classes, 200 rows, 5 features."""
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 5))
    y = np.repeat([0, 1], 100)
    X[y == 1, :2] += 4.0
    return make_dataset(X, y)


# acceptance criteria append (number, passed, detail) here; printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
