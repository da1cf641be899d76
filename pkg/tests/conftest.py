import numpy as np
import pytest

from surropt.data import Dataset


def make_ds(X, y, groups=None, binary_mask=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return Dataset(X, np.asarray(y), None if groups is None else np.asarray(groups), binary_mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def separable_2d():
    """Linearly separable 2-D data with both classes reasonably sized."""
    r = np.random.default_rng(3)
    pos = r.normal([2.0, 2.0], 0.4, size=(40, 2))
    neg = r.normal([-2.0, -2.0], 0.4, size=(60, 2))
    X = np.vstack([pos, neg])
    y = np.r_[np.ones(40), -np.ones(60)]
    return make_ds(X, y)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record a criterion outcome; the line is printed and appended to the terminal summary."""

    def record(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
