import numpy as np
import pytest

from boostsi.baselearner import linear_learner


def centered_linear_data(n, p, seed, beta=None, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X -= X.mean(axis=0)
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    y = X[:, : beta.size] @ beta + noise * rng.standard_normal(n)
    return X, y - y.mean()


def linear_learners(X):
    return [linear_learner(j, X[:, j]) for j in range(X.shape[1])]


@pytest.fixture
def small_linear():
    X, y = centered_linear_data(30, 5, 11, beta=[2.0, -1.0])
    return X, y, linear_learners(X)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
