import numpy as np
import pytest

from logdetmlp.cost import Dataset
from logdetmlp.model import MlpSpec, forward_batch, random_init

GAMMA0 = np.array([[5.0, 4.0], [4.0, 5.0]])


def make_regression(spec, n, seed, gamma=None, weight_range=1.0):
    """Random network, standard normal inputs, Gaussian noise with covariance ``gamma``."""
    rng = np.random.default_rng(seed)
    truth = random_init(spec, weight_range, rng)
    inputs = rng.standard_normal((n, spec.input_dim))
    targets = forward_batch(spec, truth, inputs)
    if gamma is not None:
        targets = targets + rng.standard_normal((n, spec.output_dim)) @ np.linalg.cholesky(gamma).T
    return Dataset(inputs, targets), truth


@pytest.fixture
def spec232():
    return MlpSpec(2, 3, 2)


@pytest.fixture
def noisy232(spec232):
    data, truth = make_regression(spec232, 50, 11, gamma=np.array([[2.0, 0.7], [0.7, 1.0]]))
    point = truth + 0.3 * np.random.default_rng(12).standard_normal(spec232.param_count)
    return spec232, data, point


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
