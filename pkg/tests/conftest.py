import numpy as np
import pytest

from ksm.kernels import GaussianKernel, HomogeneousPolynomialKernel, LinearKernel, PowerCosineKernel

ALL_KERNELS = [
    LinearKernel(),
    GaussianKernel(0.3),
    PowerCosineKernel(1),
    PowerCosineKernel(2),
    PowerCosineKernel(3),
    HomogeneousPolynomialKernel(2),
    HomogeneousPolynomialKernel(3),
]

FOUR_KERNELS = [LinearKernel(), GaussianKernel(0.3), PowerCosineKernel(3), HomogeneousPolynomialKernel(2)]


def kernel_id(k):
    return repr(k)


def central_diff(fun, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
