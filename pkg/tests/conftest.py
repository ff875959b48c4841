import numpy as np
import pytest

from resecdf.regression import fit_linear
from resecdf.sampling import ConvenienceSample, ProbabilitySample

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_instance(rng, n_a=20, n_b=30, p=2, pop_size=400):
    """Random A/B pair with a fitted linear model; used across test modules."""
    xa = rng.normal(size=(n_a, p))
    xb = rng.normal(size=(n_b, p))
    yb = 1.0 + xb @ np.arange(1, p + 1) + rng.normal(size=n_b)
    a = ProbabilitySample(xa, rng.uniform(1, 30, n_a), pop_size, design="external")
    b = ConvenienceSample(xb, yb)
    return a, b, fit_linear(xb, yb)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
