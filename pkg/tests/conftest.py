import numpy as np
import pytest
from hypothesis import settings

from smmkit.mixture import ComplexSmm

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_smm(gen, K, D, complex_weights=True, mean_scale=1.0, std_range=(0.5, 2.0)):
    """A random squared mixture; retried until the normalizer is usable."""
    while True:
        w = gen.uniform(-1.0, 1.0, K)
        if complex_weights:
            w = w + 1j * gen.uniform(-1.0, 1.0, K)
        try:
            return ComplexSmm(w, gen.normal(0.0, mean_scale, (K, D)), gen.uniform(*std_range, (K, D)))
        except ValueError:
            continue


def ring_model():
    return ComplexSmm([1.0, -0.46], np.zeros((2, 2)), [[3.0, 3.0], [2.0, 2.0]])


@pytest.fixture
def ring():
    return ring_model()


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key:>2}: {line}")
