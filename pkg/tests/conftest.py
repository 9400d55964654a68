import numpy as np
import pytest

from eigenlab import ensembles


@pytest.fixture(scope="session")
def sym5():
    """1,000 random 5x5 symmetric matrices."""
    cfg = ensembles.EnsembleConfig("semicircle", 5, seed=1234)
    return ensembles.sample_batch(cfg, range(1000))


@pytest.fixture(scope="session")
def gen5():
    cfg = ensembles.EnsembleConfig("wigner_uniform_general", 5, seed=99)
    return ensembles.sample_batch(cfg, range(1000))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary ------------------------------------------------------
# tests/test_acceptance.py appends one (criterion, passed, detail) line per
# criterion; they are printed together at the end of the run.

ACCEPTANCE = []


@pytest.fixture
def criterion():
    def record(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
