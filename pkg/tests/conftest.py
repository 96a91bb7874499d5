import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pgreen import catalog, certify, edge_shift, shift_and_flip

settings.register_profile(
    "pgreen",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
settings.load_profile("pgreen")

# 1D potential 2 cos(2 pi x) as Fourier coefficients
MATHIEU = {1: 1.0, -1: 1.0}


@pytest.fixture(scope="session")
def free_op():
    return catalog("free_laplacian")


@pytest.fixture(scope="session")
def free_cert(free_op):
    return certify(free_op, 1, M=8, N=2)


@pytest.fixture(scope="session")
def schrodinger_op():
    return catalog("separable_schrodinger")


def _shifted(op, N):
    shift = edge_shift(op, 1, 8, N)
    shifted = shift_and_flip(op, shift, False)
    return shift, shifted, certify(shifted, 1, M=8, N=N)


@pytest.fixture(scope="session")
def schrodinger_n2(schrodinger_op):
    """(shift, shifted operator, certificate) at N=2."""
    return _shifted(schrodinger_op, 2)


@pytest.fixture(scope="session")
def schrodinger_n3(schrodinger_op):
    return _shifted(schrodinger_op, 3)


@pytest.fixture(scope="session")
def schrodinger_oracle():
    from pgreen import schrodinger_reference

    return schrodinger_reference(MATHIEU)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL summary line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
