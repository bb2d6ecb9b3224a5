import numpy as np
import pytest

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR of a complex Ginibre matrix with phase-fixed R."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 11):
        passed, detail = ACCEPTANCE_RESULTS.get(k, (False, "no result recorded"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
