import numpy as np
import pytest

from gfurn.spectral import spectral_analyze

R_MAT = np.array([[1.0, -1.0], [-1.0, 1.0]])


def random_generating_matrix(rng, d, rho_max=0.45, scale=1.0):
    """Random positive row-stochastic matrix with rho below ``rho_max``."""
    while True:
        H = rng.dirichlet(np.ones(d) * rng.uniform(0.3, 2.0), size=d)
        S = spectral_analyze(H, allow_supercritical=True)
        if S.rho < rho_max:
            return H * scale


def random_psd(rng, d, rank=None):
    A = rng.standard_normal((rank or d, d))
    return A.T @ A


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance criteria report --------------------------------------------------

CRITERIA = {}


def record_criterion(number, passed, detail):
    """Store one verdict per acceptance criterion; later calls refine the line."""
    prev = CRITERIA.get(number)
    if prev is not None:
        passed = passed and prev[0]
        detail = f"{prev[1]}; {detail}"
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
