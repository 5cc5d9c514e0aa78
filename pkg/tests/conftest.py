import numpy as np
import pytest

from precis.core import DataMatrix, sample_covariance

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cov(rng, n, p, scale=None):
    x = rng.standard_normal((n, p))
    if scale is not None:
        x = x * scale
    data = DataMatrix(x)
    return data, sample_covariance(data)


def random_spd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = np.exp(rng.uniform(0, np.log(cond), p))
    m = q @ np.diag(ev) @ q.T
    return (m + m.T) / 2
