import numpy as np
import pytest

from bnmtf import MaskedMatrix
from bnmtf.distributions import seeded_rng


def random_instance(seed, I=10, J=8, K=3, missing=0.2, noise=0.3):
    """Positive low-rank data with multiplicative noise and a random mask."""
    rng = seeded_rng(100, seed)
    R = rng.exponential(1.0, (I, K)) @ rng.exponential(1.0, (J, K)).T
    R = R * np.exp(rng.normal(0.0, noise, (I, J)))
    mask = rng.random((I, J)) >= missing
    mask[:, 0] = True
    mask[0, :] = True
    return MaskedMatrix(R, mask)


@pytest.fixture
def small_data():
    return random_instance(0)


@pytest.fixture
def rng():
    return seeded_rng(12345)


_CRITERIA = {}


@pytest.fixture
def report():
    """Record an acceptance-criterion outcome for the end-of-run summary."""
    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
