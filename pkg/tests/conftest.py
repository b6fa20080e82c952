import warnings

import numpy as np
import pytest

from bwk.model import make_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def concrete():
    from bwk.instances import make_concrete_family
    return make_concrete_family(0.2, 0.01, 10_000)


def single_arm(r, c, B, T):
    return make_instance([r], [[c]], B, T)


@pytest.fixture(autouse=True)
def _quiet_eta_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# acceptance criteria report: one line per criterion in the terminal summary
AC_RESULTS: dict = {}


@pytest.fixture
def ac_record():
    def record(ac: int, passed: bool, detail: str) -> None:
        line = f"AC{ac} {'PASS' if passed else 'FAIL'}: {detail}"
        AC_RESULTS[ac] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if not AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(AC_RESULTS):
        terminalreporter.write_line(AC_RESULTS[ac])
