import numpy as np
import pytest

from psqkd.constellation import build_constellation
from psqkd.fockspace import DetectorParams, KeyMapGeometry

# operating point of the reference experiment
NU, VA = 0.2, 2.03
T_REF, XI_REF = 0.009, 0.019
ETA_D, NU_EL = 0.714, 0.064


@pytest.fixture(scope="session")
def table1_constellation():
    return build_constellation(NU, VA)


@pytest.fixture(scope="session")
def table1_detector():
    return DetectorParams(ETA_D, NU_EL, 12)


@pytest.fixture(scope="session")
def small_detector():
    return DetectorParams(ETA_D, NU_EL, 4)


@pytest.fixture(scope="session")
def table1_geometry(table1_constellation):
    return KeyMapGeometry.at_receiver(table1_constellation.scale, T_REF, ETA_D, 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary; a criterion
# checked by several tests passes only if every part does
ACCEPTANCE_LINES = pytest.StashKey[dict]()


def _criterion_line(number: int, parts) -> str:
    ok = all(p[0] for p in parts)
    return f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  " + " || ".join(p[1] for p in parts)


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(_criterion_line(k, lines[k]))


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records and prints the outcome of criterion ``n``; returns ``ok``."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(number: int, ok: bool, detail: str) -> bool:
        lines.setdefault(number, []).append((bool(ok), detail))
        print(_criterion_line(number, [(ok, detail)]))
        return ok

    return record
