import contextlib
import time

import pytest

from ils.controller import SolutionCache
from ils.fixtures import build_cube, build_room4
from ils.geometry import VisibilityIndex
from ils.transport import assemble, assemble_for_solve

ROOM4_SAMPLES = 9
ROOM4_RAYS = 4096

_acceptance_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_acceptance_key] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_acceptance_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


class _Criterion:
    def __init__(self):
        self.details = []

    def note(self, text):
        self.details.append(text)


@pytest.fixture
def acceptance(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    sink = request.config.stash[_acceptance_key]

    @contextlib.contextmanager
    def criterion(name):
        c = _Criterion()
        t0 = time.perf_counter()
        try:
            yield c
        except BaseException as exc:
            sink.append(f"FAIL  {name} [{time.perf_counter() - t0:.1f}s] {'; '.join(c.details)} -- {exc}")
            raise
        sink.append(f"PASS  {name} [{time.perf_counter() - t0:.1f}s] {'; '.join(c.details)}")

    return criterion


@pytest.fixture(scope="session")
def room4():
    return build_room4()


@pytest.fixture(scope="session")
def room4_index(room4):
    return VisibilityIndex(room4.patches)


@pytest.fixture(scope="session")
def room4_plain_timed(room4, room4_index):
    t0 = time.perf_counter()
    ffm = assemble(room4, ROOM4_SAMPLES, 0, "plain", room4_index)
    return ffm, time.perf_counter() - t0


@pytest.fixture(scope="session")
def room4_plain(room4_plain_timed):
    return room4_plain_timed[0]


@pytest.fixture(scope="session")
def room4_matrices(room4, room4_index, room4_plain):
    """(transport, sense) for the full ldc+lsc model."""
    return assemble_for_solve(room4, ROOM4_SAMPLES, 0, "ldc+lsc", room4_index, base=room4_plain)


@pytest.fixture(scope="session")
def room4_cache(room4, room4_index, room4_matrices):
    transport, sense = room4_matrices
    return SolutionCache(room4, transport, sense, ROOM4_RAYS, 0, room4_index)


@pytest.fixture(scope="session")
def cube():
    return build_cube()
