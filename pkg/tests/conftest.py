import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gifs.core import attractor_iterate  # noqa: E402
from gifs.geometry import interval_grid  # noqa: E402
from gifs.systems import s_conn, s_disc, sierpinski  # noqa: E402

H = 1e-3
TOL = 1e-4


@pytest.fixture(scope="session")
def S_conn():
    return s_conn()


@pytest.fixture(scope="session")
def S_disc():
    return s_disc()


@pytest.fixture(scope="session")
def S_sier():
    return sierpinski()


@pytest.fixture(scope="session")
def A_conn(S_conn):
    return attractor_iterate(S_conn, interval_grid(0, 1, H), TOL)


@pytest.fixture(scope="session")
def A_disc(S_disc):
    return attractor_iterate(S_disc, interval_grid(0, 1, H), TOL)


@pytest.fixture(scope="session")
def configs_dir():
    return Path(__file__).resolve().parent.parent / "configs"


# acceptance criteria append "PASS/FAIL criterion N ..." lines here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
