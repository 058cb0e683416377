import pytest

from tissuescale.config import default_config
from tissuescale.homogenizer import UnitCellHomogenizer

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def hom32(cfg):
    return UnitCellHomogenizer.from_config(cfg, resolution=32).fit()


@pytest.fixture(scope="session")
def hom16(cfg):
    return UnitCellHomogenizer.from_config(cfg, resolution=16).fit()


@pytest.fixture()
def cache(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv("TISSUESCALE_CACHE", str(d))
    return d
