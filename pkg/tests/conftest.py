from __future__ import annotations

from pathlib import Path

import pytest

from dialect_forge.engine import load_database_dir
from dialect_forge.gateway import embedded_gateway

DATA = Path(__file__).resolve().parents[1] / "src" / "dialect_forge" / "data"
FIXTURES = DATA / "databases"


@pytest.fixture(scope="session")
def dbs():
    return load_database_dir(FIXTURES)


@pytest.fixture(scope="session")
def gateway(dbs):
    gw = embedded_gateway(dbs)
    yield gw
    gw.close()


# -- acceptance summary: one pass/fail line per criterion ------------------------------------------

_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        if _CRITERIA.get(name) != "FAIL":
            _CRITERIA[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        number, _, title = name[len("test_criterion_"):].partition("_")
        terminalreporter.write_line(f"criterion {int(number):>2} {_CRITERIA[name]}  {title.replace('_', ' ')}")
