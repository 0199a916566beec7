from __future__ import annotations

import pytest

from fsgme.core import GmeSystem, SystemConfig
from fsgme.memory import NativeMemory


@pytest.fixture
def solo():
    """One process, one instance, instrumented native memory."""
    mem = NativeMemory(1, instrument=True)
    system = GmeSystem(SystemConfig(1, 1), mem)
    return system, system.context(1)


# -- acceptance summary: one line per criterion ---------------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed or report.skipped:
        entry["ok"] = False
    for key, value in item.user_properties:
        if key == "detail" and report.when == "call":
            entry["details"].append(value)
    if report.failed and report.when != "call":
        entry["details"].append(f"{item.name} errored during {report.when}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}: {detail}")
