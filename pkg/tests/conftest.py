import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> {"title", "ok", "seen", "note"}
_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seen": False, "note": ""})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and not report.failed
    for name, content in report.user_properties:
        if name == "observed":
            entry["note"] = content


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["seen"] else "FAIL"
        line = f"criterion {number:2d} {status}  {entry['title']}"
        if entry["note"]:
            line += f"  [{entry['note']}]"
        terminalreporter.write_line(line)
