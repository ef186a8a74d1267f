"""Shared test configuration and the per-criterion acceptance report."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

# criterion number -> {"title", "status", "detail"}
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            _CRITERIA[number] = {"title": title, "status": "NOT RUN", "detail": "", "nodeid": item.nodeid}


def pytest_runtest_logreport(report):
    entry = next((e for e in _CRITERIA.values() if e["nodeid"] == report.nodeid), None)
    if entry is None:
        return
    for name, value in report.user_properties:
        if name == "detail":
            entry["detail"] = value
    if report.failed:
        entry["status"] = "FAIL"
    elif report.when == "call" and report.passed and entry["status"] != "FAIL":
        entry["status"] = "PASS"


def pytest_terminal_summary(terminalreporter):
    ran = {n: e for n, e in _CRITERIA.items() if e["status"] != "NOT RUN"}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ran):
        entry = ran[number]
        line = f"criterion {number} ({entry['title']}): {entry['status']}"
        if entry["detail"]:
            line += f"  [{entry['detail']}]"
        terminalreporter.write_line(line)
