"""Per-criterion PASS/FAIL summary for tests marked ``acceptance``."""

import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(number, title): test contributes to an acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "passed": True, "notes": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False
    if report.when == "call":
        entry["notes"].extend(v for k, v in item.user_properties if k == "note")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        status = "PASS" if entry["passed"] else "FAIL"
        tr.write_line(f"[{status}] criterion {number}: {entry['title']}")
        for note in entry["notes"]:
            for line in note.splitlines():
                tr.write_line(f"         {line}")
