"""Per-criterion PASS/FAIL report for tests marked ``acceptance``."""

from __future__ import annotations

_results: dict[int, dict] = {}


def _criterion(item):
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return None
    return mark.kwargs["criterion"], mark.kwargs["title"]


def pytest_collection_modifyitems(items):
    for item in items:
        info = _criterion(item)
        if info is not None:
            item.user_properties.append(("criterion", info))


def pytest_runtest_logreport(report):
    info = dict(report.user_properties).get("criterion")
    if info is None:
        return
    number, title = info
    entry = _results.setdefault(number, {"title": title, "outcomes": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        outcomes = entry["outcomes"]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            status = "SKIP"
        elif outcomes:
            status = "PASS"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {number:2d} {status:4s}  {entry['title']}")
