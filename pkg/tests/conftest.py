from collections import defaultdict

_outcomes = defaultdict(list)
_titles = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    _titles.setdefault(n, marker.kwargs.get("title", ""))


def pytest_runtest_logreport(report):
    for key, value in report.user_properties:
        if key == "criterion" and (report.when == "call" or report.outcome != "passed"):
            _outcomes[value].append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        results = _outcomes[n]
        ok = all(r == "passed" for r in results)
        passed = sum(r == "passed" for r in results)
        terminalreporter.write_line(
            f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({passed}/{len(results)} checks)  {_titles.get(n, '')}")
