"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_CRITERIA: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _CRITERIA.setdefault(mark.args[0], [])
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    if report.failed:
        _CRITERIA[name].append("FAIL")
    elif report.when == "call" and report.passed:
        _CRITERIA[name].append("PASS")
    elif report.skipped:
        _CRITERIA[name].append("SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _CRITERIA.items():
        if "FAIL" in outcomes:
            status = "FAIL"
        elif "PASS" in outcomes:
            status = "PASS"
        else:
            status = "SKIP" if outcomes else "NOT RUN"
        note = ""
        if status == "PASS" and "SKIP" in outcomes:
            note = f"  ({outcomes.count('SKIP')} optional check(s) skipped)"
        terminalreporter.write_line(f"{status}  {name}{note}")
