"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    prev = _CRITERIA.get(key)
    failed = report.failed or (prev is not None and prev[0] == "FAIL")
    if report.when == "call" or report.failed:
        _CRITERIA[key] = ("FAIL" if failed else "PASS", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.split()[0])):
        status, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{status}  criterion {key}" + (f": {detail}" if detail else ""))
