import pytest

# Collected pass/fail status of the acceptance-criteria tests, printed as one
# line per criterion at the end of the run.
_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker:
        number, description = marker.args
        _ACCEPTANCE[number] = (description, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        description, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {description}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, description): acceptance criterion test")
