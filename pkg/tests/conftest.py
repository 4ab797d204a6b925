"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""
import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    prev = _results.get(n)
    if report.when == "call" or failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _results[n] = (title, "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS",
                       detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, status, detail = _results[n]
        line = f"criterion {n} [PRIMARY] {title}: {status}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
