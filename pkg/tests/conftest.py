"""Collects acceptance outcomes and prints one PASS/FAIL/N/A line per criterion."""
import pytest

RESULTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.skipped:
        status, detail = "N/A", str(rep.longrepr[-1]).removeprefix("Skipped: ")
    else:
        status = "PASS" if rep.passed else "FAIL"
    RESULTS[mark.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in RESULTS.items():
        line = f"{status:4}  {name}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
