import re

import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a numbered criterion's outcome for the end-of-run summary, then assert it."""
    def record(number, title, ok, detail=""):
        CRITERIA[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)_(\w+)", item.name)
    if m and rep.failed and int(m.group(1)) not in CRITERIA:
        # errored before reaching its verdict
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else rep.when
        CRITERIA[int(m.group(1))] = (m.group(2).replace("_", " "), False, f"error: {msg}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:2d}. {title}: {detail}")
