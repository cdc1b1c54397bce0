import pytest

_REPORT = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_report(request):
    """Dict shared by the acceptance tests: criterion number -> (passed, summary line)."""
    return request.config.stash.setdefault(_REPORT, {})


def pytest_terminal_summary(terminalreporter, config):
    report = config.stash.get(_REPORT, {})
    if not report:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(report):
        ok, line = report[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{key:2d}] {line}")
