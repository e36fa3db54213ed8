import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line; printed together at the end of the session."""
    lines = request.config.stash.setdefault(_LINES, [])

    def _report(n: int, ok: bool, detail: str) -> bool:
        lines.append((n, f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
