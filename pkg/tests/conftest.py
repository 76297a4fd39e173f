from contextlib import contextmanager

import pytest


def pytest_configure(config):
    config.acceptance_results = []


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for one acceptance criterion."""

    @contextmanager
    def _criterion(num: int, name: str):
        results = request.config.acceptance_results
        try:
            yield
        except BaseException:
            results.append((num, name, False))
            raise
        results.append((num, name, True))

    return _criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, passed in sorted(results):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} [{status}] {name}")
