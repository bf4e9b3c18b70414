import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
