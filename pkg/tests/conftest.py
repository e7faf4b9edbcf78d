import pytest

_ACCEPTANCE_PREFIX = "test_acceptance.py"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print one PASS/FAIL verdict line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or _ACCEPTANCE_PREFIX not in str(item.fspath):
        return
    verdict = "PASS" if report.passed else "FAIL"
    criterion = item.function.__doc__ or item.name
    print(f"\n[{verdict}] {criterion.strip().splitlines()[0]}")
