import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion; returns the passed flag."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(name, passed, detail):
        if not isinstance(passed, str):
            passed = bool(passed)
        verdict = "PASS" if passed is True else "FAIL" if passed is False else str(passed)
        line = f"ACCEPTANCE {verdict:7s} {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def scenario():
    from herdrl.core import ScenarioConfig
    return ScenarioConfig()
