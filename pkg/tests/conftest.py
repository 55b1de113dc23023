import pytest
from hypothesis import settings

# fixed example sequence so every run checks the same cases
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

# criterion number -> [title, passed so far, tests seen]
_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = _ACCEPTANCE.setdefault(number, [title, True, 0])
    entry[1] = entry[1] and rep.passed
    entry[2] += rep.when == "call"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, _ = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} #{number:<2} {title}")
