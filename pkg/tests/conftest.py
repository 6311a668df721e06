"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.addinivalue_line("markers", "slow: runs the full desk-scale pipeline")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        item.config._criteria[marker.args[0]] = (marker.args[1], rep.outcome, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, outcome, detail = results[n]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}: {detail}")
