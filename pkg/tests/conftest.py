"""Shared fixtures and the acceptance-criterion summary."""

from __future__ import annotations

import pytest

from hazardlab.eventlog import correct_latency, segment_grasps
from hazardlab.simgen import SimConfig, simulate_sessions

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "tests": 0})
    if report.when == "call":
        entry["tests"] += 1
    if report.failed or (report.skipped and report.when == "call"):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {e['title']}")


@pytest.fixture(scope="session")
def default_session():
    """Default 65-subject simulation, zero latency, seed 0."""
    return simulate_sessions(SimConfig(seed=0))


@pytest.fixture(scope="session")
def default_episodes(default_session):
    log, _ = default_session
    return segment_grasps(correct_latency(log, 5))
