"""Shared fixtures: the packaged reference corpus and scripted backends."""

from __future__ import annotations

import pytest

from surveyforge.model import ScriptedBackend
from surveyforge.retrieval import load_fixture_index
from surveyforge.servers import SERVER_NAMES, build_server


@pytest.fixture(scope="session")
def fixture_index():
    return load_fixture_index()


@pytest.fixture(scope="session")
def corpus(fixture_index):
    """The 12 packaged reference documents, in index order."""
    from surveyforge.state import ReferenceDocument

    return [ReferenceDocument.create(title=e["title"], body=e["body"], source=e["url"])
            for e in fixture_index.entries]


@pytest.fixture()
def backend():
    return ScriptedBackend()


@pytest.fixture()
def servers(backend, fixture_index):
    return {name: build_server(name, backend=backend, index=fixture_index)
            for name in SERVER_NAMES}


# --- acceptance criteria reporting ------------------------------------------
# One pass/fail line per criterion in tests/test_acceptance.py, printed in the
# terminal summary so the verdicts are visible even when every test passes.

_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.fspath.basename == "test_acceptance.py":
        if report.when == "call":
            _ACCEPTANCE_RESULTS[item.name] = "PASS" if report.passed else "FAIL"
        elif report.when == "setup" and report.skipped:
            _ACCEPTANCE_RESULTS[item.name] = "SKIP"
        elif report.when == "setup" and not report.passed:
            _ACCEPTANCE_RESULTS[item.name] = "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, verdict in _ACCEPTANCE_RESULTS.items():
        label = name.removeprefix("test_").replace("_", " ")
        terminalreporter.write_line(f"  {label}: {verdict}")
