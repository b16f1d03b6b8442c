from __future__ import annotations

import pytest

from crowdnav.eval import mapping_session
from crowdnav.scenario import shipped_scenario


@pytest.fixture(scope="session")
def fountain_map():
    """A short seeded mapping run on the fountain scenario."""
    return mapping_session(shipped_scenario("fountain"), seed=5, duration_s=120.0).map


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)
