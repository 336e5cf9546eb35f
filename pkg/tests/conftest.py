import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from esp_vfm.model import EspParams  # noqa: E402
from esp_vfm.scenario import build_scenario  # noqa: E402


@pytest.fixture(scope="session")
def inv1():
    return EspParams.from_preset("inv1", k_reference=True)


@pytest.fixture(scope="session")
def sim_scenario():
    return build_scenario("inv1", "simulated", 0)


@pytest.fixture(scope="session")
def noisy_scenario():
    return build_scenario("inv1", "noisy", 7)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
