from pathlib import Path

import pytest

from dyngal.experiment import load_config, run_config

ROOT = Path(__file__).resolve().parents[1]
BUNDLED = ROOT / "configs" / "fourier1d_cosine.json"


@pytest.fixture(scope="session")
def bundled_config():
    return load_config(BUNDLED)


@pytest.fixture(scope="session")
def bundled_run(bundled_config):
    """The acceptance run: DYN-GAL on nu = 1 + cos(x)/2, sigma = 1, manufactured u."""
    return run_config(bundled_config)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
