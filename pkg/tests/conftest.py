import numpy as np
import pytest

from deepbf.acquire import ProbeConfig


@pytest.fixture
def small_probe():
    """A 16-scanline, 16-channel probe with a short record."""
    return ProbeConfig(num_te_events=16, num_rx_active=16, num_depth_samples=400)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria append (number, passed, detail) here; printed at the end.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number:2d}: {detail}")
