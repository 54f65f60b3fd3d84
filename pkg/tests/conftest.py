import numpy as np
import pytest

from colabel.core import VideoVolume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_video(rng, t=2, h=8, w=8):
    return VideoVolume(rng.integers(0, 256, size=(t, h, w, 3), dtype=np.uint8))


def nrmse(approx, exact):
    """Per-channel RMSE normalised by the RMS of the exact result."""
    approx = np.atleast_2d(np.asarray(approx).T).T
    exact = np.atleast_2d(np.asarray(exact).T).T
    return np.sqrt(((approx - exact) ** 2).mean(axis=0)) / np.sqrt((exact**2).mean(axis=0))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
