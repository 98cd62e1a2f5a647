import numpy as np
import pytest

from iclip.features import SynthConfig, synthesize

SMALL = SynthConfig(n_labels=8, dim=8, videos=6, frames_per_video=4, persons_per_frame=2, seed=3)


@pytest.fixture(scope="session")
def small_data():
    return synthesize(SMALL)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
