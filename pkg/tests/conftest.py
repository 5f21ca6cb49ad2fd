import numpy as np
import pytest

from ecogsleep.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def short_subject():
    """Five minutes of synthetic three-channel ECoG with a fixed schedule."""
    spec = SynthSpec(
        duration_s=300.0,
        schedule=(("WS", 80), ("BS", 100), ("WS", 60), ("BS", 60)),
        seed=11,
    )
    return generate(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
