import numpy as np
import pytest

from revcorr.correlator import reverse_correlate
from revcorr.synth import SpinNoiseParams, generate_spin_noise
from revcorr.trace import NoiseTrace, remove_mean, segment

DT = 5e-9
ENTRIES = 1001
SEGMENTS = 10_000

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report():
    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record


def spin_params(seed, **kw):
    base = dict(nu_L=2e6, tau_s=1e-6, spin_rms=1.0, shot_rms=3.0, dt=DT, seed=seed)
    base.update(kw)
    return SpinNoiseParams(**base)


@pytest.fixture(scope="session")
def spin_trace():
    """The reference dataset: 10^4 segments of N = 1000, seed 42."""
    return generate_spin_noise(spin_params(42), ENTRIES * SEGMENTS)


@pytest.fixture(scope="session")
def spin_grid(spin_trace):
    return remove_mean(segment(spin_trace, ENTRIES))


@pytest.fixture(scope="session")
def spin_corr(spin_grid):
    return reverse_correlate(spin_grid)


@pytest.fixture(scope="session")
def white_grid():
    rng = np.random.default_rng(2024)
    return segment(NoiseTrace(rng.standard_normal(ENTRIES * SEGMENTS), DT), ENTRIES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
