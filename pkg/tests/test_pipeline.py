import numpy as np
import pytest

from revcorr.pipeline import compare_paths, field_scan
from revcorr.synth import SpinNoiseParams
from revcorr.trace import NoiseTrace

DT = 5e-9


def test_compare_on_reference_data(spin_trace):
    cmp = compare_paths(spin_trace)
    assert cmp.ok
    assert cmp.lag_fit.domain == "lag" and cmp.freq_fit.domain == "frequency"
    d = cmp.to_dict()
    assert set(d["difference"]) == {"nu_L", "tau_s"}
    assert d["agree"] == cmp.agree


def test_compare_on_white_noise_reports_both_failures():
    rng = np.random.default_rng(0)
    cmp = compare_paths(NoiseTrace(rng.standard_normal(1001 * 2000), DT), analyzer_entries=8192)
    assert not cmp.ok
    assert cmp.lag_error and cmp.freq_error
    assert "difference" not in cmp.to_dict()


@pytest.mark.slow
def test_field_scan_slope():
    base = SpinNoiseParams(1e6, 1e-6, spin_rms=1.0, shot_rms=3.0, dt=DT, seed=500)
    scan = field_scan(base, [1e6, 2e6, 3e6, 4e6, 5e6], 1001 * 10_000)
    assert scan["slope"] == pytest.approx(1.0, abs=0.01)
    assert len(scan["comparisons"]) == 5
