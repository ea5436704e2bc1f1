import math

import numpy as np
import pytest

from revcorr.correlator import cross_correlate, reverse_correlate
from revcorr.synth import (
    EchoParams,
    SpinNoiseParams,
    echo_expectation,
    echo_scan,
    generate_spin_noise,
    generate_two_channel,
    ou_sequence,
    rng_stream,
    simulate_echo,
)
from revcorr.trace import remove_mean, segment


def test_same_seed_is_bit_identical():
    p = SpinNoiseParams(2e6, 1e-6, 1.0, 3.0, 5e-9, seed=7)
    a = generate_spin_noise(p, 50_000).samples
    b = generate_spin_noise(p, 50_000).samples
    assert a.tobytes() == b.tobytes()
    c = generate_spin_noise(SpinNoiseParams(2e6, 1e-6, 1.0, 3.0, 5e-9, seed=8), 50_000).samples
    assert not np.array_equal(a, c)


def test_substreams_are_independent_generators():
    a = rng_stream(3, 0).standard_normal(1000)
    b = rng_stream(3, 1).standard_normal(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / math.sqrt(1000)


def test_nyquist_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        SpinNoiseParams(nu_L=2e8, tau_s=1e-6, dt=5e-9)


def test_white_noise_has_no_correlation():
    p = SpinNoiseParams(1e6, 1e-6, spin_rms=0.0, shot_rms=1.0, seed=1)
    u = generate_spin_noise(p, 200_000).samples[0]
    n = u.size
    for m in (1, 2, 5, 50):
        r = np.dot(u[:-m], u[m:]) / np.dot(u, u)
        assert abs(r) < 5 / math.sqrt(n)


def test_ou_autocorrelation_matches_exponential():
    # brute-force lag products over 10^7 samples against exp(-|tau|/tau_s),
    # tolerance from the Bartlett variance of an AR(1) sample autocorrelation
    p = SpinNoiseParams(nu_L=0.0, tau_s=1e-6, spin_rms=1.0, shot_rms=0.0, dt=5e-9, seed=4)
    n = 10**7
    u = generate_spin_noise(p, n).samples[0]
    rho = math.exp(-p.dt / p.tau_s)
    c0 = np.dot(u, u) / n
    for m in (1, 50, 200, 400):
        r = np.dot(u[:-m], u[m:]) / (n - m) / c0
        expected = rho**m
        var = ((1 + rho**2) * (1 - rho ** (2 * m)) / (1 - rho**2) - 2 * m * rho ** (2 * m)) / n
        assert abs(r - expected) < 5 * math.sqrt(var), (m, r, expected)


def test_ou_sequence_stationary_start():
    # variance of x[0] across many independent draws equals rms^2
    rng = np.random.default_rng(0)
    first = np.array([ou_sequence(rng, 3, 0.99, 2.0) for _ in range(4000)])
    for k in range(3):
        assert first[:, k].var() == pytest.approx(4.0, rel=0.1)


def test_stationarity_of_halves():
    p = SpinNoiseParams(2e6, 1e-6, 1.0, 0.5, seed=11)
    u = generate_spin_noise(p, 2_000_000).samples[0]
    a, b = u[:1_000_000], u[1_000_000:]
    # about 1e6 dt / (2 tau_s) = 2500 independent blocks per half
    se_var = 1.25 * math.sqrt(2 / 2500)
    assert abs(a.var() - b.var()) < 5 * se_var
    assert abs(a.mean() - b.mean()) < 5 * math.sqrt(1.25 / 2500)


def test_no_beat_in_phase_resolved_variance():
    # a single quadrature would make the variance swing with the Larmor phase
    p = SpinNoiseParams(nu_L=2e6, tau_s=1e-6, spin_rms=1.0, shot_rms=0.0, seed=3)
    n = 4_000_000
    u = generate_spin_noise(p, n).samples[0]
    phase = (2 * p.nu_L * p.dt * np.arange(n)) % 1.0
    bins = np.floor(phase * 10).astype(int)
    for k in range(10):
        assert u[bins == k].var() == pytest.approx(1.0, abs=0.1)


def test_isotropy_of_per_index_estimate(spin_corr):
    z = spin_corr.zero_index
    v, se = spin_corr.values, spin_corr.stderr
    n = np.arange(z)
    diff = v[n] - v[spin_corr.N - n]
    # the two sides share their numerator; only the denominators differ
    assert np.all(np.abs(diff) <= 5 * np.hypot(se[n], se[spin_corr.N - n]))


def test_two_channel_shared_spin_only():
    p = SpinNoiseParams(2e6, 1e-6, spin_rms=1.0, shot_rms=0.0, seed=5)
    t = generate_two_channel(p, 10_000)
    np.testing.assert_array_equal(t.samples[0], t.samples[1])


def test_two_channel_independent_shot_noise():
    p = SpinNoiseParams(2e6, 1e-6, spin_rms=0.0, shot_rms=1.0, seed=5)
    grid = segment(generate_two_channel(p, 1001 * 2000), 1001)
    est = cross_correlate(grid.channel(0), grid.channel(1))
    assert np.max(np.abs(est.values)) < 6 / math.sqrt(2000)


def test_two_channel_single_channel_consistency():
    p = SpinNoiseParams(2e6, 1e-6, 1.0, 3.0, seed=9)
    one = generate_spin_noise(p, 5000).samples[0]
    two = generate_two_channel(p, 5000).samples[0]
    np.testing.assert_array_equal(one, two)


def test_generated_correlation_matches_model():
    p = SpinNoiseParams(2e6, 1e-6, spin_rms=1.0, shot_rms=0.0, seed=21)
    grid = remove_mean(segment(generate_spin_noise(p, 1001 * 4000), 1001))
    est = reverse_correlate(grid, "unnormalized")
    expected = p.correlation(est.lags)
    assert np.mean(np.abs(est.values - expected) <= 5 * est.stderr) > 0.99


# echo experiment ----------------------------------------------------------


def test_echo_t0_outside_interval():
    params = EchoParams(T=1e-6, sigma_inhom=1e6)
    for t0 in (0.0, 1e-6, -1e-7, 2e-6):
        with pytest.raises(ValueError, match="strictly inside"):
            simulate_echo(params, t0)


def test_echo_reproducible():
    params = EchoParams(T=1e-6, sigma_inhom=2e6, T2=3e-6, realizations=50, seed=2)
    a = simulate_echo(params, 3e-7)
    b = simulate_echo(params, 3e-7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_echo_scan_matches_closed_form():
    params = EchoParams(T=1e-6, sigma_inhom=2e6, nu_center=3e6, T1=4e-6, realizations=3000, seed=6)
    scan = echo_scan(params, np.linspace(0.05e-6, 0.95e-6, 19))
    expected = echo_expectation(params, scan.t0)
    assert np.all(np.abs(scan.C - expected) <= 5 * scan.stderr)


def test_echo_peak_at_half_T():
    params = EchoParams(T=1e-6, sigma_inhom=4e6, realizations=2000, seed=1)
    scan = echo_scan(params)
    step = scan.t0[1] - scan.t0[0]
    assert abs(scan.t0[np.argmax(scan.C)] - params.T / 2) <= step


@pytest.mark.parametrize("T", [1e-6, 2e-6])
def test_echo_T2_decay_ratio(T):
    kw = dict(T=T, sigma_inhom=3e6, realizations=4000, seed=8)
    c_inf = simulate_echo(EchoParams(**kw), T / 2)
    c_t2 = simulate_echo(EchoParams(T2=2e-6, **kw), T / 2)
    prod_inf = c_inf[0] * c_inf[1]
    prod_t2 = c_t2[0] * c_t2[1]
    ratio = prod_t2.mean() / prod_inf.mean()
    # delta-method error of a ratio of two correlated means
    n = prod_inf.size
    rel = math.sqrt(prod_t2.var() / prod_t2.mean() ** 2 + prod_inf.var() / prod_inf.mean() ** 2) / math.sqrt(n)
    assert ratio == pytest.approx(math.exp(-T / 2e-6), abs=5 * rel * ratio)


def test_echo_control_without_flip_is_flat():
    params = EchoParams(T=1e-6, sigma_inhom=4e6, realizations=2000, seed=3)
    scan = echo_scan(params, flip=False)
    assert np.all(np.abs(scan.C) <= 5 * scan.stderr)
