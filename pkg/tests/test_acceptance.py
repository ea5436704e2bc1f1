"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are collected again in
the terminal summary under "acceptance criteria".
"""

import math
from pathlib import Path

import numpy as np

from revcorr.bench import run_bench
from revcorr.correlator import cross_correlate, direct_lag_correlate, reverse_correlate
from revcorr.fitting import (
    damped_cosine,
    double_lorentzian,
    fit_damped_cosine,
    fit_double_lorentzian,
    jacobian_check,
)
from revcorr.pipeline import compare_paths
from revcorr.spectral import (
    PowerSpectrum,
    inverse_wiener_khinchin,
    parseval_check,
    periodogram,
    wiener_khinchin,
)
from revcorr.synth import EchoParams, echo_scan, generate_spin_noise, generate_two_channel
from revcorr.trace import NoiseTrace, remove_mean, segment

from conftest import DT, ENTRIES, SEGMENTS, spin_params

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


def test_criterion_01_hand_example(acceptance_report):
    grid = segment(NoiseTrace(np.array([1.0, 2, 3, 4, 5]), DT), 5)
    est = reverse_correlate(grid)
    values_ok = est.values.tolist() == [5.0, 2.0, 1.0, 0.5, 0.2]
    lags_ok = np.array_equal(est.lags, np.array([4, 2, 0, -2, -4]) * DT)
    passed = values_ok and lags_ok
    acceptance_report(1, "hand example", passed, f"values={est.values.tolist()}")
    assert passed


def test_criterion_02_white_noise_delta(white_grid, acceptance_report):
    est = reverse_correlate(white_grid)
    z = est.zero_index
    off = float(np.max(np.abs(np.delete(est.values, z))))
    passed = est.values[z] == 1.0 and off <= 5 / math.sqrt(SEGMENTS)
    acceptance_report(2, "white-noise delta peak", passed, f"K(0)={est.values[z]!r} max|K(tau!=0)|={off:.4f} <= 0.05")
    assert est.values[z] == 1.0
    assert off <= 0.05


def test_criterion_03_parameter_recovery(spin_corr, acceptance_report):
    fit = fit_damped_cosine(spin_corr)
    nu_err = fit.nu_L / 2e6 - 1
    tau_err = fit.tau_s / 1e-6 - 1
    passed = fit.converged and abs(nu_err) <= 0.01 and abs(tau_err) <= 0.05
    acceptance_report(
        3,
        "lag-fit parameter recovery (seed 42)",
        passed,
        f"nu_L={fit.nu_L:.6g} ({nu_err:+.2%}, bound 1%), tau_s={fit.tau_s:.4g} ({tau_err:+.2%}, bound 5%), "
        f"reported sigma(tau_s)={fit.sigma['tau_s'] / 1e-6:.2%}",
    )
    assert fit.converged
    assert abs(nu_err) <= 0.01
    assert abs(tau_err) <= 0.05


def test_criterion_04_dual_path_agreement(spin_trace, acceptance_report):
    results = []
    for seed in range(42, 62):
        trace = spin_trace if seed == 42 else generate_spin_noise(spin_params(seed), ENTRIES * SEGMENTS)
        cmp = compare_paths(trace)
        z_nu, z_tau = (cmp.z("nu_L"), cmp.z("tau_s")) if cmp.ok else (math.inf, math.inf)
        results.append((seed, cmp.agree, z_nu, z_tau))
    agreeing = sum(r[1] for r in results)
    worst = max(results, key=lambda r: max(abs(r[2]), abs(r[3])))
    passed = agreeing >= 18
    acceptance_report(
        4,
        "lag vs frequency fits within 3 combined sigma",
        passed,
        f"{agreeing}/20 seeds agree (need 18); worst seed {worst[0]}: z_nu={worst[2]:+.2f} z_tau={worst[3]:+.2f}",
    )
    assert agreeing >= 18, results


def test_criterion_05_gamma_identity(spin_trace, spin_corr, acceptance_report):
    fits = []
    p = np.array([0.1, 1e-6, 2e6, 5e-9])
    freqs = np.arange(2001) * 2.5e4
    fits.append(fit_double_lorentzian(PowerSpectrum(freqs, double_lorentzian(freqs, p), "periodogram", "none", 2.5e4, "one")))
    grid = remove_mean(segment(spin_trace, 65536, require_odd=False))
    fits.append(fit_double_lorentzian(periodogram(grid), weighting="model"))
    fits.append(fit_double_lorentzian(periodogram(grid), fix_nu_L=2e6))
    fits.append(fit_double_lorentzian(wiener_khinchin(spin_corr, exclude_zero_lag=True)))
    worst = 0.0
    for fit in fits:
        stored = fit.to_dict()
        exact = stored["gamma"] == 1.0 / (2 * math.pi * stored["tau_s"])
        back = 1.0 / (2 * math.pi * stored["gamma"])
        worst = max(worst, abs(back - stored["tau_s"]) / stored["tau_s"])
        assert exact
    passed = worst <= 4 * np.finfo(float).eps
    acceptance_report(5, "tau_s = 1/(2 pi Gamma)", passed, f"{len(fits)} fits, worst round-trip {worst:.2e}")
    assert passed


def test_criterion_06_shot_noise_cancellation(acceptance_report):
    trace = generate_two_channel(spin_params(42), ENTRIES * SEGMENTS)
    grid = remove_mean(segment(trace, ENTRIES))
    est = cross_correlate(grid.channel(0), grid.channel(1))
    z = est.zero_index
    k0 = float(est.values[z])
    fit = fit_damped_cosine(est)
    smooth0 = float(damped_cosine(np.array([0.0]), fit.params)[0])
    passed = abs(k0 - 0.1) <= 0.02 and abs(k0 - smooth0) <= 0.02
    acceptance_report(
        6,
        "two-channel spike removal",
        passed,
        f"cross K(0)={k0:.4f} (target 0.1 +- 0.02), smooth model(0)={smooth0:.4f}, spike={k0 - smooth0:+.4f}",
    )
    assert abs(k0 - 0.1) <= 0.02
    assert abs(k0 - smooth0) <= 0.02


def test_criterion_07_oracle_equivalence(acceptance_report):
    fractions = []
    for seed in range(10):
        trace = generate_spin_noise(spin_params(100 + seed), ENTRIES * 2000)
        grid = remove_mean(segment(trace, ENTRIES))
        rev = reverse_correlate(grid, "global_variance")
        direct = direct_lag_correlate(grid, normalization="global_variance")
        # reversal lags are the even multiples of dt
        d_vals = direct.values[::2]
        d_se = direct.stderr[::2]
        assert np.allclose(direct.lags[::2], rev.lags)
        combined = np.hypot(rev.stderr, d_se)
        ok = np.abs(rev.values - d_vals) <= 5 * combined
        fractions.append(float(np.mean(ok)))
    passed = min(fractions) >= 0.95
    acceptance_report(
        7,
        "reversal vs direct-lag estimator",
        passed,
        f"fraction of lags within 5 combined SE per seed: min {min(fractions):.3f}, mean {np.mean(fractions):.3f}",
    )
    assert passed


def test_criterion_08_round_trip_and_parseval(spin_grid, spin_corr, acceptance_report):
    worst = 0.0
    for corr in (spin_corr, spin_corr.renormalized("global_variance"), spin_corr.renormalized("unnormalized")):
        spec = wiener_khinchin(corr, exclude_zero_lag=False)
        lags, back = inverse_wiener_khinchin(spec)
        even = 0.5 * (corr.values + corr.values[::-1])[::-1]
        assert np.allclose(lags, corr.lags[::-1], rtol=0, atol=1e-6 * corr.lag_step)
        worst = max(worst, float(np.max(np.abs(back - even)) / np.max(np.abs(even))))
    ratios = [parseval_check(spin_grid, periodogram(spin_grid, window=w))["ratio"] for w in ("none", "hann")]
    passed = worst <= 1e-10 and all(abs(r - 1) <= 0.01 for r in ratios)
    acceptance_report(
        8,
        "WK round trip and Parseval",
        passed,
        f"round-trip max relative error {worst:.2e}; periodogram Parseval ratios {ratios[0]:.6f} (none), {ratios[1]:.6f} (hann)",
    )
    assert worst <= 1e-10
    assert all(abs(r - 1) <= 0.01 for r in ratios)


def test_criterion_09_echo(acceptance_report):
    params = EchoParams(T=1e-6, sigma_inhom=4e6, realizations=2000, seed=42)
    scan = echo_scan(params)
    step = scan.t0[1] - scan.t0[0]
    peak = scan.t0[np.argmax(scan.C)]
    control = echo_scan(params, flip=False)
    worst = float(np.max(np.abs(control.C) / control.stderr))
    passed = abs(peak - params.T / 2) <= step and worst <= 5
    acceptance_report(
        9,
        "echo peak at T/2, flat control",
        passed,
        f"argmax t0={peak:.4g} s (T/2={params.T / 2:.4g}, step {step:.3g}); control max |C|/SE={worst:.2f}",
    )
    assert abs(peak - params.T / 2) <= step
    assert worst <= 5


def test_criterion_10_complexity_direction(spin_grid, acceptance_report):
    reports = run_bench(spin_grid, repetitions=5, warmup=2)
    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / "bench_acceptance.jsonl").write_text("\n".join(r.to_json() for r in reports) + "\n")
    rev, per = reports
    products_ok = rev.products == SEGMENTS * ENTRIES
    faster = rev.wall_time <= per.wall_time
    passed = products_ok and faster
    acceptance_report(
        10,
        "reversal not slower than periodogram",
        passed,
        f"reversal {rev.wall_time * 1e3:.1f} ms vs periodogram {per.wall_time * 1e3:.1f} ms; "
        f"products={rev.products} (K(N+1)={SEGMENTS * ENTRIES})",
    )
    assert products_ok
    assert faster


def test_criterion_11_jacobian(acceptance_report):
    rng = np.random.default_rng(11)
    worst = {"damped_cosine": 0.0, "double_lorentzian": 0.0}
    for model in worst:
        for _ in range(100):
            p = (rng.uniform(0.01, 2.0), rng.uniform(0.2e-6, 5e-6), rng.uniform(0.2e6, 20e6), rng.uniform(-0.5, 0.5))
            if model == "damped_cosine":
                point = rng.uniform(-5e-6, 5e-6)
            else:
                point = rng.uniform(0.0, 1 / (4 * DT))
            report = jacobian_check(model, p, point)
            worst[model] = max(worst[model], report["max_rel_deviation"])
    passed = max(worst.values()) <= 1e-5
    acceptance_report(
        11,
        "analytic vs finite-difference Jacobians",
        passed,
        ", ".join(f"{k}: worst {v:.2e}" for k, v in worst.items()) + " (bound 1e-5, 100 points each)",
    )
    assert passed
