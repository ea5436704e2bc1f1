"""Synthetic signals with known correlation statistics.

Random numbers come from numpy's PCG64 bit generator. Every independent
quantity draws from its own substream, ``SeedSequence(seed, spawn_key=(stream,))``:

=======  ===========================================
stream   use
=======  ===========================================
0        in-phase Ornstein-Uhlenbeck quadrature
1        out-of-phase Ornstein-Uhlenbeck quadrature
2        white noise, channel A
3        white noise, channel B
10       echo ensemble: static frequencies, phases
11       echo ensemble: phase diffusion increments
=======  ===========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .trace import NoiseTrace

__all__ = [
    "SpinNoiseParams",
    "EchoParams",
    "EchoScan",
    "rng_stream",
    "ou_sequence",
    "generate_spin_noise",
    "generate_two_channel",
    "simulate_echo",
    "echo_scan",
    "echo_expectation",
]

STREAM_X, STREAM_Y, STREAM_SHOT_A, STREAM_SHOT_B = 0, 1, 2, 3
STREAM_ECHO_SPINS, STREAM_ECHO_DIFFUSION = 10, 11


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class SpinNoiseParams:
    nu_L: float
    tau_s: float
    spin_rms: float = 1.0
    shot_rms: float = 0.0
    dt: float = 5e-9
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.tau_s > 0:
            raise ValueError(f"tau_s must be positive, got {self.tau_s}")
        if self.nu_L < 0 or self.spin_rms < 0 or self.shot_rms < 0:
            raise ValueError("nu_L, spin_rms and shot_rms must be non-negative")
        if not self.nu_L < 0.5 / self.dt:
            raise ValueError(
                f"nu_L = {self.nu_L:g} Hz is not below the Nyquist frequency {0.5 / self.dt:g} Hz"
            )

    @property
    def spin_fraction(self) -> float:
        """Spin variance over total variance: the zero-lag height of the smooth part."""
        total = self.spin_rms**2 + self.shot_rms**2
        return self.spin_rms**2 / total if total > 0 else 0.0

    def correlation(self, tau):
        """Expected spin-noise correlation spin_rms^2 exp(-|tau|/tau_s) cos(2 pi nu_L tau)."""
        tau = np.asarray(tau, dtype=float)
        return self.spin_rms**2 * np.exp(-np.abs(tau) / self.tau_s) * np.cos(2 * np.pi * self.nu_L * tau)


def ou_sequence(rng: np.random.Generator, n: int, rho: float, rms: float) -> np.ndarray:
    """Stationary AR(1) sequence x[k+1] = rho x[k] + sqrt(1 - rho^2) rms xi[k].

    x[0] is drawn from the stationary distribution, so the autocovariance is
    rms^2 rho^|m| at every index.
    """
    xi = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = rms * xi[0]
    if n > 1:
        gain = math.sqrt(1.0 - rho * rho) * rms
        x[1:], _ = lfilter([gain], [1.0, -rho], xi[1:], zi=[rho * x[0]])
    return x


def _spin_component(params: SpinNoiseParams, n_samples: int) -> np.ndarray:
    if params.spin_rms == 0:
        return np.zeros(n_samples)
    rho = math.exp(-params.dt / params.tau_s)
    x = ou_sequence(rng_stream(params.seed, STREAM_X), n_samples, rho, params.spin_rms)
    y = ou_sequence(rng_stream(params.seed, STREAM_Y), n_samples, rho, params.spin_rms)
    phase = 2 * np.pi * params.nu_L * params.dt * np.arange(n_samples)
    return x * np.cos(phase) + y * np.sin(phase)


def _white(params_seed: int, stream: int, n_samples: int, rms: float) -> np.ndarray:
    if rms == 0:
        return np.zeros(n_samples)
    return rms * rng_stream(params_seed, stream).standard_normal(n_samples)


def generate_spin_noise(params: SpinNoiseParams, n_samples: int) -> NoiseTrace:
    """Spin noise plus white shot noise.

    The spin part is x cos(2 pi nu_L t) + y sin(2 pi nu_L t) with x, y independent
    stationary OU sequences of equal variance, so its correlation is exactly
    spin_rms^2 exp(-|tau|/tau_s) cos(2 pi nu_L tau) in expectation.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s = _spin_component(params, n_samples)
    u = s + _white(params.seed, STREAM_SHOT_A, n_samples, params.shot_rms)
    return NoiseTrace(u, params.dt, label=f"spin_noise seed={params.seed}")


def generate_two_channel(params: SpinNoiseParams, n_samples: int, shot_rms_b: float | None = None) -> NoiseTrace:
    """Two detector outputs sharing one spin signal with independent shot noise."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    shot_rms_b = params.shot_rms if shot_rms_b is None else shot_rms_b
    if shot_rms_b < 0:
        raise ValueError("shot_rms_b must be non-negative")
    s = _spin_component(params, n_samples)
    a = s + _white(params.seed, STREAM_SHOT_A, n_samples, params.shot_rms)
    b = s + _white(params.seed, STREAM_SHOT_B, n_samples, shot_rms_b)
    return NoiseTrace(np.vstack([a, b]), params.dt, label=f"two_channel seed={params.seed}")


@dataclass(frozen=True)
class EchoParams:
    """Inhomogeneously broadened spin ensemble for the pi-pulse echo experiment.

    ``T1`` and ``T2`` accept ``math.inf`` for "no relaxation". ``dt`` sets the
    default spacing of the t0 scan grid.
    """

    T: float
    sigma_inhom: float
    nu_center: float = 0.0
    T2: float = math.inf
    T1: float = math.inf
    ensemble_size: int = 64
    realizations: int = 2000
    dt: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not (self.T1 > 0 and self.T2 > 0):
            raise ValueError("T1 and T2 must be positive (math.inf disables them)")
        if self.sigma_inhom < 0:
            raise ValueError("sigma_inhom must be non-negative")
        if self.ensemble_size < 1 or self.realizations < 1:
            raise ValueError("ensemble_size and realizations must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")


def simulate_echo(params: EchoParams, t0: float, flip: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Signals u(0) and u(T) for each Monte-Carlo realization.

    Each spin has a static frequency drawn from Normal(nu_center, sigma_inhom),
    a uniform initial phase and Brownian phase diffusion with variance 2t/T2
    (single-spin coherence exp(-t/T2)). With ``flip`` the phase is negated at
    ``t0``. The diffusion is sampled exactly at t0 and T, so no time stepping is
    involved. The same seed reuses frequencies, phases and diffusion draws for
    every t0, which makes scans over t0 smooth.
    """
    if not 0 < t0 < params.T:
        raise ValueError(f"t0 = {t0:g} must lie strictly inside (0, T = {params.T:g})")
    shape = (params.realizations, params.ensemble_size)
    spins = rng_stream(params.seed, STREAM_ECHO_SPINS)
    nu = spins.normal(params.nu_center, params.sigma_inhom, size=shape) if params.sigma_inhom > 0 else np.full(
        shape, float(params.nu_center)
    )
    phi0 = spins.uniform(0.0, 2 * np.pi, size=shape)
    if math.isinf(params.T2):
        w1 = w2 = 0.0
    else:
        z = rng_stream(params.seed, STREAM_ECHO_DIFFUSION).standard_normal((2, *shape))
        w1 = z[0] * math.sqrt(2 * t0 / params.T2)
        w2 = z[1] * math.sqrt(2 * (params.T - t0) / params.T2)

    phi_t0 = phi0 + 2 * np.pi * nu * t0 + w1
    if flip:
        phi_t0 = -phi_t0
    phi_T = phi_t0 + 2 * np.pi * nu * (params.T - t0) + w2
    amp_T = math.exp(-params.T / params.T1)
    norm = 1.0 / math.sqrt(params.ensemble_size)
    u0 = norm * np.cos(phi0).sum(axis=1)
    uT = norm * amp_T * np.cos(phi_T).sum(axis=1)
    return u0, uT


@dataclass(frozen=True)
class EchoScan:
    t0: np.ndarray
    C: np.ndarray
    stderr: np.ndarray
    flip: bool


def echo_scan(params: EchoParams, t0_grid=None, flip: bool = True) -> EchoScan:
    """Cross-correlation C(t0) = <u(0) u(T)> over a grid of pulse times."""
    if t0_grid is None:
        step = params.dt if params.dt is not None else params.T / 40
        t0_grid = np.arange(1, int(math.ceil(params.T / step))) * step
        t0_grid = t0_grid[t0_grid < params.T]
    t0_grid = np.asarray(t0_grid, dtype=float)
    C = np.empty(t0_grid.size)
    se = np.empty(t0_grid.size)
    for i, t0 in enumerate(t0_grid):
        u0, uT = simulate_echo(params, float(t0), flip=flip)
        prod = u0 * uT
        C[i] = prod.mean()
        se[i] = prod.std(ddof=1) / math.sqrt(prod.size) if prod.size > 1 else math.inf
    return EchoScan(t0_grid, C, se, flip)


def echo_expectation(params: EchoParams, t0, flip: bool = True):
    """Closed-form ensemble average of u(0) u(T).

    Cross terms between different spins vanish under the uniform initial phase;
    each spin contributes 1/2 cos of its accumulated phase difference, averaged
    over the Gaussian frequency spread and the diffusion.
    """
    t0 = np.asarray(t0, dtype=float)
    span = params.T - 2 * t0 if flip else np.full_like(t0, params.T)
    decay_T1 = 0.0 if math.isinf(params.T1) else params.T / params.T1
    decay_T2 = 0.0 if math.isinf(params.T2) else params.T / params.T2
    return (
        0.5
        * np.cos(2 * np.pi * params.nu_center * span)
        * np.exp(-0.5 * (2 * np.pi * params.sigma_inhom * span) ** 2)
        * math.exp(-decay_T1 - decay_T2)
    )
