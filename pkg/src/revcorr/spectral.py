"""Power spectra from correlation estimates and from segment periodograms.

Two routes to the same noise-power spectrum:

* :func:`wiener_khinchin` transforms a correlation estimate on its symmetric
  lag grid. With lag spacing 2*dt the band ends at 1/(4*dt) and everything
  above it folds back into the band. The result is the two-sided density
  evaluated at non-negative frequencies, so a spin line appears as the pair
  of Lorentzians centred at +nu_L and -nu_L.
* :func:`periodogram` averages per-segment squared DFT magnitudes and returns
  the usual one-sided density up to 1/(2*dt).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import fft as sp_fft

from .correlator import CorrelationEstimate
from .trace import SegmentGrid

__all__ = [
    "PowerSpectrum",
    "AsymmetricCorrelationError",
    "wiener_khinchin",
    "inverse_wiener_khinchin",
    "periodogram",
    "parseval_check",
    "naive_dft",
]

IMAG_TOLERANCE = 1e-10


class AsymmetricCorrelationError(ValueError):
    """The correlation values are not even in the lag."""


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """Spectral density on a uniform, increasing frequency grid.

    ``sided`` is ``"one"`` for the periodogram (power folded onto positive
    frequencies) and ``"two"`` for the Wiener-Khinchin route (two-sided
    density shown for nu >= 0). ``variance_scale`` converts a spectrum built
    from a normalized correlation back to volts^2.
    """

    freqs: np.ndarray
    values: np.ndarray
    method: str
    window: str
    resolution: float
    sided: str
    variance_scale: float = 1.0
    lag_step: float | None = None
    segments: int = 0
    imag_residue: float = 0.0
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        """Total power: sum over the full frequency axis, folded onto nu >= 0."""
        weights = np.ones(self.values.size)
        if self.sided == "two":
            weights[1:] = 2.0
            if self.meta.get("has_nyquist", True):
                weights[-1] = 1.0
        return float(np.sum(weights * self.values) * self.resolution)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "window": self.window,
            "resolution": self.resolution,
            "sided": self.sided,
            "variance_scale": self.variance_scale,
            "lag_step": self.lag_step,
            "segments": self.segments,
            "imag_residue": self.imag_residue,
            "meta": self.meta,
            "freqs": self.freqs.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PowerSpectrum:
        return cls(
            np.array(d["freqs"], dtype=float),
            np.array(d["values"], dtype=float),
            d["method"],
            d["window"],
            float(d["resolution"]),
            d["sided"],
            float(d.get("variance_scale", 1.0)),
            d.get("lag_step"),
            int(d.get("segments", 0)),
            float(d.get("imag_residue", 0.0)),
            dict(d.get("meta", {})),
        )


def _ascending(corr: CorrelationEstimate) -> tuple[np.ndarray, np.ndarray]:
    lags, values = corr.lags, corr.values
    if lags[0] > lags[-1]:
        lags, values = lags[::-1], values[::-1]
    return lags, values


def wiener_khinchin(
    corr: CorrelationEstimate,
    window: Literal["none", "hann_lag"] = "none",
    exclude_zero_lag: bool = False,
    symmetrize: bool = True,
) -> PowerSpectrum:
    """Discrete transform P(nu_m) = dtau * sum_j K(tau_j) exp(-2 pi i nu_m tau_j).

    The lag grid must be symmetric, tau_j = j*dtau for j = -J..J. The frequency
    grid is nu_m = m / (2 J dtau), m = 0..J, which is 1/(2T) for a reversal
    estimate with segment span T. Per-index normalization and two-channel
    estimates are only even in the lag up to noise; with ``symmetrize`` the
    even part (K(tau) + K(-tau))/2 is transformed, otherwise any asymmetry
    above 1e-10 relative raises :class:`AsymmetricCorrelationError`.
    ``exclude_zero_lag`` replaces K(0) by the mean of its two neighbours,
    which removes the flat white-noise floor.
    """
    lags, k = _ascending(corr)
    n_lags = lags.size
    if n_lags < 3 or n_lags % 2 == 0:
        raise ValueError("need an odd number (>= 3) of lags centred on zero")
    J = n_lags // 2
    step = (lags[-1] - lags[0]) / (n_lags - 1)
    if not np.allclose(lags, (np.arange(n_lags) - J) * step, rtol=0, atol=1e-9 * step):
        raise ValueError("lag grid is not uniform and centred on zero")
    if not np.all(np.isfinite(k)):
        raise ValueError("correlation values must be finite")

    mirror = k[::-1]
    if symmetrize:
        k = 0.5 * (k + mirror)
    else:
        scale = np.max(np.abs(k))
        if np.max(np.abs(k - mirror)) > IMAG_TOLERANCE * scale:
            raise AsymmetricCorrelationError("correlation values are not even in the lag")

    zero = corr.zero_index
    variance_scale = 1.0
    if corr.values[zero] != 0:
        variance_scale = float(corr.raw_numerator[zero] / corr.values[zero])

    k = k.copy()
    if exclude_zero_lag:
        k[J] = 0.5 * (k[J - 1] + k[J + 1])
    if window == "hann_lag":
        k = k * 0.5 * (1.0 + np.cos(np.pi * (np.arange(n_lags) - J) / J))
    elif window != "none":
        raise ValueError(f"unknown lag window {window!r}")

    wrapped = np.empty(2 * J)
    wrapped[0] = k[J]
    wrapped[1:J] = k[J + 1 : 2 * J]
    wrapped[J] = k[2 * J] + k[0]
    wrapped[J + 1 :] = k[1:J]
    transform = step * sp_fft.rfft(wrapped)
    peak = np.max(np.abs(transform))
    residue = float(np.max(np.abs(transform.imag)) / peak) if peak > 0 else 0.0
    if residue > IMAG_TOLERANCE:
        raise AsymmetricCorrelationError(f"imaginary residue {residue:.3g} exceeds tolerance")
    resolution = 1.0 / (2 * J * step)
    freqs = np.arange(J + 1) * resolution
    return PowerSpectrum(
        freqs,
        transform.real.copy(),
        "wiener_khinchin",
        window,
        resolution,
        "two",
        variance_scale,
        float(step),
        corr.segments_accumulated,
        residue,
        {
            "normalization": corr.normalization,
            "exclude_zero_lag": exclude_zero_lag,
            "symmetrized": symmetrize,
            "n_lags": int(n_lags),
            "has_nyquist": True,
        },
    )


def inverse_wiener_khinchin(spectrum: PowerSpectrum) -> tuple[np.ndarray, np.ndarray]:
    """Invert :func:`wiener_khinchin`; returns ``(lags, values)`` with lags ascending.

    The two end lags +-J*dtau share one DFT bin; since the transformed
    sequence is even their common value is split evenly.
    """
    if spectrum.method != "wiener_khinchin":
        raise ValueError("only Wiener-Khinchin spectra can be inverted onto a lag grid")
    J = spectrum.values.size - 1
    step = spectrum.lag_step
    wrapped = sp_fft.irfft(spectrum.values / step, 2 * J)
    k = np.empty(2 * J + 1)
    k[J] = wrapped[0]
    k[J + 1 : 2 * J] = wrapped[1:J]
    k[1:J] = wrapped[J + 1 :]
    k[0] = k[2 * J] = 0.5 * wrapped[J]
    return (np.arange(2 * J + 1) - J) * step, k


def _window(name: str, length: int) -> np.ndarray:
    if name == "none":
        return np.ones(length)
    if name == "hann":
        # periodic Hann, the usual choice for spectral estimation
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)
    raise ValueError(f"unknown window {name!r}")


def periodogram(
    grid: SegmentGrid,
    window: Literal["none", "hann"] = "none",
    averaging: Literal["bartlett"] = "bartlett",
    batch: int = 1024,
) -> PowerSpectrum:
    """Segment-averaged one-sided periodogram density in volts^2/Hz.

    Each segment of L = N+1 samples is transformed with a real FFT; squared
    magnitudes are scaled by 2*dt / sum(w^2) (DC and Nyquist bins not doubled)
    and averaged with equal weight over segments.
    """
    if averaging != "bartlett":
        raise ValueError(f"unknown averaging {averaging!r}")
    seg = grid.segments()
    L = seg.shape[1]
    w = _window(window, L)
    power = np.zeros(L // 2 + 1)
    for start in range(0, seg.shape[0], batch):
        X = sp_fft.rfft(seg[start : start + batch] * w, axis=1)
        power += np.einsum("ij,ij->j", X.real, X.real) + np.einsum("ij,ij->j", X.imag, X.imag)
    power /= seg.shape[0]
    scale = np.full(power.size, 2.0 * grid.dt / np.sum(w * w))
    scale[0] /= 2
    if L % 2 == 0:
        scale[-1] /= 2
    freqs = sp_fft.rfftfreq(L, grid.dt)
    return PowerSpectrum(
        freqs,
        power * scale,
        "periodogram",
        window,
        1.0 / (L * grid.dt),
        "one",
        1.0,
        None,
        grid.segment_count,
        0.0,
        {"segment_entries": L, "has_nyquist": L % 2 == 0},
    )


def parseval_check(grid: SegmentGrid, spectrum: PowerSpectrum) -> dict:
    """Compare integrated spectral power with the mean square of the segments.

    Without a window the periodogram satisfies this exactly. Wiener-Khinchin
    spectra built from normalized estimates are compared in normalized units.
    """
    seg = grid.segments()
    mean_square = float(np.mean(seg * seg))
    reference = mean_square / spectrum.variance_scale
    integral = spectrum.integral()
    return {
        "method": spectrum.method,
        "window": spectrum.window,
        "integral": integral,
        "mean_square": mean_square,
        "reference": reference,
        "ratio": integral / reference if reference != 0 else float("nan"),
    }


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(n^2) real-input DFT for correctness checks; never used in timing."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n)
    return x @ basis.T
