"""End-to-end runs: correlation fit against spectral fit on one trace."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .correlator import reverse_correlate
from .fitting import FitInitializationError, SpinFit, fit_damped_cosine, fit_double_lorentzian
from .spectral import periodogram
from .synth import SpinNoiseParams, generate_spin_noise
from .trace import NoiseTrace, remove_mean, segment

__all__ = ["Comparison", "compare_paths", "field_scan", "DEFAULT_ANALYZER_ENTRIES"]

# periodogram segments long against tau_s: the segment-length (Fejer) broadening
# of a Lorentzian scales with tau_s / T_segment
DEFAULT_ANALYZER_ENTRIES = 65536


@dataclass
class Comparison:
    lag_fit: SpinFit | None
    freq_fit: SpinFit | None
    lag_error: str | None = None
    freq_error: str | None = None
    threshold: float = 3.0

    @property
    def ok(self) -> bool:
        return self.lag_fit is not None and self.freq_fit is not None

    def z(self, name: str) -> float:
        a, b = self.lag_fit, self.freq_fit
        diff = getattr(a, name) - getattr(b, name)
        combined = math.hypot(a.sigma[name], b.sigma[name])
        return diff / combined if combined > 0 else math.inf

    @property
    def agree(self) -> bool:
        return self.ok and abs(self.z("nu_L")) <= self.threshold and abs(self.z("tau_s")) <= self.threshold

    def to_dict(self) -> dict:
        out = {
            "lag_fit": None if self.lag_fit is None else self.lag_fit.to_dict(),
            "frequency_fit": None if self.freq_fit is None else self.freq_fit.to_dict(),
            "lag_error": self.lag_error,
            "frequency_error": self.freq_error,
            "threshold_sigma": self.threshold,
        }
        if self.ok:
            out["difference"] = {
                name: {
                    "lag_minus_frequency": getattr(self.lag_fit, name) - getattr(self.freq_fit, name),
                    "sigma_units": self.z(name),
                }
                for name in ("nu_L", "tau_s")
            }
            out["agree"] = self.agree
        return out


def compare_paths(
    trace: NoiseTrace,
    segment_entries: int = 1001,
    normalization: str = "per_index",
    mean: str = "global",
    analyzer_entries: int = DEFAULT_ANALYZER_ENTRIES,
    exclude_lag_below: float | None = None,
    channel: int = 0,
    threshold: float = 3.0,
) -> Comparison:
    """Fit the same trace through the reversal correlator and through a periodogram.

    The periodogram plays the independent spectrum analyzer: it uses its own
    (long) segments and a model-weighted Lorentzian-pair fit.
    """
    if trace.n_channels > 1:
        trace = trace.channel(channel)
    lag_fit = freq_fit = None
    lag_err = freq_err = None
    grid = remove_mean(segment(trace, segment_entries), mean)
    try:
        lag_fit = fit_damped_cosine(reverse_correlate(grid, normalization), exclude_lag_below)
    except FitInitializationError as exc:
        lag_err = str(exc)
    entries = min(analyzer_entries, len(trace))
    agrid = remove_mean(segment(trace, entries, require_odd=False), mean)
    try:
        freq_fit = fit_double_lorentzian(periodogram(agrid), weighting="model")
    except FitInitializationError as exc:
        freq_err = str(exc)
    return Comparison(lag_fit, freq_fit, lag_err, freq_err, threshold)


def field_scan(base: SpinNoiseParams, nu_values, n_samples: int, **compare_kw) -> dict:
    """Simulate one dataset per Larmor frequency and regress fitted on programmed values."""
    nu_values = np.asarray(nu_values, dtype=float)
    rows = []
    for i, nu in enumerate(nu_values):
        params = replace(base, nu_L=float(nu), seed=base.seed + i)
        cmp = compare_paths(generate_spin_noise(params, n_samples), **compare_kw)
        rows.append(cmp)
    fitted = np.array([c.lag_fit.nu_L if c.lag_fit is not None else np.nan for c in rows])
    ok = np.isfinite(fitted)
    slope, intercept = np.polyfit(nu_values[ok], fitted[ok], 1) if ok.sum() >= 2 else (np.nan, np.nan)
    return {
        "programmed_nu_L": nu_values.tolist(),
        "fitted_nu_L": fitted.tolist(),
        "slope": float(slope),
        "intercept": float(intercept),
        "comparisons": [c.to_dict() for c in rows],
    }
