"""Noise autocorrelation by multiplying signal segments with their time-reversed copies."""

__version__ = "0.1.0"

from .correlator import CorrelationEstimate, cross_correlate, direct_lag_correlate, merge, reverse_correlate
from .fitting import SpinFit, fit_damped_cosine, fit_double_lorentzian, jacobian_check
from .spectral import PowerSpectrum, parseval_check, periodogram, wiener_khinchin
from .synth import EchoParams, SpinNoiseParams, echo_scan, generate_spin_noise, generate_two_channel
from .trace import NoiseTrace, SegmentGrid, load_trace, remove_mean, save_trace, segment

__all__ = [
    "CorrelationEstimate",
    "EchoParams",
    "NoiseTrace",
    "PowerSpectrum",
    "SegmentGrid",
    "SpinFit",
    "SpinNoiseParams",
    "cross_correlate",
    "direct_lag_correlate",
    "echo_scan",
    "fit_damped_cosine",
    "fit_double_lorentzian",
    "generate_spin_noise",
    "generate_two_channel",
    "jacobian_check",
    "load_trace",
    "merge",
    "parseval_check",
    "periodogram",
    "remove_mean",
    "reverse_correlate",
    "save_trace",
    "segment",
    "wiener_khinchin",
]
