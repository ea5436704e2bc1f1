"""Spin-parameter extraction by nonlinear least squares.

Two models share the parameter vector ``(amplitude, tau_s, nu_L, offset)``:

* damped cosine in the lag domain,
  ``offset + K0 exp(-|tau|/tau_s) cos(2 pi nu_L tau)``;
* Lorentzian pair in the frequency domain,
  ``offset + sum_{+-} P0 tau_s / (1 + (2 pi tau_s (nu +- nu_L))^2)``,
  i.e. half-width Gamma = 1/(2 pi tau_s). The pair is the Fourier transform of
  the damped cosine, so P0 = K0 for a two-sided spectrum.

Gamma is never a free parameter; it is derived from tau_s on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import fft as sp_fft
from scipy.differentiate import derivative

from .correlator import CorrelationEstimate
from .spectral import PowerSpectrum

__all__ = [
    "SpinFit",
    "FitInitializationError",
    "damped_cosine",
    "double_lorentzian",
    "levenberg_marquardt",
    "fit_damped_cosine",
    "fit_double_lorentzian",
    "jacobian_check",
    "PARAM_NAMES",
]

PARAM_NAMES = ("amplitude", "tau_s", "nu_L", "offset")
TWO_PI = 2.0 * math.pi


class FitInitializationError(ValueError):
    """No spectral line stands out far enough to start a fit."""


@dataclass
class SpinFit:
    nu_L: float
    tau_s: float
    amplitude: float
    offset: float
    sigma: dict
    residual_norm: float
    iterations: int
    converged: bool
    domain: str
    gradient_norm: float = 0.0
    n_points: int = 0
    fixed: tuple = ()
    covariance: np.ndarray | None = field(default=None, repr=False)
    sigma_method: str = "residual"

    @property
    def gamma(self) -> float:
        """Lorentzian half-width at half-maximum, 1/(2 pi tau_s)."""
        return 1.0 / (TWO_PI * self.tau_s)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.amplitude, self.tau_s, self.nu_L, self.offset])

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "nu_L": self.nu_L,
            "tau_s": self.tau_s,
            "gamma": self.gamma,
            "amplitude": self.amplitude,
            "offset": self.offset,
            "sigma": dict(self.sigma),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "n_points": self.n_points,
            "fixed": list(self.fixed),
            "sigma_method": self.sigma_method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SpinFit:
        return cls(
            d["nu_L"],
            d["tau_s"],
            d["amplitude"],
            d["offset"],
            dict(d["sigma"]),
            d["residual_norm"],
            d["iterations"],
            d["converged"],
            d["domain"],
            d.get("gradient_norm", 0.0),
            d.get("n_points", 0),
            tuple(d.get("fixed", ())),
            sigma_method=d.get("sigma_method", "residual"),
        )


# --- models -----------------------------------------------------------------


def damped_cosine(tau, p, jac: bool = False):
    """Damped cosine and, with ``jac``, its partial derivatives (shape ``(m, 4)``).

    The |tau| kink is handled with sign(0) = +1 in the abscissa derivative.
    """
    amp, tau_s, nu, off = p
    tau = np.asarray(tau, dtype=float)
    a = np.abs(tau)
    env = np.exp(-a / tau_s)
    phase = TWO_PI * nu * tau
    c, s = np.cos(phase), np.sin(phase)
    value = off + amp * env * c
    if not jac:
        return value
    J = np.empty(tau.shape + (4,))
    J[..., 0] = env * c
    J[..., 1] = amp * env * c * a / tau_s**2
    J[..., 2] = -amp * env * s * TWO_PI * tau
    J[..., 3] = 1.0
    return value, J


def damped_cosine_dtau(tau, p):
    amp, tau_s, nu, _ = p
    tau = np.asarray(tau, dtype=float)
    sign = np.where(tau >= 0, 1.0, -1.0)
    env = np.exp(-np.abs(tau) / tau_s)
    phase = TWO_PI * nu * tau
    return amp * env * (-sign * np.cos(phase) / tau_s - TWO_PI * nu * np.sin(phase))


def double_lorentzian(nu, p, jac: bool = False):
    """Lorentzian pair at +-nu_L on the grid ``nu`` (both terms always included)."""
    amp, tau_s, nu_L, off = p
    nu = np.asarray(nu, dtype=float)
    g2 = (TWO_PI * tau_s) ** 2
    value = np.full(nu.shape, float(off))
    if jac:
        J = np.zeros(nu.shape + (4,))
        J[..., 3] = 1.0
    for sign in (1.0, -1.0):
        x = nu + sign * nu_L
        D = 1.0 + g2 * x * x
        value = value + amp * tau_s / D
        if jac:
            J[..., 0] += tau_s / D
            J[..., 1] += amp * (1.0 - g2 * x * x) / D**2
            J[..., 2] += -2.0 * sign * amp * tau_s * g2 * x / D**2
    return (value, J) if jac else value


def double_lorentzian_dnu(nu, p):
    amp, tau_s, nu_L, _ = p
    nu = np.asarray(nu, dtype=float)
    g2 = (TWO_PI * tau_s) ** 2
    out = np.zeros(nu.shape)
    for sign in (1.0, -1.0):
        x = nu + sign * nu_L
        out += -2.0 * amp * tau_s * g2 * x / (1.0 + g2 * x * x) ** 2
    return out


MODELS = {
    "damped_cosine": (damped_cosine, damped_cosine_dtau),
    "double_lorentzian": (double_lorentzian, double_lorentzian_dnu),
}


# --- optimizer --------------------------------------------------------------


@dataclass
class LMResult:
    params: np.ndarray
    jacobian: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    gradient_norm: float


def levenberg_marquardt(
    model: Callable,
    x: np.ndarray,
    y: np.ndarray,
    p0: np.ndarray,
    scale: np.ndarray,
    free: np.ndarray,
    weights: np.ndarray | None = None,
    max_iter: int = 200,
    xtol: float = 1e-9,
    valid: Callable[[np.ndarray], bool] | None = None,
) -> LMResult:
    """Damped Gauss-Newton (Marquardt) on ``sum w (y - model(x, p))^2``.

    Steps are taken in the scaled coordinates ``p / scale`` with diagonal
    Marquardt damping. Iteration stops when an accepted step changes every
    scaled free parameter by less than ``xtol`` relative (absolute for
    parameters near zero), or after ``max_iter`` accepted or rejected trials.
    Deterministic: no restarts and no randomness.
    """
    p = np.asarray(p0, dtype=float).copy()
    free = np.asarray(free, dtype=bool)
    sw = np.ones_like(y) if weights is None else np.sqrt(weights)
    f, J = model(x, p, jac=True)
    r = sw * (y - f)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        Js = (sw[:, None] * J)[:, free] * scale[free]
        A = Js.T @ Js
        g = Js.T @ r
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = p.copy()
        trial[free] += step * scale[free]
        if valid is not None and not valid(trial):
            lam *= 10.0
            continue
        f_t, J_t = model(x, trial, jac=True)
        r_t = sw * (y - f_t)
        cost_t = float(r_t @ r_t)
        if cost_t <= cost:
            rel = np.abs(step) / np.maximum(np.abs(trial[free] / scale[free]), 1.0)
            p, f, J, r, cost = trial, f_t, J_t, r_t, cost_t
            lam = max(lam / 10.0, 1e-12)
            if np.max(rel) < xtol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at working precision
                converged = True
                break
    Js = (sw[:, None] * J)[:, free] * scale[free]
    grad = float(np.linalg.norm(Js.T @ r) / max(math.sqrt(cost), 1e-300))
    return LMResult(p, J, y - f, it, converged, grad)


def _covariance(J, resid, free, weights, scale) -> np.ndarray:
    """s^2 (J^T W J)^-1, inverted in scaled coordinates to keep it well conditioned."""
    w = np.ones_like(resid) if weights is None else weights
    Jf = J[:, free] * scale[free]
    dof = max(resid.size - int(free.sum()), 1)
    s2 = float(np.sum(w * resid * resid)) / dof
    cov_scaled = s2 * np.linalg.pinv((Jf * w[:, None]).T @ Jf)
    cov = np.zeros((4, 4))
    cov[np.ix_(free, free)] = cov_scaled * np.outer(scale[free], scale[free])
    return cov


def _lag_error_covariance(p, tau, se, k_zero) -> np.ndarray:
    """Covariance of the reversal estimate between the lags ``tau``.

    For a stationary Gaussian signal the products u_n u_{N-n} and u_m u_{N-m}
    have covariance C(n-m)^2 + C(n+m-N)^2 (four-point moment factorization).
    Written in lags this is C((t_i - t_j)/2)^2 + C((t_i + t_j)/2)^2, with C
    the fitted line shape away from zero and the measured zero-lag value at
    zero. That supplies the correlation between lags; the estimator's own
    standard errors supply the scale.
    """
    amp, tau_s, nu, _ = p

    def C(s):
        return np.where(s == 0, k_zero, amp * np.exp(-s / tau_s) * np.cos(TWO_PI * nu * s))

    R = C(np.abs(tau[:, None] - tau[None, :]) / 2) ** 2 + C((tau[:, None] + tau[None, :]) / 2) ** 2
    d = np.sqrt(np.diag(R))
    return R / np.outer(d, d) * np.outer(se, se)


def _sandwich(J, free, weights, scale, sigma) -> np.ndarray:
    """B X^T W S W X B with B = (X^T W X)^-1, in scaled coordinates."""
    X = J[:, free] * scale[free]
    WX = X if weights is None else X * weights[:, None]
    B = np.linalg.pinv(WX.T @ X)
    inner = B @ (WX.T @ sigma @ WX) @ B
    cov = np.zeros((4, 4))
    cov[np.ix_(free, free)] = inner * np.outer(scale[free], scale[free])
    return cov


def _make_fit(res: LMResult, free, weights, domain, n_points, scale, cov=None, sigma_method="residual") -> SpinFit:
    if cov is None:
        cov = _covariance(res.jacobian, res.residuals, free, weights, scale)
        sigma_method = "residual"
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    amp, tau_s, nu, off = res.params
    return SpinFit(
        nu_L=float(nu),
        tau_s=float(tau_s),
        amplitude=float(amp),
        offset=float(off),
        sigma={name: float(s) for name, s in zip(PARAM_NAMES, sig)},
        residual_norm=float(np.sqrt(np.mean(res.residuals**2))),
        iterations=res.iterations,
        converged=res.converged,
        domain=domain,
        gradient_norm=res.gradient_norm,
        n_points=n_points,
        fixed=tuple(name for name, f in zip(PARAM_NAMES, free) if not f),
        covariance=cov,
        sigma_method=sigma_method,
    )


def _valid(p) -> bool:
    return bool(p[1] > 0 and p[2] >= 0 and np.all(np.isfinite(p)))


def _robust_floor(values: np.ndarray) -> tuple[float, float]:
    med = float(np.median(values))
    spread = 1.4826 * float(np.median(np.abs(values - med)))
    return med, spread


# --- lag domain -------------------------------------------------------------


def _even_half(corr: CorrelationEstimate) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Non-negative lags with the even part of the estimate and its standard error."""
    lags, vals, se = corr.lags, corr.values, corr.stderr
    if lags[0] > lags[-1]:
        lags, vals, se = lags[::-1], vals[::-1], se[::-1]
    mid = lags.size // 2
    even = 0.5 * (vals + vals[::-1])
    return lags[mid:], even[mid:], se[mid:]


def _lag_spectrum(step: float, k_half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    J = k_half.size - 1
    wrapped = np.concatenate([k_half[:J], [2 * k_half[J]], k_half[J - 1 : 0 : -1]])
    return np.arange(J + 1) / (2 * J * step), step * sp_fft.rfft(wrapped).real


def _extrema_envelope(tau, k, nu):
    """Largest |K| within each half period, a sequence of local extrema."""
    half = 0.5 / nu
    bins = np.floor(tau / half + 0.5).astype(int)
    taus, mags = [], []
    for b in np.unique(bins):
        sel = bins == b
        i = np.argmax(np.abs(k[sel]))
        taus.append(tau[sel][i])
        mags.append(abs(k[sel][i]))
    return np.array(taus), np.array(mags)


def _loglinear(t, m, threshold):
    keep = m > threshold
    if keep.sum() < 2:
        return None
    slope, intercept = np.polyfit(t[keep], np.log(m[keep]), 1)
    if slope >= 0:
        return None
    return -1.0 / slope, math.exp(intercept)


def fit_damped_cosine(
    corr: CorrelationEstimate,
    exclude_lag_below: float | None = None,
    *,
    fix_nu_L: float | None = None,
    weighted: bool = False,
    min_significance: float = 5.0,
    max_iter: int = 200,
) -> SpinFit:
    """Fit the damped cosine to a correlation estimate.

    Lags with |tau| < ``exclude_lag_below`` (default two sample periods, which
    drops the zero-lag white-noise spike) are ignored. The estimate is even in
    the lag and both halves carry the same products, so the fit runs on the
    even part at tau >= 0 only. ``weighted`` uses the estimator's per-lag
    standard errors as inverse-variance weights.

    Parameter uncertainties propagate the full lag-to-lag error covariance of
    the estimate through the fit (``sigma_method="lag_error_model"``). The
    textbook s^2 (J^T J)^-1 treats the lags as independent and understates
    the spread several-fold once the spin signal dominates. Estimates without
    finite standard errors fall back to that residual formula.
    """
    exclude = 2 * corr.dt if exclude_lag_below is None else float(exclude_lag_below)
    tau, k, se = _even_half(corr)
    keep = tau >= exclude - 1e-9 * corr.dt
    if keep.sum() < 8:
        raise ValueError("fewer than 8 lags outside the excluded core")
    t_fit, k_fit = tau[keep], k[keep]

    far = k_fit[-max(3, k_fit.size // 10) :]
    offset0 = float(np.mean(far))
    noise = float(np.std(k_fit[k_fit.size * 3 // 4 :])) or 1e-300

    if fix_nu_L is None:
        core = k.copy()
        core[~keep] = k_fit[0]
        freqs, power = _lag_spectrum(tau[1] - tau[0], core - offset0)
        med, spread = _robust_floor(power[1:])
        i = 1 + int(np.argmax(power[1:]))
        if not power[i] > med + min_significance * max(spread, 1e-300):
            raise FitInitializationError("no off-DC spectral peak stands out of the floor")
        nu0 = float(freqs[i])
        et, em = _extrema_envelope(t_fit, k_fit - offset0, nu0)
    else:
        nu0 = float(fix_nu_L)
        et, em = t_fit, np.abs(k_fit - offset0)
    guess = _loglinear(et, em, 3 * noise)
    if guess is None:
        tau_s0, amp0 = (t_fit[-1] - t_fit[0]) / 4, float(np.max(em))
    else:
        tau_s0, amp0 = guess
    p0 = np.array([amp0, tau_s0, nu0, offset0])
    free = np.array([True, True, fix_nu_L is None, True])
    scale = np.array([abs(amp0) or 1.0, tau_s0, max(nu0, 1.0 / (t_fit[-1] - t_fit[0] + corr.dt)), abs(amp0) or 1.0])
    weights = 1.0 / se[keep] ** 2 if weighted else None
    res = levenberg_marquardt(damped_cosine, t_fit, k_fit, p0, scale, free, weights, max_iter, valid=_valid)
    se_fit = se[keep]
    cov = None
    if np.all(np.isfinite(se_fit)) and np.all(se_fit > 0):
        # neighbouring lags share segments, so their errors are correlated
        sigma = _lag_error_covariance(res.params, t_fit, se_fit, float(k[0]))
        cov = _sandwich(res.jacobian, free, weights, scale, sigma)
    return _make_fit(res, free, weights, "lag", t_fit.size, scale, cov, "lag_error_model")


# --- frequency domain -------------------------------------------------------


def _half_max_width(freqs, values, peak, floor):
    """HWHM from the outermost half-maximum crossings around ``peak``."""
    half = floor + 0.5 * (values[peak] - floor)
    right = peak
    while right + 1 < values.size and values[right + 1] > half:
        right += 1
    left = peak
    while left - 1 >= 0 and values[left - 1] > half:
        left -= 1
    if left == 0 and freqs[0] == 0:
        # line at or near DC: the left flank is folded, use the right one
        return max(freqs[min(right + 1, freqs.size - 1)] - freqs[peak], freqs[1] - freqs[0])
    width = 0.5 * (freqs[min(right + 1, freqs.size - 1)] - freqs[max(left - 1, 0)])
    return max(width, freqs[1] - freqs[0])


def fit_double_lorentzian(
    spec: PowerSpectrum,
    *,
    fix_nu_L: float | None = None,
    fmin: float | None = None,
    fmax: float | None = None,
    weighting: Literal["none", "model"] = "none",
    min_significance: float = 5.0,
    max_iter: int = 200,
) -> SpinFit:
    """Fit the Lorentzian pair plus a flat floor to a spectrum.

    ``weighting="model"`` refits with weights 1/model^2, the inverse variance
    of an averaged periodogram bin, using the unweighted solution for the model.
    """
    sel = np.ones(spec.freqs.size, dtype=bool)
    if fmin is not None:
        sel &= spec.freqs >= fmin
    if fmax is not None:
        sel &= spec.freqs <= fmax
    freqs, values = spec.freqs[sel], spec.values[sel]
    if freqs.size < 16:
        raise ValueError("need at least 16 spectral points")

    med, spread = _robust_floor(values)
    if fix_nu_L is None:
        search = freqs > 0
        idx = np.flatnonzero(search)
        peak = int(idx[np.argmax(values[search])])
        nu0 = float(freqs[peak])
    else:
        nu0 = float(fix_nu_L)
        peak = int(np.argmin(np.abs(freqs - nu0)))
    if not values[peak] > med + min_significance * max(spread, 1e-300):
        raise FitInitializationError("no spectral peak stands out of the floor")
    gamma0 = _half_max_width(freqs, values, peak, med)
    far = np.abs(freqs - nu0) > 10 * gamma0
    offset0 = float(np.median(values[far])) if far.sum() >= 3 else med
    tau_s0 = 1.0 / (TWO_PI * gamma0)
    height = values[peak] - offset0
    shape_at_peak = 1.0 + 1.0 / (1.0 + (2 * nu0 / gamma0) ** 2)
    amp0 = height / (tau_s0 * shape_at_peak)

    p0 = np.array([amp0, tau_s0, nu0, offset0])
    free = np.array([True, True, fix_nu_L is None, True])
    scale = np.array([abs(amp0) or 1.0, tau_s0, max(nu0, gamma0), abs(height) or 1.0])
    res = levenberg_marquardt(double_lorentzian, freqs, values, p0, scale, free, None, max_iter, valid=_valid)
    weights = None
    if weighting == "model":
        model = double_lorentzian(freqs, res.params)
        if np.all(model > 0):
            weights = 1.0 / model**2
            res = levenberg_marquardt(
                double_lorentzian, freqs, values, res.params, scale, free, weights, max_iter, valid=_valid
            )
    elif weighting != "none":
        raise ValueError(f"unknown weighting {weighting!r}")
    return _make_fit(res, free, weights, "frequency", freqs.size, scale)


# --- derivative check -------------------------------------------------------


def _numeric_derivative(fn, t0: float = 0.0, direction: int = 0) -> float:
    """Adaptive finite difference of a scalar function of one variable at ``t0``."""
    # differencing against the centre value keeps constant functions exactly flat
    base = fn(float(t0))

    def vectorized(t):
        out = np.empty(np.shape(t))
        for j, tj in np.ndenumerate(t):
            out[j] = fn(float(tj)) - base
        return out

    res = derivative(
        vectorized,
        t0,
        initial_step=1e-2,
        step_factor=2.0,
        step_direction=direction,
        tolerances=dict(rtol=1e-12, atol=0.0),
    )
    return float(res.df)


def jacobian_check(
    model: Literal["damped_cosine", "double_lorentzian"],
    params,
    point: float,
) -> dict:
    """Compare analytic derivatives with adaptive finite differences.

    ``params`` is a :class:`SpinFit` or a ``(amplitude, tau_s, nu_L, offset)``
    sequence. Reports per-parameter derivatives plus the derivative with
    respect to the abscissa. Each parameter is perturbed relative to its own
    value, and the constant offset is dropped from the differenced function
    so it cannot swamp the line shape in rounding. At the |tau| kink of the
    damped cosine the abscissa derivative is taken one-sided from the right,
    matching sign(0) = +1, and the left-hand value and the jump are reported
    too. Relative deviations use max(|analytic|, |numeric|) with a floor of
    1e-6 times the model's own scale, so derivatives that vanish identically
    are compared in absolute terms.
    """
    fn, dx = MODELS[model]
    p = params.params if isinstance(params, SpinFit) else np.asarray(params, dtype=float)
    x = np.array([float(point)])
    value, J = fn(x, p, jac=True)
    line = p.copy()
    line[3] = 0.0
    magnitude = abs(p[0]) * (p[1] if model == "double_lorentzian" else 1.0) + abs(p[3])
    report = {"model": model, "point": float(point), "partials": {}, "max_rel_deviation": 0.0}

    def compare(analytic, numeric, floor):
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)

    for i, name in enumerate(PARAM_NAMES):
        analytic = float(J[0, i])
        if name == "offset":
            numeric = 1.0
            floor = 1e-6
        elif p[i] == 0:
            # only nu_L can vanish; step it on the line-width scale instead
            width = 1.0 / (TWO_PI * p[1])

            def shifted(t, i=i):
                q = line.copy()
                q[i] = t * width
                return float(fn(x, q)[0])

            numeric = _numeric_derivative(shifted) / width
            floor = 1e-6 * magnitude / width
        else:
            def scaled(t, i=i):
                q = line.copy()
                q[i] = p[i] * (1.0 + t)
                return float(fn(x, q)[0])

            numeric = _numeric_derivative(scaled) / p[i]
            floor = 1e-6 * magnitude / abs(p[i])
        rel = compare(analytic, numeric, floor)
        report["partials"][name] = {"analytic": analytic, "numeric": numeric, "rel_deviation": rel}
        report["max_rel_deviation"] = max(report["max_rel_deviation"], rel)

    span = p[1] if model == "damped_cosine" else 1.0 / (TWO_PI * p[1])
    analytic = float(dx(x, p)[0])

    def along(t):
        return float(fn(np.array([point + t * span]), line)[0])

    if model == "damped_cosine" and abs(point) < 1e-9 * span:
        numeric = _numeric_derivative(along, direction=1) / span
        left = _numeric_derivative(along, direction=-1) / span
        report["one_sided"] = {"right": numeric, "left": left, "jump": left - numeric}
    elif model == "damped_cosine" and abs(point) < 0.1 * span:
        # keep the stencil on one side of the kink
        numeric = _numeric_derivative(along, direction=1 if point > 0 else -1) / span
    else:
        numeric = _numeric_derivative(along) / span
    rel = compare(analytic, numeric, 1e-6 * magnitude / span)
    report["abscissa"] = {"analytic": analytic, "numeric": numeric, "rel_deviation": rel}
    report["max_rel_deviation"] = max(report["max_rel_deviation"], rel)
    return report
