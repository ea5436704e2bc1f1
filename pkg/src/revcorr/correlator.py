"""Correlation estimators over segmented traces.

The reversal estimator multiplies each segment entry u_n by the entry u_{N-n}
of the same segment read backwards and averages over segments. For a
stationary signal that product depends only on the lag tau_n = (N - 2n) dt,
so one segment of N+1 samples yields one product per lag, on a grid with
spacing 2*dt. Odd multiples of dt are only reachable with
:func:`direct_lag_correlate`, the conventional within-segment estimator kept
here as a validation oracle.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import fft as sp_fft

from .trace import SegmentGrid

__all__ = [
    "CorrelationAccumulator",
    "CorrelationEstimate",
    "ZeroVarianceError",
    "reverse_correlate",
    "cross_correlate",
    "direct_lag_correlate",
    "merge",
    "empty_estimate",
]

Normalization = Literal["per_index", "global_variance", "unnormalized"]
NORMALIZATIONS = ("per_index", "global_variance", "unnormalized")

# denominators below this (volts^2) are treated as zero variance
MIN_VARIANCE = 1e-30
DEFAULT_BATCH = 1024


class ZeroVarianceError(ValueError):
    """Raised instead of dividing by a vanishing variance."""


def _chan_update(count, mean, m2, batch_count, batch_mean, batch_m2):
    total = count + batch_count
    delta = batch_mean - mean
    mean = mean + delta * (batch_count / total)
    m2 = m2 + batch_m2 + delta * delta * (count * batch_count / total)
    return total, mean, m2


class CorrelationAccumulator:
    """Streaming (cumulative moving average) state of a reversal correlator.

    Holds the running mean and sum of squared deviations of the products
    a_n b_{N-n} for every index n, and the running means of a_n^2 and b_n^2.
    For the single-channel estimator ``b`` is ``a`` and the second-channel
    squares are not stored. Accumulators combine with :meth:`merge`.
    """

    def __init__(self, segment_entries: int, dt: float, cross: bool = False):
        self.segment_entries = int(segment_entries)
        self.dt = float(dt)
        self.cross = cross
        self.count = 0
        size = self.segment_entries
        self.num_mean = np.zeros(size)
        self.num_m2 = np.zeros(size)
        self.sq_mean_a = np.zeros(size)
        self.sq_mean_b = np.zeros(size) if cross else None
        self.products = 0
        self.squares = 0

    def update(self, a: np.ndarray, b: np.ndarray | None = None) -> None:
        """Fold a ``(segments, N+1)`` batch into the running averages."""
        a = np.atleast_2d(a)
        if a.shape[1] != self.segment_entries:
            raise ValueError(f"batch has {a.shape[1]} entries per segment, expected {self.segment_entries}")
        if self.cross:
            if b is None:
                raise ValueError("cross accumulator needs a second channel")
            b = np.atleast_2d(b)
            if b.shape != a.shape:
                raise ValueError(f"channel shapes differ: {a.shape} vs {b.shape}")
        elif b is not None:
            raise ValueError("single-channel accumulator got a second channel")
        k = a.shape[0]
        if k == 0:
            return
        prod = a * (b if self.cross else a)[:, ::-1]
        sq_a = a * a
        p_mean = prod.mean(axis=0)
        dev = prod - p_mean
        p_m2 = np.einsum("ij,ij->j", dev, dev)
        n0 = self.count
        _, self.num_mean, self.num_m2 = _chan_update(n0, self.num_mean, self.num_m2, k, p_mean, p_m2)
        self.sq_mean_a = self.sq_mean_a + (sq_a.mean(axis=0) - self.sq_mean_a) * (k / (n0 + k))
        if self.cross:
            sq_b = b * b
            self.sq_mean_b = self.sq_mean_b + (sq_b.mean(axis=0) - self.sq_mean_b) * (k / (n0 + k))
            self.squares += sq_b.size
        self.count = n0 + k
        self.products += prod.size
        self.squares += sq_a.size

    def copy(self) -> CorrelationAccumulator:
        out = CorrelationAccumulator(self.segment_entries, self.dt, self.cross)
        out.count = self.count
        out.num_mean = self.num_mean.copy()
        out.num_m2 = self.num_m2.copy()
        out.sq_mean_a = self.sq_mean_a.copy()
        out.sq_mean_b = None if self.sq_mean_b is None else self.sq_mean_b.copy()
        out.products, out.squares = self.products, self.squares
        return out

    def merge(self, other: CorrelationAccumulator) -> CorrelationAccumulator:
        if (self.segment_entries, self.dt, self.cross) != (other.segment_entries, other.dt, other.cross):
            raise ValueError("cannot merge accumulators on different lag grids")
        if other.count == 0:
            return self.copy()
        if self.count == 0:
            return other.copy()
        out = self.copy()
        n_a, n_b = self.count, other.count
        w = n_b / (n_a + n_b)
        _, out.num_mean, out.num_m2 = _chan_update(n_a, self.num_mean, self.num_m2, n_b, other.num_mean, other.num_m2)
        out.sq_mean_a = self.sq_mean_a + (other.sq_mean_a - self.sq_mean_a) * w
        if self.cross:
            out.sq_mean_b = self.sq_mean_b + (other.sq_mean_b - self.sq_mean_b) * w
        out.count = n_a + n_b
        out.products = self.products + other.products
        out.squares = self.squares + other.squares
        return out

    def denominator(self, normalization: str) -> np.ndarray:
        size = self.segment_entries
        if normalization == "unnormalized":
            return np.ones(size)
        if normalization == "per_index":
            den = self.sq_mean_a if not self.cross else np.sqrt(self.sq_mean_a * self.sq_mean_b)
        elif normalization == "global_variance":
            pooled = self.sq_mean_a.mean()
            if self.cross:
                pooled = math.sqrt(pooled * self.sq_mean_b.mean())
            den = np.full(size, pooled)
        else:
            raise ValueError(f"unknown normalization {normalization!r}")
        if np.any(den < MIN_VARIANCE):
            raise ZeroVarianceError("zero variance in normalization denominator (constant-zero data?)")
        return den

    def estimate(self, normalization: Normalization = "per_index") -> CorrelationEstimate:
        N = self.segment_entries - 1
        lags = (N - 2 * np.arange(N + 1)) * self.dt
        if self.count == 0:
            nan = np.full(N + 1, np.nan)
            return CorrelationEstimate(lags, nan, nan.copy(), normalization, 0, self.dt, nan.copy(), nan.copy(), self.copy())
        den = self.denominator(normalization)
        values = self.num_mean / den
        if self.count > 1:
            stderr = np.sqrt(self.num_m2 / (self.count - 1) / self.count) / den
        else:
            stderr = np.full(N + 1, np.inf)
        raw_den = self.sq_mean_a if not self.cross else np.sqrt(self.sq_mean_a * self.sq_mean_b)
        return CorrelationEstimate(
            lags, values, stderr, normalization, self.count, self.dt, self.num_mean.copy(), raw_den.copy(), self.copy()
        )

    def to_dict(self) -> dict:
        return {
            "segment_entries": self.segment_entries,
            "dt": self.dt,
            "cross": self.cross,
            "count": self.count,
            "num_mean": self.num_mean.tolist(),
            "num_m2": self.num_m2.tolist(),
            "sq_mean_a": self.sq_mean_a.tolist(),
            "sq_mean_b": None if self.sq_mean_b is None else self.sq_mean_b.tolist(),
            "products": self.products,
            "squares": self.squares,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorrelationAccumulator:
        acc = cls(d["segment_entries"], d["dt"], d["cross"])
        acc.count = int(d["count"])
        acc.num_mean = np.array(d["num_mean"], dtype=float)
        acc.num_m2 = np.array(d["num_m2"], dtype=float)
        acc.sq_mean_a = np.array(d["sq_mean_a"], dtype=float)
        acc.sq_mean_b = None if d["sq_mean_b"] is None else np.array(d["sq_mean_b"], dtype=float)
        acc.products, acc.squares = int(d["products"]), int(d["squares"])
        return acc


@dataclass(frozen=True, eq=False)
class CorrelationEstimate:
    """Correlation values on a symmetric lag grid.

    For the reversal estimators ``lags[n] = (N - 2n) dt``, so lags run from +T
    down to -T in steps of 2 dt. ``raw_numerator`` is the mean product per
    index (volts^2) and ``raw_denominator`` the mean square per index.
    ``state`` holds the accumulator for merging and resuming; it is ``None``
    for the direct-lag oracle.
    """

    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    normalization: str
    segments_accumulated: int
    dt: float
    raw_numerator: np.ndarray = field(repr=False)
    raw_denominator: np.ndarray = field(repr=False)
    state: CorrelationAccumulator | None = field(default=None, repr=False)
    method: str = "reversal"

    @property
    def N(self) -> int:
        return len(self.lags) - 1

    @property
    def lag_step(self) -> float:
        return abs(self.lags[0] - self.lags[1])

    @property
    def zero_index(self) -> int:
        return int(np.argmin(np.abs(self.lags)))

    @property
    def ops(self) -> dict:
        if self.state is None:
            return {}
        return {"products": self.state.products, "squares": self.state.squares}

    def value_at(self, lag: float) -> float:
        idx = int(np.argmin(np.abs(self.lags - lag)))
        if not math.isclose(self.lags[idx], lag, rel_tol=1e-9, abs_tol=1e-3 * self.lag_step):
            raise KeyError(f"lag {lag:g} s is not on the grid")
        return float(self.values[idx])

    def renormalized(self, normalization: Normalization) -> CorrelationEstimate:
        if self.state is None:
            raise ValueError("estimate carries no accumulator state")
        return self.state.estimate(normalization)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "normalization": self.normalization,
            "segments_accumulated": self.segments_accumulated,
            "dt": self.dt,
            "lags": self.lags.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "raw_numerator": self.raw_numerator.tolist(),
            "raw_denominator": self.raw_denominator.tolist(),
            "state": None if self.state is None else self.state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorrelationEstimate:
        state = None if d.get("state") is None else CorrelationAccumulator.from_dict(d["state"])
        return cls(
            np.array(d["lags"], dtype=float),
            np.array(d["values"], dtype=float),
            np.array(d["stderr"], dtype=float),
            d["normalization"],
            int(d["segments_accumulated"]),
            float(d["dt"]),
            np.array(d["raw_numerator"], dtype=float),
            np.array(d["raw_denominator"], dtype=float),
            state,
            d.get("method", "reversal"),
        )

    def csv_rows(self):
        for lag, value in zip(self.lags, self.values):
            yield lag, value, self.segments_accumulated


def empty_estimate(segment_entries: int, dt: float, normalization: Normalization = "per_index", cross: bool = False):
    """Identity element for :func:`merge`."""
    return CorrelationAccumulator(segment_entries, dt, cross).estimate(normalization)


def _accumulate(a: np.ndarray, b: np.ndarray | None, dt: float, batch: int) -> CorrelationAccumulator:
    acc = CorrelationAccumulator(a.shape[1], dt, cross=b is not None)
    for start in range(0, a.shape[0], batch):
        stop = start + batch
        acc.update(a[start:stop], None if b is None else b[start:stop])
    return acc


def _sharded(a, b, dt, shards, threads, batch) -> CorrelationAccumulator:
    shards = max(1, min(int(shards), a.shape[0]))
    bounds = np.linspace(0, a.shape[0], shards + 1).astype(int)
    pieces = [(a[i:j], None if b is None else b[i:j]) for i, j in zip(bounds[:-1], bounds[1:])]
    if threads > 1 and shards > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda p: _accumulate(p[0], p[1], dt, batch), pieces))
    else:
        parts = [_accumulate(pa, pb, dt, batch) for pa, pb in pieces]
    # fixed shard order keeps the reduction deterministic
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return total


def reverse_correlate(
    grid: SegmentGrid,
    normalization: Normalization = "per_index",
    *,
    shards: int = 1,
    threads: int = 1,
    batch: int = DEFAULT_BATCH,
) -> CorrelationEstimate:
    """Average u_n u_{N-n} over segments and normalize.

    ``per_index`` divides by the mean of u_n^2 at the same index n, which makes
    the zero-lag value exactly 1 but leaves values[n] and values[N-n] equal only
    up to noise in the two denominators. ``global_variance`` divides by the
    variance pooled over all entries; the result is then exactly even in the lag.
    ``unnormalized`` returns the mean products in volts^2.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    acc = _sharded(grid.segments(), None, grid.dt, shards, threads, batch)
    return acc.estimate(normalization)


def cross_correlate(
    grid_a: SegmentGrid,
    grid_b: SegmentGrid,
    normalization: Normalization = "per_index",
    *,
    shards: int = 1,
    threads: int = 1,
    batch: int = DEFAULT_BATCH,
) -> CorrelationEstimate:
    """Average a_n b_{N-n} over segments of two channels.

    White noise that is independent between the channels averages out, so the
    zero-lag spike of the single-channel estimate disappears. Per-index
    normalization uses sqrt(<a_n^2> <b_n^2>).
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    if (grid_a.segment_entries, grid_a.segment_count) != (grid_b.segment_entries, grid_b.segment_count) or (
        grid_a.dt != grid_b.dt
    ):
        raise ValueError("grids differ in segment length, segment count or dt")
    acc = _sharded(grid_a.segments(), grid_b.segments(), grid_a.dt, shards, threads, batch)
    return acc.estimate(normalization)


def merge(partial_a: CorrelationEstimate, partial_b: CorrelationEstimate) -> CorrelationEstimate:
    """Combine two partial estimates as if their segments had been accumulated together."""
    if partial_a.state is None or partial_b.state is None:
        raise ValueError("both estimates need accumulator state to merge")
    if partial_a.normalization != partial_b.normalization:
        raise ValueError("normalization modes differ")
    if partial_a.N != partial_b.N or partial_a.dt != partial_b.dt:
        raise ValueError("lag grids differ")
    return partial_a.state.merge(partial_b.state).estimate(partial_a.normalization)


def _lag_sums_fft(seg: np.ndarray, max_lag: int) -> np.ndarray:
    L = seg.shape[1]
    nfft = sp_fft.next_fast_len(2 * L - 1, real=True)
    spec = sp_fft.rfft(seg, nfft, axis=1)
    return sp_fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=1)[:, : max_lag + 1]


def _lag_sums_direct(seg: np.ndarray, max_lag: int) -> np.ndarray:
    L = seg.shape[1]
    out = np.empty((seg.shape[0], max_lag + 1))
    for m in range(max_lag + 1):
        out[:, m] = np.einsum("ij,ij->i", seg[:, : L - m], seg[:, m:])
    return out


def direct_lag_correlate(
    grid: SegmentGrid,
    max_lag: int | None = None,
    normalization: Literal["global_variance", "unnormalized"] = "global_variance",
    *,
    method: Literal["fft", "direct"] = "fft",
    batch: int = DEFAULT_BATCH,
) -> CorrelationEstimate:
    """Conventional within-segment estimator on a dt-spaced lag grid.

    K(m dt) = sum_k sum_n u_n u_{n+m} / (K (N+1-m)), normalized by the pooled
    variance K(0). The lag sums are computed per segment either with a
    zero-padded FFT or by explicit shifted products; the standard error comes
    from the spread of the per-segment values.
    """
    seg = grid.segments()
    L = seg.shape[1]
    max_lag = L - 1 if max_lag is None else int(max_lag)
    if not 0 <= max_lag <= L - 1:
        raise ValueError(f"max_lag must lie in [0, {L - 1}], got {max_lag}")
    if normalization not in ("global_variance", "unnormalized"):
        raise ValueError(f"unsupported normalization {normalization!r} for the direct estimator")
    lag_sums = _lag_sums_fft if method == "fft" else _lag_sums_direct
    pairs = (L - np.arange(max_lag + 1)).astype(float)
    count, mean, m2 = 0, np.zeros(max_lag + 1), np.zeros(max_lag + 1)
    for start in range(0, seg.shape[0], batch):
        per_seg = lag_sums(seg[start : start + batch], max_lag) / pairs
        b_mean = per_seg.mean(axis=0)
        dev = per_seg - b_mean
        count, mean, m2 = _chan_update(count, mean, m2, per_seg.shape[0], b_mean, np.einsum("ij,ij->j", dev, dev))
    scale = 1.0
    if normalization == "global_variance":
        scale = mean[0]
        if scale < MIN_VARIANCE:
            raise ZeroVarianceError("zero variance in normalization denominator")
    se = np.sqrt(m2 / (count - 1) / count) / scale if count > 1 else np.full(max_lag + 1, np.inf)
    one_sided = mean / scale
    values = np.concatenate([one_sided[:0:-1], one_sided])
    stderr = np.concatenate([se[:0:-1], se])
    lags = np.arange(max_lag, -max_lag - 1, -1) * grid.dt
    num = np.concatenate([mean[:0:-1], mean])
    return CorrelationEstimate(
        lags, values, stderr, normalization, count, grid.dt, num, np.full(values.size, mean[0]), None, "direct"
    )
