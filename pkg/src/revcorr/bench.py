"""Throughput comparison of the reversal correlator and the FFT periodogram.

Both paths consume the same ``(K, N+1)`` segment block and produce their normal
scientific output while being timed; a checksum of each output is kept in the
report so the work cannot be optimized away.

Cost model per segment of L = N+1 samples:

* reversal: L products u_n u_{N-n} and L squares u_n^2, each followed by one
  accumulate, i.e. 4L floating-point operations;
* periodogram: a real FFT, modelled as 2.5 L log2 L operations, plus 3L for
  the squared magnitudes and accumulation.
"""

from __future__ import annotations

import json
import math
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np

from .correlator import reverse_correlate
from .spectral import periodogram
from .trace import SegmentGrid

__all__ = ["BenchReport", "run_bench", "ops_model", "MIN_SEGMENTS"]

MIN_SEGMENTS = 100
METHODS = ("reversal", "periodogram")


@dataclass
class BenchReport:
    method: str
    segment_entries: int
    segments: int
    wall_time: float
    throughput: float
    ops_estimate: float
    environment: str
    repetitions: int
    checksum: float
    threads: int = 1
    products: int | None = None
    squares: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def ops_model(method: str, segment_entries: int, segments: int) -> float:
    L = segment_entries
    if method == "reversal":
        return 4.0 * L * segments
    if method == "periodogram":
        return (2.5 * L * math.log2(L) + 3.0 * L) * segments
    raise ValueError(f"unknown method {method!r}")


def environment() -> str:
    return (
        f"{platform.machine()} {platform.processor() or 'unknown-cpu'}; "
        f"{platform.system()} {platform.release()}; python {platform.python_version()}; numpy {np.__version__}"
    )


def _runner(method: str, grid: SegmentGrid, threads: int):
    if method == "reversal":
        shards = threads if threads > 1 else 1

        def run():
            est = reverse_correlate(grid, "per_index", shards=shards, threads=threads)
            return est, float(np.sum(est.raw_numerator))

        return run
    if method == "periodogram":

        def run():
            spec = periodogram(grid)
            return spec, float(np.sum(spec.values))

        return run
    raise ValueError(f"unknown method {method!r}")


def run_bench(
    grid: SegmentGrid,
    methods=METHODS,
    repetitions: int = 5,
    warmup: int = 2,
    threads: int = 1,
) -> list[BenchReport]:
    """Median wall time of each method over ``repetitions`` timed runs.

    ``warmup`` untimed runs precede the timed ones. Timing uses
    :func:`time.perf_counter`, a monotonic clock.
    """
    if grid.segment_count < MIN_SEGMENTS:
        raise ValueError(f"benchmark needs at least {MIN_SEGMENTS} segments, got {grid.segment_count}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    seg = np.ascontiguousarray(grid.segments())
    # identical memory layout for every method
    grid = SegmentGrid(grid.parent, grid.segment_entries, grid.stride, grid.segment_count, seg[np.newaxis], grid.mean_mode, grid.dropped)
    env = environment()
    reports = []
    for method in methods:
        run = _runner(method, grid, threads)
        for _ in range(warmup):
            run()
        times = []
        for _ in range(repetitions):
            start = time.perf_counter()
            out, checksum = run()
            times.append(time.perf_counter() - start)
        wall = float(np.median(times))
        K, L = grid.segment_count, grid.segment_entries
        products = squares = None
        if method == "reversal":
            products, squares = out.ops["products"], out.ops["squares"]
        reports.append(
            BenchReport(
                method=method,
                segment_entries=L,
                segments=K,
                wall_time=wall,
                throughput=K * L / wall,
                ops_estimate=ops_model(method, L, K),
                environment=env,
                repetitions=repetitions,
                checksum=checksum,
                threads=threads,
                products=products,
                squares=squares,
            )
        )
    return reports
