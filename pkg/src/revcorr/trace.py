"""Digitized noise traces: data model, segmenting, mean removal and file I/O.

Binary layout (little-endian)::

    offset  size  field
    0       4     magic b"RVC1"
    4       2     format version (u16, currently 1)
    6       2     channel count (u16)
    8       8     samples per channel (u64)
    16      8     sample period dt in seconds (f64)
    24      1     dtype tag (u8): 0 = f64, 1 = f32, 2 = i16
    25      8     i16 scale factor (f64), present only for tag 2
    ...           zero padding up to 64 bytes
    64      ...   channel-contiguous sample blocks
    end-4   4     CRC32 of the sample payload (u32)

Samples are always promoted to float64 in memory.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

__all__ = [
    "NoiseTrace",
    "SegmentGrid",
    "TraceFormatError",
    "load_trace",
    "save_trace",
    "segment",
    "remove_mean",
]

MAGIC = b"RVC1"
FORMAT_VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<4sHHQdB")
_SCALE = struct.Struct("<d")
_CRC = struct.Struct("<I")

DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i2")}
DTYPE_NAMES = {"f64": 0, "f32": 1, "i16": 2}

MeanMode = Literal["global", "per_segment", "none"]


class TraceFormatError(ValueError):
    """Raised when a trace file or trace contents violate the format."""


@dataclass(frozen=True, eq=False)
class NoiseTrace:
    """Uniformly sampled real-valued signal, one row per channel.

    ``samples`` has shape ``(channels, n)``; a 1-D input is treated as one channel.
    """

    samples: np.ndarray
    dt: float
    label: str = ""

    def __post_init__(self):
        data = np.array(self.samples, dtype=np.float64, copy=True)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise TraceFormatError(f"samples must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[0] not in (1, 2):
            raise TraceFormatError(f"1 or 2 channels supported, got {data.shape[0]}")
        if data.shape[1] == 0:
            raise TraceFormatError("empty trace")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise TraceFormatError(f"dt must be positive and finite, got {self.dt}")
        if not np.all(np.isfinite(data)):
            raise TraceFormatError("non-finite sample")
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def channel(self, index: int) -> NoiseTrace:
        return NoiseTrace(self.samples[index], self.dt, f"{self.label}[{index}]")


@dataclass(frozen=True, eq=False)
class SegmentGrid:
    """A trace viewed as ``segment_count`` segments of ``segment_entries`` samples.

    ``data`` has shape ``(channels, segment_count, segment_entries)``. With the
    default stride the segments are disjoint and back to back; a smaller stride
    gives overlapping (hence correlated) segments.
    """

    parent: NoiseTrace
    segment_entries: int
    stride: int
    segment_count: int
    data: np.ndarray = field(repr=False)
    mean_mode: str = "none"
    dropped: int = 0

    @property
    def N(self) -> int:
        """Index of the last entry in a segment (entries are numbered 0..N)."""
        return self.segment_entries - 1

    @property
    def dt(self) -> float:
        return self.parent.dt

    @property
    def T(self) -> float:
        """Segment span N*dt."""
        return self.N * self.parent.dt

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def overlapping(self) -> bool:
        return self.stride < self.segment_entries

    def channel(self, index: int) -> SegmentGrid:
        data = self.data[index : index + 1]
        return SegmentGrid(
            self.parent,
            self.segment_entries,
            self.stride,
            self.segment_count,
            data,
            self.mean_mode,
            self.dropped,
        )

    def segments(self) -> np.ndarray:
        """The ``(K, N+1)`` block of a single-channel grid."""
        if self.n_channels != 1:
            raise ValueError("grid has more than one channel; select one with channel()")
        return self.data[0]


def segment(
    trace: NoiseTrace, segment_entries: int, stride: int | None = None, *, require_odd: bool = True
) -> SegmentGrid:
    """Slice ``trace`` into segments of ``segment_entries`` samples.

    ``segment_entries`` is N+1 and must be odd (N even) so that the centre entry
    n = N/2 maps to zero lag; ``require_odd=False`` lifts this for consumers
    that have no lag grid, such as the periodogram. Trailing samples that do not fill a segment are
    dropped and their count is kept in ``SegmentGrid.dropped``.
    """
    segment_entries = int(segment_entries)
    if segment_entries < 3:
        raise ValueError(f"segment_entries must be >= 3, got {segment_entries}")
    if require_odd and segment_entries % 2 == 0:
        raise ValueError(
            f"segment_entries must be odd (N = segment_entries - 1 even), got {segment_entries}"
        )
    stride = segment_entries if stride is None else int(stride)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = len(trace)
    if n < segment_entries:
        raise ValueError(
            f"trace of {n} samples is shorter than one segment of {segment_entries}"
        )
    count = (n - segment_entries) // stride + 1
    used = (count - 1) * stride + segment_entries
    if stride == segment_entries:
        data = trace.samples[:, :used].reshape(trace.n_channels, count, segment_entries)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(
            trace.samples[:, :used], segment_entries, axis=1
        )
        data = windows[:, ::stride]
    return SegmentGrid(trace, segment_entries, stride, count, data, "none", n - used)


def remove_mean(grid: SegmentGrid, mode: MeanMode = "global") -> SegmentGrid:
    """Subtract the DC level from every segment.

    ``global`` subtracts one mean per channel estimated over all segments,
    ``per_segment`` subtracts each segment's own mean, ``none`` is a no-op.
    """
    if mode == "none":
        data = grid.data
    elif mode == "global":
        data = grid.data - grid.data.mean(axis=(1, 2), keepdims=True)
    elif mode == "per_segment":
        data = grid.data - grid.data.mean(axis=2, keepdims=True)
    else:
        raise ValueError(f"unknown mean mode {mode!r}")
    if data is not grid.data:
        data.setflags(write=False)
    return SegmentGrid(
        grid.parent, grid.segment_entries, grid.stride, grid.segment_count, data, mode, grid.dropped
    )


def _encode_payload(samples: np.ndarray, tag: int) -> tuple[bytes, float | None]:
    if tag == 0:
        return samples.astype("<f8").tobytes(), None
    if tag == 1:
        return samples.astype("<f4").tobytes(), None
    peak = float(np.max(np.abs(samples)))
    scale = peak / 32767.0 if peak > 0 else 1.0
    quantized = np.clip(np.rint(samples / scale), -32767, 32767).astype("<i2")
    return quantized.tobytes(), scale


def save_trace(
    trace: NoiseTrace,
    path: str | Path,
    format: Literal["binary", "csv"] = "binary",
    dtype: str = "f64",
) -> None:
    """Write ``trace`` to ``path``.

    Binary f64 output reloads bit-exactly; ``dtype`` f32 and i16 are lossy.
    CSV stores a time column plus one column per channel at full precision.
    """
    path = Path(path)
    if format == "csv":
        t = np.arange(len(trace)) * trace.dt
        names = ["u"] if trace.n_channels == 1 else [f"u{i}" for i in range(trace.n_channels)]
        table = np.column_stack([t, trace.samples.T])
        np.savetxt(path, table, delimiter=",", header=",".join(["t", *names]), comments="", fmt="%.17g")
        return
    if format != "binary":
        raise ValueError(f"unknown format {format!r}")
    tag = DTYPE_NAMES[dtype]
    payload, scale = _encode_payload(trace.samples, tag)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, trace.n_channels, len(trace), trace.dt, tag)
    if scale is not None:
        header += _SCALE.pack(scale)
    header = header.ljust(HEADER_SIZE, b"\0")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(_CRC.pack(zlib.crc32(payload)))


def _load_binary(path: Path) -> NoiseTrace:
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE + _CRC.size:
        raise TraceFormatError("file too short for header")
    magic, version, channels, count, dt, tag = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported format version {version}")
    if tag not in DTYPE_TAGS:
        raise TraceFormatError(f"unknown dtype tag {tag}")
    if channels not in (1, 2):
        raise TraceFormatError(f"channel count {channels} not supported")
    dtype = DTYPE_TAGS[tag]
    size = channels * count * dtype.itemsize
    if len(blob) != HEADER_SIZE + size + _CRC.size:
        raise TraceFormatError(
            f"sample count mismatch: header declares {channels}x{count} "
            f"{dtype.name} samples, file holds {len(blob) - HEADER_SIZE - _CRC.size} payload bytes"
        )
    payload = blob[HEADER_SIZE : HEADER_SIZE + size]
    (crc,) = _CRC.unpack_from(blob, HEADER_SIZE + size)
    if zlib.crc32(payload) != crc:
        raise TraceFormatError("CRC32 mismatch")
    samples = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(channels, count)
    if tag == 2:
        (scale,) = _SCALE.unpack_from(blob, _HEADER.size)
        samples = samples * scale
    return NoiseTrace(samples, dt, label=path.name)


def _load_csv(path: Path) -> NoiseTrace:
    table = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    if table.shape[0] < 2 or table.shape[1] < 2:
        raise TraceFormatError("CSV needs a time column, a sample column and at least two rows")
    t = table[:, 0]
    dt = t[1] - t[0]
    if not dt > 0:
        raise TraceFormatError(f"dt must be positive, got {dt}")
    if np.max(np.abs(np.diff(t) - dt)) > 1e-6 * dt:
        raise TraceFormatError("non-uniform sampling")
    return NoiseTrace(table[:, 1:].T, dt, label=path.name)


def load_trace(path: str | Path, format: Literal["binary", "csv"] | None = None) -> NoiseTrace:
    """Read a trace; ``format`` defaults to csv for ``.csv`` files, binary otherwise."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown format {format!r}")
