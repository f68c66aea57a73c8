"""Core event-stream data types and conversions.

An event stream is the raw output of a DVS-style sensor: a time-ordered
sequence of (t, x, y, polarity) records over a fixed pixel geometry.
Timestamps are integer microseconds throughout; this keeps frame-aligned
segmentation and millisecond-scale simulator grids exact.

The conversions here (segmentation, voxelization, polarity accumulation,
frame differencing) are pure functions: no shared mutable state, safe to
fan out across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class Event(NamedTuple):
    """One sensor event: timestamp (µs), column, row, polarity (+1/-1)."""

    t: int
    x: int
    y: int
    polarity: int


@dataclass(eq=False)
class EventStream:
    """Time-ordered event records over a width x height pixel array.

    Events are stored as parallel numpy arrays sorted non-decreasing by
    timestamp. ``t_start <= t <= t_end`` holds for every event.
    """

    width: int
    height: int
    t_start: int
    t_end: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint16))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint16))
    p: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("stream geometry must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must be >= t_start")
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays must have equal length")
        if n:
            if np.any(np.diff(self.t.astype(np.int64)) < 0):
                raise ValueError("events must be sorted by timestamp")
            if int(self.t[0]) < self.t_start or int(self.t[-1]) > self.t_end:
                raise ValueError("event timestamps outside [t_start, t_end]")
            if np.any(self.x >= self.width) or np.any(self.y >= self.height):
                raise ValueError("event coordinates outside geometry")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def events(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def duration_us(self) -> int:
        return self.t_end - self.t_start

    def replace_events(self, t, x, y, p, t_start=None, t_end=None) -> "EventStream":
        return EventStream(
            self.width,
            self.height,
            self.t_start if t_start is None else t_start,
            self.t_end if t_end is None else t_end,
            t,
            x,
            y,
            p,
        )


@dataclass(eq=False)
class EventVoxel:
    """H x W x bins tensor of signed per-bin event accumulation."""

    width: int
    height: int
    bins: int
    data: np.ndarray  # (H, W, bins) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height, self.width, self.bins):
            raise ValueError(
                f"voxel data shape {self.data.shape} != "
                f"({self.height}, {self.width}, {self.bins})"
            )


@dataclass(eq=False)
class GrayFrame:
    """Single-channel intensity image, values in [0, 255]."""

    width: int
    height: int
    data: np.ndarray  # (H, W) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height, self.width):
            raise ValueError("frame data must be (height, width)")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 255.0):
            raise ValueError("intensity values must lie in [0, 255]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GrayFrame":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape[1], arr.shape[0], arr)


@dataclass(eq=False)
class DiffMap:
    """Signed H x W map: either a frame difference or a per-pixel event sum."""

    width: int
    height: int
    data: np.ndarray  # (H, W) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height, self.width):
            raise ValueError("diff data must be (height, width)")


def segment_stream(stream: EventStream, boundaries: Sequence[int]) -> list[EventStream]:
    """Split a stream at the given timestamps into consecutive sub-streams.

    Segment i covers [boundaries[i], boundaries[i+1]); the final segment is
    closed at the top so that an event landing exactly on the last boundary
    is not lost and the segments always partition the covered events.
    """
    bounds = [int(b) for b in boundaries]
    if len(bounds) < 2:
        raise ValueError("need at least two boundaries")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError("boundaries must be strictly increasing")
    if bounds[0] < stream.t_start or bounds[-1] > stream.t_end:
        raise ValueError("boundaries must lie within [t_start, t_end]")

    t64 = stream.t.astype(np.int64)
    segments = []
    for i in range(len(bounds) - 1):
        lo, hi = bounds[i], bounds[i + 1]
        if i == len(bounds) - 2:
            sel = (t64 >= lo) & (t64 <= hi)
        else:
            sel = (t64 >= lo) & (t64 < hi)
        segments.append(
            EventStream(
                stream.width,
                stream.height,
                lo,
                hi,
                stream.t[sel],
                stream.x[sel],
                stream.y[sel],
                stream.p[sel],
            )
        )
    return segments


def voxelize(segment: EventStream, bins: int) -> EventVoxel:
    """Accumulate a segment into an H x W x bins signed voxel.

    Bin index is floor(bins * (t - t_start) / (t_end - t_start)), with
    t == t_end clamped into the last bin. Each event adds its polarity to
    its cell, so the total over all cells equals the stream's polarity sum.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    data = np.zeros((segment.height, segment.width, bins), dtype=np.float64)
    n = len(segment)
    if n == 0:
        return EventVoxel(segment.width, segment.height, bins, data)
    dur = segment.t_end - segment.t_start
    if dur <= 0:
        k = np.zeros(n, dtype=np.int64)
    else:
        rel = segment.t.astype(np.int64) - segment.t_start
        k = (bins * rel) // dur
        np.clip(k, 0, bins - 1, out=k)
    np.add.at(data, (segment.y.astype(np.int64), segment.x.astype(np.int64), k),
              segment.p.astype(np.float64))
    return EventVoxel(segment.width, segment.height, bins, data)


def diff_map(prev: GrayFrame, next: GrayFrame) -> DiffMap:
    """Temporal intensity difference of two frames: next - prev, elementwise."""
    if (prev.width, prev.height) != (next.width, next.height):
        raise ValueError("frame dimensions must match")
    return DiffMap(prev.width, prev.height, next.data - prev.data)


def polarity_image(voxel: EventVoxel) -> DiffMap:
    """Per-pixel signed event accumulation: the voxel summed over time bins.

    Values are event counts; scaling by the firing threshold approximates
    the accumulated log-intensity change at each pixel.
    """
    return DiffMap(voxel.width, voxel.height, voxel.data.sum(axis=2))


def take_fixed_events(stream: EventStream, n: int, seed: int = 0) -> EventStream:
    """Keep the first ``n`` events by timestamp; shorter streams pass through.

    Deterministic: ties in timestamp keep storage order. ``seed`` is accepted
    for signature parity with the other subsetting operations but unused.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if len(stream) <= n:
        return stream
    return stream.replace_events(
        stream.t[:n], stream.x[:n], stream.y[:n], stream.p[:n]
    )


def make_variant(stream: EventStream, kind: str, noise_frac: float = 0.0,
                 seed: int = 0) -> EventStream:
    """Build a degraded copy of a stream for robustness evaluation.

    kind:
      * ``sparse``       -- uniformly drop events until ceil(4/5) of the
        original count remain.
      * ``noise``        -- apply m = round(noise_frac * count) modifications;
        each is a fair coin flip between deleting a uniformly chosen
        surviving event and inserting a uniform random event inside the
        stream's space-time box.
      * ``sparse_noise`` -- sparse then noise, in that order.

    The modification sequence is a pure function of ``seed`` (numpy
    default_rng), drawn in this order per modification: coin flip via
    ``integers(0, 2)`` (0 = delete, 1 = insert); a delete draws one index
    with ``integers(0, n_alive)`` into the surviving events in timestamp
    order; an insert draws t, x, y with ``integers`` over the closed time
    range / open spatial ranges and polarity via ``integers(0, 2)``
    mapped to {-1, +1}. Output is re-sorted by timestamp.
    """
    if kind not in ("sparse", "noise", "sparse_noise"):
        raise ValueError(f"unknown variant kind: {kind!r}")
    if not (0.0 <= noise_frac <= 0.01):
        raise ValueError("noise_frac must lie in [0, 0.01]")

    rng = np.random.default_rng(seed)
    out = stream

    if kind in ("sparse", "sparse_noise"):
        n = len(out)
        target = -((-4 * n) // 5)  # ceil(4n/5)
        keep = np.sort(rng.choice(n, size=target, replace=False)) if n else \
            np.empty(0, dtype=np.int64)
        out = out.replace_events(out.t[keep], out.x[keep], out.y[keep], out.p[keep])

    if kind in ("noise", "sparse_noise"):
        m = int(math.floor(noise_frac * len(out) + 0.5))
        t = list(out.t)
        x = list(out.x)
        y = list(out.y)
        p = list(out.p)
        for _ in range(m):
            if int(rng.integers(0, 2)) == 0 and t:
                i = int(rng.integers(0, len(t)))
                del t[i], x[i], y[i], p[i]
            else:
                t.append(int(rng.integers(out.t_start, out.t_end + 1)))
                x.append(int(rng.integers(0, out.width)))
                y.append(int(rng.integers(0, out.height)))
                p.append(1 if int(rng.integers(0, 2)) else -1)
        order = np.argsort(np.asarray(t, dtype=np.int64), kind="stable")
        out = out.replace_events(
            np.asarray(t, dtype=np.uint64)[order],
            np.asarray(x, dtype=np.uint16)[order],
            np.asarray(y, dtype=np.uint16)[order],
            np.asarray(p, dtype=np.int8)[order],
        )

    return out
