"""Video-to-events conversion with a v2e-style DVS pixel model.

Each pixel tracks the log of its (linearized) intensity, optionally
low-pass filtered to model the photoreceptor bandwidth, and emits an event
whenever the filtered signal departs from a per-pixel reference level by a
full firing threshold; the reference then advances by the emitted
multiples, so a large step emits one event per threshold crossed. Hardware
non-idealities are modeled as a per-pixel Gaussian threshold mismatch
(drawn once per stream), ON-biased leak events, and polarity-balanced shot
noise with a log-normal per-pixel rate spread.

Frames are linearly interpolated in intensity onto a fixed simulation grid
whose step is the configured timestamp resolution, so all event timestamps
are exact integer-microsecond multiples of that resolution. The grid's last
sample is pushed past the final frame time (holding the final intensity),
which guarantees the full inter-frame change is processed.

All randomness derives from the config seed through named substreams
(threshold mismatch, leak, shot noise), each drawing per-pixel arrays in
row-major order; results are therefore independent of any internal
batching or parallel split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .events import EventStream
from .motion import VideoClip

LIN_LOG_EPS = 0.02 * 255.0  # linearization offset before log, in DN
_THRESHOLD_FLOOR = 0.01

# Substream tags for per-kind RNG derivation from the config seed.
_STREAM_THRESH = 1
_STREAM_LEAK = 2
_STREAM_SHOT = 3


@dataclass
class DvsConfig:
    pos_thres: float = 0.2
    neg_thres: float = 0.2
    sigma_thres: float = 0.05
    cutoff_hz: float = 15.0
    leak_rate_hz: float = 0.1
    leak_jitter_fraction: float = 0.1
    noise_rate_cov_decades: float = 0.1
    shot_noise_rate_hz: float = 5.0
    timestamp_resolution: float = 0.003  # seconds
    exposure_duration: float = 0.005  # seconds; metadata for renderers
    seed: int = 0
    noiseless: bool = False

    def __post_init__(self):
        if self.pos_thres <= 0 or self.neg_thres <= 0:
            raise ValueError("thresholds must be positive")
        if self.sigma_thres < 0 or self.leak_rate_hz < 0 or self.shot_noise_rate_hz < 0:
            raise ValueError("rates must be non-negative")
        if self.timestamp_resolution <= 0:
            raise ValueError("timestamp_resolution must be positive")

    def to_json_dict(self) -> dict:
        return asdict(self)


def default_config(seed: int = 0) -> DvsConfig:
    """The production noisy-model configuration (cutoff lowered to 15 Hz)."""
    return DvsConfig(seed=seed)


def lin_log(intensity: np.ndarray) -> np.ndarray:
    """Log intensity with a dark-pixel linearization offset."""
    return np.log(np.asarray(intensity, dtype=np.float64) + LIN_LOG_EPS)


def _interp_frames(frames: np.ndarray, frame_times: np.ndarray, t: float) -> np.ndarray:
    """Linear intensity interpolation at time t (µs), clamped at the ends."""
    if t <= frame_times[0]:
        return frames[0]
    if t >= frame_times[-1]:
        return frames[-1]
    j = int(np.searchsorted(frame_times, t, side="right")) - 1
    t0, t1 = frame_times[j], frame_times[j + 1]
    w = (t - t0) / (t1 - t0)
    return frames[j] * (1.0 - w) + frames[j + 1] * w


def simulate(clip: VideoClip, config: DvsConfig) -> EventStream:
    """Convert a clip into an event stream under the configured pixel model."""
    if clip.n_frames < 2:
        raise ValueError("clip must contain at least two frames")

    height, width = clip.height, clip.width
    frames = np.stack([f.data for f in clip.frames])
    frame_times = np.asarray(clip.frame_times_us(), dtype=np.float64)

    step_us = round(config.timestamp_resolution * 1e6)
    if step_us <= 0:
        raise ValueError("timestamp_resolution below 1 microsecond")
    n_steps = math.ceil(frame_times[-1] / step_us)
    t_end = n_steps * step_us

    noiseless = config.noiseless
    sigma = 0.0 if noiseless else config.sigma_thres
    leak_rate = 0.0 if noiseless else config.leak_rate_hz
    shot_rate = 0.0 if noiseless else config.shot_noise_rate_hz

    # Per-pixel effective thresholds, drawn once per stream.
    if sigma > 0:
        rng_thresh = np.random.default_rng([int(config.seed), _STREAM_THRESH])
        pos_thres = np.maximum(
            rng_thresh.normal(config.pos_thres, sigma, (height, width)),
            _THRESHOLD_FLOOR)
        neg_thres = np.maximum(
            rng_thresh.normal(config.neg_thres, sigma, (height, width)),
            _THRESHOLD_FLOOR)
    else:
        pos_thres = np.full((height, width), config.pos_thres)
        neg_thres = np.full((height, width), config.neg_thres)

    # Per-pixel noise rates (Hz). Leak is ON-biased; shot is split by polarity.
    if leak_rate > 0:
        rng_leak = np.random.default_rng([int(config.seed), _STREAM_LEAK])
        leak_px = leak_rate * (
            1.0 + config.leak_jitter_fraction
            * rng_leak.standard_normal((height, width)))
        np.clip(leak_px, 0.0, None, out=leak_px)
    else:
        rng_leak = None
        leak_px = None
    if shot_rate > 0:
        rng_shot = np.random.default_rng([int(config.seed), _STREAM_SHOT])
        shot_px = shot_rate * np.power(
            10.0,
            config.noise_rate_cov_decades
            * rng_shot.standard_normal((height, width)))
    else:
        rng_shot = None
        shot_px = None

    lp = lin_log(frames[0])
    base = lp.copy()

    dt_s = step_us * 1e-6
    if config.cutoff_hz > 0:
        tau = 1.0 / (2.0 * math.pi * config.cutoff_hz)
        alpha = dt_s / (tau + dt_s)
    else:
        alpha = None

    ts_chunks, x_chunks, y_chunks, p_chunks = [], [], [], []

    def emit(counts: np.ndarray, polarity: int, t_now: int):
        yy, xx = np.nonzero(counts)
        if len(yy) == 0:
            return
        reps = counts[yy, xx].astype(np.int64)
        ys = np.repeat(yy, reps)
        xs = np.repeat(xx, reps)
        ts_chunks.append(np.full(len(ys), t_now, dtype=np.uint64))
        x_chunks.append(xs.astype(np.uint16))
        y_chunks.append(ys.astype(np.uint16))
        p_chunks.append(np.full(len(ys), polarity, dtype=np.int8))

    for k in range(1, n_steps + 1):
        t_now = k * step_us
        log_i = lin_log(_interp_frames(frames, frame_times, float(t_now)))
        lp = log_i if alpha is None else lp + alpha * (log_i - lp)

        diff = lp - base
        n_pos = np.floor_divide(diff, pos_thres).astype(np.int64)
        np.clip(n_pos, 0, None, out=n_pos)
        n_neg = np.floor_divide(-diff, neg_thres).astype(np.int64)
        np.clip(n_neg, 0, None, out=n_neg)
        base = base + n_pos * pos_thres - n_neg * neg_thres
        emit(n_pos, 1, t_now)
        emit(n_neg, -1, t_now)

        if leak_px is not None:
            leak_counts = rng_leak.poisson(leak_px * dt_s)
            emit(leak_counts, 1, t_now)
        if shot_px is not None:
            half = shot_px * (dt_s / 2.0)
            emit(rng_shot.poisson(half), 1, t_now)
            emit(rng_shot.poisson(half), -1, t_now)

    if ts_chunks:
        t = np.concatenate(ts_chunks)
        x = np.concatenate(x_chunks)
        y = np.concatenate(y_chunks)
        p = np.concatenate(p_chunks)
        # Total order (t, y, x, p) for byte-stable output.
        order = np.lexsort((p, x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
    else:
        t = np.empty(0, dtype=np.uint64)
        x = np.empty(0, dtype=np.uint16)
        y = np.empty(0, dtype=np.uint16)
        p = np.empty(0, dtype=np.int8)

    return EventStream(width, height, 0, int(t_end), t, x, y, p)
