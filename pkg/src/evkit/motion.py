"""Synthetic camera-motion video generation from a single still image.

A source image is resized onto a 280x280 canvas; every output frame is the
224x224 center crop of that canvas under a composited transform. Two motion
parameter sets are sampled: the first repositions the original image to a
randomized start frame, the second carries the start frame to the end frame
and is linearly interpolated across the clip. Four modes can combine:
translation (8 compass directions), scaling, rotation, and perspective.

Mode frequencies follow fixed categorical tables (one per parameter set);
magnitude distributions are declared configuration. Sampled magnitudes are
jointly shrunk until the crop window's sampling footprint stays inside the
canvas for every interpolated frame, so no frame ever reads out of bounds.

Every frame resamples the original canvas once (single bilinear pass per
frame, no accumulation), which keeps blur independent of frame index.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .events import GrayFrame

CANVAS_SIZE = 280
CROP_SIZE = 224
DEFAULT_FRAMES = 12
DEFAULT_FPS = 30.0

# Categorical mode tables, in percent. Keyed by parameter-set name.
TRANSLATION_MODES = (
    "left", "right", "up", "down",
    "upper_left", "upper_right", "lower_left", "lower_right", "none",
)
TRANSLATION_PCT = {
    "org_to_start": (15.93, 15.81, 16.13, 15.67, 3.69, 3.76, 3.74, 3.77, 21.49),
    "start_to_end": (20.60, 20.39, 20.53, 20.86, 4.47, 4.30, 4.40, 4.46, 0.00),
}
SCALING_MODES = ("zoom_in", "zoom_out", "none")
SCALING_PCT = {
    "org_to_start": (22.54, 9.99, 67.48),
    "start_to_end": (20.54, 12.64, 66.82),
}
ROTATION_MODES = ("cw", "ccw", "none")
ROTATION_PCT = {
    "org_to_start": (11.60, 11.65, 76.75),
    "start_to_end": (13.11, 13.04, 73.85),
}
PERSPECTIVE_PCT = {  # (on, off)
    "org_to_start": (34.72, 65.28),
    "start_to_end": (36.60, 63.40),
}

_DIRECTION_VECTORS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "upper_left": (-math.sqrt(0.5), -math.sqrt(0.5)),
    "upper_right": (math.sqrt(0.5), -math.sqrt(0.5)),
    "lower_left": (-math.sqrt(0.5), math.sqrt(0.5)),
    "lower_right": (math.sqrt(0.5), math.sqrt(0.5)),
    "none": (0.0, 0.0),
}


@dataclass
class MotionConfig:
    """Magnitude ranges for each motion mode, plus canvas geometry."""

    canvas_size: int = CANVAS_SIZE
    crop_size: int = CROP_SIZE
    translation_px: tuple = (8.0, 40.0)
    zoom_in_factor: tuple = (1.05, 1.25)
    zoom_out_factor: tuple = (0.80, 0.95)
    rotation_deg: tuple = (3.0, 12.0)
    perspective_px: tuple = (2.0, 10.0)


@dataclass
class MotionParams:
    """One sampled motion-parameter set (modes plus realized magnitudes)."""

    translation_dir: str = "none"
    translation_mag: float = 0.0
    scale_kind: str = "none"
    scale_factor: float = 1.0
    rotation_kind: str = "none"
    rotation_deg: float = 0.0
    perspective: bool = False
    corner_offsets: np.ndarray = field(
        default_factory=lambda: np.zeros((4, 2), dtype=np.float64)
    )

    def __post_init__(self):
        self.corner_offsets = np.asarray(self.corner_offsets, dtype=np.float64)
        if self.corner_offsets.shape != (4, 2):
            raise ValueError("corner_offsets must be (4, 2)")

    def __eq__(self, other):
        if not isinstance(other, MotionParams):
            return NotImplemented
        return (
            (self.translation_dir, self.translation_mag, self.scale_kind,
             self.scale_factor, self.rotation_kind, self.rotation_deg,
             self.perspective)
            == (other.translation_dir, other.translation_mag, other.scale_kind,
                other.scale_factor, other.rotation_kind, other.rotation_deg,
                other.perspective)
            and np.array_equal(self.corner_offsets, other.corner_offsets)
        )

    @classmethod
    def identity(cls) -> "MotionParams":
        return cls()

    def scaled(self, lam: float) -> "MotionParams":
        """Shrink all magnitudes toward the identity by factor ``lam``."""
        return MotionParams(
            self.translation_dir,
            self.translation_mag * lam,
            self.scale_kind,
            1.0 + (self.scale_factor - 1.0) * lam,
            self.rotation_kind,
            self.rotation_deg * lam,
            self.perspective,
            self.corner_offsets * lam,
        )

    def interpolated(self, u: float) -> "MotionParams":
        """Linear interpolation between the identity (u=0) and self (u=1)."""
        return self.scaled(u)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["corner_offsets"] = self.corner_offsets.tolist()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "MotionParams":
        return cls(
            d["translation_dir"], d["translation_mag"],
            d["scale_kind"], d["scale_factor"],
            d["rotation_kind"], d["rotation_deg"],
            d["perspective"], np.asarray(d["corner_offsets"], dtype=np.float64),
        )


@dataclass(eq=False)
class VideoClip:
    frames: list          # of GrayFrame
    fps: float
    positions: list       # per-frame dict: fraction, homography, params

    def __post_init__(self):
        if not self.frames:
            raise ValueError("clip must contain at least one frame")
        w, h = self.frames[0].width, self.frames[0].height
        if any((f.width, f.height) != (w, h) for f in self.frames):
            raise ValueError("all frames must share dimensions")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def frame_times_us(self) -> list[int]:
        step = round(1_000_000 / self.fps)
        return [i * step for i in range(self.n_frames)]


def _draw_categorical(rng, modes, pcts) -> str:
    total = sum(pcts)
    u = rng.random() * total
    acc = 0.0
    for mode, pct in zip(modes, pcts):
        acc += pct
        if u < acc:
            return mode
    return modes[-1]


def _uniform(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo + (hi - lo) * rng.random())


def sample_motion(seed: int, which: str, config: MotionConfig | None = None) -> MotionParams:
    """Draw one motion-parameter set for ``which`` in
    {org_to_start, start_to_end}.

    Categorical draws follow the published mode tables; start_to_end always
    includes translation (its "none" share is zero). Magnitudes are drawn
    from the configured ranges. Deterministic per (seed, which).
    """
    if which not in ("org_to_start", "start_to_end"):
        raise ValueError(f"unknown parameter set: {which!r}")
    cfg = config or MotionConfig()
    rng = np.random.default_rng([int(seed), 0 if which == "org_to_start" else 1])

    tdir = _draw_categorical(rng, TRANSLATION_MODES, TRANSLATION_PCT[which])
    tmag = _uniform(rng, cfg.translation_px) if tdir != "none" else 0.0

    skind = _draw_categorical(rng, SCALING_MODES, SCALING_PCT[which])
    if skind == "zoom_in":
        sfac = _uniform(rng, cfg.zoom_in_factor)
    elif skind == "zoom_out":
        sfac = _uniform(rng, cfg.zoom_out_factor)
    else:
        sfac = 1.0

    rkind = _draw_categorical(rng, ROTATION_MODES, ROTATION_PCT[which])
    rdeg = _uniform(rng, cfg.rotation_deg) if rkind != "none" else 0.0

    pon = _draw_categorical(rng, ("on", "off"), PERSPECTIVE_PCT[which]) == "on"
    offsets = np.zeros((4, 2))
    if pon:
        mag = _uniform(rng, cfg.perspective_px)
        offsets = (rng.random((4, 2)) * 2.0 - 1.0) * mag

    return MotionParams(tdir, tmag, skind, sfac, rkind, rdeg, pon, offsets)


# ---------------------------------------------------------------------------
# Homography construction and warping


def _homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Solve the 8-DOF projective map taking four src points to dst points."""
    a = []
    b = []
    for (sx, sy), (dx, dy) in zip(src, dst):
        a.append([sx, sy, 1, 0, 0, 0, -dx * sx, -dx * sy])
        b.append(dx)
        a.append([0, 0, 0, sx, sy, 1, -dy * sx, -dy * sy])
        b.append(dy)
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]
    )


def params_homography(params: MotionParams, canvas_size: int = CANVAS_SIZE) -> np.ndarray:
    """Forward 3x3 map (scale, rotate, perspective, translate about center)."""
    c = (canvas_size - 1) / 2.0
    s = params.scale_factor
    scale = np.diag([s, s, 1.0])

    ang = math.radians(params.rotation_deg)
    if params.rotation_kind == "ccw":
        ang = -ang
    elif params.rotation_kind == "none":
        ang = 0.0
    ca, sa = math.cos(ang), math.sin(ang)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])

    if params.perspective:
        half = canvas_size / 2.0
        corners = np.array(
            [[-half, -half], [half, -half], [half, half], [-half, half]]
        )
        persp = _homography_from_points(corners, corners + params.corner_offsets)
    else:
        persp = np.eye(3)

    dx, dy = _DIRECTION_VECTORS[params.translation_dir]
    trans = np.eye(3)
    trans[0, 2] = dx * params.translation_mag
    trans[1, 2] = dy * params.translation_mag

    center = np.eye(3)
    center[0, 2] = c
    center[1, 2] = c
    uncenter = np.eye(3)
    uncenter[0, 2] = -c
    uncenter[1, 2] = -c
    return center @ trans @ persp @ rot @ scale @ uncenter


def apply_homography_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    homo = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    mapped = homo @ h.T
    return mapped[:, :2] / mapped[:, 2:3]


def warp_homography(src: np.ndarray, h: np.ndarray, out_shape=None,
                    check_bounds: bool = False) -> np.ndarray:
    """Warp ``src`` by forward map ``h`` via inverse-mapped bilinear sampling.

    Sampling positions are clamped to the image edge. With
    ``check_bounds=True`` an out-of-image sampling position raises, which the
    clip synthesizer uses to enforce its canvas-containment guarantee.
    """
    src = np.asarray(src, dtype=np.float64)
    out_h, out_w = out_shape or src.shape
    inv = np.linalg.inv(h)
    ys, xs = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    pts = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)
    mapped = apply_homography_points(inv, pts)
    sx = mapped[:, 0].reshape(out_h, out_w)
    sy = mapped[:, 1].reshape(out_h, out_w)
    if check_bounds:
        if (sx.min() < 0.0 or sx.max() > src.shape[1] - 1.0
                or sy.min() < 0.0 or sy.max() > src.shape[0] - 1.0):
            raise RuntimeError("warp samples outside the canvas")
    return _bilinear_sample(src, sx, sy)


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy, sx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, sx, sy)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma from an (H, W, 3) RGB array; passthrough for 2-D."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    raise ValueError("expected (H, W) grayscale or (H, W, 3) RGB")


def center_crop(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape
    top = (h - size) // 2
    left = (w - size) // 2
    return arr[top:top + size, left:left + size]


# ---------------------------------------------------------------------------
# Clip synthesis


def _crop_corners(canvas_size: int, crop_size: int) -> np.ndarray:
    off = (canvas_size - crop_size) // 2
    lo, hi = float(off), float(off + crop_size - 1)
    return np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]])


def _frames_in_bounds(org: MotionParams, s2e: MotionParams, n_frames: int,
                      cfg: MotionConfig) -> bool:
    corners = _crop_corners(cfg.canvas_size, cfg.crop_size)
    h_org = params_homography(org, cfg.canvas_size)
    limit = cfg.canvas_size - 1.0
    for i in range(n_frames):
        u = i / (n_frames - 1) if n_frames > 1 else 0.0
        h = params_homography(s2e.interpolated(u), cfg.canvas_size) @ h_org
        src = apply_homography_points(np.linalg.inv(h), corners)
        if src.min() < 0.0 or src.max() > limit:
            return False
    return True


def fit_to_canvas(org: MotionParams, s2e: MotionParams, n_frames: int,
                  cfg: MotionConfig, shrink: float = 0.9, max_iter: int = 80):
    """Jointly shrink both parameter sets until every frame's crop window
    samples strictly inside the canvas. Returns the clamped pair."""
    lam = 1.0
    for _ in range(max_iter):
        a, b = org.scaled(lam), s2e.scaled(lam)
        if _frames_in_bounds(a, b, n_frames, cfg):
            return a, b
        lam *= shrink
    return MotionParams.identity(), MotionParams.identity()


def synthesize_clip(image, seed: int, n_frames: int = DEFAULT_FRAMES,
                    fps: float = DEFAULT_FPS, config: MotionConfig | None = None,
                    org_params: MotionParams | None = None,
                    s2e_params: MotionParams | None = None) -> VideoClip:
    """Generate an n-frame grayscale clip from one image.

    The image (GrayFrame, 2-D array, or RGB array, at least 64x64) is
    resized to the canvas; frame i is the center crop of the canvas under
    H(start_to_end at i/(n-1)) o H(org_to_start). Explicit parameter sets
    may be passed to bypass sampling; they are still clamped to the canvas.
    """
    cfg = config or MotionConfig()
    if isinstance(image, GrayFrame):
        arr = image.data
    else:
        arr = to_grayscale(image)
    if arr.shape[0] < 64 or arr.shape[1] < 64:
        raise ValueError("input image must be at least 64x64")

    canvas = resize_bilinear(arr, cfg.canvas_size, cfg.canvas_size)
    np.clip(canvas, 0.0, 255.0, out=canvas)

    if org_params is None:
        org_params = sample_motion(seed, "org_to_start", cfg)
    if s2e_params is None:
        s2e_params = sample_motion(seed, "start_to_end", cfg)
    org_params, s2e_params = fit_to_canvas(org_params, s2e_params, n_frames, cfg)

    h_org = params_homography(org_params, cfg.canvas_size)
    off = (cfg.canvas_size - cfg.crop_size) // 2

    frames = []
    positions = []
    for i in range(n_frames):
        u = i / (n_frames - 1) if n_frames > 1 else 0.0
        step = s2e_params.interpolated(u)
        h = params_homography(step, cfg.canvas_size) @ h_org
        full = warp_homography(canvas, h, check_bounds=False)
        crop = full[off:off + cfg.crop_size, off:off + cfg.crop_size]
        # Containment is enforced by fit_to_canvas; re-verify cheaply.
        src = apply_homography_points(
            np.linalg.inv(h), _crop_corners(cfg.canvas_size, cfg.crop_size))
        if src.min() < 0.0 or src.max() > cfg.canvas_size - 1.0:
            raise RuntimeError("crop escaped the canvas after clamping")
        frames.append(GrayFrame.from_array(np.clip(crop, 0.0, 255.0)))
        positions.append({
            "frame": i,
            "fraction": u,
            "homography": h.tolist(),
            "org_params": org_params.to_json_dict(),
            "step_params": step.to_json_dict(),
        })
    return VideoClip(frames, fps, positions)


# ---------------------------------------------------------------------------
# Clip persistence: binary PGM frames + positions.json + clip.json


def write_pgm(path, frame: GrayFrame) -> None:
    data = np.clip(np.rint(frame.data), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path) -> GrayFrame:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    data = np.frombuffer(raw[m.end():m.end() + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return GrayFrame(w, h, data.reshape(h, w).astype(np.float64))


def write_clip(clip: VideoClip, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_pgm(out / f"frame_{i:03d}.pgm", frame)
    (out / "positions.json").write_text(
        json.dumps(clip.positions, sort_keys=True, indent=1) + "\n")
    (out / "clip.json").write_text(json.dumps(
        {"n_frames": clip.n_frames, "fps": clip.fps,
         "width": clip.width, "height": clip.height},
        sort_keys=True, indent=1) + "\n")


def read_clip(clip_dir) -> VideoClip:
    d = Path(clip_dir)
    meta = json.loads((d / "clip.json").read_text())
    frames = [read_pgm(d / f"frame_{i:03d}.pgm") for i in range(meta["n_frames"])]
    positions = []
    pos_path = d / "positions.json"
    if pos_path.exists():
        positions = json.loads(pos_path.read_text())
    else:
        positions = [{"frame": i} for i in range(len(frames))]
    return VideoClip(frames, float(meta["fps"]), positions)
