"""Build, persist, and reload pre-training samples.

A sample pairs an event voxel with the temporal intensity difference map of
its flanking frames and a stand-in target feature vector. One shard file is
written per source image; shards are immutable after an atomic rename and a
manifest ties every record to its shard, byte offset, and content hash.

Shard layout (little-endian):

    header: magic b"SHD0", u32 version (1), u32 record count
    per record, four u32-length-prefixed sections in order:
        voxel   raw f64 cells, C order (shape in the meta section)
        diff    raw f64 pixels
        feature raw f64 vector
        meta    UTF-8 JSON: image_id, segment, shapes, config_hash
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import DiffMap, EventVoxel, diff_map, segment_stream, voxelize
from .evt_io import config_hash
from .model import make_target_feature
from .motion import synthesize_clip
from .simulator import DvsConfig, default_config, simulate

logger = logging.getLogger(__name__)

SHARD_MAGIC = b"SHD0"
SHARD_VERSION = 1
_HEADER = struct.Struct("<4sII")
_LEN = struct.Struct("<I")

MANIFEST_VERSION = 1


class ShardFormatError(Exception):
    """Raised for corrupt or truncated shard files."""


@dataclass
class BuildConfig:
    n_frames: int = 12
    fps: float = 30.0
    bins: int = 5
    feature_dim: int = 64
    dvs: DvsConfig = None

    def __post_init__(self):
        if self.dvs is None:
            self.dvs = default_config()

    def to_json_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "fps": self.fps,
            "bins": self.bins,
            "feature_dim": self.feature_dim,
            "dvs": self.dvs.to_json_dict(),
        }


@dataclass(eq=False)
class SampleRecord:
    voxel: EventVoxel
    diff: DiffMap
    target_feature: np.ndarray
    image_id: str
    segment: int
    config_hash: str

    def __post_init__(self):
        self.target_feature = np.asarray(self.target_feature, dtype=np.float64)
        if (self.voxel.width, self.voxel.height) != (self.diff.width, self.diff.height):
            raise ValueError("voxel and diff map must share dimensions")
        if self.segment < 1:
            raise ValueError("segment index starts at 1 (segment 0 is dropped)")


# ---------------------------------------------------------------------------
# Shard IO


def _section(data: bytes) -> bytes:
    return _LEN.pack(len(data)) + data


def _record_bytes(record: SampleRecord) -> bytes:
    meta = {
        "image_id": record.image_id,
        "segment": record.segment,
        "config_hash": record.config_hash,
        "voxel_shape": list(record.voxel.data.shape),
        "diff_shape": list(record.diff.data.shape),
        "feature_len": int(record.target_feature.size),
    }
    return (
        _section(record.voxel.data.astype("<f8").tobytes())
        + _section(record.diff.data.astype("<f8").tobytes())
        + _section(record.target_feature.astype("<f8").tobytes())
        + _section(json.dumps(meta, sort_keys=True).encode())
    )


def write_shard(path, records) -> list[int]:
    """Write records; returns the byte offset of each. Atomic via rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    offsets = []
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(SHARD_MAGIC, SHARD_VERSION, len(records)))
        for record in records:
            offsets.append(fh.tell())
            fh.write(_record_bytes(record))
    tmp.rename(path)
    return offsets


def write_sample(shard, record: SampleRecord) -> None:
    """Append one record to a shard, creating it if needed."""
    shard = Path(shard)
    if shard.exists():
        records = [read_sample(shard, i) for i in range(shard_record_count(shard))]
    else:
        records = []
    records.append(record)
    write_shard(shard, records)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ShardFormatError(f"truncated shard: short read in {what}")
    return data


def _read_section(fh, what: str) -> bytes:
    (length,) = _LEN.unpack(_read_exact(fh, _LEN.size, what + " length"))
    return _read_exact(fh, length, what)


def shard_record_count(path) -> int:
    with open(path, "rb") as fh:
        magic, version, count = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
    if magic != SHARD_MAGIC:
        raise ShardFormatError(f"{path}: bad shard magic {magic!r}")
    if version != SHARD_VERSION:
        raise ShardFormatError(f"{path}: unsupported shard version {version}")
    return count


def _read_record_at(fh, what: str) -> SampleRecord:
    voxel_raw = _read_section(fh, what + " voxel")
    diff_raw = _read_section(fh, what + " diff")
    feat_raw = _read_section(fh, what + " feature")
    meta_raw = _read_section(fh, what + " meta")
    try:
        meta = json.loads(meta_raw.decode())
    except ValueError as exc:
        raise ShardFormatError(f"bad metadata JSON in {what}: {exc}") from None
    vshape = tuple(meta["voxel_shape"])
    dshape = tuple(meta["diff_shape"])
    try:
        voxel_data = np.frombuffer(voxel_raw, dtype="<f8").reshape(vshape).copy()
        diff_data = np.frombuffer(diff_raw, dtype="<f8").reshape(dshape).copy()
    except ValueError as exc:
        raise ShardFormatError(f"section/shape mismatch in {what}: {exc}") from None
    feature = np.frombuffer(feat_raw, dtype="<f8").copy()
    if feature.size != meta["feature_len"]:
        raise ShardFormatError(f"feature length mismatch in {what}")
    voxel = EventVoxel(vshape[1], vshape[0], vshape[2], voxel_data)
    diff = DiffMap(dshape[1], dshape[0], diff_data)
    return SampleRecord(voxel, diff, feature, meta["image_id"],
                        int(meta["segment"]), meta["config_hash"])


def read_sample(shard, index: int) -> SampleRecord:
    count = shard_record_count(shard)
    if not (0 <= index < count):
        raise IndexError(f"record {index} out of range (shard holds {count})")
    with open(shard, "rb") as fh:
        fh.seek(_HEADER.size)
        for i in range(index):
            for part in ("voxel", "diff", "feature", "meta"):
                _read_section(fh, f"record {i} {part}")
        return _read_record_at(fh, f"record {index}")


def read_all_samples(shard) -> list[SampleRecord]:
    count = shard_record_count(shard)
    with open(shard, "rb") as fh:
        fh.seek(_HEADER.size)
        return [_read_record_at(fh, f"record {i}") for i in range(count)]


# ---------------------------------------------------------------------------
# Dataset building


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".pgm", ".bmp")


def _load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.float64)


def build_image_samples(image: np.ndarray, image_id: str, seed: int,
                        config: BuildConfig):
    """Clip -> events -> per-segment records for one image.

    The first inter-frame segment is dropped for its sparsity, so the
    default 12 frames yield 11 kept-segment boundaries and 10 records.
    Returns (records, clip, stream, boundaries) where boundaries are the
    frame timestamps delimiting the kept segments.
    """
    clip = synthesize_clip(image, seed=seed, n_frames=config.n_frames,
                           fps=config.fps)
    dvs = DvsConfig(**{**config.dvs.to_json_dict(), "seed": seed})
    stream = simulate(clip, dvs)
    chash = config_hash(config.to_json_dict())

    # The simulation grid may extend one resolution step past the last frame
    # time; fold that tail into the final inter-frame segment.
    frame_times = list(clip.frame_times_us())
    frame_times[-1] = max(frame_times[-1], stream.t_end)
    segments = segment_stream(stream, frame_times)
    boundaries = frame_times[1:]

    feature = make_target_feature(clip.frames[0], seed=seed,
                                  dim=config.feature_dim)
    records = []
    for i in range(1, len(segments)):
        voxel = voxelize(segments[i], config.bins)
        diff = diff_map(clip.frames[i], clip.frames[i + 1])
        records.append(SampleRecord(voxel, diff, feature.copy(), image_id,
                                    segment=i, config_hash=chash))
    return records, clip, stream, boundaries


def _image_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), 17, index])
               .generate_state(1)[0])


def build_dataset(image_dir, out_dir, config: BuildConfig | None = None,
                  seed: int = 0, workers: int = 1) -> dict:
    """Generate shards for every readable image under ``image_dir``.

    Unreadable images are skipped with a warning; zero usable images is an
    error. Per-image seeds derive from the master seed and the image's
    position in sorted filename order, so results do not depend on worker
    count. Returns the manifest dict (also written to manifest.json).
    """
    config = config or BuildConfig()
    image_dir = Path(image_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    jobs = []
    for index, path in enumerate(paths):
        try:
            image = _load_image(path)
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            continue
        jobs.append((index, path, image))
    if not jobs:
        raise RuntimeError(f"no readable images in {image_dir}")

    def run_job(job):
        index, path, image = job
        image_id = path.stem
        records, _, _, _ = build_image_samples(
            image, image_id, _image_seed(seed, index), config)
        shard_name = f"{image_id}.shard"
        offsets = write_shard(out / shard_name, records)
        entries = []
        for record, offset in zip(records, offsets):
            digest = hashlib.sha256(_record_bytes(record)).hexdigest()
            entries.append({
                "shard": shard_name,
                "offset": offset,
                "image_id": record.image_id,
                "segment": record.segment,
                "sha256": digest,
            })
        return entries

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_image = list(pool.map(run_job, jobs))
    else:
        per_image = [run_job(job) for job in jobs]

    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": config_hash(config.to_json_dict()),
        "records": [entry for entries in per_image for entry in entries],
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def load_dataset(dataset_dir) -> list[SampleRecord]:
    """Read every record listed in a dataset directory's manifest."""
    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    samples = []
    by_shard: dict[str, list[int]] = {}
    for entry in manifest["records"]:
        by_shard.setdefault(entry["shard"], [])
    for shard in by_shard:
        samples.extend(read_all_samples(root / shard))
    return samples
