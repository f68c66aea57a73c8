"""EVT0 event file format.

Layout (all little-endian):

    header, 16 bytes:
        magic   4s   b"EVT0"
        width   u16
        height  u16
        count   u32  high word of the 64-bit event count (0 below 2^32)
        count   u32  low word
    records, 14 bytes each:
        t_us    u64
        x       u16
        y       u16
        polarity i8
        pad     u8   (zero)

A JSON sidecar ``<name>.meta.json`` next to the file carries t_start, t_end
and the generator config hash (empty string when unknown).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .events import EventStream

MAGIC = b"EVT0"
_HEADER = struct.Struct("<4sHHII")
_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1"), ("pad", "<u1")]
)


class EvtFormatError(Exception):
    """Raised when an EVT0 file is corrupt or truncated."""


def config_hash(config) -> str:
    """Stable sha256 of a JSON-serializable config object."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_evt(path, stream: EventStream, generator_config=None) -> None:
    path = Path(path)
    n = len(stream)
    header = _HEADER.pack(MAGIC, stream.width, stream.height,
                          (n >> 32) & 0xFFFFFFFF, n & 0xFFFFFFFF)
    records = np.zeros(n, dtype=_RECORD_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())
    meta = {
        "t_start": stream.t_start,
        "t_end": stream.t_end,
        "config_hash": config_hash(generator_config) if generator_config is not None else "",
    }
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def read_evt(path) -> EventStream:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EvtFormatError(f"{path}: truncated header")
    magic, width, height, hi, lo = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EvtFormatError(f"{path}: bad magic {magic!r}")
    n = (hi << 32) | lo
    body = raw[_HEADER.size:]
    if len(body) != n * _RECORD_DTYPE.itemsize:
        raise EvtFormatError(
            f"{path}: expected {n} records, payload holds "
            f"{len(body) // _RECORD_DTYPE.itemsize}"
        )
    records = np.frombuffer(body, dtype=_RECORD_DTYPE)

    sidecar = path.with_name(path.name + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        t_start, t_end = int(meta["t_start"]), int(meta["t_end"])
    elif n:
        t_start, t_end = int(records["t"][0]), int(records["t"][-1])
    else:
        t_start = t_end = 0

    return EventStream(width, height, t_start, t_end,
                       records["t"].copy(), records["x"].copy(),
                       records["y"].copy(), records["p"].copy())
