"""Time-tag streams and the QTAGS binary file format.

File layout (little-endian)::

    header  magic "QTAGS\\0\\0\\1" (8) | resolution ps/unit u32 | party u8 | record_count u64
    record  time u64 (header units) | channel u8 | 7 reserved zero bytes

The header is 21 bytes, every record 16.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadHeader, BadMagic, BadRecord, TagFormatError, TruncatedFile, UnsortedRecords

MAGIC = b"QTAGS\x00\x00\x01"
HEADER = struct.Struct("<8sIBQ")
HEADER_SIZE = HEADER.size  # 21
RECORD_DTYPE = np.dtype([("time", "<u8"), ("channel", "u1"), ("reserved", "u1", (7,))])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16
PARTIES = ("A", "B")
CHANNEL_ANGLES = (0, 90, 45, -45)


@dataclass(eq=False)
class TagStream:
    """Detection events of one party: ``times`` in ps (int64, sorted) and
    ``channels`` 0..3 for the 0, 90, 45 and -45 degree detectors."""

    times: np.ndarray
    channels: np.ndarray
    party: str = "A"

    def __post_init__(self):
        self.times = np.ascontiguousarray(self.times, dtype=np.int64)
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if self.times.shape != self.channels.shape:
            raise ValueError("times and channels must have equal length")
        if self.party not in PARTIES:
            raise ValueError(f"party must be 'A' or 'B', got {self.party!r}")

    def __len__(self):
        return self.times.size

    @classmethod
    def empty(cls, party="A"):
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), party)

    @classmethod
    def merged(cls, parts, party):
        """Concatenate and stably sort by time."""
        times = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
        chans = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.uint8)
        order = np.argsort(times, kind="stable")
        return cls(times[order], chans[order], party)

    def between(self, start, stop):
        """Tags with ``start <= time < stop`` (ps)."""
        lo, hi = np.searchsorted(self.times, [start, stop], "left")
        return TagStream(self.times[lo:hi], self.channels[lo:hi], self.party)

    def is_sorted(self):
        return bool(np.all(self.times[1:] >= self.times[:-1]))

    def equals(self, other):
        return (self.party == other.party and np.array_equal(self.times, other.times)
                and np.array_equal(self.channels, other.channels))


@dataclass(frozen=True)
class TagFileHeader:
    resolution: int = 1
    party: int = 0
    record_count: int = 0
    magic: bytes = MAGIC

    def pack(self):
        return HEADER.pack(self.magic, self.resolution, self.party, self.record_count)


def encode(header: TagFileHeader, times, channels) -> bytes:
    times = np.asarray(times)
    channels = np.asarray(channels)
    if header.magic != MAGIC:
        raise BadMagic("header magic must be QTAGS\\0\\0\\1")
    if header.resolution < 1 or header.resolution > 0xFFFFFFFF:
        raise BadHeader(f"resolution {header.resolution} out of range")
    if header.party not in (0, 1):
        raise BadHeader(f"party byte must be 0 or 1, got {header.party}")
    if header.record_count != times.size or channels.size != times.size:
        raise BadHeader("record_count does not match the number of records")
    if times.size and (times.min() < 0):
        raise BadRecord("negative time")
    if channels.size and channels.max() > 3:
        raise BadRecord("channel out of range")
    if np.any(times[1:] < times[:-1]):
        raise UnsortedRecords("records must be sorted by time")
    rec = np.zeros(times.size, RECORD_DTYPE)
    rec["time"] = times
    rec["channel"] = channels
    return header.pack() + rec.tobytes()


def decode(data: bytes):
    """Parse a complete file image; returns ``(header, times, channels)``
    with times in file units."""
    if len(data) < HEADER_SIZE:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise BadMagic("bad magic")
        raise TruncatedFile(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, resolution, party, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic("bad magic")
    if resolution < 1:
        raise BadHeader("resolution must be >= 1")
    if party not in (0, 1):
        raise BadHeader(f"party byte must be 0 or 1, got {party}")
    body = len(data) - HEADER_SIZE
    if body < count * RECORD_SIZE:
        raise TruncatedFile(f"header announces {count} records, file holds {body // RECORD_SIZE}")
    if body > count * RECORD_SIZE:
        raise TagFormatError(f"{body - count * RECORD_SIZE} trailing bytes after {count} records")
    rec = np.frombuffer(data, RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    if count:
        if rec["reserved"].any():
            raise BadRecord("reserved record bytes must be zero")
        if rec["channel"].max() > 3:
            raise BadRecord("channel out of range")
        if rec["time"].max() > np.iinfo(np.int64).max:
            raise BadRecord("time exceeds the signed 64-bit range")
        if np.any(rec["time"][1:] < rec["time"][:-1]):
            raise UnsortedRecords("records are not sorted by time")
    header = TagFileHeader(resolution=resolution, party=party, record_count=count)
    return header, rec["time"].astype(np.int64), rec["channel"].copy()


def write_tags(path, header: TagFileHeader, times, channels):
    Path(path).write_bytes(encode(header, times, channels))


def read_tags(path):
    return decode(Path(path).read_bytes())


def save_stream(path, stream: TagStream, resolution=1):
    """Write a stream whose picosecond times are multiples of ``resolution``."""
    if resolution < 1:
        raise BadHeader("resolution must be >= 1")
    if np.any(stream.times % resolution):
        raise BadRecord(f"times are not multiples of the {resolution} ps resolution")
    header = TagFileHeader(resolution=resolution, party=PARTIES.index(stream.party), record_count=len(stream))
    write_tags(path, header, stream.times // resolution, stream.channels)


def load_stream(path) -> TagStream:
    header, times, channels = read_tags(path)
    return TagStream(times * header.resolution, channels, PARTIES[header.party])
