"""Reading and writing event-camera recordings plus dataset split management.

On-disk record layout (5 bytes per event):
    byte0 = x, byte1 = y, byte2 bit7 = polarity (1 = ON),
    (byte2 bits 6..0, byte3, byte4) = 23-bit big-endian timestamp in microseconds.

Datasets are directory trees of the form ``<root>/<split>/<label>/<name>``,
with the class index encoded in the directory name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

ON = 1
OFF = 0

RECORD_BYTES = 5
MAX_TIMESTAMP = (1 << 23) - 1


class EventIOError(Exception):
    """Base class for event I/O failures."""


class DecodeError(EventIOError):
    """Raised for malformed binary event data."""


class BoundsError(EventIOError):
    """Raised when a decoded event lies outside the sensor geometry."""


class EncodeError(EventIOError):
    """Raised when a stream cannot be represented in the binary layout."""


class ManifestError(EventIOError):
    """Raised when a dataset directory tree is missing or malformed."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


class EventStream:
    """Ordered event recording stored column-wise for fast processing.

    Coordinates are validated against the sensor geometry on construction;
    out-of-bounds events are an error, never clamped.
    """

    __slots__ = ("xs", "ys", "ts", "ps", "width", "height", "label")

    def __init__(self, xs, ys, ts, ps, width: int, height: int,
                 label: Optional[int] = None):
        self.xs = np.ascontiguousarray(xs, dtype=np.int64)
        self.ys = np.ascontiguousarray(ys, dtype=np.int64)
        self.ts = np.ascontiguousarray(ts, dtype=np.int64)
        self.ps = np.ascontiguousarray(ps, dtype=np.int64)
        n = len(self.xs)
        if not (len(self.ys) == len(self.ts) == len(self.ps) == n):
            raise ValueError("event columns must have equal length")
        self.width = int(width)
        self.height = int(height)
        self.label = label
        self._check_bounds()

    def _check_bounds(self):
        if len(self) == 0:
            return
        bad = ((self.xs < 0) | (self.xs >= self.width)
               | (self.ys < 0) | (self.ys >= self.height))
        if bad.any():
            i = int(np.argmax(bad))
            raise BoundsError(
                f"event {i} at ({int(self.xs[i])}, {int(self.ys[i])}) outside "
                f"{self.width}x{self.height} sensor")
        if (self.ts < 0).any():
            i = int(np.argmax(self.ts < 0))
            raise BoundsError(f"event {i} has negative timestamp {int(self.ts[i])}")

    @classmethod
    def empty(cls, width: int, height: int, label: Optional[int] = None) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, label)

    def __len__(self) -> int:
        return len(self.xs)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.xs[i]), int(self.ys[i]), int(self.ts[i]), int(self.ps[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and len(self) == len(other)
                and bool(np.array_equal(self.xs, other.xs))
                and bool(np.array_equal(self.ys, other.ys))
                and bool(np.array_equal(self.ts, other.ts))
                and bool(np.array_equal(self.ps, other.ps)))

    def __repr__(self) -> str:
        return (f"EventStream(n={len(self)}, {self.width}x{self.height}, "
                f"label={self.label})")


@dataclass
class DatasetManifest:
    """Deterministic listing of one dataset split."""

    split: str
    records: list = field(default_factory=list)  # (path, label) pairs
    class_count: int = 0
    width: Optional[int] = None
    height: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.records], dtype=np.int64)


def decode_nmnist_bin(data: bytes, width: int, height: int,
                      label: Optional[int] = None) -> EventStream:
    """Decode packed 5-byte event records into an EventStream.

    Raises DecodeError on a truncated trailing record (naming the byte
    offset) and BoundsError if any coordinate falls outside the sensor.
    """
    raw = np.frombuffer(data, dtype=np.uint8)
    if len(raw) % RECORD_BYTES != 0:
        offset = (len(raw) // RECORD_BYTES) * RECORD_BYTES
        raise DecodeError(
            f"truncated record at byte offset {offset}: "
            f"{len(raw) - offset} trailing bytes (need {RECORD_BYTES})")
    if len(raw) == 0:
        return EventStream.empty(width, height, label)
    rec = raw.reshape(-1, RECORD_BYTES).astype(np.int64)
    xs = rec[:, 0]
    ys = rec[:, 1]
    ps = (rec[:, 2] >> 7) & 1
    ts = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    bad = (xs >= width) | (ys >= height)
    if bad.any():
        i = int(np.argmax(bad))
        raise BoundsError(
            f"record at byte offset {i * RECORD_BYTES}: event "
            f"({int(xs[i])}, {int(ys[i])}) outside {width}x{height} sensor")
    return EventStream(xs, ys, ts, ps, width, height, label)


def encode_nmnist_bin(stream: EventStream) -> bytes:
    """Pack an EventStream into 5-byte records; exact inverse of decode."""
    if len(stream) == 0:
        return b""
    if (stream.xs >= 256).any() or (stream.ys >= 256).any():
        raise EncodeError("coordinates above 255 cannot be encoded")
    if (stream.ts > MAX_TIMESTAMP).any():
        i = int(np.argmax(stream.ts > MAX_TIMESTAMP))
        raise EncodeError(
            f"timestamp {int(stream.ts[i])} of event {i} overflows 23 bits")
    rec = np.empty((len(stream), RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = stream.xs
    rec[:, 1] = stream.ys
    rec[:, 2] = (stream.ps << 7) | ((stream.ts >> 16) & 0x7F)
    rec[:, 3] = (stream.ts >> 8) & 0xFF
    rec[:, 4] = stream.ts & 0xFF
    return rec.tobytes()


def load_event_file(path, width: int, height: int,
                    label: Optional[int] = None) -> EventStream:
    """Read and decode one binary event file."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_nmnist_bin(data, width, height, label)
    except (DecodeError, BoundsError) as e:
        raise type(e)(f"{path}: {e}") from e


def load_manifest(root_path, split: str, width: Optional[int] = None,
                  height: Optional[int] = None) -> DatasetManifest:
    """Build the manifest for ``<root>/<split>``.

    Labels come from the class directory names (which must be non-negative
    integers); files are ordered lexicographically by path so that the
    manifest is reproducible across runs. Empty class directories keep
    their slot in the class count.
    """
    split_dir = Path(root_path) / split
    if not split_dir.is_dir():
        raise ManifestError(f"missing split directory: {split_dir}")
    records = []
    max_label = -1
    for entry in sorted(os.listdir(split_dir)):
        class_dir = split_dir / entry
        if not class_dir.is_dir():
            continue
        try:
            label = int(entry)
        except ValueError:
            raise ManifestError(
                f"class directory name {entry!r} under {split_dir} is not an integer")
        if label < 0:
            raise ManifestError(f"negative class index {label} under {split_dir}")
        max_label = max(max_label, label)
        for fname in class_dir.iterdir():
            if fname.is_file():
                records.append((fname, label))
    if max_label < 0:
        raise ManifestError(f"no class directories under {split_dir}")
    records.sort(key=lambda r: str(r[0]))
    return DatasetManifest(split=split, records=records,
                           class_count=max_label + 1, width=width, height=height)
