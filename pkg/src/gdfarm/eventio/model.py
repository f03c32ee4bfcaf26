from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

HIT_FIELDS = ("edep_abs", "edep_gap", "track_len_abs", "track_len_gap")
HIT_BYTES = 16


class Hit(NamedTuple):
    edep_abs: float
    edep_gap: float
    track_len_abs: float
    track_len_gap: float


def as_hit_array(hits) -> np.ndarray:
    """Coerce a list of hits (or an array) to a C-contiguous ``(n, 4)`` float32 array."""
    if isinstance(hits, np.ndarray):
        arr = hits
    else:
        hits = list(hits)
        arr = np.asarray(hits, dtype=np.float32) if hits else np.empty((0, 4), np.float32)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    arr = np.ascontiguousarray(arr.reshape(-1, 4))
    return arr


@dataclass(eq=False)
class HitCollection:
    """Hits of one sub-detector in one event, stored as an ``(n, 4)`` float32 array."""

    detector_name: str
    hits: np.ndarray = field(default_factory=lambda: np.empty((0, 4), np.float32))

    def __post_init__(self):
        if not self.detector_name:
            raise ValueError("detector_name must be non-empty")
        self.hits = as_hit_array(self.hits)

    def __len__(self) -> int:
        return self.hits.shape[0]

    def __iter__(self) -> Iterator[Hit]:
        for row in self.hits.tolist():
            yield Hit(*row)

    def __getitem__(self, i: int) -> Hit:
        return Hit(*self.hits[i].tolist())

    def __eq__(self, other) -> bool:
        # bit-exact: compares the IEEE-754 encodings, not float values
        if not isinstance(other, HitCollection):
            return NotImplemented
        return (
            self.detector_name == other.detector_name
            and self.hits.shape == other.hits.shape
            and self.hits.tobytes() == other.hits.tobytes()
        )

    def __repr__(self) -> str:
        return f"HitCollection({self.detector_name!r}, {len(self)} hits)"


@dataclass
class EventRecord:
    event_id: int
    collections: list[HitCollection] = field(default_factory=list)

    def collection(self, name: str) -> HitCollection:
        for c in self.collections:
            if c.detector_name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.detector_name for c in self.collections]

    @property
    def n_hits(self) -> int:
        return sum(len(c) for c in self.collections)

    def project(self, names) -> EventRecord:
        keep = set(names)
        return EventRecord(self.event_id, [c for c in self.collections if c.detector_name in keep])


@dataclass(frozen=True)
class EventFileStats:
    n_events: int
    bytes_raw: int
    bytes_compressed: int

    @property
    def mean_event_bytes(self) -> float:
        return self.bytes_compressed / self.n_events if self.n_events else 0.0

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "bytes_raw": self.bytes_raw,
            "bytes_compressed": self.bytes_compressed,
            "mean_event_bytes": self.mean_event_bytes,
        }


def compression_factor(stats: EventFileStats) -> float:
    """Raw payload bytes over stored payload bytes."""
    if stats.bytes_compressed <= 0:
        raise ZeroDivisionError("compression factor undefined for zero stored bytes")
    return stats.bytes_raw / stats.bytes_compressed
