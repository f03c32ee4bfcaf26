from .format import (
    Codec,
    EventFileReader,
    EventFileWriter,
    encode_events,
    read_events,
    write_events,
)
from .model import EventFileStats, EventRecord, Hit, HitCollection, compression_factor
from .synth import DEFAULT_DETECTOR, generate_synthetic, iter_synthetic, quantize

__all__ = [
    "Codec",
    "DEFAULT_DETECTOR",
    "EventFileReader",
    "EventFileStats",
    "EventFileWriter",
    "EventRecord",
    "Hit",
    "HitCollection",
    "compression_factor",
    "encode_events",
    "generate_synthetic",
    "iter_synthetic",
    "quantize",
    "read_events",
    "write_events",
]
