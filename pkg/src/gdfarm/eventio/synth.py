from __future__ import annotations

from typing import Iterator

import numpy as np

from .model import EventRecord, HitCollection

DEFAULT_DETECTOR = "Pers01CalorHit"
MANTISSA_BITS = 23


def quantize(values: np.ndarray, keep_bits: int) -> np.ndarray:
    """Zero the low ``23 - keep_bits`` mantissa bits of float32 values in place."""
    if not 0 <= keep_bits <= MANTISSA_BITS:
        raise ValueError("quantize_bits must be in 0..23")
    if keep_bits < MANTISSA_BITS:
        mask = np.uint32((0xFFFFFFFF << (MANTISSA_BITS - keep_bits)) & 0xFFFFFFFF)
        values.view(np.uint32)[...] &= mask
    return values


def iter_synthetic(
    n_events: int,
    hits_per_event: int,
    seed: int,
    quantize_bits: int = 10,
    detector_name: str = DEFAULT_DETECTOR,
    first_event_id: int = 0,
) -> Iterator[EventRecord]:
    """Gaussian-filled calorimeter hits, one collection per event, reproducible from ``seed``."""
    if n_events < 1 or hits_per_event < 1:
        raise ValueError("n_events and hits_per_event must be >= 1")
    if not 0 <= quantize_bits <= MANTISSA_BITS:
        raise ValueError("quantize_bits must be in 0..23")
    rng = np.random.default_rng(seed)
    for i in range(n_events):
        hits = rng.standard_normal((hits_per_event, 4), dtype=np.float32)
        quantize(hits, quantize_bits)
        yield EventRecord(first_event_id + i, [HitCollection(detector_name, hits)])


def generate_synthetic(n_events: int, hits_per_event: int, seed: int, quantize_bits: int = 10, **kw) -> list[EventRecord]:
    return list(iter_synthetic(n_events, hits_per_event, seed, quantize_bits, **kw))
