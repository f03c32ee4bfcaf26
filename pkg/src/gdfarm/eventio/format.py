"""Block-compressed columnar event files.

Layout (little-endian)::

    header   "GDFE" version:u16=1 flags:u16=0
    block*   n_events:u32 n_collections:u16 codec:u8 pad:u8
             {raw_len:u32 comp_len:u32 crc32:u32} * n_collections
             payload * n_collections            (crc32 covers the stored payload)
    footer   "GDFF" n_collections:u16 {name_len:u16 name}*
             n_blocks:u32 {file_offset:u64 n_events:u32}* first_event_id:u64
    trailer  footer_offset:u64 "EOFD"

A collection's raw payload inside a block is, per event, a u32 hit count
followed by the hits as four float32 each. Each collection is compressed
on its own so one can be decoded without touching the others.
"""

from __future__ import annotations

import enum
import io
import os
import struct
import zlib
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from ..errors import (
    BadMagic,
    CrcMismatch,
    EventIOError,
    InconsistentDirectory,
    IoFailure,
    NonContiguousEventIds,
    RangeError,
    UnknownCollection,
)
from .model import HIT_BYTES, EventFileStats, EventRecord, HitCollection

MAGIC = b"GDFE"
FOOTER_MAGIC = b"GDFF"
TRAILER_MAGIC = b"EOFD"
VERSION = 1

FILE_HEADER = struct.Struct("<4sHH")
BLOCK_HEADER = struct.Struct("<IHBB")
SEGMENT = struct.Struct("<III")
TRAILER = struct.Struct("<Q4s")
COUNT = struct.Struct("<I")


class Codec(enum.IntEnum):
    STORED = 0
    DEFLATE = 1
    # byte-plane transposition of the 4-byte words before raw deflate
    SHUFFLE_DEFLATE = 2

    @classmethod
    def parse(cls, value) -> Codec:
        if isinstance(value, str):
            try:
                return cls[value.upper().replace("-", "_")]
            except KeyError:
                raise ValueError(f"unknown codec {value!r}") from None
        return cls(value)


def _shuffle(raw: bytes) -> bytes:
    return np.frombuffer(raw, np.uint8).reshape(-1, 4).T.tobytes()


def _unshuffle(data: bytes) -> bytes:
    return np.frombuffer(data, np.uint8).reshape(4, -1).T.tobytes()


def encode_segment(raw: bytes, codec: Codec, level: int = 6) -> bytes:
    if codec == Codec.STORED:
        return raw
    if codec == Codec.SHUFFLE_DEFLATE:
        raw = _shuffle(raw)
    c = zlib.compressobj(level, zlib.DEFLATED, -15)
    return c.compress(raw) + c.flush()


def decode_segment(data: bytes, codec: Codec, raw_len: int) -> bytes:
    if codec == Codec.STORED:
        out = data
    else:
        d = zlib.decompressobj(-15)
        out = d.decompress(data, raw_len)
        if d.unconsumed_tail or not d.eof:
            raise EventIOError("deflate stream does not end where the header says")
        if codec == Codec.SHUFFLE_DEFLATE:
            if len(out) % 4:
                raise EventIOError("shuffled segment length not a multiple of 4")
            out = _unshuffle(out)
    if len(out) != raw_len:
        raise EventIOError(f"segment decoded to {len(out)} bytes, header says {raw_len}")
    return out


def pack_collection(hit_arrays: Sequence[np.ndarray]) -> bytes:
    parts = []
    for arr in hit_arrays:
        parts.append(COUNT.pack(arr.shape[0]))
        parts.append(arr.astype("<f4", copy=False).tobytes())
    return b"".join(parts)


def unpack_collection(raw: bytes, n_events: int) -> list[np.ndarray]:
    out = []
    pos = 0
    for _ in range(n_events):
        if pos + 4 > len(raw):
            raise EventIOError("segment truncated before hit count")
        (n,) = COUNT.unpack_from(raw, pos)
        pos += 4
        end = pos + n * HIT_BYTES
        if end > len(raw):
            raise EventIOError("segment truncated inside hits")
        arr = np.frombuffer(raw, dtype="<f4", count=n * 4, offset=pos).reshape(n, 4)
        out.append(arr.astype(np.float32, copy=False))
        pos = end
    if pos != len(raw):
        raise EventIOError(f"{len(raw) - pos} trailing bytes in segment")
    return out


class EventFileWriter:
    """Streams events into blocks of ``events_per_block``."""

    def __init__(
        self,
        sink: str | os.PathLike | BinaryIO,
        collections: Sequence[str],
        codec: Codec | int | str = Codec.DEFLATE,
        events_per_block: int = 100,
        level: int = 6,
        first_event_id: int | None = None,
    ):
        if events_per_block < 1:
            raise ValueError("events_per_block must be >= 1")
        names = list(collections)
        if not names or len(set(names)) != len(names) or not all(names):
            raise InconsistentDirectory(f"collection directory must be unique non-empty names: {names}")
        self.collections = names
        self.codec = Codec.parse(codec)
        self.events_per_block = events_per_block
        self.level = level
        self._own = not hasattr(sink, "write")
        try:
            self._fh: BinaryIO = open(sink, "wb") if self._own else sink  # type: ignore[arg-type]
            self._base = 0 if self._own else self._fh.tell()
            self._fh.write(FILE_HEADER.pack(MAGIC, VERSION, 0))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._pending: list[EventRecord] = []
        self._blocks: list[tuple[int, int]] = []
        self._first_id = first_event_id
        self._next_id = first_event_id
        self._n_events = 0
        self._raw = 0
        self._stored = 0
        self._closed = False
        self.stats: EventFileStats | None = None

    def _check(self, ev: EventRecord) -> None:
        names = ev.names
        if len(names) != len(self.collections) or set(names) != set(self.collections):
            raise InconsistentDirectory(
                f"event {ev.event_id} has collections {names}, file directory is {self.collections}"
            )
        if self._next_id is None:
            self._first_id = self._next_id = ev.event_id
        if ev.event_id != self._next_id:
            raise NonContiguousEventIds(f"expected event id {self._next_id}, got {ev.event_id}")
        if ev.event_id < 0:
            raise ValueError("event ids must be >= 0")
        for c in ev.collections:
            if not np.isfinite(c.hits).all():
                raise ValueError(f"event {ev.event_id} {c.detector_name}: non-finite hit value")

    def write(self, ev: EventRecord) -> None:
        if self._closed:
            raise EventIOError("writer is closed")
        self._check(ev)
        self._next_id += 1
        self._pending.append(ev)
        if len(self._pending) >= self.events_per_block:
            self._flush_block()

    def write_many(self, events: Iterable[EventRecord]) -> None:
        for ev in events:
            self.write(ev)

    def _flush_block(self) -> None:
        events = self._pending
        self._pending = []
        if not events:
            return
        seg_heads = []
        payloads = []
        for name in self.collections:
            raw = pack_collection([ev.collection(name).hits for ev in events])
            stored = encode_segment(raw, self.codec, self.level)
            seg_heads.append(SEGMENT.pack(len(raw), len(stored), zlib.crc32(stored) & 0xFFFFFFFF))
            payloads.append(stored)
            self._raw += len(raw)
            self._stored += len(stored)
        offset = self._fh.tell() - self._base
        try:
            self._fh.write(BLOCK_HEADER.pack(len(events), len(self.collections), int(self.codec), 0))
            self._fh.write(b"".join(seg_heads))
            for p in payloads:
                self._fh.write(p)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._blocks.append((offset, len(events)))
        self._n_events += len(events)

    def close(self) -> EventFileStats:
        if self._closed:
            return self.stats
        self._flush_block()
        if self._n_events == 0:
            raise EventIOError("an event file needs at least one event")
        footer_offset = self._fh.tell() - self._base
        parts = [FOOTER_MAGIC, struct.pack("<H", len(self.collections))]
        for name in self.collections:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", len(self._blocks)))
        for off, n in self._blocks:
            parts.append(struct.pack("<QI", off, n))
        parts.append(struct.pack("<Q", self._first_id))
        parts.append(TRAILER.pack(footer_offset, TRAILER_MAGIC))
        try:
            self._fh.write(b"".join(parts))
            self._fh.flush()
            if self._own:
                self._fh.close()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._closed = True
        self.stats = EventFileStats(self._n_events, self._raw, self._stored)
        return self.stats

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *rest):
        if exc_type is None:
            self.close()
        elif self._own:
            self._fh.close()


def write_events(
    sink,
    events: Iterable[EventRecord],
    codec: Codec | int | str = Codec.DEFLATE,
    events_per_block: int = 100,
    level: int = 6,
) -> EventFileStats:
    events = iter(events)
    try:
        first = next(events)
    except StopIteration:
        raise ValueError("write_events needs at least one event") from None
    w = EventFileWriter(sink, first.names, codec, events_per_block, level)
    try:
        w.write(first)
        w.write_many(events)
    except BaseException:
        if w._own:
            w._fh.close()
        raise
    return w.close()


def encode_events(events, codec=Codec.DEFLATE, events_per_block: int = 100, level: int = 6) -> tuple[bytes, EventFileStats]:
    buf = io.BytesIO()
    stats = write_events(buf, events, codec, events_per_block, level)
    return buf.getvalue(), stats


class EventFileReader:
    """Random-access reader; only selected collections are ever decompressed.

    ``decode_counts`` tallies decompressed segments per collection.
    """

    def __init__(self, source: str | os.PathLike | bytes | bytearray | memoryview | BinaryIO):
        if isinstance(source, (bytes, bytearray, memoryview)):
            self._fh: BinaryIO = io.BytesIO(bytes(source))
            self._own = True
        elif hasattr(source, "read"):
            self._fh = source
            self._own = False
        else:
            try:
                self._fh = open(source, "rb")
            except OSError as exc:
                raise IoFailure(str(exc)) from exc
            self._own = True
        self.decode_counts: dict[str, int] = {}
        self._parse_footer()

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _read_at(self, offset: int, n: int) -> bytes:
        self._fh.seek(offset)
        data = self._fh.read(n)
        if len(data) != n:
            raise EventIOError(f"short read at {offset}: wanted {n}, got {len(data)}")
        return data

    def _parse_footer(self) -> None:
        fh = self._fh
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
        if size < FILE_HEADER.size + TRAILER.size:
            raise BadMagic("file too small to be an event file")
        magic, version, _flags = FILE_HEADER.unpack(self._read_at(0, FILE_HEADER.size))
        if magic != MAGIC:
            raise BadMagic(f"bad header magic {magic!r}")
        if version != VERSION:
            raise EventIOError(f"unsupported version {version}")
        footer_offset, tmagic = TRAILER.unpack(self._read_at(size - TRAILER.size, TRAILER.size))
        if tmagic != TRAILER_MAGIC:
            raise BadMagic(f"bad trailer magic {tmagic!r}")
        if not FILE_HEADER.size <= footer_offset <= size - TRAILER.size:
            raise BadMagic("footer offset out of range")
        footer = self._read_at(footer_offset, size - TRAILER.size - footer_offset)
        try:
            if footer[:4] != FOOTER_MAGIC:
                raise BadMagic(f"bad footer magic {footer[:4]!r}")
            pos = 4
            (n_coll,) = struct.unpack_from("<H", footer, pos)
            pos += 2
            names = []
            for _ in range(n_coll):
                (n,) = struct.unpack_from("<H", footer, pos)
                pos += 2
                names.append(footer[pos:pos + n].decode("utf-8"))
                pos += n
            (n_blocks,) = struct.unpack_from("<I", footer, pos)
            pos += 4
            blocks = []
            for _ in range(n_blocks):
                blocks.append(struct.unpack_from("<QI", footer, pos))
                pos += 12
            (first_id,) = struct.unpack_from("<Q", footer, pos)
        except (struct.error, UnicodeDecodeError) as exc:
            raise EventIOError(f"malformed footer: {exc}") from exc
        self.collections: list[str] = names
        self.blocks: list[tuple[int, int]] = blocks
        self.first_event_id: int = first_id
        self.n_events: int = sum(n for _, n in blocks)
        self._block_first = []
        acc = 0
        for _, n in blocks:
            self._block_first.append(acc)
            acc += n
        for name in names:
            self.decode_counts.setdefault(name, 0)

    def _block_header(self, i: int) -> tuple[int, Codec, list[tuple[int, int, int]], int]:
        offset, n_events = self.blocks[i]
        bh = self._read_at(offset, BLOCK_HEADER.size)
        n, n_coll, codec, _pad = BLOCK_HEADER.unpack(bh)
        if n != n_events or n_coll != len(self.collections):
            raise EventIOError(f"block {i} header disagrees with footer")
        segs_raw = self._read_at(offset + BLOCK_HEADER.size, SEGMENT.size * n_coll)
        segs = [SEGMENT.unpack_from(segs_raw, k * SEGMENT.size) for k in range(n_coll)]
        data_start = offset + BLOCK_HEADER.size + SEGMENT.size * n_coll
        try:
            codec = Codec(codec)
        except ValueError:
            raise EventIOError(f"block {i}: unknown codec {codec}") from None
        return n, codec, segs, data_start

    def stats(self) -> EventFileStats:
        raw = stored = 0
        for i in range(len(self.blocks)):
            _, _, segs, _ = self._block_header(i)
            raw += sum(s[0] for s in segs)
            stored += sum(s[1] for s in segs)
        return EventFileStats(self.n_events, raw, stored)

    def read_block(self, i: int, selection: Sequence[str] | None = None) -> list[EventRecord]:
        names = self._selection(selection)
        n, codec, segs, pos = self._block_header(i)
        decoded: dict[str, list[np.ndarray]] = {}
        for k, name in enumerate(self.collections):
            raw_len, comp_len, crc = segs[k]
            if name in names:
                data = self._read_at(pos, comp_len)
                if zlib.crc32(data) & 0xFFFFFFFF != crc:
                    raise CrcMismatch(f"block {i} collection {name!r}: crc mismatch", block=i)
                try:
                    raw = decode_segment(data, codec, raw_len)
                except zlib.error as exc:
                    raise EventIOError(f"block {i} collection {name!r}: {exc}") from exc
                self.decode_counts[name] += 1
                decoded[name] = unpack_collection(raw, n)
            pos += comp_len
        base = self.first_event_id + self._block_first[i]
        order = [c for c in self.collections if c in names]
        return [
            EventRecord(base + j, [HitCollection(c, decoded[c][j]) for c in order])
            for j in range(n)
        ]

    def _selection(self, selection) -> set[str]:
        if selection is None:
            return set(self.collections)
        chosen = set(selection)
        unknown = chosen - set(self.collections)
        if unknown:
            raise UnknownCollection(f"not in file directory: {sorted(unknown)}")
        return chosen

    def iter_events(self, selection=None, event_range: tuple[int, int] | None = None) -> Iterator[EventRecord]:
        start, stop = self._range(event_range)
        self._selection(selection)
        for i, (_, n) in enumerate(self.blocks):
            b0 = self._block_first[i]
            if b0 + n <= start or b0 >= stop:
                continue
            for k, ev in enumerate(self.read_block(i, selection)):
                if start <= b0 + k < stop:
                    yield ev

    def _range(self, event_range) -> tuple[int, int]:
        if event_range is None:
            return 0, self.n_events
        start, stop = event_range
        if not 0 <= start <= stop <= self.n_events:
            raise RangeError(f"event range {event_range} outside 0..{self.n_events}")
        return start, stop

    def read(self, selection=None, event_range=None) -> list[EventRecord]:
        return list(self.iter_events(selection, event_range))


def read_events(source, collection_selection=None, event_range=None) -> list[EventRecord]:
    """``event_range`` is a half-open ``(start, stop)`` of positions in the file."""
    with EventFileReader(source) as r:
        return r.read(collection_selection, event_range)
