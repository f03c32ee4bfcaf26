"""Node-local fragment storage.

Fragments are opaque byte files at ``<root>/<hh>/<escaped-lfn>.<index>.frag``
where ``hh`` is the first byte of the SHA-1 of the logical name in hex.
Writes land under a temporary name and are linked into place, so a reader
never observes a half-written fragment.
"""

from __future__ import annotations

import errno
import hashlib
import os
import shutil
import threading
import time
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from ..catalog.model import FragmentMeta, ReplicaLocation
from ..errors import DiskFull, Exists, IoFailure, NotFound, RangeError
from .ratelimit import TokenBucket

IO_CHUNK = 64 * 1024
LOAD_FLAGS = ("extra_processes", "high_fragmentation")


def escape_lfn(lfn: str) -> str:
    return lfn.replace("%", "%25").replace("/", "%2F")


def unescape_lfn(name: str) -> str:
    return name.replace("%2F", "/").replace("%25", "%")


def fragment_path(root: str | os.PathLike, lfn: str, index: int) -> Path:
    """Pure function of (root, lfn, index)."""
    bucket = hashlib.sha1(lfn.encode("utf-8")).hexdigest()[:2]
    return Path(root) / bucket / f"{escape_lfn(lfn)}.{index}.frag"


def crc32_of(chunks: Iterable[bytes], crc: int = 0) -> int:
    for chunk in chunks:
        crc = zlib.crc32(chunk, crc)
    return crc & 0xFFFFFFFF


@dataclass(frozen=True)
class NodeHealth:
    free_bytes: int
    measured_write_bps: int
    measured_read_bps: int
    load_flags: frozenset[str] = field(default_factory=frozenset)

    @property
    def flag_bits(self) -> int:
        return sum(1 << i for i, name in enumerate(LOAD_FLAGS) if name in self.load_flags)

    def to_dict(self) -> dict:
        return {
            "free_bytes": self.free_bytes,
            "measured_write_bps": self.measured_write_bps,
            "measured_read_bps": self.measured_read_bps,
            "load_flags": sorted(self.load_flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NodeHealth:
        return cls(
            free_bytes=int(d["free_bytes"]),
            measured_write_bps=int(d["measured_write_bps"]),
            measured_read_bps=int(d["measured_read_bps"]),
            load_flags=frozenset(d.get("load_flags", ())),
        )


def _chunks_of(data) -> Iterator[bytes]:
    if isinstance(data, (bytes, bytearray, memoryview)):
        view = memoryview(data)
        for i in range(0, len(view), IO_CHUNK):
            yield view[i:i + IO_CHUNK]
    elif hasattr(data, "read"):
        while True:
            chunk = data.read(IO_CHUNK)
            if not chunk:
                return
            yield chunk
    else:
        yield from data


class NodeStore:
    """Fragment files under ``root`` with per-direction byte-rate limits."""

    def __init__(
        self,
        root: str | os.PathLike,
        node_id: str = "node",
        rate_limit_bps: int = 0,
        load_flags: Iterable[str] = (),
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.node_id = node_id
        self.rate_limit_bps = int(rate_limit_bps)
        unknown = set(load_flags) - set(LOAD_FLAGS)
        if unknown:
            raise ValueError(f"unknown load flags {sorted(unknown)}")
        self.load_flags = frozenset(load_flags)
        self.write_bucket = TokenBucket(self.rate_limit_bps)
        self.read_bucket = TokenBucket(self.rate_limit_bps)
        self._writing: set[Path] = set()
        self._writing_lock = threading.Lock()

    def path_for(self, lfn: str, index: int) -> Path:
        return fragment_path(self.root, lfn, index)

    def exists(self, lfn: str, index: int) -> bool:
        return self.path_for(lfn, index).is_file()

    def put_fragment(self, lfn: str, index: int, data, *, overwrite: bool = False) -> FragmentMeta:
        """Store ``data`` (bytes, readable file, or iterable of chunks)."""
        path = self.path_for(lfn, index)
        with self._writing_lock:
            if path in self._writing:
                raise IoFailure(f"{lfn}[{index}]: concurrent write in progress")
            if not overwrite and path.exists():
                raise Exists(f"{lfn}[{index}] already stored at {path}")
            self._writing.add(path)
        tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            crc = 0
            size = 0
            with open(tmp, "wb") as fh:
                for chunk in _chunks_of(data):
                    self.write_bucket.consume(len(chunk))
                    fh.write(chunk)
                    crc = zlib.crc32(chunk, crc)
                    size += len(chunk)
                fh.flush()
                os.fsync(fh.fileno())
            if overwrite:
                os.replace(tmp, path)
            else:
                try:
                    os.link(tmp, path)
                except FileExistsError:
                    raise Exists(f"{lfn}[{index}] already stored at {path}") from None
                os.unlink(tmp)
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise DiskFull(str(exc)) from exc
            raise IoFailure(str(exc)) from exc
        finally:
            tmp.unlink(missing_ok=True)
            with self._writing_lock:
                self._writing.discard(path)
        crc &= 0xFFFFFFFF
        loc = ReplicaLocation(self.node_id, str(path), crc)
        return FragmentMeta(index=index, size_bytes=size, crc32=crc, replicas=(loc,))

    def stat(self, lfn: str, index: int) -> int:
        path = self.path_for(lfn, index)
        try:
            return path.stat().st_size
        except FileNotFoundError:
            raise NotFound(f"{lfn}[{index}]") from None

    def _range(self, lfn: str, index: int, offset: int, length: int) -> tuple[Path, int]:
        size = self.stat(lfn, index)
        if offset < 0 or length < 0 or offset > size:
            raise RangeError(f"{lfn}[{index}]: offset {offset} outside size {size}")
        if length == 0:
            length = size - offset
        if offset + length > size:
            raise RangeError(f"{lfn}[{index}]: range {offset}+{length} exceeds size {size}")
        return self.path_for(lfn, index), length

    def open_range(self, lfn: str, index: int, offset: int = 0, length: int = 0) -> tuple[int, Iterator[bytes]]:
        """Validate the range eagerly and return ``(length, throttled chunk iterator)``."""
        path, length = self._range(lfn, index, offset, length)
        try:
            fh: BinaryIO = open(path, "rb")
        except FileNotFoundError:
            raise NotFound(f"{lfn}[{index}]") from None

        def gen():
            remaining = length
            with fh:
                fh.seek(offset)
                while remaining:
                    n = min(IO_CHUNK, remaining)
                    self.read_bucket.consume(n)
                    chunk = fh.read(n)
                    if len(chunk) != n:
                        raise IoFailure(f"{path}: short read")
                    remaining -= n
                    yield chunk

        return length, gen()

    def get_fragment(self, lfn: str, index: int, offset: int = 0, length: int = 0) -> bytes:
        _, chunks = self.open_range(lfn, index, offset, length)
        return b"".join(chunks)

    def checksum(self, lfn: str, index: int) -> int:
        path = self.path_for(lfn, index)
        try:
            with open(path, "rb") as fh:
                return crc32_of(iter(lambda: fh.read(1 << 20), b""))
        except FileNotFoundError:
            raise NotFound(f"{lfn}[{index}]") from None

    def delete(self, lfn: str, index: int) -> None:
        try:
            self.path_for(lfn, index).unlink()
        except FileNotFoundError:
            raise NotFound(f"{lfn}[{index}]") from None

    def fragments(self) -> list[tuple[str, int]]:
        out = []
        for p in self.root.glob("??/*.frag"):
            stem, _, idx = p.name[: -len(".frag")].rpartition(".")
            out.append((unescape_lfn(stem), int(idx)))
        return sorted(out)

    def probe(self, scratch_bytes: int | None = None) -> NodeHealth:
        """Write and read back a scratch file through the limiters and time both."""
        if scratch_bytes is None:
            # half a second at the configured rate keeps the probe short but well above jitter
            scratch_bytes = max(IO_CHUNK, min(self.rate_limit_bps // 2, 64 << 20)) if self.rate_limit_bps else 4 << 20
        scratch = self.root / f".probe.{uuid.uuid4().hex}"
        block = os.urandom(IO_CHUNK)
        try:
            self.write_bucket.drain()
            t0 = time.perf_counter()
            with open(scratch, "wb") as fh:
                left = scratch_bytes
                while left:
                    n = min(IO_CHUNK, left)
                    self.write_bucket.consume(n)
                    fh.write(block[:n])
                    left -= n
                fh.flush()
                os.fsync(fh.fileno())
            t_write = time.perf_counter() - t0

            self.read_bucket.drain()
            t0 = time.perf_counter()
            with open(scratch, "rb") as fh:
                while True:
                    chunk = fh.read(IO_CHUNK)
                    if not chunk:
                        break
                    self.read_bucket.consume(len(chunk))
            t_read = time.perf_counter() - t0
            free = shutil.disk_usage(self.root).free
        except OSError as exc:
            raise IoFailure(f"probe failed: {exc}") from exc
        finally:
            scratch.unlink(missing_ok=True)
        return NodeHealth(
            free_bytes=free,
            measured_write_bps=int(scratch_bytes / max(t_write, 1e-9)),
            measured_read_bps=int(scratch_bytes / max(t_read, 1e-9)),
            load_flags=self.load_flags,
        )
