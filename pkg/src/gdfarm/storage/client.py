from __future__ import annotations

import json
import socket
import struct
import threading
from typing import Iterator

from ..catalog.model import FragmentMeta, ReplicaLocation
from ..catalog.service import parse_addr
from ..errors import NodeUnreachable
from . import wire
from .node import IO_CHUNK, NodeHealth, _chunks_of


class NodeClient:
    """Synchronous data-plane client for one storage node.

    A client owns one connection and serializes calls on it; use one
    client per concurrent stream.
    """

    def __init__(self, addr: str, node_id: str | None = None, timeout: float | None = 60.0):
        self.addr = addr
        self.node_id = node_id
        self.timeout = timeout
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection(parse_addr(addr), timeout=timeout)
        except OSError as exc:
            raise NodeUnreachable(f"{addr}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _reply_header(self) -> tuple[int, int]:
        header = wire.recv_header(self._sock)
        if header is None:
            raise NodeUnreachable(f"{self.addr}: connection closed")
        return header

    def _call(self, kind: int, body: bytes = b"") -> bytes:
        with self._lock:
            try:
                wire.send_frame(self._sock, kind, body)
                length, status = self._reply_header()
                reply = wire.recv_exact(self._sock, length)
            except OSError as exc:
                raise NodeUnreachable(f"{self.addr}: {exc}") from exc
        if status != wire.STATUS_OK:
            raise wire.error_for(status, reply.decode("utf-8", errors="replace"))
        return reply

    def _meta(self, index: int, reply: bytes) -> FragmentMeta:
        size, crc, path = wire.unpack_meta(reply)
        node = self.node_id or self.addr
        return FragmentMeta(index, size, crc, (ReplicaLocation(node, path, crc),))

    def put(self, lfn: str, index: int, data, size: int | None = None) -> FragmentMeta:
        """Upload a fragment. ``data`` may be bytes, or a file/iterable when ``size`` is given."""
        if size is None:
            data = bytes(data)
            size = len(data)
        head = wire.pack_put_head(lfn, index, size)
        with self._lock:
            try:
                self._sock.sendall(wire.HEADER.pack(len(head) + size, wire.Msg.PUT) + head)
                sent = 0
                for chunk in _chunks_of(data):
                    self._sock.sendall(chunk)
                    sent += len(chunk)
                if sent != size:
                    raise ValueError(f"payload had {sent} bytes, declared {size}")
                length, status = self._reply_header()
                reply = wire.recv_exact(self._sock, length)
            except OSError as exc:
                raise NodeUnreachable(f"{self.addr}: {exc}") from exc
        if status != wire.STATUS_OK:
            raise wire.error_for(status, reply.decode("utf-8", errors="replace"))
        return self._meta(index, reply)

    def stream(self, lfn: str, index: int, offset: int = 0, length: int = 0,
               chunk_bytes: int = IO_CHUNK) -> tuple[int, Iterator[bytes]]:
        """Issue GET and return ``(length, chunk iterator)``.

        The iterator must be exhausted before this client is used again.
        """
        self._lock.acquire()
        try:
            wire.send_frame(self._sock, wire.Msg.GET, wire.pack_get(lfn, index, offset, length))
            n, status = self._reply_header()
            if status != wire.STATUS_OK:
                msg = wire.recv_exact(self._sock, n).decode("utf-8", errors="replace")
                raise wire.error_for(status, msg)
        except OSError as exc:
            self._lock.release()
            raise NodeUnreachable(f"{self.addr}: {exc}") from exc
        except BaseException:
            self._lock.release()
            raise

        def gen():
            try:
                remaining = n
                while remaining:
                    chunk = wire.recv_exact(self._sock, min(chunk_bytes, remaining))
                    remaining -= len(chunk)
                    yield chunk
            finally:
                self._lock.release()

        return n, gen()

    def get(self, lfn: str, index: int, offset: int = 0, length: int = 0) -> bytes:
        n, chunks = self.stream(lfn, index, offset, length, chunk_bytes=1 << 20)
        buf = bytearray()
        for chunk in chunks:
            buf += chunk
        return bytes(buf)

    def stat(self, lfn: str, index: int) -> tuple[int, str]:
        return wire.unpack_stat(self._call(wire.Msg.STAT, wire.pack_ref(lfn, index)))

    def checksum(self, lfn: str, index: int) -> int:
        (crc,) = struct.unpack("<I", self._call(wire.Msg.CRC, wire.pack_ref(lfn, index)))
        return crc

    def ping(self) -> dict:
        return json.loads(self._call(wire.Msg.PING))

    def probe(self) -> NodeHealth:
        return NodeHealth.from_dict(json.loads(self._call(wire.Msg.PING, b"probe"))["health"])

    def pull(self, lfn: str, index: int, src_addr: str, chunk_bytes: int | None = None) -> FragmentMeta:
        return self._meta(index, self._call(wire.Msg.PULL, wire.pack_pull(lfn, index, src_addr, chunk_bytes)))

    def delete(self, lfn: str, index: int) -> None:
        self._call(wire.Msg.DELETE, wire.pack_ref(lfn, index))
