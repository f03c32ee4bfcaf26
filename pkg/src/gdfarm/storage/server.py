"""Storage-node daemon speaking the framed data-plane protocol."""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading

from ..catalog.model import NodeInfo, NodeStatus
from ..errors import BadRequest, GfarmError, IoFailure
from . import wire
from .node import NodeStore

log = logging.getLogger(__name__)

DEFAULT_PULL_CHUNK = 1 << 20


def _socket_payload(sock: socket.socket, size: int, chunk: int = 256 * 1024):
    remaining = size
    while remaining:
        data = sock.recv(min(chunk, remaining))
        if not data:
            raise ConnectionError(f"peer closed with {remaining} payload bytes outstanding")
        remaining -= len(data)
        yield data


def _drain(sock: socket.socket, size: int) -> None:
    for _ in _socket_payload(sock, size):
        pass


class _CountingPayload:
    """Iterator over a PUT payload that remembers how much it consumed."""

    def __init__(self, sock: socket.socket, size: int):
        self.consumed = 0
        self._it = _socket_payload(sock, size)

    def __iter__(self):
        for chunk in self._it:
            self.consumed += len(chunk)
            yield chunk


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        server: NodeServer = self.server  # type: ignore[assignment]
        while True:
            try:
                header = wire.recv_header(sock)
                if header is None:
                    return
                body_len, kind = header
                if not server.serve_one(sock, kind, body_len):
                    return
            except (ConnectionError, OSError) as exc:
                log.debug("connection dropped: %s", exc)
                return


class NodeServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: NodeStore, addr: tuple[str, int] = ("127.0.0.1", 0), catalog=None):
        self.store = store
        self.catalog = catalog
        super().__init__(addr, _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def node_info(self) -> NodeInfo:
        return NodeInfo(
            node_id=self.store.node_id,
            address=self.address,
            storage_root=str(self.store.root),
            rate_limit_bps=self.store.rate_limit_bps,
            status=NodeStatus.UP,
        )

    def start(self) -> threading.Thread:
        if self.catalog is not None:
            self.catalog.register_node(self.node_info())
        t = threading.Thread(target=self.serve_forever, args=(0.05,), name=f"node-{self.store.node_id}", daemon=True)
        t.start()
        return t

    def stop(self, *, mark_down: bool = False) -> None:
        self.shutdown()
        self.server_close()
        if mark_down and self.catalog is not None:
            self.catalog.set_node_status(self.store.node_id, NodeStatus.DOWN)

    # -- request handling ----------------------------------------------------

    def serve_one(self, sock: socket.socket, kind: int, body_len: int) -> bool:
        """Handle one frame. Returns False when the connection must be closed."""
        if kind == wire.Msg.PUT:
            return self._put(sock, body_len)
        body = wire.recv_exact(sock, body_len)
        try:
            if kind == wire.Msg.GET:
                lfn, index, offset, length = wire.unpack_get(body)
                length, chunks = self.store.open_range(lfn, index, offset, length)
                sock.sendall(wire.HEADER.pack(length, wire.STATUS_OK))
                for chunk in chunks:
                    sock.sendall(chunk)
                return True
            if kind == wire.Msg.STAT:
                lfn, index = wire.unpack_ref(body)
                size = self.store.stat(lfn, index)
                reply = wire.pack_stat(size, str(self.store.path_for(lfn, index)))
            elif kind == wire.Msg.CRC:
                reply = struct.pack("<I", self.store.checksum(*wire.unpack_ref(body)))
            elif kind == wire.Msg.PING:
                info = {"node_id": self.store.node_id, "rate_limit_bps": self.store.rate_limit_bps}
                if body == b"probe":
                    info["health"] = self.store.probe().to_dict()
                reply = json.dumps(info).encode()
            elif kind == wire.Msg.PULL:
                lfn, index, src, chunk = wire.unpack_pull(body)
                meta = self.pull(lfn, index, src, chunk or DEFAULT_PULL_CHUNK)
                reply = wire.pack_meta(meta.size_bytes, meta.crc32, meta.replicas[0].path)
            elif kind == wire.Msg.DELETE:
                self.store.delete(*wire.unpack_ref(body))
                reply = b""
            else:
                raise BadRequest(f"unknown message type {kind}")
        except (GfarmError, ValueError, struct.error) as exc:
            if isinstance(exc, (ValueError, struct.error)):
                exc = BadRequest(str(exc))
            wire.send_frame(sock, wire.status_for(exc), str(exc).encode("utf-8"))
            return True
        wire.send_frame(sock, wire.STATUS_OK, reply)
        return True

    def _put(self, sock: socket.socket, body_len: int) -> bool:
        head = wire.recv_exact(sock, 2)
        (name_len,) = struct.unpack("<H", head)
        rest = wire.recv_exact(sock, name_len + 12)
        lfn = rest[:name_len].decode("utf-8")
        index, size = struct.unpack_from("<IQ", rest, name_len)
        if 2 + name_len + 12 + size != body_len:
            wire.send_frame(sock, wire.status_for(BadRequest()), b"PUT size disagrees with frame length")
            return False
        payload = _CountingPayload(sock, size)
        try:
            meta = self.store.put_fragment(lfn, index, payload)
        except GfarmError as exc:
            # keep the connection in frame sync by consuming what the store did not
            try:
                _drain(sock, size - payload.consumed)
            except (ConnectionError, OSError):
                return False
            wire.send_frame(sock, wire.status_for(exc), str(exc).encode("utf-8"))
            return True
        wire.send_frame(sock, wire.STATUS_OK, wire.pack_meta(meta.size_bytes, meta.crc32, meta.replicas[0].path))
        return True

    def pull(self, lfn: str, index: int, src_addr: str, chunk_bytes: int = DEFAULT_PULL_CHUNK):
        """Fetch a fragment from another node and store it locally (overwriting)."""
        from .client import NodeClient

        with NodeClient(src_addr) as client:
            length, chunks = client.stream(lfn, index, chunk_bytes=chunk_bytes)
            try:
                return self.store.put_fragment(lfn, index, chunks, overwrite=True)
            except ConnectionError as exc:
                raise IoFailure(f"pull from {src_addr} broke: {exc}") from exc
