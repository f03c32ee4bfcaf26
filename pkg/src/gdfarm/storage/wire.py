"""Binary data-plane framing (all integers little-endian).

Request  ``{body_len: u32, msg_type: u8, body}``
Response ``{body_len: u32, status: u8, body}`` with status 0 = ok; on error
the body is a UTF-8 message and the status selects the exception class.
"""

from __future__ import annotations

import enum
import socket
import struct

from .. import errors

HEADER = struct.Struct("<IB")
MAX_BODY = 0xFFFFFFFF


class Msg(enum.IntEnum):
    PUT = 1
    GET = 2
    STAT = 3
    CRC = 4
    PING = 5
    PULL = 6
    DELETE = 7


STATUS_OK = 0
STATUS_BY_ERROR: dict[type, int] = {
    errors.NotFound: 1,
    errors.Exists: 2,
    errors.RangeError: 3,
    errors.IoFailure: 4,
    errors.DiskFull: 5,
    errors.BadRequest: 6,
    errors.ChecksumMismatch: 7,
    errors.NodeUnreachable: 8,
}
ERROR_BY_STATUS = {v: k for k, v in STATUS_BY_ERROR.items()}
STATUS_OTHER = 255


def status_for(exc: BaseException) -> int:
    for cls in type(exc).__mro__:
        if cls in STATUS_BY_ERROR:
            return STATUS_BY_ERROR[cls]
    return STATUS_OTHER


def error_for(status: int, message: str) -> errors.GfarmError:
    return ERROR_BY_STATUS.get(status, errors.StorageError)(message)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise ConnectionError(f"peer closed after {got} of {n} bytes")
        got += k
    return bytes(buf)


def recv_header(sock: socket.socket) -> tuple[int, int] | None:
    """Read a frame header; None on clean EOF before any byte."""
    first = sock.recv(HEADER.size)
    if not first:
        return None
    if len(first) < HEADER.size:
        first += recv_exact(sock, HEADER.size - len(first))
    return HEADER.unpack(first)


def send_frame(sock: socket.socket, kind: int, body: bytes = b"") -> None:
    sock.sendall(HEADER.pack(len(body), kind) + body)


def pack_name(lfn: str) -> bytes:
    raw = lfn.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise errors.BadRequest("logical file name too long")
    return struct.pack("<H", len(raw)) + raw


def unpack_name(body: bytes, pos: int = 0) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", body, pos)
    pos += 2
    return body[pos:pos + n].decode("utf-8"), pos + n


# fixed message bodies

def pack_put_head(lfn: str, index: int, size: int) -> bytes:
    return pack_name(lfn) + struct.pack("<IQ", index, size)


def pack_get(lfn: str, index: int, offset: int, length: int) -> bytes:
    return pack_name(lfn) + struct.pack("<IQQ", index, offset, length)


def unpack_get(body: bytes) -> tuple[str, int, int, int]:
    lfn, pos = unpack_name(body)
    index, offset, length = struct.unpack_from("<IQQ", body, pos)
    return lfn, index, offset, length


def pack_ref(lfn: str, index: int) -> bytes:
    return pack_name(lfn) + struct.pack("<I", index)


def unpack_ref(body: bytes) -> tuple[str, int]:
    lfn, pos = unpack_name(body)
    (index,) = struct.unpack_from("<I", body, pos)
    return lfn, index


def pack_pull(lfn: str, index: int, src_addr: str, chunk_bytes: int | None = None) -> bytes:
    body = pack_ref(lfn, index) + pack_name(src_addr)
    if chunk_bytes is not None:
        # optional trailing field; absent means the receiver's default
        body += struct.pack("<I", chunk_bytes)
    return body


def unpack_pull(body: bytes) -> tuple[str, int, str, int | None]:
    lfn, pos = unpack_name(body)
    (index,) = struct.unpack_from("<I", body, pos)
    src, pos = unpack_name(body, pos + 4)
    chunk = struct.unpack_from("<I", body, pos)[0] if len(body) >= pos + 4 else None
    return lfn, index, src, chunk


def pack_meta(size: int, crc32: int, path: str) -> bytes:
    """Reply body of PUT and PULL."""
    return struct.pack("<QI", size, crc32) + pack_name(path)


def unpack_meta(body: bytes) -> tuple[int, int, str]:
    size, crc = struct.unpack_from("<QI", body, 0)
    path, _ = unpack_name(body, 12)
    return size, crc, path


def pack_stat(size: int, path: str) -> bytes:
    return struct.pack("<Q", size) + pack_name(path)


def unpack_stat(body: bytes) -> tuple[int, str]:
    (size,) = struct.unpack_from("<Q", body, 0)
    path, _ = unpack_name(body, 8)
    return size, path
