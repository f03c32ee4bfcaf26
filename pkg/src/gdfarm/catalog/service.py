"""Line-oriented control protocol for the catalog.

One request per line, ``VERB <json-payload>``; one response per line,
``OK <json>`` or ``ERR <code> <message>``. Verbs::

    REGISTER  {"lfn": str, "fragments": [FragmentMeta...]}
    ADDREPLICA {"lfn": str, "index": int, "location": ReplicaLocation}
    LOOKUP    {"lfn": str}
    LIST      {"pattern": str}
    RMREPLICA {"lfn": str, "index": int, "node_id": str}
    NODES                                  -> list nodes
    NODES     {"node": NodeInfo}           -> register / update a node
    NODES     {"node_id": str, "status": "up"|"down"}
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading

from ..errors import BadRequest, CatalogUnreachable, GfarmError, from_code
from .model import FragmentMeta, LogicalFileEntry, NodeInfo, ReplicaLocation
from .store import Catalog

log = logging.getLogger(__name__)

MAX_LINE = 64 * 1024 * 1024


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def format_addr(host: str, port: int) -> str:
    return f"{host}:{port}"


def handle_request(catalog: Catalog, line: str) -> str:
    """Execute one control message against ``catalog`` and build the reply line."""
    verb, _, rest = line.strip().partition(" ")
    try:
        payload = json.loads(rest) if rest.strip() else {}
        if not isinstance(payload, dict):
            raise BadRequest("payload must be a JSON object")
        result = _dispatch(catalog, verb.upper(), payload)
    except GfarmError as exc:
        return f"ERR {exc.code} {_one_line(exc.message)}"
    except (ValueError, KeyError, TypeError) as exc:
        return f"ERR BadRequest {_one_line(str(exc))}"
    return "OK " + json.dumps(result, separators=(",", ":"))


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def _dispatch(catalog: Catalog, verb: str, p: dict):
    if verb == "REGISTER":
        frags = [FragmentMeta.from_dict(f) for f in p["fragments"]]
        return catalog.register_file(p["lfn"], frags).to_dict()
    if verb == "ADDREPLICA":
        loc = ReplicaLocation.from_dict(p["location"])
        return catalog.add_replica(p["lfn"], int(p["index"]), loc).to_dict()
    if verb == "LOOKUP":
        return catalog.lookup(p["lfn"]).to_dict()
    if verb == "LIST":
        return [e.to_dict() for e in catalog.list_files(p.get("pattern", "*"))]
    if verb == "RMREPLICA":
        return catalog.remove_replica(p["lfn"], int(p["index"]), p["node_id"]).to_dict()
    if verb == "NODES":
        if "node" in p:
            return catalog.register_node(NodeInfo.from_dict(p["node"])).to_dict()
        if "node_id" in p:
            return catalog.set_node_status(p["node_id"], p["status"]).to_dict()
        return [n.to_dict() for n in catalog.nodes()]
    raise BadRequest(f"unknown verb {verb!r}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: CatalogServer = self.server  # type: ignore[assignment]
        while True:
            try:
                raw = self.rfile.readline(MAX_LINE)
            except OSError:
                return
            if not raw:
                return
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            with server.request_lock:
                reply = handle_request(server.catalog, line)
            try:
                self.wfile.write((reply + "\n").encode("utf-8"))
            except OSError:
                return


class CatalogServer(socketserver.ThreadingTCPServer):
    """Threaded TCP front end; requests are serialized through ``request_lock``."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, catalog: Catalog, addr: tuple[str, int] = ("127.0.0.1", 0)):
        self.catalog = catalog
        self.request_lock = threading.Lock()
        super().__init__(addr, _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return format_addr(host, port)

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, args=(0.05,), name="catalog-server", daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class CatalogClient:
    """Remote catalog with the same method surface as :class:`Catalog`."""

    def __init__(self, addr: str, timeout: float = 30.0):
        self.addr = addr
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._rfile = None
        self._lock = threading.Lock()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(parse_addr(self.addr), timeout=self.timeout)
        except OSError as exc:
            raise CatalogUnreachable(f"{self.addr}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")

    def close(self) -> None:
        with self._lock:
            self._drop()

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._rfile.close()
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._rfile = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def call(self, verb: str, payload: dict | None = None):
        line = verb if payload is None else f"{verb} {json.dumps(payload, separators=(',', ':'))}"
        with self._lock:
            for attempt in (0, 1):
                if self._sock is None:
                    self._connect()
                try:
                    self._sock.sendall((line + "\n").encode("utf-8"))
                    reply = self._rfile.readline(MAX_LINE)
                    if not reply:
                        raise ConnectionError("catalog closed the connection")
                    break
                except OSError as exc:
                    self._drop()
                    if attempt:
                        raise CatalogUnreachable(f"{self.addr}: {exc}") from exc
        reply = reply.decode("utf-8").rstrip("\n")
        status, _, body = reply.partition(" ")
        if status == "OK":
            return json.loads(body)
        if status == "ERR":
            code, _, message = body.partition(" ")
            raise from_code(code, message)
        raise CatalogUnreachable(f"malformed reply {reply[:80]!r}")

    def register_file(self, lfn: str, fragment_metas) -> LogicalFileEntry:
        frags = [f.to_dict() for f in fragment_metas]
        return LogicalFileEntry.from_dict(self.call("REGISTER", {"lfn": lfn, "fragments": frags}))

    def add_replica(self, lfn: str, index: int, location: ReplicaLocation) -> LogicalFileEntry:
        body = {"lfn": lfn, "index": index, "location": location.to_dict()}
        return LogicalFileEntry.from_dict(self.call("ADDREPLICA", body))

    def remove_replica(self, lfn: str, index: int, node_id: str) -> LogicalFileEntry:
        body = {"lfn": lfn, "index": index, "node_id": node_id}
        return LogicalFileEntry.from_dict(self.call("RMREPLICA", body))

    def lookup(self, lfn: str) -> LogicalFileEntry:
        return LogicalFileEntry.from_dict(self.call("LOOKUP", {"lfn": lfn}))

    def list_files(self, glob_pattern: str = "*") -> list[LogicalFileEntry]:
        return [LogicalFileEntry.from_dict(d) for d in self.call("LIST", {"pattern": glob_pattern})]

    def register_node(self, info: NodeInfo) -> NodeInfo:
        return NodeInfo.from_dict(self.call("NODES", {"node": info.to_dict()}))

    def set_node_status(self, node_id: str, status) -> NodeInfo:
        status = getattr(status, "value", status)
        return NodeInfo.from_dict(self.call("NODES", {"node_id": node_id, "status": status}))

    def nodes(self) -> list[NodeInfo]:
        return [NodeInfo.from_dict(d) for d in self.call("NODES")]

    def node(self, node_id: str) -> NodeInfo:
        for n in self.nodes():
            if n.node_id == node_id:
                return n
        raise from_code("UnknownNode", node_id)
