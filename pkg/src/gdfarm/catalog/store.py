"""Metadata catalog with an append-only record log.

Every mutation is validated against the in-memory state, appended to
``<state_dir>/catalog.log`` as one JSON object per line, fsync'd, and only
then applied. Recovery replays the log; an unparseable *final* line is a
torn write and is cut off, anything else malformed is fatal.

Record layout (keys always in this order, compact separators)::

    {"seq":1,"op":"register","lfn":"a","fragments":[{"index":0,"size_bytes":5,"crc32":123,"replicas":[{"node_id":"n0","path":"p","crc32":123}]}]}
    {"seq":2,"op":"add_replica","lfn":"a","index":0,"node_id":"n1","path":"p","crc32":123}
    {"seq":3,"op":"remove_replica","lfn":"a","index":0,"node_id":"n1"}
    {"seq":4,"op":"node","node_id":"n0","address":"127.0.0.1:7001","storage_root":"/r","rate_limit_bps":0,"status":"up"}
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import replace
from pathlib import Path
from typing import Iterable

from ..errors import (
    BadRequest,
    ChecksumMismatch,
    CorruptRecord,
    DuplicateName,
    EmptyFragmentSet,
    GapInFragmentIndices,
    LastReplica,
    UnknownFile,
    UnknownFragmentIndex,
    UnknownNode,
    UnknownReplica,
)
from .model import FragmentMeta, LogicalFileEntry, NodeInfo, NodeStatus, ReplicaLocation

log = logging.getLogger(__name__)

LOG_NAME = "catalog.log"


def glob_to_regex(pattern: str) -> re.Pattern:
    """Translate a ``*``/``?`` glob into an anchored regex; nothing else is special."""
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts) + r"\Z", re.DOTALL)


def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


class Catalog:
    """Logical-file catalog; safe to share between threads.

    ``state_dir=None`` gives a purely in-memory catalog (used as a replay
    oracle in tests and by callers that do not need durability).
    """

    def __init__(self, state_dir: str | os.PathLike | None = None, *, fsync: bool = True):
        self._files: dict[str, LogicalFileEntry] = {}
        self._nodes: dict[str, NodeInfo] = {}
        self._lock = threading.RLock()
        self._seq = 0
        self._fsync = fsync
        self._log = None
        self.state_dir = Path(state_dir) if state_dir is not None else None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._replay(self.state_dir / LOG_NAME)
            self._log = open(self.state_dir / LOG_NAME, "ab")

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._log is not None:
                self._log.close()
                self._log = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def seq(self) -> int:
        return self._seq

    # -- persistence -------------------------------------------------------

    def _append(self, record: dict) -> None:
        if self._log is None:
            return
        self._log.write((_dumps(record) + "\n").encode("utf-8"))
        self._log.flush()
        if self._fsync:
            os.fsync(self._log.fileno())

    def _commit(self, record: dict) -> None:
        """Log then apply. Caller holds the lock and has validated the record."""
        self._seq += 1
        full = {"seq": self._seq, **record}
        self._append(full)
        self._apply(full)

    def _replay(self, path: Path) -> None:
        if not path.exists():
            return
        data = path.read_bytes()
        # Records are written as one line each; an unterminated tail is torn.
        # A malformed last complete line is also treated as torn, anything
        # malformed before it is corruption.
        complete, _, tail = data.rpartition(b"\n")
        lines = complete.split(b"\n") if complete else []
        if not complete and data.startswith(b"\n"):
            lines = [b""]
        good_end = 0
        for i, raw in enumerate(lines):
            offset = good_end
            is_last = i == len(lines) - 1 and not tail
            try:
                record = json.loads(raw.decode("utf-8"))
                if not isinstance(record, dict) or record.get("seq") != self._seq + 1:
                    raise ValueError(f"bad sequence number (expected {self._seq + 1})")
                self._validate_record(record)
            except Exception as exc:
                if is_last:
                    log.warning("discarding torn final catalog record at byte %d: %s", offset, exc)
                    break
                raise CorruptRecord(f"record {i + 1} at byte {offset}: {exc}") from exc
            self._seq += 1
            self._apply(record)
            good_end = offset + len(raw) + 1
        if tail:
            log.warning("discarding unterminated catalog record at byte %d", good_end)
        if good_end < len(data):
            with open(path, "r+b") as fh:
                fh.truncate(good_end)
                fh.flush()
                os.fsync(fh.fileno())

    def _validate_record(self, rec: dict) -> None:
        op = rec["op"]
        if op == "register":
            frags = [FragmentMeta.from_dict(f) for f in rec["fragments"]]
            self._check_register(rec["lfn"], frags)
        elif op == "add_replica":
            entry = self._get(rec["lfn"])
            frag = self._frag(entry, rec["index"])
            if int(rec["crc32"]) != frag.crc32:
                raise ChecksumMismatch(f"{rec['lfn']}[{rec['index']}]")
        elif op == "remove_replica":
            entry = self._get(rec["lfn"])
            frag = self._frag(entry, rec["index"])
            if frag.replica_on(rec["node_id"]) is None:
                raise UnknownReplica(rec["node_id"])
            if len(frag.replicas) == 1:
                raise LastReplica(rec["lfn"])
        elif op == "node":
            NodeInfo.from_dict(rec)
        else:
            raise ValueError(f"unknown op {op!r}")

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "register":
            frags = sorted((FragmentMeta.from_dict(f) for f in rec["fragments"]), key=lambda f: f.index)
            self._files[rec["lfn"]] = LogicalFileEntry(
                lfn=rec["lfn"],
                n_fragments=len(frags),
                total_size=sum(f.size_bytes for f in frags),
                fragments=tuple(frags),
            )
        elif op == "add_replica":
            entry = self._files[rec["lfn"]]
            frag = entry.fragments[rec["index"]]
            loc = ReplicaLocation(rec["node_id"], rec["path"], int(rec["crc32"]))
            self._files[rec["lfn"]] = entry.with_fragment(replace(frag, replicas=frag.replicas + (loc,)))
        elif op == "remove_replica":
            entry = self._files[rec["lfn"]]
            frag = entry.fragments[rec["index"]]
            kept = tuple(r for r in frag.replicas if r.node_id != rec["node_id"])
            self._files[rec["lfn"]] = entry.with_fragment(replace(frag, replicas=kept))
        elif op == "node":
            info = NodeInfo.from_dict(rec)
            self._nodes[info.node_id] = info

    # -- helpers -----------------------------------------------------------

    def _get(self, lfn: str) -> LogicalFileEntry:
        try:
            return self._files[lfn]
        except KeyError:
            raise UnknownFile(lfn) from None

    @staticmethod
    def _frag(entry: LogicalFileEntry, index: int) -> FragmentMeta:
        if not isinstance(index, int) or not 0 <= index < entry.n_fragments:
            raise UnknownFragmentIndex(f"{entry.lfn}[{index}]")
        return entry.fragments[index]

    def _check_register(self, lfn: str, frags: list[FragmentMeta]) -> None:
        if not lfn:
            raise BadRequest("empty logical file name")
        if lfn in self._files:
            raise DuplicateName(lfn)
        if not frags:
            raise EmptyFragmentSet(lfn)
        indices = sorted(f.index for f in frags)
        if indices != list(range(len(frags))):
            raise GapInFragmentIndices(f"{lfn}: indices {indices}")
        for f in frags:
            if f.size_bytes < 0:
                raise BadRequest(f"{lfn}[{f.index}]: negative size")
            if len(f.replicas) != 1:
                raise BadRequest(f"{lfn}[{f.index}]: expected exactly one initial replica")
            if f.replicas[0].crc32 != f.crc32:
                raise ChecksumMismatch(f"{lfn}[{f.index}]")

    # -- operations --------------------------------------------------------

    def register_file(self, lfn: str, fragment_metas: Iterable[FragmentMeta]) -> LogicalFileEntry:
        frags = list(fragment_metas)
        with self._lock:
            self._check_register(lfn, frags)
            self._commit({"op": "register", "lfn": lfn, "fragments": [f.to_dict() for f in sorted(frags, key=lambda f: f.index)]})
            return self._files[lfn]

    def add_replica(self, lfn: str, index: int, location: ReplicaLocation) -> LogicalFileEntry:
        with self._lock:
            entry = self._get(lfn)
            frag = self._frag(entry, index)
            if location.crc32 != frag.crc32:
                raise ChecksumMismatch(
                    f"{lfn}[{index}]: replica crc32 {location.crc32:#010x} != {frag.crc32:#010x}"
                )
            existing = frag.replica_on(location.node_id)
            if existing is not None:
                if existing.path == location.path:
                    return entry
                raise BadRequest(f"{lfn}[{index}] already has a replica on {location.node_id}")
            self._commit({
                "op": "add_replica",
                "lfn": lfn,
                "index": index,
                "node_id": location.node_id,
                "path": location.path,
                "crc32": location.crc32,
            })
            return self._files[lfn]

    def remove_replica(self, lfn: str, index: int, node_id: str) -> LogicalFileEntry:
        with self._lock:
            entry = self._get(lfn)
            frag = self._frag(entry, index)
            if frag.replica_on(node_id) is None:
                raise UnknownReplica(f"{lfn}[{index}] has no replica on {node_id}")
            if len(frag.replicas) == 1:
                raise LastReplica(f"{lfn}[{index}]: refusing to drop the last replica")
            self._commit({"op": "remove_replica", "lfn": lfn, "index": index, "node_id": node_id})
            return self._files[lfn]

    def lookup(self, lfn: str) -> LogicalFileEntry:
        return self._get(lfn)

    def list_files(self, glob_pattern: str = "*") -> list[LogicalFileEntry]:
        rx = glob_to_regex(glob_pattern)
        with self._lock:
            snapshot = dict(self._files)
        return [snapshot[k] for k in sorted(snapshot) if rx.match(k)]

    def register_node(self, info: NodeInfo) -> NodeInfo:
        with self._lock:
            if self._nodes.get(info.node_id) == info:
                return info
            self._commit({"op": "node", **info.to_dict()})
            return info

    def set_node_status(self, node_id: str, status: NodeStatus | str) -> NodeInfo:
        with self._lock:
            info = self.node(node_id)
            return self.register_node(replace(info, status=NodeStatus(status)))

    def node(self, node_id: str) -> NodeInfo:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def nodes(self) -> list[NodeInfo]:
        with self._lock:
            return [self._nodes[k] for k in sorted(self._nodes)]

    # -- introspection -----------------------------------------------------

    def canonical(self) -> str:
        """Deterministic serialization of the whole state, for equality checks."""
        with self._lock:
            state = {
                "files": [self._files[k].to_dict() for k in sorted(self._files)],
                "nodes": [self._nodes[k].to_dict() for k in sorted(self._nodes)],
            }
        return json.dumps(state, sort_keys=True, separators=(",", ":"))

    def check_invariants(self) -> None:
        with self._lock:
            for entry in self._files.values():
                entry.check()


def recover(state_dir: str | os.PathLike, *, fsync: bool = True) -> Catalog:
    """Rebuild a catalog from the log in ``state_dir``."""
    return Catalog(state_dir, fsync=fsync)
