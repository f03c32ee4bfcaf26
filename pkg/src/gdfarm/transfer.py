"""Parallel multi-stream fragment replication.

The coordinator never touches fragment bytes: it sends PULL to each
destination node, which fetches the fragment from the chosen source with
GET and stores it through its own write path. A pulled fragment is only
registered in the catalog once its checksum matches the catalog's.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .catalog.model import LogicalFileEntry, NodeInfo, ReplicaLocation
from .errors import (
    CatalogUnreachable,
    GfarmError,
    NoDestination,
    PartialFailure,
    UnknownFile,
    UnknownNode,
)
from .storage.client import NodeClient

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 1 << 20


@dataclass(frozen=True)
class TransferAssignment:
    fragment_index: int
    source: ReplicaLocation
    dest_node: str
    noop: bool = False


@dataclass(frozen=True)
class TransferPlan:
    lfn: str
    assignments: tuple[TransferAssignment, ...]
    n_streams: int
    chunk_bytes: int = DEFAULT_CHUNK
    sizes: dict[int, int] = field(default_factory=dict, compare=False)
    crcs: dict[int, int] = field(default_factory=dict, compare=False)

    @property
    def pending(self) -> list[TransferAssignment]:
        return [a for a in self.assignments if not a.noop]


@dataclass(frozen=True)
class StreamResult:
    fragment_index: int
    source: str
    dest: str
    bytes: int
    seconds: float
    ok: bool = True
    error: str = ""

    @property
    def bps(self) -> float:
        return self.bytes / self.seconds if self.seconds > 0 else 0.0


@dataclass
class TransferReport:
    lfn: str
    per_stream: list[StreamResult]
    wall_seconds: float
    verified: bool
    failed: list[int] = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(s.bytes for s in self.per_stream if s.ok)

    @property
    def aggregate_bps(self) -> float:
        return self.total_bytes / self.wall_seconds if self.wall_seconds > 0 else 0.0

    def rows(self) -> list[dict]:
        out = [
            {"fragment": s.fragment_index, "source": s.source, "dest": s.dest,
             "bytes": s.bytes, "seconds": s.seconds, "bps": s.bps}
            for s in sorted(self.per_stream, key=lambda s: s.fragment_index)
        ]
        out.append({"fragment": "aggregate", "source": "", "dest": "", "bytes": self.total_bytes,
                    "seconds": self.wall_seconds, "bps": self.aggregate_bps})
        return out


def plan_replication(entry: LogicalFileEntry, dest_nodes: Sequence[str], n_streams: int = 1,
                     chunk_bytes: int = DEFAULT_CHUNK) -> TransferPlan:
    """Round-robin fragments over destinations; pick the least-used source replica."""
    if entry is None:
        raise UnknownFile("no entry")
    dests = list(dest_nodes)
    if not dests:
        raise NoDestination("no destination nodes given")
    if n_streams < 1:
        raise ValueError("n_streams must be >= 1")
    source_use: dict[str, int] = {}
    assignments = []
    for frag in entry.fragments:
        dest = dests[frag.index % len(dests)]
        existing = frag.replica_on(dest)
        if existing is not None:
            assignments.append(TransferAssignment(frag.index, existing, dest, noop=True))
            continue
        src = min(frag.replicas, key=lambda r: (source_use.get(r.node_id, 0), r.node_id))
        source_use[src.node_id] = source_use.get(src.node_id, 0) + 1
        assignments.append(TransferAssignment(frag.index, src, dest))
    active = sum(not a.noop for a in assignments)
    return TransferPlan(
        lfn=entry.lfn,
        assignments=tuple(assignments),
        n_streams=max(1, min(n_streams, active)),
        chunk_bytes=chunk_bytes,
        sizes={f.index: f.size_bytes for f in entry.fragments},
        crcs={f.index: f.crc32 for f in entry.fragments},
    )


def _stream_queues(pending: Sequence[TransferAssignment], n_streams: int) -> list[list[TransferAssignment]]:
    """Group work by (source, dest) pair and deal the pairs out to streams.

    Keeping one pair on one stream means concurrent streams use disjoint
    node pairs whenever there are at least as many pairs as streams.
    """
    pairs: dict[tuple[str, str], list[TransferAssignment]] = {}
    for a in pending:
        pairs.setdefault((a.source.node_id, a.dest_node), []).append(a)
    queues: list[list[TransferAssignment]] = [[] for _ in range(n_streams)]
    if len(pairs) >= n_streams:
        for k, key in enumerate(pairs):
            queues[k % n_streams].extend(pairs[key])
    else:
        for k, a in enumerate(pending):
            queues[k % n_streams].append(a)
    return [q for q in queues if q]


class Replicator:
    """Executes plans against a catalog (local or remote) and its nodes."""

    def __init__(self, catalog, *, retries: int = 1, timeout: float | None = 300.0):
        self.catalog = catalog
        self.retries = retries
        self.timeout = timeout

    def _nodes(self) -> dict[str, NodeInfo]:
        try:
            return {n.node_id: n for n in self.catalog.nodes()}
        except OSError as exc:
            raise CatalogUnreachable(str(exc)) from exc

    def _address(self, nodes: dict[str, NodeInfo], node_id: str) -> str:
        try:
            return nodes[node_id].address
        except KeyError:
            raise UnknownNode(node_id) from None

    def _one(self, a: TransferAssignment, plan: TransferPlan, nodes, client_cache) -> StreamResult:
        expected = plan.crcs[a.fragment_index]
        src_addr = self._address(nodes, a.source.node_id)
        last_error = ""
        t0 = time.perf_counter()
        for attempt in range(self.retries + 1):
            t0 = time.perf_counter()
            try:
                client = client_cache(a.dest_node)
                meta = client.pull(plan.lfn, a.fragment_index, src_addr, plan.chunk_bytes)
                seconds = time.perf_counter() - t0
                if meta.crc32 != expected:
                    last_error = f"crc {meta.crc32:#010x} != catalog {expected:#010x}"
                    log.warning("%s[%d] -> %s attempt %d: %s", plan.lfn, a.fragment_index, a.dest_node, attempt + 1, last_error)
                    continue
                loc = ReplicaLocation(a.dest_node, meta.replicas[0].path, meta.crc32)
                self.catalog.add_replica(plan.lfn, a.fragment_index, loc)
                return StreamResult(a.fragment_index, a.source.node_id, a.dest_node, meta.size_bytes, seconds)
            except CatalogUnreachable:
                raise
            except GfarmError as exc:
                last_error = f"{exc.code}: {exc}"
                log.warning("%s[%d] -> %s attempt %d failed: %s", plan.lfn, a.fragment_index, a.dest_node, attempt + 1, last_error)
        # leave no unregistered bad copy behind
        try:
            client_cache(a.dest_node).delete(plan.lfn, a.fragment_index)
        except GfarmError:
            pass
        return StreamResult(a.fragment_index, a.source.node_id, a.dest_node, 0,
                            time.perf_counter() - t0, ok=False, error=last_error)

    def execute(self, plan: TransferPlan, *, raise_on_failure: bool = True) -> TransferReport:
        nodes = self._nodes()
        pending = plan.pending
        queues = _stream_queues(pending, plan.n_streams)
        results: list[StreamResult] = []
        results_lock = threading.Lock()

        def run_queue(queue: list[TransferAssignment]) -> None:
            clients: dict[str, NodeClient] = {}

            def client_for(node_id: str) -> NodeClient:
                if node_id not in clients:
                    clients[node_id] = NodeClient(self._address(nodes, node_id), node_id, timeout=self.timeout)
                return clients[node_id]

            try:
                for a in queue:
                    r = self._one(a, plan, nodes, client_for)
                    with results_lock:
                        results.append(r)
            finally:
                for c in clients.values():
                    c.close()

        t0 = time.perf_counter()
        if queues:
            with ThreadPoolExecutor(max_workers=len(queues), thread_name_prefix="rep") as pool:
                for fut in [pool.submit(run_queue, q) for q in queues]:
                    fut.result()
        wall = time.perf_counter() - t0

        failed = sorted(r.fragment_index for r in results if not r.ok)
        dests = sorted({a.dest_node for a in plan.assignments})
        verified = not failed and self.verify(plan.lfn, dests, fragments=[a.fragment_index for a in plan.assignments],
                                              placement={a.fragment_index: a.dest_node for a in plan.assignments})
        report = TransferReport(plan.lfn, results, wall, verified, failed)
        if failed and raise_on_failure:
            raise PartialFailure(f"{plan.lfn}: fragments {failed} failed", report)
        return report

    def verify(self, lfn: str, node_set: Sequence[str], *, fragments=None, placement=None) -> bool:
        """True iff every fragment has a replica on ``node_set`` whose bytes match the catalog crc.

        ``placement`` narrows the check to one expected node per fragment.
        """
        entry = self.catalog.lookup(lfn)
        nodes = self._nodes()
        wanted = set(node_set)
        clients: dict[str, NodeClient] = {}
        try:
            for frag in entry.fragments:
                if fragments is not None and frag.index not in fragments:
                    continue
                holders = [r for r in frag.replicas if r.node_id in wanted]
                if placement is not None:
                    holders = [r for r in holders if r.node_id == placement[frag.index]]
                ok = False
                for r in holders:
                    try:
                        if r.node_id not in clients:
                            clients[r.node_id] = NodeClient(self._address(nodes, r.node_id), r.node_id, timeout=self.timeout)
                        if clients[r.node_id].checksum(lfn, frag.index) == frag.crc32:
                            ok = True
                            break
                    except GfarmError:
                        continue
                if not ok:
                    return False
            return True
        finally:
            for c in clients.values():
                c.close()


def execute(plan: TransferPlan, catalog, **kw) -> TransferReport:
    return Replicator(catalog).execute(plan, **kw)


def verify(lfn: str, node_set: Sequence[str], catalog) -> bool:
    return Replicator(catalog).verify(lfn, node_set)
