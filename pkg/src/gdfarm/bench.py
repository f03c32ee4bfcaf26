"""Parallel event-file write/read benchmark across storage nodes.

Each node gets one worker. Workers prepare their payload, meet at a start
barrier, and time only the transfer through their node; the run's wall time
spans the earliest start to the latest finish, so one slow node sets the
aggregate for everyone. Decoding and verification happen after the timed
section.
"""

from __future__ import annotations

import csv
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .catalog.model import NodeInfo
from .errors import GfarmError, MissingFile, NodeUnreachable, PartialFailure, UnknownFile
from .eventio import Codec, EventFileReader, EventFileStats, compression_factor, encode_events, iter_synthetic
from .scheduler import (
    DEFAULT_STRAGGLER_THRESHOLD,
    Assignment,
    Locality,
    NodeResult,
    Prediction,
    StragglerReport,
    Task,
    assign,
    detect_stragglers,
    predict_completion,
)
from .storage.client import NodeClient

log = logging.getLogger(__name__)

CSV_COLUMNS = ["mode", "n_nodes", "node_id", "bytes", "seconds", "bps", "straggler",
               "aggregate_bps", "wall_seconds", "compression_factor"]
SERIES_COLUMNS = ["mode", "n_nodes", "aggregate_bps", "wall_seconds"]


@dataclass
class BenchConfig:
    n_nodes: int
    events_per_node: int
    hits_per_event: int = 1000
    quantize_bits: int = 10
    codec: str = "deflate"
    node_rate_bps: list[int] = field(default_factory=list)
    seed: int = 0
    mode: str = "write"
    events_per_block: int = 100
    deflate_level: int = 6
    lfn: str | None = None
    verify: bool = True
    straggler_threshold: float = DEFAULT_STRAGGLER_THRESHOLD

    def __post_init__(self):
        if self.n_nodes < 1 or self.events_per_node < 1 or self.hits_per_event < 1:
            raise ValueError("n_nodes, events_per_node and hits_per_event must be >= 1")
        if len(self.node_rate_bps) not in (0, 1, self.n_nodes):
            raise ValueError(f"node_rate_bps has {len(self.node_rate_bps)} entries for {self.n_nodes} nodes")
        if self.mode not in ("write", "read"):
            raise ValueError("mode must be 'write' or 'read'")
        Codec.parse(self.codec)

    @property
    def rates(self) -> list[int]:
        if not self.node_rate_bps:
            return [0] * self.n_nodes
        if len(self.node_rate_bps) == 1:
            return list(self.node_rate_bps) * self.n_nodes
        return list(self.node_rate_bps)

    @property
    def logical_name(self) -> str:
        return self.lfn or f"bench/s{self.seed}-n{self.n_nodes}.gdf"


@dataclass
class BenchReport:
    config: BenchConfig
    mode: str
    lfn: str
    per_node: list[NodeResult]
    wall_seconds: float
    event_stats: EventFileStats
    straggler_report: StragglerReport
    assignments: list[Assignment] = field(default_factory=list)
    prediction: Prediction | None = None
    decode_seconds: float = 0.0

    @property
    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.per_node)

    @property
    def aggregate_bps(self) -> float:
        return self.total_bytes / self.wall_seconds if self.wall_seconds > 0 else 0.0

    @property
    def compression_factor(self) -> float:
        return compression_factor(self.event_stats)


def _bench_nodes(catalog, n_nodes: int) -> list[NodeInfo]:
    up = [n for n in catalog.nodes() if n.is_up]
    if len(up) < n_nodes:
        raise NodeUnreachable(f"need {n_nodes} live nodes, catalog lists {len(up)}")
    return up[:n_nodes]


def _rates(nodes: Sequence[NodeInfo]) -> dict[str, float] | None:
    rates = {n.node_id: float(n.rate_limit_bps) for n in nodes}
    return rates if all(r > 0 for r in rates.values()) else None


def _run_workers(n: int, prepare, transfer) -> tuple[list, list[tuple[float, float]]]:
    """Run ``prepare(i)`` then, after a shared barrier, time ``transfer(i, prepared)``."""
    barrier = threading.Barrier(n)
    results: list = [None] * n
    times: list[tuple[float, float]] = [(0.0, 0.0)] * n
    errors: list[BaseException] = []

    def worker(i: int) -> None:
        try:
            prepared = prepare(i)
        except BaseException as exc:
            errors.append(exc)
            barrier.abort()
            return
        try:
            barrier.wait()
        except threading.BrokenBarrierError:
            return
        try:
            t0 = time.perf_counter()
            results[i] = transfer(i, prepared)
            times[i] = (t0, time.perf_counter())
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,), name=f"bench-{i}") for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        first = errors[0]
        if isinstance(first, GfarmError) and len(errors) == 1:
            raise first
        raise PartialFailure(f"{len(errors)} of {n} bench workers failed: {first!r}") from first
    return results, times


def _finish(config, mode, lfn, nodes, sizes, times, stats, assignments) -> BenchReport:
    per_node = [NodeResult(n.node_id, sizes[i], t1 - t0) for i, (n, (t0, t1)) in enumerate(zip(nodes, times))]
    wall = max(t1 for _, t1 in times) - min(t0 for t0, _ in times)
    rates = _rates(nodes)
    prediction = predict_completion(assignments, rates) if rates else None
    stragglers = detect_stragglers(per_node, config.straggler_threshold)
    return BenchReport(config, mode, lfn, per_node, wall, stats, stragglers, list(assignments), prediction)


def run_write_bench(config: BenchConfig, catalog) -> BenchReport:
    """Every node writes its own event-file fragment; all are registered as one logical file."""
    nodes = _bench_nodes(catalog, config.n_nodes)
    lfn = config.logical_name
    codec = Codec.parse(config.codec)

    def prepare(i: int):
        events = iter_synthetic(config.events_per_node, config.hits_per_event, config.seed + i,
                                config.quantize_bits, first_event_id=i * config.events_per_node)
        data, stats = encode_events(events, codec, config.events_per_block, config.deflate_level)
        return data, stats, NodeClient(nodes[i].address, nodes[i].node_id)

    def transfer(i: int, prepared):
        data, stats, client = prepared
        with client:
            meta = client.put(lfn, i, data)
        return meta, stats

    results, times = _run_workers(config.n_nodes, prepare, transfer)
    metas = [m for m, _ in results]
    catalog.register_file(lfn, metas)
    stats = _sum_stats([s for _, s in results])
    sizes = [m.size_bytes for m in metas]
    assignments = [Assignment(i, n.node_id, Locality.LOCAL, sizes[i]) for i, n in enumerate(nodes)]
    return _finish(config, "write", lfn, nodes, sizes, times, stats, assignments)


def run_read_bench(config: BenchConfig, catalog) -> BenchReport:
    """Read each fragment on the node the scheduler picks (which must hold it) and decode it."""
    lfn = config.logical_name
    try:
        entry = catalog.lookup(lfn)
    except UnknownFile:
        raise MissingFile(f"{lfn} not in catalog; run the write bench first") from None
    if entry.n_fragments != config.n_nodes:
        raise MissingFile(f"{lfn} has {entry.n_fragments} fragments, config expects {config.n_nodes}")
    all_nodes = [n for n in catalog.nodes() if n.is_up]
    tasks = [Task(f.index, lfn, f.index, f.size_bytes) for f in entry.fragments]
    assignments = assign(tasks, catalog, all_nodes)
    remote = [a.task_id for a in assignments if a.locality is not Locality.LOCAL]
    if remote:
        raise NodeUnreachable(f"no live replica holder for fragments {remote}")
    by_id = {n.node_id: n for n in all_nodes}
    nodes = [by_id[a.node_id] for a in assignments]

    def prepare(i: int):
        return NodeClient(nodes[i].address, nodes[i].node_id)

    def transfer(i: int, client: NodeClient):
        with client:
            return client.get(lfn, i)

    blobs, times = _run_workers(len(tasks), prepare, transfer)

    t0 = time.perf_counter()
    all_stats = []
    for i, blob in enumerate(blobs):
        frag = entry.fragments[i]
        if len(blob) != frag.size_bytes:
            raise GfarmError(f"{lfn}[{i}]: read {len(blob)} bytes, catalog says {frag.size_bytes}")
        with EventFileReader(blob) as reader:
            events = reader.read()
            if len(events) != reader.n_events:
                raise GfarmError(f"{lfn}[{i}]: decoded {len(events)} events, footer says {reader.n_events}")
            all_stats.append(reader.stats())
        if config.verify:
            expected = iter_synthetic(config.events_per_node, config.hits_per_event, config.seed + i,
                                      config.quantize_bits, first_event_id=i * config.events_per_node)
            for got, want in zip(events, expected, strict=True):
                if got != want:
                    raise GfarmError(f"{lfn}[{i}]: event {got.event_id} differs from the generated event")
    decode_seconds = time.perf_counter() - t0

    report = _finish(config, "read", lfn, nodes, [len(b) for b in blobs], times, _sum_stats(all_stats), assignments)
    report.decode_seconds = decode_seconds
    return report


def _sum_stats(stats: Sequence[EventFileStats]) -> EventFileStats:
    return EventFileStats(
        sum(s.n_events for s in stats),
        sum(s.bytes_raw for s in stats),
        sum(s.bytes_compressed for s in stats),
    )


def report_rows(report: BenchReport) -> list[dict]:
    n = report.config.n_nodes
    rows = []
    for r in report.per_node:
        rows.append({
            "mode": report.mode, "n_nodes": n, "node_id": r.node_id, "bytes": r.bytes,
            "seconds": f"{r.seconds:.6f}", "bps": f"{r.bps:.1f}",
            "straggler": int(report.straggler_report.is_straggler(r.node_id)),
            "aggregate_bps": "", "wall_seconds": "", "compression_factor": "",
        })
    rows.append({
        "mode": report.mode, "n_nodes": n, "node_id": "ALL", "bytes": report.total_bytes,
        "seconds": f"{report.wall_seconds:.6f}", "bps": f"{report.aggregate_bps:.1f}",
        "straggler": len(report.straggler_report.stragglers),
        "aggregate_bps": f"{report.aggregate_bps:.1f}", "wall_seconds": f"{report.wall_seconds:.6f}",
        "compression_factor": repr(report.compression_factor),
    })
    return rows


def emit_report(report: BenchReport, path: str | os.PathLike, series_path: str | os.PathLike | None = None,
                append: bool = True) -> Path:
    """Write per-node rows plus one aggregate row; optionally maintain an aggregate-vs-nodes series."""
    path = Path(path)
    fresh = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if fresh:
            w.writeheader()
        w.writerows(report_rows(report))
    if series_path is not None:
        series_path = Path(series_path)
        points = []
        if series_path.exists():
            with open(series_path, newline="") as fh:
                points = list(csv.DictReader(fh))
        points.append({
            "mode": report.mode, "n_nodes": report.config.n_nodes,
            "aggregate_bps": f"{report.aggregate_bps:.1f}", "wall_seconds": f"{report.wall_seconds:.6f}",
        })
        points.sort(key=lambda p: (p["mode"], int(p["n_nodes"])))
        with open(series_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SERIES_COLUMNS)
            w.writeheader()
            w.writerows(points)
    return path


def config_dict(config: BenchConfig) -> dict:
    return asdict(config)
