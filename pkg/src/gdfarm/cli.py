"""``dfctl`` / ``dfbench`` command line.

Exit codes: 0 success, 1 operational error, 2 usage error.

Global settings resolve as flag > ``DF_*`` environment variable > config file
(``key=value`` lines, path from ``--config`` or ``DF_CONFIG``) > default.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass
from typing import Sequence

from . import __version__
from .errors import GfarmError, NoNodesAvailable, UnknownNode, ValidationFailed

log = logging.getLogger("gdfarm.cli")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
DEFAULT_CATALOG = "127.0.0.1:7700"
DEFAULT_TIMEOUT = 60.0
MiB = 1 << 20


@dataclass(frozen=True)
class GlobalConfig:
    catalog_addr: str = DEFAULT_CATALOG
    timeout_seconds: float = DEFAULT_TIMEOUT
    verbosity: int = 0
    config_path: str | None = None


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lower().replace("-", "_")] = value.strip()
    return out


def resolve_config(args: argparse.Namespace, environ: dict[str, str] | None = None) -> GlobalConfig:
    env = os.environ if environ is None else environ
    path = args.config or env.get("DF_CONFIG")
    filed = read_config_file(path) if path else {}

    def pick(flag, env_key: str, file_key: str, default):
        if flag is not None:
            return flag
        if env_key in env:
            return env[env_key]
        return filed.get(file_key, default)

    catalog = pick(args.catalog, "DF_CATALOG", "catalog", DEFAULT_CATALOG)
    timeout = float(pick(args.timeout, "DF_TIMEOUT", "timeout", DEFAULT_TIMEOUT))
    verbosity = int(pick(args.verbose or None, "DF_VERBOSITY", "verbosity", 0))
    return GlobalConfig(catalog, timeout, verbosity, path)


# -- output helpers ----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_rows(rows: list[dict], columns: Sequence[str], csv_path: str | None = None,
              out=None, header: bool = True) -> None:
    """Print an aligned table, or CSV when ``csv_path`` is ``-``; also write CSV to a file if named."""
    out = out or sys.stdout
    if csv_path == "-":
        w = csv.DictWriter(out, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return
    if rows:
        cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
        if header:
            cells.insert(0, list(columns))
        widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
        for row in cells:
            out.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)


def _catalog(cfg: GlobalConfig):
    from .catalog import CatalogClient
    return CatalogClient(cfg.catalog_addr, timeout=cfg.timeout_seconds)


def _live_nodes(catalog) -> dict:
    return {n.node_id: n for n in catalog.nodes() if n.is_up}


def _split_list(value: str | None) -> list[str]:
    return [v for v in (value or "").split(",") if v]


def _wait_for_signal() -> None:
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()


# -- catalog / node daemons --------------------------------------------------

def cmd_catalog_serve(args, cfg: GlobalConfig) -> int:
    from .catalog import Catalog, CatalogServer, parse_addr
    addr = args.addr or cfg.catalog_addr
    catalog = Catalog(args.state_dir)
    server = CatalogServer(catalog, parse_addr(addr))
    server.start()
    print(f"catalog listening on {server.address} state={args.state_dir}", flush=True)
    try:
        _wait_for_signal()
    finally:
        server.stop()
        catalog.close()
    return EXIT_OK


def cmd_node_serve(args, cfg: GlobalConfig) -> int:
    from .catalog import parse_addr
    from .storage import NodeServer, NodeStore
    node_id = args.node_id or f"node-{parse_addr(args.addr)[1]}"
    store = NodeStore(args.root, node_id, args.rate_limit, _split_list(args.load_flags))
    server = NodeServer(store, parse_addr(args.addr), catalog=_catalog(cfg))
    server.start()
    print(f"node {node_id} listening on {server.address} root={args.root} rate={args.rate_limit}", flush=True)
    try:
        _wait_for_signal()
    finally:
        try:
            server.stop(mark_down=True)
        except GfarmError as exc:
            log.warning("could not mark %s down: %s", node_id, exc)
    return EXIT_OK


def cmd_node_ls(args, cfg: GlobalConfig) -> int:
    rows = [n.to_dict() for n in _catalog(cfg).nodes()]
    emit_rows(rows, ["node_id", "address", "status", "rate_limit_bps", "storage_root"], args.csv)
    return EXIT_OK


def cmd_node_probe(args, cfg: GlobalConfig) -> int:
    from .storage import NodeClient
    catalog = _catalog(cfg)
    node = catalog.node(args.node_id)
    with NodeClient(node.address, node.node_id, timeout=cfg.timeout_seconds) as client:
        health = client.probe()
    row = {"node_id": node.node_id, **health.to_dict()}
    row["load_flags"] = "|".join(row["load_flags"])
    emit_rows([row], ["node_id", "free_bytes", "measured_write_bps", "measured_read_bps", "load_flags"], args.csv)
    return EXIT_OK


# -- file operations ---------------------------------------------------------

def cmd_reg(args, cfg: GlobalConfig) -> int:
    """Upload local files as fragments 0..k-1 of one logical file, then register it."""
    from .storage import NodeClient
    catalog = _catalog(cfg)
    live = _live_nodes(catalog)
    targets = _split_list(args.node) or sorted(live)
    if not targets:
        raise NoNodesAvailable("no live nodes in catalog")
    metas = []
    for i, path in enumerate(args.files):
        node_id = targets[i % len(targets)]
        if node_id not in live:
            raise UnknownNode(f"{node_id} is not a live node")
        with NodeClient(live[node_id].address, node_id, timeout=cfg.timeout_seconds) as client, open(path, "rb") as fh:
            metas.append(client.put(args.lfn, i, fh, size=os.fstat(fh.fileno()).st_size))
    entry = catalog.register_file(args.lfn, metas)
    _print_entry(entry, args.csv)
    return EXIT_OK


def _print_entry(entry, csv_path) -> None:
    rows = [{"lfn": entry.lfn, "index": f.index, "size_bytes": f.size_bytes, "crc32": f"{f.crc32:08x}",
             "replicas": "|".join(r.node_id for r in f.replicas)} for f in entry.fragments]
    emit_rows(rows, ["lfn", "index", "size_bytes", "crc32", "replicas"], csv_path)


def cmd_ls(args, cfg: GlobalConfig) -> int:
    entries = _catalog(cfg).list_files(args.pattern)
    if args.long:
        rows = [{"lfn": e.lfn, "index": f.index, "size_bytes": f.size_bytes, "crc32": f"{f.crc32:08x}",
                 "replicas": "|".join(r.node_id for r in f.replicas)} for e in entries for f in e.fragments]
        emit_rows(rows, ["lfn", "index", "size_bytes", "crc32", "replicas"], args.csv)
    else:
        rows = [{"lfn": e.lfn, "n_fragments": e.n_fragments, "total_size": e.total_size} for e in entries]
        emit_rows(rows, ["lfn", "n_fragments", "total_size"], args.csv, header=args.csv is not None)
    return EXIT_OK


def cmd_put(args, cfg: GlobalConfig) -> int:
    """Store one fragment on one node (no catalog change)."""
    from .storage import NodeClient
    node = _catalog(cfg).node(args.node)
    with NodeClient(node.address, node.node_id, timeout=cfg.timeout_seconds) as client, open(args.file, "rb") as fh:
        meta = client.put(args.lfn, args.index, fh, size=os.fstat(fh.fileno()).st_size)
    r = meta.replicas[0]
    emit_rows([{"lfn": args.lfn, "index": meta.index, "size_bytes": meta.size_bytes, "crc32": f"{meta.crc32:08x}",
                "node_id": r.node_id, "path": r.path}],
              ["lfn", "index", "size_bytes", "crc32", "node_id", "path"], args.csv)
    return EXIT_OK


def cmd_get(args, cfg: GlobalConfig) -> int:
    """Fetch one fragment, or the whole logical file in fragment order."""
    from .storage import NodeClient
    catalog = _catalog(cfg)
    entry = catalog.lookup(args.lfn)
    live = _live_nodes(catalog)
    indices = [args.index] if args.index is not None else [f.index for f in entry.fragments]
    out = open(args.out, "wb") if args.out else sys.stdout.buffer
    try:
        for i in indices:
            frag = entry.fragments[i]
            holders = [r.node_id for r in frag.replicas if r.node_id in live]
            if args.node:
                holders = [h for h in holders if h == args.node]
            if not holders:
                raise NoNodesAvailable(f"{args.lfn}[{i}]: no live replica")
            node = live[holders[0]]
            with NodeClient(node.address, node.node_id, timeout=cfg.timeout_seconds) as client:
                _, chunks = client.stream(args.lfn, i, args.offset, args.length)
                for chunk in chunks:
                    out.write(chunk)
    finally:
        if args.out:
            out.close()
        else:
            out.flush()
    return EXIT_OK


def cmd_rep(args, cfg: GlobalConfig) -> int:
    from .transfer import Replicator, plan_replication
    catalog = _catalog(cfg)
    plan = plan_replication(catalog.lookup(args.lfn), _split_list(args.dest), args.streams, args.chunk)
    report = Replicator(catalog, timeout=cfg.timeout_seconds).execute(plan, raise_on_failure=False)
    emit_rows(report.rows(), ["fragment", "source", "dest", "bytes", "seconds", "bps"], args.csv)
    print(f"verified={str(report.verified).lower()} failed={report.failed}", file=sys.stderr)
    return EXIT_OK if not report.failed and report.verified else EXIT_ERROR


def cmd_verify(args, cfg: GlobalConfig) -> int:
    from .transfer import Replicator
    ok = Replicator(_catalog(cfg), timeout=cfg.timeout_seconds).verify(args.lfn, _split_list(args.nodes))
    print("true" if ok else "false")
    return EXIT_OK if ok else EXIT_ERROR


# -- event files -------------------------------------------------------------

def cmd_evt_gen(args, cfg: GlobalConfig) -> int:
    from .eventio import iter_synthetic, write_events
    events = iter_synthetic(args.events, args.hits, args.seed, args.quantize_bits, first_event_id=args.first_event_id)
    stats = write_events(args.out, events, args.codec, args.events_per_block, args.level)
    _print_stats(args.out, stats, args.csv)
    return EXIT_OK


def _print_stats(path, stats, csv_path, extra: dict | None = None) -> None:
    from .eventio import compression_factor
    row = {"file": str(path), "n_events": stats.n_events, "bytes_raw": stats.bytes_raw,
           "bytes_compressed": stats.bytes_compressed, "mean_event_bytes": stats.mean_event_bytes,
           "compression_factor": compression_factor(stats) if stats.bytes_compressed else 0.0, **(extra or {})}
    emit_rows([row], list(row), csv_path)


def cmd_evt_stats(args, cfg: GlobalConfig) -> int:
    from .eventio import EventFileReader
    with EventFileReader(args.file) as r:
        extra = {"blocks": len(r.blocks), "first_event_id": r.first_event_id, "collections": "|".join(r.collections)}
        _print_stats(args.file, r.stats(), args.csv, extra)
    return EXIT_OK


def _parse_range(text: str | None) -> tuple[int, int] | None:
    if not text:
        return None
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"range must be START:STOP, got {text!r}")
    return int(lo), int(hi)


def cmd_evt_dump(args, cfg: GlobalConfig) -> int:
    from .eventio import EventFileReader
    selection = _split_list(args.collections) or None
    with EventFileReader(args.file) as r:
        rng = _parse_range(args.range)
        if args.hits:
            cols = ["event_id", "collection", "hit", "edep_abs", "edep_gap", "track_len_abs", "track_len_gap"]
            rows = [{"event_id": ev.event_id, "collection": c.detector_name, "hit": k,
                     **dict(zip(cols[3:], (repr(float(x)) for x in h)))}
                    for ev in r.iter_events(selection, rng) for c in ev.collections for k, h in enumerate(c.hits)]
        else:
            cols = ["event_id", "collection", "n_hits"]
            rows = [{"event_id": ev.event_id, "collection": c.detector_name, "n_hits": len(c)}
                    for ev in r.iter_events(selection, rng) for c in ev.collections]
    emit_rows(rows, cols, args.csv)
    return EXIT_OK


# -- schemac -----------------------------------------------------------------

def _parse_defines(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValueError(f"--define expects name=value, got {item!r}")
        out[name] = value
    return out


def cmd_schemac(args, cfg: GlobalConfig) -> int:
    from . import schemac
    defines = _parse_defines(args.define)
    src = args.file
    try:
        result = schemac.compile_schema(src, args.template, args.out, defines)
    except ValidationFailed as exc:
        for d in exc.diagnostics:
            print(d.format(src), file=sys.stderr)
        return EXIT_ERROR
    except schemac.SchemaError as exc:
        print(f"{src}:{exc.line}: error: {exc.message}", file=sys.stderr)
        return EXIT_ERROR
    for d in result.diagnostics:
        print(d.format(src), file=sys.stderr)
    for tpath, diags in result.template_diagnostics.items():
        for d in diags:
            print(d.format(tpath), file=sys.stderr)
    for p in result.paths:
        print(p)
    return EXIT_OK


# -- scheduler ---------------------------------------------------------------

def cmd_sched_plan(args, cfg: GlobalConfig) -> int:
    from .scheduler import assign, read_tasks, write_assignments
    catalog = _catalog(cfg)
    assignments = assign(read_tasks(args.tasks), catalog, catalog.nodes())
    if args.out:
        write_assignments(args.out, assignments)
    rows = [a.to_dict() for a in assignments]
    emit_rows(rows, ["task_id", "node_id", "locality", "est_bytes"], args.csv)
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def _bench_config(args):
    from .bench import BenchConfig
    rates = [int(float(r)) for r in _split_list(args.rates)]
    return BenchConfig(
        n_nodes=args.nodes, events_per_node=args.events_per_node, hits_per_event=args.hits,
        quantize_bits=args.quantize_bits, codec=args.codec, node_rate_bps=rates, seed=args.seed,
        mode=args.mode, events_per_block=args.events_per_block, deflate_level=args.level,
        lfn=args.lfn, straggler_threshold=args.threshold,
    )


def cmd_bench(args, cfg: GlobalConfig) -> int:
    from .bench import CSV_COLUMNS, emit_report, report_rows, run_read_bench, run_write_bench
    config = _bench_config(args)
    if args.embedded:
        from .cluster import EmbeddedCluster
        with EmbeddedCluster(config.n_nodes, config.rates, args.root) as cluster:
            if config.mode == "read":
                log.info("embedded read: writing the input file first (untimed)")
                run_write_bench(config, cluster.catalog)
                report = run_read_bench(config, cluster.catalog)
            else:
                report = run_write_bench(config, cluster.catalog)
    else:
        catalog = _catalog(cfg)
        report = (run_read_bench if config.mode == "read" else run_write_bench)(config, catalog)
    emit_rows(report_rows(report), CSV_COLUMNS, "-" if args.csv == "-" else None)
    if args.csv and args.csv != "-":
        emit_report(report, args.csv, args.series)
    if report.prediction is not None:
        print(f"predicted_aggregate_bps={report.prediction.aggregate_bps:.1f} "
              f"measured_aggregate_bps={report.aggregate_bps:.1f}", file=sys.stderr)
    if report.straggler_report.stragglers:
        print(f"stragglers={','.join(report.straggler_report.stragglers)}", file=sys.stderr)
    return EXIT_OK


def _add_bench_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nodes", type=int, required=True, help="number of storage nodes")
    p.add_argument("--events-per-node", type=int, required=True)
    p.add_argument("--hits", type=int, default=1000, help="hits per event (default 1000)")
    p.add_argument("--quantize-bits", type=int, default=10, help="kept mantissa bits (default 10)")
    p.add_argument("--codec", default="deflate", choices=["deflate", "stored", "shuffle_deflate"])
    p.add_argument("--level", type=int, default=6, help="deflate level (default 6)")
    p.add_argument("--events-per-block", type=int, default=100)
    p.add_argument("--rates", help="per-node limits in bytes/s, one value or one per node")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lfn", help="logical file name (default bench/s<seed>-n<nodes>.gdf)")
    p.add_argument("--threshold", type=float, default=0.5, help="straggler fraction of median")
    p.add_argument("--csv", help="append report rows to this CSV file ('-' prints CSV)")
    p.add_argument("--series", help="maintain an aggregate-vs-nodes series CSV here")
    p.add_argument("--root", help="embedded mode: storage directory (default: temporary)")
    where = p.add_mutually_exclusive_group()
    where.add_argument("--embedded", action="store_true", help="spawn catalog and nodes in-process (default)")
    where.add_argument("--catalog", dest="bench_catalog", metavar="ADDR", help="use a running catalog")


# -- parser ------------------------------------------------------------------

def build_parser(prog: str = "dfctl") -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog, description="Desk-scale Grid Datafarm: catalog, storage nodes, "
                                     "event files, replication, scheduling and benchmarks.",
                                     epilog="exit codes: 0 success, 1 operational error, 2 usage error")
    parser.add_argument("--catalog", help=f"catalog HOST:PORT (env DF_CATALOG, default {DEFAULT_CATALOG})")
    parser.add_argument("--timeout", type=float, help="network timeout in seconds (env DF_TIMEOUT)")
    parser.add_argument("--config", help="key=value config file (env DF_CONFIG)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("catalog", help="metadata catalog service")
    s = p.add_subparsers(dest="action", metavar="ACTION", required=True)
    q = s.add_parser("serve", help="run the catalog service")
    q.add_argument("--addr", help="listen HOST:PORT (default: the global catalog address)")
    q.add_argument("--state-dir", required=True, help="directory holding the catalog log")
    q.set_defaults(func=cmd_catalog_serve)

    p = sub.add_parser("node", help="storage node daemon and inspection")
    s = p.add_subparsers(dest="action", metavar="ACTION", required=True)
    q = s.add_parser("serve", help="run a storage node and register it with the catalog")
    q.add_argument("--addr", required=True, help="listen HOST:PORT")
    q.add_argument("--root", required=True, help="fragment storage directory")
    q.add_argument("--rate-limit", type=int, default=0, metavar="BPS", help="bytes/s per direction, 0 = unlimited")
    q.add_argument("--node-id", help="node identifier (default node-<port>)")
    q.add_argument("--load-flags", help="comma list: extra_processes,high_fragmentation")
    q.set_defaults(func=cmd_node_serve)
    q = s.add_parser("ls", help="list registered nodes")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_node_ls)
    q = s.add_parser("probe", help="run a node's self-test and print its health")
    q.add_argument("node_id")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_node_probe)

    q = sub.add_parser("reg", help="store local files as fragments and register one logical file")
    q.add_argument("lfn")
    q.add_argument("files", nargs="+", metavar="FILE", help="fragment i is FILE number i")
    q.add_argument("--node", help="comma list of target nodes, used round-robin (default: all live)")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_reg)

    q = sub.add_parser("ls", help="list logical files matching a glob")
    q.add_argument("pattern", nargs="?", default="*", help="glob with * and ? (default *)")
    q.add_argument("-l", "--long", action="store_true", help="one row per fragment")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_ls)

    q = sub.add_parser("put", help="store one fragment on one node (catalog unchanged)")
    q.add_argument("lfn")
    q.add_argument("index", type=int)
    q.add_argument("file")
    q.add_argument("--node", required=True, help="target node id")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_put)

    q = sub.add_parser("get", help="read a fragment or a whole logical file")
    q.add_argument("lfn")
    q.add_argument("--index", type=int, help="single fragment (default: all, in order)")
    q.add_argument("--offset", type=int, default=0)
    q.add_argument("--length", type=int, default=0, help="0 = to end")
    q.add_argument("--node", help="read only from this replica holder")
    q.add_argument("-o", "--out", help="output file (default stdout)")
    q.set_defaults(func=cmd_get)

    q = sub.add_parser("rep", help="replicate a logical file onto destination nodes")
    q.add_argument("lfn")
    q.add_argument("--dest", required=True, help="NODE[,NODE...]")
    q.add_argument("--streams", type=int, default=1)
    q.add_argument("--chunk", type=int, default=MiB, metavar="BYTES")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_rep)

    q = sub.add_parser("verify", help="check replica checksums on a node set")
    q.add_argument("lfn")
    q.add_argument("--nodes", required=True, help="NODE[,NODE...]")
    q.set_defaults(func=cmd_verify)

    p = sub.add_parser("evt", help="event files")
    s = p.add_subparsers(dest="action", metavar="ACTION", required=True)
    q = s.add_parser("gen", help="write a synthetic event file")
    q.add_argument("out")
    q.add_argument("--events", type=int, default=100)
    q.add_argument("--hits", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--quantize-bits", type=int, default=10)
    q.add_argument("--codec", default="deflate", choices=["deflate", "stored", "shuffle_deflate"])
    q.add_argument("--level", type=int, default=6)
    q.add_argument("--events-per-block", type=int, default=100)
    q.add_argument("--first-event-id", type=int, default=0)
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_evt_gen)
    q = s.add_parser("stats", help="sizes and compression factor of an event file")
    q.add_argument("file")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_evt_stats)
    q = s.add_parser("dump", help="list events, optionally every hit")
    q.add_argument("file")
    q.add_argument("--collections", help="comma list to decode (default all)")
    q.add_argument("--range", help="event positions START:STOP within the file (half open)")
    q.add_argument("--hits", action="store_true", help="one row per hit")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_evt_dump)

    q = sub.add_parser("schemac", help="compile a .rootio schema")
    q.add_argument("file")
    q.add_argument("--template", action="append", default=[], help="template to render (repeatable)")
    q.add_argument("--out", default=".", help="output directory (default .)")
    q.add_argument("--define", action="append", default=[], metavar="NAME=VALUE", help="extra macro (repeatable)")
    q.set_defaults(func=cmd_schemac)

    p = sub.add_parser("sched", help="file-affinity scheduling")
    s = p.add_subparsers(dest="action", metavar="ACTION", required=True)
    q = s.add_parser("plan", help="assign tasks (JSON lines) to nodes")
    q.add_argument("--tasks", required=True, help="input: one JSON task per line")
    q.add_argument("--out", help="output: one JSON assignment per line")
    q.add_argument("--csv", help="write CSV to FILE ('-' for stdout)")
    q.set_defaults(func=cmd_sched_plan)

    p = sub.add_parser("bench", help="parallel event-file benchmark")
    s = p.add_subparsers(dest="mode", metavar="MODE", required=True)
    for mode in ("write", "read"):
        q = s.add_parser(mode, help=f"{mode} benchmark")
        _add_bench_args(q)
        q.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None, prog: str = "dfctl") -> int:
    parser = build_parser(prog)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "bench_catalog", None):
        args.catalog = args.bench_catalog
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"{prog}: error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if getattr(args, "func", None) is cmd_bench:
        args.embedded = args.embedded or not args.bench_catalog
    try:
        return args.func(args, cfg)
    except GfarmError as exc:
        print(f"{prog}: error: {exc.code}: {exc.message}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"{prog}: error: {exc}", file=sys.stderr)
    except KeyboardInterrupt:
        return 130
    return EXIT_ERROR


def bench_main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    return main(["bench", *argv], prog="dfbench")


def _entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _entry()
