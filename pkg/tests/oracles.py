"""Independent reference implementations used to check the package.

Nothing here calls into the code under test except to drive it.
"""

from __future__ import annotations

import itertools
import random
import struct

from gdfarm.catalog import Catalog, FragmentMeta, NodeInfo, ReplicaLocation
from gdfarm.errors import GfarmError

# -- CRC-32/IEEE, bit by bit --------------------------------------------------


def crc32_reference(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def _reference_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ (0xEDB88320 if c & 1 else 0)
        table.append(c)
    return table


def crc32_table_reference(data: bytes) -> int:
    """Same CRC via the textbook byte table; quick enough for a few MiB."""
    table = _reference_table()
    crc = 0xFFFFFFFF
    for byte in data:
        crc = table[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


# -- catalog operation sequences ---------------------------------------------


def frag(index: int, size: int, crc: int, node: str, path: str | None = None) -> FragmentMeta:
    return FragmentMeta(index, size, crc, (ReplicaLocation(node, path or f"/{node}/{index}", crc),))


def random_ops(seed: int, n: int, n_nodes: int = 6) -> list[tuple]:
    """A reproducible mix of valid and invalid catalog mutations."""
    rng = random.Random(seed)
    nodes = [f"n{i}" for i in range(n_nodes)]
    names: list[str] = []
    ops: list[tuple] = []
    for k in range(n):
        r = rng.random()
        if r < 0.05:
            node = rng.choice(nodes)
            ops.append(("node", node, rng.choice(["up", "down"]), rng.randrange(0, 10) * 1000))
        elif r < 0.30 or not names:
            lfn = f"run{rng.randrange(5)}/f{k}" if rng.random() > 0.05 or not names else rng.choice(names)
            nfr = rng.randrange(0, 5)
            frags = [(i, rng.randrange(0, 1 << 20), rng.getrandbits(32), rng.choice(nodes)) for i in range(nfr)]
            if frags and rng.random() < 0.05:
                frags[-1] = (frags[-1][0] + 1,) + frags[-1][1:]
            ops.append(("register", lfn, frags))
            names.append(lfn)
        elif r < 0.75:
            ops.append(("add", rng.choice(names), rng.randrange(0, 5), rng.choice(nodes), rng.random() < 0.05))
        else:
            ops.append(("remove", rng.choice(names), rng.randrange(0, 5), rng.choice(nodes)))
    return ops


def apply_op(cat, op) -> bool:
    """Apply one op; True if it was accepted (and therefore logged)."""
    kind = op[0]
    try:
        if kind == "node":
            _, node, status, rate = op
            cat.register_node(NodeInfo(node, f"127.0.0.1:{7000 + int(node[1:])}", f"/srv/{node}", rate, status))
        elif kind == "register":
            _, lfn, frags = op
            cat.register_file(lfn, [frag(i, s, c, nd, f"/{nd}/{lfn}.{i}") for i, s, c, nd in frags])
        elif kind == "add":
            _, lfn, index, node, bad_crc = op
            entry = cat.lookup(lfn)
            if index >= entry.n_fragments:
                cat.add_replica(lfn, index, ReplicaLocation(node, "/x", 0))
            else:
                crc = entry.fragments[index].crc32 ^ (1 if bad_crc else 0)
                cat.add_replica(lfn, index, ReplicaLocation(node, f"/{node}/{lfn}.{index}", crc))
        elif kind == "remove":
            _, lfn, index, node = op
            cat.remove_replica(lfn, index, node)
        return True
    except GfarmError:
        return False


def state_after(ops, n_committed: int) -> Catalog:
    """In-memory catalog holding exactly the first ``n_committed`` accepted ops."""
    cat = Catalog(None)
    it = iter(ops)
    while cat.seq < n_committed:
        apply_op(cat, next(it))
    return cat


# -- scheduler ------------------------------------------------------------------


def brute_force_assign(tasks, entries: dict, up_nodes: list[str]) -> list[str]:
    """Enumerate every placement; minimize (remote count, loads sorted desc).

    Among optimal placements the plain greedy least-loaded one is preferred,
    otherwise the smallest node-id sequence.
    """
    holders = []
    for t in tasks:
        reps = {r.node_id for r in entries[t.lfn].fragments[t.fragment_index].replicas}
        holders.append(reps & set(up_nodes))
    best_key, best = None, None
    for choice in itertools.product(sorted(up_nodes), repeat=len(tasks)):
        remote = sum(1 for node, h in zip(choice, holders) if node not in h)
        loads = {n: 0 for n in up_nodes}
        for node, t in zip(choice, tasks):
            loads[node] += t.est_bytes
        key = (remote, tuple(sorted(loads.values(), reverse=True)), choice)
        if best_key is None or key < best_key:
            best_key, best = key, list(choice)
    loads = {n: 0 for n in up_nodes}
    greedy = []
    for t, h in zip(tasks, holders):
        node = min(sorted(h) or sorted(up_nodes), key=lambda n: (loads[n], n))
        loads[node] += t.est_bytes
        greedy.append(node)
    remote = sum(1 for node, h in zip(greedy, holders) if node not in h)
    if (remote, tuple(sorted(loads.values(), reverse=True))) == best_key[:2]:
        return greedy
    return best


# -- event files ---------------------------------------------------------------


def stored_payload_size(n_events: int, hits_per_event: int) -> int:
    """Per event per collection: u32 hit count + 16 bytes per hit."""
    return n_events * (4 + hits_per_event * 16)


def parse_event_file_layout(data: bytes) -> dict:
    """Walk an event file using only the documented byte layout."""
    assert data[:4] == b"GDFE"
    version, flags = struct.unpack_from("<HH", data, 4)
    footer_off, = struct.unpack_from("<Q", data, len(data) - 12)
    assert data[-4:] == b"EOFD"
    assert data[footer_off:footer_off + 4] == b"GDFF"
    p = footer_off + 4
    n_coll, = struct.unpack_from("<H", data, p)
    p += 2
    names = []
    for _ in range(n_coll):
        ln, = struct.unpack_from("<H", data, p)
        names.append(data[p + 2:p + 2 + ln].decode())
        p += 2 + ln
    n_blocks, = struct.unpack_from("<I", data, p)
    p += 4
    blocks = []
    for _ in range(n_blocks):
        off, nev = struct.unpack_from("<QI", data, p)
        p += 12
        bn, bc, codec, _pad = struct.unpack_from("<IHBB", data, off)
        segs = [struct.unpack_from("<III", data, off + 8 + 12 * j) for j in range(bc)]
        payload_off = off + 8 + 12 * bc
        blocks.append({"offset": off, "n_events": nev, "codec": codec, "segments": segs,
                       "payload_offset": payload_off})
        assert bn == nev and bc == n_coll
    first_id, = struct.unpack_from("<Q", data, p)
    return {"version": version, "flags": flags, "collections": names, "blocks": blocks, "first_event_id": first_id}


def random_events(rng, n_events: int, n_collections: int, max_hits: int = 2000, first_id: int = 0):
    """Random finite float32 hits: normal values plus awkward bit patterns (-0.0, subnormals, extremes)."""
    import numpy as np

    from gdfarm.eventio import EventRecord, HitCollection

    names = [f"det{k}" for k in range(n_collections)]
    specials = np.array([0.0, -0.0, 1e-45, -1e-45, 3.4028235e38, -3.4028235e38, 1.1754944e-38], np.float32)
    events = []
    for i in range(n_events):
        cols = []
        for name in names:
            h = int(rng.integers(0, max_hits + 1))
            hits = rng.standard_normal((h, 4)).astype(np.float32) * np.float32(10.0 ** rng.integers(-3, 4))
            if h:
                mask = rng.random((h, 4)) < 0.01
                hits[mask] = rng.choice(specials, size=int(mask.sum()))
            cols.append(HitCollection(name, hits))
        events.append(EventRecord(first_id + i, cols))
    return events


# -- .rootio fuzzing ------------------------------------------------------------

_WORDS = ["hit", "Edep", "Track", "x", "y_1", "Calor", "Gap", "Abs"]
_PRINTABLE = "".join(chr(c) for c in range(32, 127))


def _ident(rng) -> str:
    return rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_") + "".join(
        rng.choice(_WORDS) for _ in range(rng.randrange(0, 3)))


def _free_line(rng) -> str:
    """Arbitrary printable block line that is not a block terminator."""
    while True:
        indent = " " * rng.randrange(0, 6)
        body = "".join(rng.choice(_PRINTABLE) for _ in range(rng.randrange(0, 30)))
        if rng.random() < 0.3:
            body += f" @{rng.choice(['class_name', 'float', 'class_root', 'make_transient', 'zz'])}@"
        line = indent + body
        if line.strip() != "..":
            return line


def random_rootio(rng) -> str:
    """A valid ``.rootio`` document (random.Random ``rng``) exercising comments, overrides and appends."""
    lines = []
    if rng.random() < 0.5:
        lines.append("# generated")
    scalars = {"class_name": _ident(rng), "collection_class": _ident(rng) + "Collection"}
    for key in ["collection_base_class", "sdet_name", "array_io_base", "catalog", "extra_" + _ident(rng)]:
        if rng.random() < 0.5:
            scalars[key] = " ".join(_ident(rng) for _ in range(rng.randrange(1, 3)))
    for key, value in scalars.items():
        lines.append(f"set {key} {value}")
        if rng.random() < 0.2:
            lines.append("")
            lines.append(f"set {key}   {value}x   ")  # later scalar overrides
    blocks = ["member"] + [k for k in ["constructor", "method", "global_declaration", "add_header_src",
                                       "custom_" + _ident(rng)] if rng.random() < 0.5]
    for key in blocks:
        for _ in range(rng.randrange(1, 3)):  # repeated block appends
            lines.append(f"set {key}")
            if key == "member":
                for k in range(rng.randrange(1, 5)):
                    lines.append(f"  @float@ F{k}_{_ident(rng)};")
            for _ in range(rng.randrange(0, 5)):
                lines.append(_free_line(rng))
            lines.append(rng.choice(["..", "  ..", "..  "]))
    return "\n".join(lines) + ("\n" if rng.random() < 0.8 else "")
