"""Catalog domain records.

All records are frozen; the catalog swaps whole entries on mutation so a
reader holding an entry always sees a consistent snapshot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class NodeStatus(str, enum.Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class NodeInfo:
    node_id: str
    address: str
    storage_root: str = ""
    rate_limit_bps: int = 0
    status: NodeStatus = NodeStatus.UP

    def __post_init__(self):
        if not self.node_id:
            raise ValueError("node_id must be non-empty")
        if self.rate_limit_bps < 0:
            raise ValueError("rate_limit_bps must be >= 0")
        object.__setattr__(self, "status", NodeStatus(self.status))

    @property
    def is_up(self) -> bool:
        return self.status is NodeStatus.UP

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "address": self.address,
            "storage_root": self.storage_root,
            "rate_limit_bps": self.rate_limit_bps,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NodeInfo:
        return cls(
            node_id=d["node_id"],
            address=d["address"],
            storage_root=d.get("storage_root", ""),
            rate_limit_bps=int(d.get("rate_limit_bps", 0)),
            status=NodeStatus(d.get("status", "up")),
        )


@dataclass(frozen=True)
class ReplicaLocation:
    node_id: str
    path: str
    crc32: int

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "path": self.path, "crc32": self.crc32}

    @classmethod
    def from_dict(cls, d: dict) -> ReplicaLocation:
        return cls(node_id=d["node_id"], path=d["path"], crc32=int(d["crc32"]))


@dataclass(frozen=True)
class FragmentMeta:
    index: int
    size_bytes: int
    crc32: int
    replicas: tuple[ReplicaLocation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "replicas", tuple(self.replicas))

    def replica_on(self, node_id: str) -> ReplicaLocation | None:
        for r in self.replicas:
            if r.node_id == node_id:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "size_bytes": self.size_bytes,
            "crc32": self.crc32,
            "replicas": [r.to_dict() for r in self.replicas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FragmentMeta:
        return cls(
            index=int(d["index"]),
            size_bytes=int(d["size_bytes"]),
            crc32=int(d["crc32"]),
            replicas=tuple(ReplicaLocation.from_dict(r) for r in d.get("replicas", ())),
        )


@dataclass(frozen=True)
class LogicalFileEntry:
    lfn: str
    n_fragments: int
    total_size: int
    fragments: tuple[FragmentMeta, ...]

    def __post_init__(self):
        object.__setattr__(self, "fragments", tuple(self.fragments))

    def fragment(self, index: int) -> FragmentMeta:
        return self.fragments[index]

    def with_fragment(self, frag: FragmentMeta) -> LogicalFileEntry:
        frags = list(self.fragments)
        frags[frag.index] = frag
        return replace(self, fragments=tuple(frags))

    def check(self) -> None:
        """Raise AssertionError if the entry breaks a structural invariant."""
        assert self.n_fragments >= 1
        assert [f.index for f in self.fragments] == list(range(self.n_fragments))
        assert self.total_size == sum(f.size_bytes for f in self.fragments)
        for f in self.fragments:
            assert f.replicas, f"fragment {f.index} has no replicas"
            assert all(r.crc32 == f.crc32 for r in f.replicas)

    def to_dict(self) -> dict:
        return {
            "lfn": self.lfn,
            "n_fragments": self.n_fragments,
            "total_size": self.total_size,
            "fragments": [f.to_dict() for f in self.fragments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> LogicalFileEntry:
        return cls(
            lfn=d["lfn"],
            n_fragments=int(d["n_fragments"]),
            total_size=int(d["total_size"]),
            fragments=tuple(FragmentMeta.from_dict(f) for f in d["fragments"]),
        )
