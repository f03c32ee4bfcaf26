"""File-affinity task placement and straggler analysis.

Placement objective, compared lexicographically:

1. fewest remote tasks: a task runs on a node holding a replica of its
   fragment whenever such a node is up;
2. most even load: the per-node assigned-byte totals, sorted descending,
   are minimal (this minimizes the slowest node first, then the next...);
3. ties go to the greedy least-loaded placement (each task in order to
   the eligible node with the smallest assigned-byte total, ties by
   node id); when greedy is not optimal, to the optimal assignment whose
   node-id sequence, in task order, is smallest.

Small instances are solved exactly by depth-first search seeded with the
greedy least-loaded placement; beyond ``EXACT_SEARCH_LIMIT`` candidate
combinations the greedy placement is returned as is.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .catalog.model import LogicalFileEntry, NodeInfo
from .errors import NoNodesAvailable, UnknownFile, UnknownFragmentIndex, ZeroRate

EXACT_SEARCH_LIMIT = 200_000
DEFAULT_STRAGGLER_THRESHOLD = 0.5


class Locality(str, enum.Enum):
    LOCAL = "local"
    REMOTE = "remote"


@dataclass(frozen=True)
class Task:
    task_id: int
    lfn: str
    fragment_index: int
    est_bytes: int

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "lfn": self.lfn, "fragment_index": self.fragment_index, "est_bytes": self.est_bytes}

    @classmethod
    def from_dict(cls, d: dict) -> Task:
        return cls(int(d["task_id"]), d["lfn"], int(d["fragment_index"]), int(d.get("est_bytes", 0)))


@dataclass(frozen=True)
class Assignment:
    task_id: int
    node_id: str
    locality: Locality
    est_bytes: int = 0

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "node_id": self.node_id, "locality": self.locality.value, "est_bytes": self.est_bytes}


def _holders(task: Task, catalog_view) -> set[str]:
    if isinstance(catalog_view, Mapping):
        entry: LogicalFileEntry | None = catalog_view.get(task.lfn)
        if entry is None:
            raise UnknownFile(task.lfn)
    else:
        entry = catalog_view.lookup(task.lfn)
    if not 0 <= task.fragment_index < entry.n_fragments:
        raise UnknownFragmentIndex(f"{task.lfn}[{task.fragment_index}]")
    return {r.node_id for r in entry.fragments[task.fragment_index].replicas}


def load_key(loads: Iterable[int]) -> tuple[int, ...]:
    """Balance part of the objective: loads sorted high to low (smaller is better)."""
    return tuple(sorted(loads, reverse=True))


def objective(assignments: Sequence[Assignment], node_ids: Sequence[str]) -> tuple[int, tuple[int, ...]]:
    loads = dict.fromkeys(node_ids, 0)
    remote = 0
    for a in assignments:
        loads[a.node_id] += a.est_bytes
        remote += a.locality is Locality.REMOTE
    return remote, load_key(loads.values())


def assign(tasks: Sequence[Task], catalog_view, nodes: Sequence[NodeInfo]) -> list[Assignment]:
    """Place every task, preferring replica holders and then even load.

    ``catalog_view`` is a catalog (anything with ``lookup``) or a mapping
    from lfn to :class:`LogicalFileEntry`.
    """
    up = sorted(n.node_id for n in nodes if n.is_up)
    if not up:
        raise NoNodesAvailable("no node is up")
    tasks = list(tasks)
    if not tasks:
        return []

    cands: list[list[str]] = []
    local: list[bool] = []
    for t in tasks:
        live = sorted(_holders(t, catalog_view) & set(up))
        cands.append(live or up)
        local.append(bool(live))

    choice = _greedy(tasks, cands, up)
    if math.prod(len(c) for c in cands) <= EXACT_SEARCH_LIMIT:
        choice = _exact(tasks, cands, up, choice)
    return [
        Assignment(t.task_id, node, Locality.LOCAL if is_local else Locality.REMOTE, t.est_bytes)
        for t, node, is_local in zip(tasks, choice, local)
    ]


def _greedy(tasks: Sequence[Task], cands: Sequence[Sequence[str]], up: Sequence[str]) -> list[str]:
    loads = dict.fromkeys(up, 0)
    out = []
    for t, c in zip(tasks, cands):
        node = min(c, key=lambda n: (loads[n], n))
        loads[node] += t.est_bytes
        out.append(node)
    return out


def _exact(tasks, cands, up, incumbent: list[str]) -> list[str]:
    sizes = [t.est_bytes for t in tasks]

    def key_of(choice) -> tuple:
        loads = dict.fromkeys(up, 0)
        for node, size in zip(choice, sizes):
            loads[node] += size
        return load_key(loads.values())

    # Only a strictly better load profile displaces the incumbent. The search
    # visits sequences in lexicographic order, so the first improvement found
    # at the optimum is also the smallest sequence.
    best_key = key_of(incumbent)
    best = list(incumbent)
    loads = dict.fromkeys(up, 0)
    current: list[str] = []

    def dfs(i: int) -> None:
        nonlocal best_key, best
        if max(loads.values()) > best_key[0]:
            return
        if i == len(tasks):
            k = load_key(loads.values())
            if k < best_key:
                best_key, best = k, list(current)
            return
        for node in cands[i]:
            loads[node] += sizes[i]
            current.append(node)
            dfs(i + 1)
            current.pop()
            loads[node] -= sizes[i]

    dfs(0)
    return best


@dataclass(frozen=True)
class Prediction:
    wall_seconds: float
    aggregate_bps: float
    per_node_seconds: dict[str, float] = field(default_factory=dict)


def predict_completion(assignments: Iterable[Assignment], node_rates: Mapping[str, float]) -> Prediction:
    """Barrier model: the job ends when the most loaded node (relative to its rate) finishes."""
    per_node: dict[str, int] = {}
    for a in assignments:
        per_node[a.node_id] = per_node.get(a.node_id, 0) + a.est_bytes
    seconds = {}
    for node, nbytes in per_node.items():
        rate = node_rates.get(node, 0)
        if rate <= 0:
            raise ZeroRate(f"node {node} has rate {rate}")
        seconds[node] = nbytes / rate
    total = sum(per_node.values())
    wall = max(seconds.values(), default=0.0)
    return Prediction(wall, total / wall if wall > 0 else 0.0, seconds)


@dataclass(frozen=True)
class NodeResult:
    node_id: str
    bytes: int
    seconds: float

    @property
    def bps(self) -> float:
        return self.bytes / self.seconds if self.seconds > 0 else 0.0


@dataclass(frozen=True)
class StragglerReport:
    per_node: tuple[NodeResult, ...]
    median_bps: float
    stragglers: tuple[str, ...]
    threshold_fraction: float

    def is_straggler(self, node_id: str) -> bool:
        return node_id in self.stragglers


def detect_stragglers(per_node_results: Iterable[NodeResult],
                      threshold_fraction: float = DEFAULT_STRAGGLER_THRESHOLD) -> StragglerReport:
    results = tuple(per_node_results)
    if not results:
        raise ValueError("need at least one node result")
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must be in (0, 1)")
    median = statistics.median(r.bps for r in results)
    cut = threshold_fraction * median
    slow = tuple(sorted(r.node_id for r in results if r.bps < cut))
    return StragglerReport(results, median, slow, threshold_fraction)


# -- task / assignment files (one JSON object per line) ---------------------

def read_tasks(path) -> list[Task]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.lstrip().startswith("#"):
                tasks.append(Task.from_dict(json.loads(line)))
    return tasks


def write_assignments(path, assignments: Iterable[Assignment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in assignments:
            fh.write(json.dumps(a.to_dict(), separators=(",", ":")) + "\n")
