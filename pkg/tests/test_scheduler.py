import json
import random
import statistics

import pytest

from gdfarm.catalog import Catalog, NodeInfo, NodeStatus, ReplicaLocation
from gdfarm.errors import NoNodesAvailable, UnknownFile, UnknownFragmentIndex, ZeroRate
from gdfarm.scheduler import (
    EXACT_SEARCH_LIMIT,
    Assignment,
    Locality,
    NodeResult,
    Task,
    assign,
    detect_stragglers,
    objective,
    predict_completion,
    read_tasks,
    write_assignments,
)
from oracles import brute_force_assign, frag

MB = 10**6


def nodes(n, down=()):
    return [NodeInfo(f"n{i}", f"h:{i}", status=NodeStatus.DOWN if f"n{i}" in down else NodeStatus.UP)
            for i in range(n)]


def entry(lfn, replica_sets, size=100):
    """Build a catalog entry whose fragment i is held on ``replica_sets[i]``."""
    cat = Catalog()
    cat.register_file(lfn, [frag(i, size, 1, sorted(rs)[0]) for i, rs in enumerate(replica_sets)])
    for i, rs in enumerate(replica_sets):
        for node in sorted(rs)[1:]:
            cat.add_replica(lfn, i, ReplicaLocation(node, f"/{node}", 1))
    return cat.lookup(lfn)


def test_one_fragment_per_node_is_forced():
    e = entry("f", [{f"n{i}"} for i in range(8)])
    tasks = [Task(i, "f", i, 100) for i in range(8)]
    out = assign(tasks, {"f": e}, nodes(8))
    assert [a.node_id for a in out] == [f"n{i}" for i in range(8)]
    assert all(a.locality is Locality.LOCAL for a in out)


def test_both_tasks_stay_on_sole_holder():
    e = entry("f", [{"n0"}, {"n0"}])
    out = assign([Task(0, "f", 0, 5), Task(1, "f", 1, 5)], {"f": e}, nodes(3))
    assert [(a.node_id, a.locality) for a in out] == [("n0", Locality.LOCAL)] * 2


def test_uniform_tasks_on_full_replication_balance():
    e = entry("f", [{"n0", "n1", "n2"}] * 6)
    out = assign([Task(i, "f", i, 10) for i in range(6)], {"f": e}, nodes(3))
    counts = {n: sum(a.node_id == n for a in out) for n in ("n0", "n1", "n2")}
    assert counts == {"n0": 2, "n1": 2, "n2": 2}
    assert [a.node_id for a in out] == ["n0", "n1", "n2", "n0", "n1", "n2"]


@pytest.mark.parametrize("T,N", [(7, 3), (10, 4), (13, 5), (40, 6)])
def test_balance_counts_differ_by_at_most_one(T, N):
    e = entry("f", [{f"n{i}" for i in range(N)}] * T)
    out = assign([Task(i, "f", i, 1) for i in range(T)], {"f": e}, nodes(N))
    counts = [sum(a.node_id == f"n{i}" for a in out) for i in range(N)]
    assert max(counts) - min(counts) <= 1


def test_remote_when_no_live_holder():
    e = entry("f", [{"n0"}, {"n1"}])
    out = assign([Task(0, "f", 0, 5), Task(1, "f", 1, 5)], {"f": e}, nodes(3, down={"n0"}))
    assert out[0].locality is Locality.REMOTE and out[0].node_id != "n0"
    assert out[1] == Assignment(1, "n1", Locality.LOCAL, 5)


def test_errors():
    e = entry("f", [{"n0"}])
    with pytest.raises(NoNodesAvailable):
        assign([Task(0, "f", 0, 1)], {"f": e}, nodes(2, down={"n0", "n1"}))
    with pytest.raises(UnknownFile):
        assign([Task(0, "g", 0, 1)], {"f": e}, nodes(2))
    with pytest.raises(UnknownFragmentIndex):
        assign([Task(0, "f", 3, 1)], {"f": e}, nodes(2))
    assert assign([], {}, nodes(1)) == []


def test_accepts_catalog_object():
    cat = Catalog()
    cat.register_file("f", [frag(0, 1, 1, "n1")])
    assert assign([Task(0, "f", 0, 1)], cat, nodes(2))[0].node_id == "n1"


def random_instance(rng, max_nodes=5, max_tasks=6, max_replicas=2):
    n = rng.randint(1, max_nodes)
    ids = [f"n{i}" for i in range(n)]
    down = {x for x in ids if rng.random() < 0.15}
    n_frag = rng.randint(1, max_tasks)
    sets = [set(rng.sample(ids, rng.randint(1, min(max_replicas, n)))) for _ in range(n_frag)]
    e = entry("f", sets)
    tasks = [Task(k, "f", rng.randrange(n_frag), rng.choice([1, 2, 3, 5, 8, 100])) for k in range(rng.randint(1, max_tasks))]
    return e, tasks, nodes(n, down)


@pytest.mark.parametrize("seed", range(150))
def test_matches_brute_force(seed):
    rng = random.Random(seed)
    e, tasks, ns = random_instance(rng)
    up = [n.node_id for n in ns if n.is_up]
    if not up:
        with pytest.raises(NoNodesAvailable):
            assign(tasks, {"f": e}, ns)
        return
    got = assign(tasks, {"f": e}, ns)
    want = brute_force_assign(tasks, {"f": e}, up)
    assert [a.node_id for a in got] == want
    holders = [{r.node_id for r in e.fragments[t.fragment_index].replicas} for t in tasks]
    assert all((a.locality is Locality.LOCAL) == (a.node_id in h) for a, h in zip(got, holders))


def test_large_instances_fall_back_to_greedy():
    ids = {f"n{i}" for i in range(8)}
    e = entry("f", [ids] * 12)
    tasks = [Task(i, "f", i, 7) for i in range(12)]
    assert 8 ** 12 > EXACT_SEARCH_LIMIT
    out = assign(tasks, {"f": e}, nodes(8))
    counts = [sum(a.node_id == f"n{i}" for a in out) for i in range(8)]
    assert sorted(counts) == [1, 1, 1, 1, 2, 2, 2, 2]
    assert objective(out, sorted(ids))[0] == 0


# -- completion model -----------------------------------------------------------------

def test_predict_straggler_example():
    a = [Assignment(i, f"n{i}", Locality.LOCAL, 100 * MB) for i in range(8)]
    rates = {f"n{i}": 100 * MB for i in range(7)} | {"n7": 25 * MB}
    p = predict_completion(a, rates)
    assert p.wall_seconds == pytest.approx(4.0)
    assert p.aggregate_bps == pytest.approx(200 * MB)


def test_predict_equal_rates_scale_perfectly():
    a = [Assignment(i, f"n{i}", Locality.LOCAL, 50) for i in range(5)]
    p = predict_completion(a, {f"n{i}": 10.0 for i in range(5)})
    assert p.aggregate_bps == pytest.approx(50.0)


def test_predict_zero_rate():
    with pytest.raises(ZeroRate):
        predict_completion([Assignment(0, "n0", Locality.LOCAL, 1)], {"n0": 0})


# -- stragglers -----------------------------------------------------------------------

def results(rates):
    return [NodeResult(f"n{i}", int(r * MB), 1.0) for i, r in enumerate(rates)]


def test_straggler_examples():
    r = detect_stragglers(results([100, 100, 100, 25]), 0.5)
    assert r.stragglers == ("n3",) and r.median_bps == 100 * MB
    assert detect_stragglers(results([50] * 4)).stragglers == ()
    assert detect_stragglers(results([100, 90, 80, 70]), 0.5).stragglers == ()
    with pytest.raises(ValueError):
        detect_stragglers(results([1]), 1.0)
    with pytest.raises(ValueError):
        detect_stragglers([])


@pytest.mark.parametrize("seed", range(50))
def test_median_robust_to_one_slow_node(seed):
    rng = random.Random(seed)
    rates = sorted(rng.uniform(10, 100) for _ in range(rng.randint(2, 12)))
    m = statistics.median(rates)
    slow = rng.uniform(0, min(rates))
    r = detect_stragglers(results(rates + [slow]))
    n = len(rates)
    lower = rates[max(0, (n - 1) // 2 - (1 if n % 2 else 0))]
    assert lower * MB - 1 <= r.median_bps <= m * MB + 1


# -- task files ---------------------------------------------------------------------------

def test_task_and_assignment_files(tmp_path):
    tf = tmp_path / "tasks.jsonl"
    tf.write_text('# comment\n{"task_id":1,"lfn":"f","fragment_index":0,"est_bytes":9}\n\n')
    tasks = read_tasks(tf)
    assert tasks == [Task(1, "f", 0, 9)]
    out = tmp_path / "a.jsonl"
    write_assignments(out, [Assignment(1, "n0", Locality.LOCAL, 9)])
    assert json.loads(out.read_text()) == {"task_id": 1, "node_id": "n0", "locality": "local", "est_bytes": 9}
