import pytest

from gdfarm.catalog import Catalog, ReplicaLocation
from gdfarm.cluster import EmbeddedCluster
from gdfarm.errors import NoDestination, PartialFailure, UnknownFile
from gdfarm.storage import fragment_path
from gdfarm.transfer import Replicator, plan_replication
from helpers import payload, seed_file
from oracles import crc32_reference, frag

MiB = 1 << 20


def entry_with(placements):
    cat = Catalog()
    cat.register_file("f", [frag(i, 10, 1, sorted(p)[0]) for i, p in enumerate(placements)])
    for i, p in enumerate(placements):
        for node in sorted(p)[1:]:
            cat.add_replica("f", i, ReplicaLocation(node, "/x", 1))
    return cat.lookup("f")


# -- planning -------------------------------------------------------------------------

def test_round_robin_destinations():
    plan = plan_replication(entry_with([{"s0"}] * 8), ["d0", "d1"], 2)
    d0 = [a.fragment_index for a in plan.assignments if a.dest_node == "d0"]
    d1 = [a.fragment_index for a in plan.assignments if a.dest_node == "d1"]
    assert (d0, d1) == ([0, 2, 4, 6], [1, 3, 5, 7])
    assert sorted(a.fragment_index for a in plan.assignments) == list(range(8))


def test_fragment_already_on_destination_is_noop():
    plan = plan_replication(entry_with([{"d0"}]), ["d0"], 4)
    assert len(plan.assignments) == 1 and plan.assignments[0].noop
    assert plan.pending == [] and plan.n_streams == 1


def test_sources_balanced():
    plan = plan_replication(entry_with([{"s0", "s1"}] * 4), ["d0"])
    srcs = [a.source.node_id for a in plan.assignments]
    assert srcs == ["s0", "s1", "s0", "s1"]


def test_plan_errors():
    with pytest.raises(NoDestination):
        plan_replication(entry_with([{"s0"}]), [])
    with pytest.raises(UnknownFile):
        plan_replication(None, ["d0"])
    assert plan_replication(entry_with([{"s0"}] * 2), ["d0"], 9).n_streams == 2


# -- execution ------------------------------------------------------------------------

@pytest.fixture
def cluster():
    with EmbeddedCluster(0) as c:
        yield c


def add(cluster, *ids, rate=0):
    for node in ids:
        cluster.add_node(node, rate)


def test_execute_then_verify(cluster):
    add(cluster, "s0", "s1", "d0", "d1")
    seed_file(cluster, "f", ["s0", "s1"] * 3, 100_000)
    rep = Replicator(cluster.catalog)
    plan = plan_replication(cluster.catalog.lookup("f"), ["d0", "d1"], 2, chunk_bytes=8192)
    report = rep.execute(plan)
    assert report.verified and report.failed == []
    assert report.total_bytes == 6 * 100_000
    # aggregate accounting is exact by construction
    assert report.aggregate_bps * report.wall_seconds == pytest.approx(report.total_bytes, rel=1e-12)
    for i in range(6):
        dest = ["d0", "d1"][i % 2]
        assert cluster.store(dest).get_fragment("f", i) == payload("f", i, 100_000)
        assert cluster.catalog.lookup("f").fragments[i].replica_on(dest) is not None
    assert rep.verify("f", ["d0", "d1"])
    assert report.rows()[-1]["fragment"] == "aggregate"


def test_verify_detects_deleted_and_flipped_fragments(cluster):
    add(cluster, "s0", "d0")
    seed_file(cluster, "f", ["s0"] * 3, 4096)
    rep = Replicator(cluster.catalog)
    rep.execute(plan_replication(cluster.catalog.lookup("f"), ["d0"]))
    assert rep.verify("f", ["d0"])

    path = fragment_path(cluster.store("d0").root, "f", 1)
    data = bytearray(path.read_bytes())
    data[100] ^= 0x01
    path.write_bytes(bytes(data))
    assert crc32_reference(bytes(data)) != cluster.catalog.lookup("f").fragments[1].crc32
    assert not rep.verify("f", ["d0"])
    assert rep.verify("f", ["s0"])  # the source copy is untouched

    path.write_bytes(payload("f", 1, 4096))
    assert rep.verify("f", ["d0"])
    fragment_path(cluster.store("d0").root, "f", 2).unlink()
    assert not rep.verify("f", ["d0"])


def test_corrupt_source_fails_that_fragment_only(cluster):
    add(cluster, "s0", "d0")
    seed_file(cluster, "f", ["s0"] * 4, 20_000)
    src = fragment_path(cluster.store("s0").root, "f", 2)
    data = bytearray(src.read_bytes())
    data[7] ^= 0xFF
    src.write_bytes(bytes(data))
    rep = Replicator(cluster.catalog)
    plan = plan_replication(cluster.catalog.lookup("f"), ["d0"], 2)
    with pytest.raises(PartialFailure) as exc_info:
        rep.execute(plan)
    report = exc_info.value.report
    assert report.failed == [2] and not report.verified
    good = [s.fragment_index for s in report.per_stream if s.ok]
    assert sorted(good) == [0, 1, 3]
    entry = cluster.catalog.lookup("f")
    assert entry.fragments[2].replica_on("d0") is None
    assert not cluster.store("d0").exists("f", 2)  # the bad copy was removed
    report = rep.execute(plan, raise_on_failure=False)
    assert report.failed == [2]


def test_noop_plan_changes_nothing(cluster):
    add(cluster, "s0", "d0")
    seed_file(cluster, "f", ["s0"] * 2, 1000)
    rep = Replicator(cluster.catalog)
    rep.execute(plan_replication(cluster.catalog.lookup("f"), ["d0"]))
    before = cluster.catalog.lookup("f")
    bytes_before = [cluster.store("d0").path_for("f", i).read_bytes() for i in range(2)]
    mtimes = [cluster.store("d0").path_for("f", i).stat().st_mtime_ns for i in range(2)]
    plan = plan_replication(before, ["d0"])
    assert all(a.noop for a in plan.assignments)
    report = rep.execute(plan)
    assert report.per_stream == [] and report.verified
    assert cluster.catalog.lookup("f") == before
    assert [cluster.store("d0").path_for("f", i).read_bytes() for i in range(2)] == bytes_before
    assert [cluster.store("d0").path_for("f", i).stat().st_mtime_ns for i in range(2)] == mtimes


def test_more_streams_over_disjoint_pairs_is_faster(cluster):
    rate = 8 * MiB
    add(cluster, "s0", "s1", "d0", "d1", rate=rate)
    seed_file(cluster, "one", ["s0"] * 4, 2 * MiB)
    seed_file(cluster, "two", ["s0", "s1"] * 2, 2 * MiB)
    rep = Replicator(cluster.catalog)
    r1 = rep.execute(plan_replication(cluster.catalog.lookup("one"), ["d0"], 1))
    r2 = rep.execute(plan_replication(cluster.catalog.lookup("two"), ["d0", "d1"], 2))
    assert r1.verified and r2.verified
    assert 0.85 * rate <= r1.aggregate_bps <= 1.15 * rate
    assert 0.85 * 2 * rate <= r2.aggregate_bps <= 1.15 * 2 * rate
    assert r2.aggregate_bps > r1.aggregate_bps
