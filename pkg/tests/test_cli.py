import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from gdfarm.cli import DEFAULT_CATALOG, GlobalConfig, build_parser, main, resolve_config
from gdfarm.cluster import EmbeddedCluster
from gdfarm.eventio import read_events

FIX = Path(__file__).parent / "fixtures"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def cluster():
    with EmbeddedCluster(3) as c:
        yield c


# -- exit codes -------------------------------------------------------------------------

def test_unknown_subcommand_is_usage_error(capsys):
    assert run("frobnicate") == 2
    assert "usage:" in capsys.readouterr().err
    assert run() == 2
    assert run("evt", "gen") == 2


def test_operational_error_exits_one(capsys):
    assert run("--catalog", "127.0.0.1:1", "--timeout", "1", "ls") == 1
    assert "error" in capsys.readouterr().err
    assert run("evt", "stats", "/nonexistent/file.gdf") == 1


def test_ls_on_empty_catalog_prints_nothing(cluster, capsys):
    assert run("--catalog", cluster.catalog_addr, "ls", "*") == 0
    assert capsys.readouterr().out == ""


def test_console_script_exit_code(tmp_path):
    p = subprocess.run([sys.executable, "-m", "gdfarm.cli", "nope"], capture_output=True, text=True)
    assert p.returncode == 2 and "usage" in p.stderr


# -- help ------------------------------------------------------------------------------

def command_paths(parser, prefix=()):
    yield prefix
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                yield from command_paths(sub, prefix + (name,))


def test_help_at_every_level(capsys):
    paths = list(command_paths(build_parser()))
    assert ("bench", "read") in paths and ("evt", "dump") in paths and ("schemac",) in paths
    for path in paths:
        assert run(*path, "--help") == 0, path
        out = capsys.readouterr().out
        assert out.startswith("usage:"), path


# -- configuration ---------------------------------------------------------------------

def ns(**kw):
    base = dict(catalog=None, timeout=None, verbose=0, config=None)
    base.update(kw)
    return argparse.Namespace(**base)


def test_config_precedence(tmp_path):
    conf = tmp_path / "df.conf"
    conf.write_text("# settings\ncatalog = file:1\ntimeout=5\nverbosity=1\n")
    assert resolve_config(ns(), {}) == GlobalConfig(DEFAULT_CATALOG, 60.0, 0, None)
    assert resolve_config(ns(config=str(conf)), {}).catalog_addr == "file:1"
    env = {"DF_CONFIG": str(conf), "DF_CATALOG": "env:2"}
    cfg = resolve_config(ns(), env)
    assert (cfg.catalog_addr, cfg.timeout_seconds, cfg.verbosity) == ("env:2", 5.0, 1)
    assert resolve_config(ns(catalog="flag:3"), env).catalog_addr == "flag:3"
    assert resolve_config(ns(timeout=2.5), {"DF_TIMEOUT": "9"}).timeout_seconds == 2.5


def test_bad_config_file_is_usage_error(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("no equals sign\n")
    assert run("--config", conf, "ls") == 2


# -- schemac ---------------------------------------------------------------------------

def test_schemac_calorhit(tmp_path):
    assert run("schemac", FIX / "calorhit.rootio", "--out", tmp_path) == 0
    assert (tmp_path / "Pers01CalorHit.schema").read_bytes() == \
        (FIX / "golden" / "Pers01CalorHit.schema").read_bytes()
    assert run("schemac", FIX / "calorhit.rootio", "--template", FIX / "templates" / "adapter.hh.tmpl",
               "--out", tmp_path) == 0
    assert (tmp_path / "adapter.hh.Pers01CalorHit.out").exists()


def test_schemac_invalid_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.rootio"
    bad.write_text("set collection_class X\n")
    assert run("schemac", bad, "--out", tmp_path / "o") == 1
    assert "class_name missing" in capsys.readouterr().err


# -- event files -----------------------------------------------------------------------

def test_evt_gen_stats_dump(tmp_path, capsys):
    f = tmp_path / "e.gdf"
    assert run("evt", "gen", f, "--events", 5, "--hits", 20, "--seed", 1) == 0
    assert len(read_events(f.read_bytes())) == 5
    capsys.readouterr()
    assert run("evt", "stats", f, "--csv", "-") == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert rows[0]["n_events"] == "5"
    assert run("evt", "dump", f, "--range", "1:3") == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].split()[0] == "2"


# -- scheduler -------------------------------------------------------------------------

def test_sched_plan(cluster, tmp_path):
    src = tmp_path / "x"
    src.write_bytes(b"abc")
    assert run("--catalog", cluster.catalog_addr, "reg", "f", src, src, "--node", "n01,n02") == 0
    tasks = tmp_path / "t.jsonl"
    tasks.write_text("".join(json.dumps({"task_id": i, "lfn": "f", "fragment_index": i, "est_bytes": 3}) + "\n"
                             for i in range(2)))
    out = tmp_path / "a.jsonl"
    assert run("--catalog", cluster.catalog_addr, "sched", "plan", "--tasks", tasks, "--out", out) == 0
    got = [json.loads(line) for line in out.read_text().splitlines()]
    assert [(a["node_id"], a["locality"]) for a in got] == [("n01", "local"), ("n02", "local")]


# -- data path ---------------------------------------------------------------------------

def test_reg_ls_get_rep_verify(cluster, tmp_path, capsys):
    cat = ("--catalog", cluster.catalog_addr)
    parts = []
    for i in range(3):
        p = tmp_path / f"part{i}"
        p.write_bytes(bytes([i]) * (1000 + i))
        parts.append(p)
    assert run(*cat, "reg", "data/f", *parts, "--node", "n00") == 0
    capsys.readouterr()
    assert run(*cat, "ls", "data/*") == 0
    assert "data/f" in capsys.readouterr().out
    out = tmp_path / "whole"
    assert run(*cat, "get", "data/f", "-o", out) == 0
    assert out.read_bytes() == b"".join(p.read_bytes() for p in parts)
    assert run(*cat, "get", "data/f", "--index", 1, "--offset", 10, "--length", 5, "-o", out) == 0
    assert out.read_bytes() == bytes([1]) * 5
    assert run(*cat, "rep", "data/f", "--dest", "n01,n02", "--streams", 2, "--csv", tmp_path / "rep.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "rep.csv")))
    assert rows[-1]["fragment"] == "aggregate" and int(rows[-1]["bytes"]) == 3003
    assert run(*cat, "verify", "data/f", "--nodes", "n01,n02") == 0
    assert run(*cat, "get", "nope") == 1


def test_bench_embedded(tmp_path, capsys):
    series = tmp_path / "s.csv"
    assert main(["bench", "write", "--nodes", "2", "--events-per-node", "3", "--hits", "10",
                 "--csv", str(tmp_path / "b.csv"), "--series", str(series)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert [r["node_id"] for r in rows] == ["n00", "n01", "ALL"]
    from gdfarm.cli import bench_main
    assert bench_main(["read", "--nodes", "2", "--events-per-node", "3", "--hits", "10"]) == 0
