import csv
import json

import pytest

from chainlens import synth
from chainlens.cli import run
from conftest import DATA, fixture_lines, wire_of


@pytest.fixture
def cli(tmp_path, capsys):
    data = tmp_path / "data"

    def call(*argv, code=0):
        rc = run(["--data", str(data), *map(str, argv)])
        out = capsys.readouterr()
        assert rc == code, out.err
        return out
    call.data = data
    return call


@pytest.fixture
def merged(cli):
    cli("ingest", "--fixtures", DATA / "merged_payment.jsonl")
    cli("graph")
    cli("cluster", "--heuristics", "multi-input")
    return cli


def write_chain(tmp_path, chain, name="chain.jsonl"):
    p = tmp_path / name
    p.write_text("\n".join(fixture_lines(chain)) + "\n")
    return p


def test_info_reports_generator_counts(cli, tmp_path):
    chain = synth.random_chain(150, seed=6)
    cli("ingest", "--fixtures", write_chain(tmp_path, chain))
    info = json.loads(cli("info", "--json").out)
    assert info["blocks"] == len(chain.blocks)
    assert info["transactions"] == sum(len(b.txs) for b in chain.blocks)
    assert info["clusters"] == "not built"


def test_ingest_is_idempotent(cli):
    src = DATA / "merged_payment.jsonl"
    assert "up to date" not in cli("ingest", "--fixtures", src).out
    before = (cli.data / "store" / "manifest.json").read_bytes()
    assert "up to date" in cli("ingest", "--fixtures", src).out
    assert (cli.data / "store" / "manifest.json").read_bytes() == before


def test_ingest_blocks_matches_fixture(cli, tmp_path, capsys):
    chain = synth.random_chain(60, seed=2)
    blk = tmp_path / "blk00000.dat"
    blk.write_bytes(wire_of(chain, padding=16))
    cli("ingest", "--blocks", blk, "--workers", "1")
    a = json.loads(cli("info", "--json").out)
    other = tmp_path / "other"
    assert run(["--data", str(other), "ingest", "--fixtures", str(write_chain(tmp_path, chain))]) == 0
    capsys.readouterr()
    assert run(["--data", str(other), "info", "--json"]) == 0
    b = json.loads(capsys.readouterr().out)
    assert a["store_manifest_sha256"] == b["store_manifest_sha256"]
    assert a["transactions"] == sum(len(x.txs) for x in chain.blocks)


def test_cluster_inspect_merged_payment(merged):
    scripts = synth.merged_payment_chain().facts["scripts"]
    rep = json.loads(merged("cluster", "inspect", "--address", scripts["C"][3:23].hex(), "--json").out)
    payloads = {m["payload"] for m in rep["members"]}
    assert payloads == {scripts[n][3:23].hex() for n in "ABC"}
    rep = json.loads(merged("cluster", "inspect", "--address", scripts["service"][3:23].hex(), "--json").out)
    assert rep["size"] == 1


def test_cluster_graph_commands(merged):
    scripts = synth.merged_payment_chain().facts["scripts"]
    merged("graph", "--kind", "cluster")
    info = json.loads(merged("info", "--json").out)
    assert set(info["graphs"]) == {"tx", "address", "cluster"}
    res = json.loads(merged("path", "--graph", "cluster", "--from", scripts["A"][3:23].hex(),
                            "--to", scripts["service"][3:23].hex(), "--json").out)
    assert len(res["path"]) == 2
    merged("centrality", "pagerank", "--graph", "cluster")
    assert "up to date" in merged("graph", "--kind", "cluster").out


def test_tags_and_export(merged, tmp_path):
    merged("tag", "--seeds", DATA / "merged_payment_tags.csv")
    out = tmp_path / "tags.csv"
    merged("export", "tags", "--out", out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["cluster", "label"] and sorted(r[1] for r in rows[1:]) == ["owner-c", "service"]
    meta = json.loads((tmp_path / "tags.csv.meta.json").read_text())
    assert meta["command"] == "export" and len(meta["store_manifest_sha256"]) == 64


def test_export_clusters_byte_identical(merged, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    merged("export", "clusters", "--out", a)
    merged("export", "clusters", "--out", b)
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert len({r["cluster"] for r in rows}) == len(rows) - 2


def test_export_identity_clustering_three_addresses(cli, tmp_path):
    from chainlens.fixtures import FixtureBlock, FixtureTx
    from chainlens.model import p2pkh_script
    blocks = [FixtureBlock(0, 1, [FixtureTx([], [(1, p2pkh_script(bytes([i]) * 20)) for i in range(3)])])]
    cli("ingest", "--fixtures", write_chain(tmp_path, blocks))
    cli("cluster", "--heuristics", "multi-input")
    out = tmp_path / "c.csv"
    cli("export", "clusters", "--out", out)
    assert len(out.read_text().splitlines()) == 4


def test_not_built_errors(cli, tmp_path):
    err = cli("export", "clusters", "--out", tmp_path / "x.csv", code=1).err
    assert err.startswith("error: NotBuilt")
    err = cli("--json-errors", "centrality", "pagerank", code=1).err
    assert json.loads(err)["error"] == "NotBuilt"


def test_usage_errors(cli):
    assert "usage" in cli("frobnicate", code=2).err
    cli("--workers", "0", "info", code=2)
    cli("--height-limit", "-1", "info", code=2)
    err = cli("--json-errors", "nope", code=2).err
    assert json.loads(err)["exit"] == 2


def test_env_data_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CHAINLENS_DATA", str(tmp_path / "env"))
    assert run(["ingest", "--fixtures", str(DATA / "merged_payment.jsonl")]) == 0
    assert (tmp_path / "env" / "store" / "manifest.json").exists()


def test_analytics_commands(cli, tmp_path):
    chain = synth.random_chain(200, seed=3)
    cli("ingest", "--fixtures", write_chain(tmp_path, chain))
    cli("graph")
    cli("cluster")
    for measure in ("pagerank", "hits", "betweenness", "closeness", "eigenvector", "degree"):
        out = tmp_path / f"{measure}.csv"
        cli("centrality", measure, "--graph", "address", "--out", out)
        assert out.exists() and (tmp_path / f"{measure}.csv.meta.json").exists()
    head = (tmp_path / "pagerank.csv").read_text().splitlines()
    assert head[0] == "vertex,score"
    scores = [float(r.split(",")[1]) for r in head[1:]]
    assert abs(sum(scores) - 1) < 1e-9
    cli("centrality", "betweenness", "--graph", "tx", "--sample-sources", "10", "--out", tmp_path / "bs.csv")
    cli("scc", "--graph", "tx", "--out", tmp_path / "scc.csv")
    res = json.loads(cli("path", "--from", "0", "--to", "5", "--graph", "tx", "--json").out)
    assert "path" in res
    reach = json.loads(cli("path", "--from", "0", "--graph", "address", "--reachable", "--json").out)
    assert 0 in reach["reachable"]
    rates = tmp_path / "rates.csv"
    rates.write_text("date,usd_per_btc\n" + "".join(f"{d.isoformat()},{r}\n" for d, r in synth.daily_rates(chain)))
    for series in ("fees", "velocity", "address-types", "high-value"):
        cli("--rates", rates, "stats", series, "--bucket", "day", "--out", tmp_path / f"{series}.csv")
    assert (tmp_path / "fees.csv").read_text().startswith("bucket,tx_count,mean_fee_sats")
    cli("path", "--from", "999999", "--graph", "tx", code=1)


def test_match_commands(cli, tmp_path):
    chain = synth.planted_peels(seed=1)
    cli("ingest", "--fixtures", write_chain(tmp_path, chain))
    cli("graph", "--kind", "tx")
    out = tmp_path / "peels.csv"
    cli("match", "--peeling-chains", "--min-length", 4, "--out", out)
    assert len(out.read_text().splitlines()) == 1 + len(chain.planted)
    tmpl = tmp_path / "p.tmpl"
    tmpl.write_text("hops 2\nedge.increasing_time false\n")
    cli("match", "--pattern", tmpl, "--graph", "tx", "--limit", 5, "--out", tmp_path / "m.csv")
    rows = list(csv.reader((tmp_path / "m.csv").open()))
    assert rows[0] == ["match", "vertices", "edges", "witness"] and len(rows) == 6
    assert json.loads(rows[1][3])["hops"] == 2
    bad = tmp_path / "bad.tmpl"
    bad.write_text("hops 0\n")
    assert "PatternInvalid" in cli("match", "--pattern", bad, code=1).err


def test_cluster_stats_and_histogram(cli, tmp_path):
    chain = synth.ransom_collection(n_victims=30, seed=2)
    cli("ingest", "--fixtures", write_chain(tmp_path, chain))
    cli("cluster")
    seed = chain.facts["seed_script"][3:23].hex()
    out = cli("cluster", "stats", "--address", seed, "--histogram", tmp_path / "h.csv").out
    assert "avg in-degree" in out
    assert (tmp_path / "h.csv").read_text().startswith("size,clusters\n")


def test_stale_lock_is_taken_over(cli):
    cli.data.mkdir(parents=True)
    (cli.data / ".lock").write_text("999999999")
    cli("ingest", "--fixtures", DATA / "merged_payment.jsonl")
