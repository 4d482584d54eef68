import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainlens import fixtures, ingest, synth, wire
from chainlens.errors import (BadMagic, DanglingInput, DoubleSpend, MalformedBlock, NegativeFee,
                              SchemaError, StoreFormatError, TruncatedBlock)
from chainlens.fixtures import FixtureBlock, FixtureTx
from chainlens.model import ScriptClass, p2pkh_script, script_to_address
from chainlens.store import NONE, ChainStore, manifest_hash
from conftest import store_of, wire_of

S1, S2, S3 = (p2pkh_script(bytes([i]) * 20) for i in (1, 2, 3))


def tiny_chain():
    cb0 = FixtureTx([], [(50, S1), (20, S2)])
    b0 = FixtureBlock(0, 1_000, [cb0])
    spend = FixtureTx([(cb0.txid_hex(0), 0), (cb0.txid_hex(0), 1)], [(60, S3), (5, S1)])
    b1 = FixtureBlock(1, 2_000, [FixtureTx([], [(50, S3)]), spend])
    return [b0, b1]


def test_tiny_chain_tables():
    store = store_of(tiny_chain())
    assert store.summary() == {"blocks": 2, "transactions": 3, "outputs": 5, "inputs": 4,
                               "addresses": 3, "spend_links": 2}
    assert store.txs["fee"].tolist() == [0, 0, 5]
    assert store.txs["timestamp"].tolist() == [1000, 2000, 2000]
    # address ids by first appearance
    assert store.outputs["address_id"].tolist() == [0, 1, 2, 2, 0]
    ins = store.inputs
    assert ins["spent_output_id"].tolist() == [NONE, NONE, 0, 1]
    assert ins["resolved_value"].tolist()[2:] == [50, 20]
    assert ins["resolved_address_id"].tolist()[2:] == [0, 1]
    assert store.outputs["spending_input"].tolist() == [2, 3, NONE, NONE, NONE]
    tx = store.transaction(2)
    assert [o.value for o in tx.outputs] == [60, 5] and tx.fee == 5
    assert store.script(4) == S1


def test_fixture_and_wire_ingest_identical():
    chain = synth.random_chain(300, seed=4)
    a = store_of(chain)
    b = ingest.ingest_block_data([wire_of(chain, padding=16)])
    for name in ("blocks", "txs", "outputs", "inputs", "addresses", "script_offsets", "script_data"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.summary()["spend_links"] == chain.n_inputs


def test_split_across_files_any_order():
    chain = synth.random_chain(120, seed=5)
    whole = store_of(chain)
    blocks = chain.blocks
    # wire files hold consecutive blocks; give them out of order
    parts = [blocks[:4], blocks[4:9], blocks[9:]]
    datas = []
    prev = wire.NULL_HASH
    for part in parts:
        buf = io.BytesIO()
        for blk in part:
            header = blk.header(prev)
            payload = fixtures.encode_block(header, [t.raw(blk.height) for t in blk.txs])
            buf.write(fixtures.MAINNET_MAGIC + struct.pack("<I", len(payload)) + payload)
            prev = header.hash
        datas.append(buf.getvalue())
    store = ingest.ingest_block_data([datas[2], datas[0], datas[1]])
    assert np.array_equal(store.txs, whole.txs)
    assert np.array_equal(store.outputs, whole.outputs)


def _envelopes(blocks_with_prev):
    out = b""
    for blk, prev in blocks_with_prev:
        payload = fixtures.encode_block(blk.header(prev), [t.raw(blk.height) for t in blk.txs])
        out += fixtures.MAINNET_MAGIC + struct.pack("<I", len(payload)) + payload
    return out


def test_fork_orphan_and_duplicate_selection():
    b0, b1 = tiny_chain()
    h0 = b0.header(wire.NULL_HASH).hash
    h1 = b1.header(h0).hash
    # competing branch from b0 with two blocks beats b1
    alt1 = FixtureBlock(1, 3_000, [FixtureTx([], [(50, S2)])])
    alt1_h = alt1.header(h0).hash
    alt2 = FixtureBlock(2, 4_000, [FixtureTx([], [(50, S1)])])
    orphan = FixtureBlock(5, 9_000, [FixtureTx([], [(1, S1)])])
    data = _envelopes([(b0, wire.NULL_HASH), (b1, h0), (alt1, h0), (b0, wire.NULL_HASH),
                       (alt2, alt1_h), (orphan, bytes([7]) * 32)])
    store = ingest.ingest_block_data([data])
    assert store.n_blocks == 3
    assert store.block_header(1).hash == alt1_h
    assert store.meta["excluded_blocks"] == 3
    # equal height: first seen wins
    data = _envelopes([(b0, wire.NULL_HASH), (alt1, h0), (b1, h0)])
    assert ingest.ingest_block_data([data]).block_header(1).hash == alt1_h
    # height limit
    data = _envelopes([(b0, wire.NULL_HASH), (b1, h0)])
    assert ingest.ingest_block_data([data], height_limit=0).n_blocks == 1
    assert h1 != alt1_h


def test_wire_errors():
    data = wire_of(tiny_chain())
    with pytest.raises(BadMagic):
        list(ingest.parse_block_file(b"\x0b\x11\x09\x07" + data[4:]))
    with pytest.raises(TruncatedBlock):
        list(ingest.parse_block_file(data[:-3]))
    with pytest.raises(TruncatedBlock):
        list(ingest.parse_block_file(data + fixtures.MAINNET_MAGIC))
    # declared size larger than the block's content
    size = struct.unpack_from("<I", data, 4)[0]
    grown = bytearray(data[:8 + size])
    struct.pack_into("<I", grown, 4, size + 2)
    with pytest.raises(MalformedBlock):
        list(ingest.parse_block_file(bytes(grown) + b"\x01\x02"))
    # zero padding ends the file cleanly; other networks via magic
    assert len(list(ingest.parse_block_file(data + bytes(100)))) == 2
    testnet = bytes.fromhex("0b110907")
    alt = io.BytesIO()
    fixtures.write_block_file(tiny_chain(), alt, magic=testnet)
    assert len(list(ingest.parse_block_file(alt.getvalue(), testnet))) == 2


def test_link_errors():
    b0, _ = tiny_chain()
    cb = b0.txs[0]
    unknown = FixtureTx([("11" * 32, 0)], [(1, S1)])
    with pytest.raises(DanglingInput):
        store_of([b0, FixtureBlock(1, 2, [FixtureTx([], [(1, S1)]), unknown])])
    bad_vout = FixtureTx([(cb.txid_hex(0), 5)], [(1, S1)])
    with pytest.raises(DanglingInput):
        store_of([b0, FixtureBlock(1, 2, [FixtureTx([], [(1, S1)]), bad_vout])])
    a = FixtureTx([(cb.txid_hex(0), 0)], [(10, S2)])
    b = FixtureTx([(cb.txid_hex(0), 0)], [(10, S3)])
    with pytest.raises(DoubleSpend):
        store_of([b0, FixtureBlock(1, 2, [FixtureTx([], [(1, S1)]), a, b])])
    greedy = FixtureTx([(cb.txid_hex(0), 0)], [(51, S2)])
    with pytest.raises(NegativeFee):
        store_of([b0, FixtureBlock(1, 2, [FixtureTx([], [(1, S1)]), greedy])])


def test_spend_of_later_tx_in_same_block_is_dangling():
    b0, _ = tiny_chain()
    cb = b0.txs[0]
    later = FixtureTx([(cb.txid_hex(0), 0)], [(40, S2)])
    early = FixtureTx([(later.txid_hex(1), 0)], [(30, S3)])
    with pytest.raises(DanglingInput):
        store_of([b0, FixtureBlock(1, 2, [FixtureTx([], [(1, S1)]), early, later])])


@pytest.mark.parametrize("line,message", [
    ('{"height": 0, "time": 1}', "missing fields"),
    ('not json', "invalid JSON"),
    ('{"height": 1, "time": 1, "txs": [{"ins": [], "outs": [[1, "51"]]}]}', "expected height 0"),
    ('{"height": 0, "time": 1, "txs": []}', "non-empty"),
    ('{"height": 0, "time": 1, "txs": [{"ins": [["00", 0]], "outs": [[1, "51"]]}]}', "coinbase"),
    ('{"height": 0, "time": 1, "txs": [{"ins": [], "outs": [[-1, "51"]]}]}', "out of range"),
    ('{"height": 0, "time": 1, "txs": [{"ins": [], "outs": [[1, "zz"]]}]}', "script hex"),
    ('{"height": 0, "time": 1, "txs": [{"ins": [], "outs": []}]}', "non-empty"),
])
def test_fixture_schema_errors_carry_line(line, message):
    with pytest.raises(SchemaError) as err:
        fixtures.read_fixture(["# comment", "", line])
    assert err.value.line == 3 and message in str(err.value)


def test_fixture_labels():
    lines = [
        '{"height": 0, "time": 5, "txs": [{"id": "cb", "ins": [], "outs": [[100, "51"]]}]}',
        '{"height": 1, "time": 6, "txs": [{"ins": [], "outs": [[100, "51"]]},'
        ' {"ins": [["@cb", 0]], "outs": [[90, "51"]]}]}',
    ]
    store = ingest.ingest_fixture(lines)
    assert store.txs["fee"].tolist() == [0, 0, 10]
    with pytest.raises(DanglingInput):
        fixtures.read_fixture(lines[:1] + [lines[1].replace("@cb", "@nope")])


def test_store_roundtrip_and_checksums(tmp_path):
    store = store_of(synth.random_chain(80, seed=6))
    h = store.save(tmp_path / "s")
    assert h == manifest_hash(tmp_path / "s")
    back = ChainStore.load(tmp_path / "s", verify=True)
    for name in ("blocks", "txs", "outputs", "inputs", "addresses", "script_offsets", "script_data"):
        assert np.array_equal(getattr(back, name), getattr(store, name))
    # saving again is byte-identical
    assert store.save(tmp_path / "s") == h
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["format_version"] == 1
    with open(tmp_path / "s" / "txs.bin", "r+b") as f:
        f.seek(10)
        f.write(b"\xff")
    with pytest.raises(StoreFormatError):
        ChainStore.load(tmp_path / "s", verify=True)
    with pytest.raises(StoreFormatError):
        ChainStore.load(tmp_path / "missing")


def test_block_files_restartable(tmp_path):
    chain = synth.random_chain(150, seed=7)
    blocks = chain.blocks
    files = []
    prev = wire.NULL_HASH
    for i, part in enumerate((blocks[:6], blocks[6:])):
        p = tmp_path / f"blk{i:05d}.dat"
        with open(p, "wb") as f:
            for blk in part:
                header = blk.header(prev)
                payload = fixtures.encode_block(header, [t.raw(blk.height) for t in blk.txs])
                f.write(fixtures.MAINNET_MAGIC + struct.pack("<I", len(payload)) + payload)
                prev = header.hash
        files.append(p)
    cache = tmp_path / "cache"
    msgs = []
    first = ingest.ingest_block_files(files, cache, progress=msgs.append)
    assert len(msgs) == 2
    # a second run parses nothing
    msgs.clear()
    again = ingest.ingest_block_files(files, cache, progress=msgs.append)
    assert msgs == [] and np.array_equal(first.txs, again.txs)
    # simulate a crash that lost one segment: only that file is re-parsed
    next(cache.glob("blk00001*.npz")).unlink()
    again = ingest.ingest_block_files(files, cache, progress=msgs.append)
    assert len(msgs) == 1 and np.array_equal(first.txs, again.txs)
    assert np.array_equal(first.txs, store_of(chain).txs)
    par = ingest.ingest_block_files(files, tmp_path / "cache2", workers=2)
    assert np.array_equal(par.outputs, first.outputs)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 80))
def test_random_chain_invariants(seed, n):
    chain = synth.random_chain(n, seed=seed, n_entities=8, txs_per_block=4)
    store = store_of(chain)
    txs, outs, ins = store.txs, store.outputs, store.inputs
    # every non-coinbase input links to exactly one earlier output, values conserve
    nc = ~txs["is_coinbase"][ins["tx_id"]]
    assert (ins["spent_output_id"][nc] >= 0).all() and (ins["spent_output_id"][~nc] == NONE).all()
    spent = ins["spent_output_id"][nc]
    assert len(np.unique(spent)) == len(spent)
    assert (outs["tx_id"][spent] < ins["tx_id"][nc]).all()
    assert (outs["spending_input"][spent] == np.nonzero(nc)[0]).all()
    for t in range(store.n_txs):
        tx = store.transaction(t)
        if not tx.is_coinbase:
            assert tx.fee == sum(i.resolved_value for i in tx.inputs) - sum(o.value for o in tx.outputs)
    # address identity is the canonical key of the output script
    idx = store.address_index
    for o in range(store.n_outputs):
        key = script_to_address(store.script(o))
        a = int(outs["address_id"][o])
        assert (key is None) == (a == NONE)
        if key is not None:
            assert idx.key(a) == key and idx.lookup(key) == a
        assert ScriptClass(int(outs["script_class"][o])) is not None
    assert store.summary()["spend_links"] == chain.n_inputs
