"""Line-delimited fixture chains and their canonical wire encoding.

One JSON object per line, one block per object (see docs/fixture-format.md)::

    {"height": 0, "time": 1231006505, "txs": [{"ins": [], "outs": [[5000000000, "76a9..88ac"]]}]}

Every fixture transaction has exactly one wire encoding (version 1, empty
scriptSig, final sequence, locktime 0; coinbase scriptSig pushes the height),
so fixtures and raw block files describing the same chain ingest identically.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

from . import wire
from .errors import DanglingInput, SchemaError
from .model import BlockHeader

MAINNET_MAGIC = bytes.fromhex("f9beb4d9")
FIXTURE_BITS = 0x207FFFFF
FIXTURE_VERSION = 1
SEQUENCE_FINAL = 0xFFFFFFFF
MAX_SATOSHIS = 2**64 - 1


@dataclass
class FixtureTx:
    ins: list = field(default_factory=list)  # [(txid_hex, vout)], empty for coinbase
    outs: list = field(default_factory=list)  # [(value, script_bytes)]
    label: Optional[str] = None
    _raw: Optional[bytes] = field(default=None, repr=False, compare=False)

    @property
    def is_coinbase(self):
        return not self.ins

    def raw(self, height: int) -> bytes:
        if self._raw is None:
            self._raw = encode_tx(self, height)
        return self._raw

    def txid(self, height: int) -> bytes:
        return wire.sha256d(self.raw(height))

    def txid_hex(self, height: int) -> str:
        return wire.hash_to_hex(self.txid(height))


@dataclass
class FixtureBlock:
    height: int
    time: int
    txs: list = field(default_factory=list)

    def header(self, prev_hash: bytes) -> BlockHeader:
        root = wire.merkle_root([tx.txid(self.height) for tx in self.txs])
        return BlockHeader(FIXTURE_VERSION, prev_hash, root, self.time, FIXTURE_BITS, 0)


def coinbase_script_sig(height: int) -> bytes:
    return wire.push_data(struct.pack("<I", height))


def encode_tx(tx: FixtureTx, height: int) -> bytes:
    if tx.is_coinbase:
        inputs = [(wire.NULL_HASH, wire.COINBASE_INDEX, coinbase_script_sig(height), SEQUENCE_FINAL)]
    else:
        inputs = [(wire.hex_to_hash(h), vout, b"", SEQUENCE_FINAL) for h, vout in tx.ins]
    return wire.serialize_tx(FIXTURE_VERSION, inputs, tx.outs, 0)


def chain_blocks(blocks):
    """Yield ``(header, [raw_tx, ...])`` per fixture block, linking prev hashes."""
    prev = wire.NULL_HASH
    for block in blocks:
        header = block.header(prev)
        yield header, [tx.raw(block.height) for tx in block.txs]
        prev = header.hash


def _int(value, what, line, lo=0, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{what} must be an integer", line)
    if value < lo or (hi is not None and value > hi):
        raise SchemaError(f"{what} out of range: {value}", line)
    return value


def read_fixture(lines) -> list:
    """Parse fixture lines into FixtureBlocks.

    Blank lines and ``#`` comments are skipped. A transaction may carry an
    ``"id"`` label; later inputs may reference it as ``"@label"`` instead of
    a txid.
    """
    blocks = []
    labels = {}
    for lineno, line in enumerate(lines, 1):
        if isinstance(line, bytes):
            line = line.decode()
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise SchemaError("block record must be an object", lineno)
        missing = {"height", "time", "txs"} - rec.keys()
        if missing:
            raise SchemaError(f"missing fields: {', '.join(sorted(missing))}", lineno)
        height = _int(rec["height"], "height", lineno)
        if height != len(blocks):
            raise SchemaError(f"expected height {len(blocks)}, got {height}", lineno)
        time = _int(rec["time"], "time", lineno, hi=2**32 - 1)
        txs_in = rec["txs"]
        if not isinstance(txs_in, list) or not txs_in:
            raise SchemaError("txs must be a non-empty list", lineno)
        block = FixtureBlock(height, time)
        for pos, t in enumerate(txs_in):
            if not isinstance(t, dict) or "ins" not in t or "outs" not in t:
                raise SchemaError(f"tx {pos}: needs 'ins' and 'outs'", lineno)
            ins, outs = t["ins"], t["outs"]
            if not isinstance(ins, list) or not isinstance(outs, list) or not outs:
                raise SchemaError(f"tx {pos}: 'ins' must be a list and 'outs' a non-empty list", lineno)
            if (pos == 0) != (not ins):
                raise SchemaError(f"tx {pos}: the first tx, and only it, must be a coinbase (empty ins)", lineno)
            tx = FixtureTx(label=t.get("id"))
            for ref in ins:
                if not isinstance(ref, list) or len(ref) != 2 or not isinstance(ref[0], str):
                    raise SchemaError(f"tx {pos}: input must be [txid, vout]", lineno)
                txref, vout = ref
                vout = _int(vout, "vout", lineno, hi=2**32 - 2)
                if txref.startswith("@"):
                    if txref[1:] not in labels:
                        raise DanglingInput(f"line {lineno}: unknown transaction label {txref}")
                    txref = labels[txref[1:]]
                else:
                    try:
                        wire.hex_to_hash(txref)
                    except ValueError:
                        raise SchemaError(f"tx {pos}: bad txid {txref!r}", lineno) from None
                tx.ins.append((txref.lower(), vout))
            for out in outs:
                if not isinstance(out, list) or len(out) != 2 or not isinstance(out[1], str):
                    raise SchemaError(f"tx {pos}: output must be [value, script-hex]", lineno)
                value = _int(out[0], "value", lineno, hi=MAX_SATOSHIS)
                try:
                    script = bytes.fromhex(out[1])
                except ValueError:
                    raise SchemaError(f"tx {pos}: bad script hex", lineno) from None
                tx.outs.append((value, script))
            if tx.label is not None:
                if not isinstance(tx.label, str) or tx.label in labels:
                    raise SchemaError(f"tx {pos}: bad or duplicate id {tx.label!r}", lineno)
                labels[tx.label] = tx.txid_hex(height)
            block.txs.append(tx)
        blocks.append(block)
    return blocks


def fixture_record(block: FixtureBlock) -> dict:
    return {
        "height": block.height,
        "time": block.time,
        "txs": [
            {"ins": [[h, v] for h, v in tx.ins], "outs": [[v, s.hex()] for v, s in tx.outs]}
            for tx in block.txs
        ],
    }


def write_fixture(blocks, fp):
    for block in blocks:
        fp.write(json.dumps(fixture_record(block), separators=(",", ":")) + "\n")


def encode_block(header: BlockHeader, raw_txs) -> bytes:
    return header.serialize() + wire.encode_varint(len(raw_txs)) + b"".join(raw_txs)


def write_block_file(blocks, fp, magic: bytes = MAINNET_MAGIC, padding: int = 0):
    """Write fixture blocks as magic-prefixed wire envelopes (blk*.dat layout)."""
    for header, raw_txs in chain_blocks(blocks):
        payload = encode_block(header, raw_txs)
        fp.write(magic + struct.pack("<I", len(payload)) + payload)
    if padding:
        fp.write(bytes(padding))
