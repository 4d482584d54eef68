"""Parse block files or fixtures into a linked, indexed ChainStore.

Ingest runs in two phases. Each input (one ``blk*.dat`` file or one fixture)
is decoded into a :class:`Segment`: columnar tables with segment-local row
numbers and unresolved address keys. Segments are independent, so they can be
produced by parallel workers and cached on disk. :func:`assemble` then picks
the best chain across all segments, assigns dense chain-order ids, and
:func:`build_indexes` / :func:`link_spends` resolve addresses and spends.
"""

import hashlib
import json
import logging
import mmap
import os
import struct
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import fixtures, model, wire
from .errors import (BadMagic, DanglingInput, DoubleSpend, MalformedBlock,
                     MalformedTransaction, NegativeFee, TruncatedBlock)
from .model import BlockHeader, HEADER_SIZE
from .store import (ADDRESS_DTYPE, ADDRESS_KEY_DTYPE, BLOCK_DTYPE, INPUT_DTYPE, NONE,
                    OUTPUT_DTYPE, TX_DTYPE, ChainStore, pack_address_key)

log = logging.getLogger(__name__)

MAINNET_MAGIC = fixtures.MAINNET_MAGIC

SEG_BLOCK_DTYPE = np.dtype([
    ("hash", "V32"), ("version", "<i4"), ("prev_hash", "V32"), ("merkle_root", "V32"),
    ("time", "<u4"), ("bits", "<u4"), ("nonce", "<u4"), ("tx_start", "<i8"), ("tx_count", "<i8"),
])
SEG_TX_DTYPE = np.dtype([
    ("hash", "V32"), ("is_coinbase", "?"), ("size", "<i8"), ("in_start", "<i8"),
    ("in_count", "<i8"), ("out_start", "<i8"), ("out_count", "<i8"),
])
SEG_OUT_DTYPE = np.dtype([("value", "<u8"), ("script_class", "u1"), ("key", ADDRESS_KEY_DTYPE)])
SEG_IN_DTYPE = np.dtype([("prev_hash", "V32"), ("prev_index", "<u4")])

_NO_KEY = bytes(ADDRESS_KEY_DTYPE.itemsize)


@dataclass
class RawBlockEnvelope:
    magic: bytes
    payload_size: int
    header: BlockHeader
    tx_count: int
    transactions: list  # raw byte spans
    offset: int = 0
    parsed: Optional[list] = None  # RawTx per span

    @property
    def hash(self):
        return self.header.hash


def parse_block_file(data, network_magic: bytes = MAINNET_MAGIC):
    """Yield envelopes from a concatenation of magic-prefixed blocks.

    ``data`` is bytes-like or a binary file object. Iteration stops at the end
    of data or at zero padding where the next magic would be.
    """
    if hasattr(data, "read"):
        data = data.read()
    mv = memoryview(data)
    n = len(mv)
    pos = 0
    while pos < n:
        head = bytes(mv[pos:pos + 4])
        if head.count(0) == len(head):
            return
        if len(head) < 4 or n - pos < 8:
            raise TruncatedBlock(f"offset {pos}: envelope header cut short")
        if head != network_magic:
            raise BadMagic(f"offset {pos}: expected magic {network_magic.hex()}, found {head.hex()}")
        size = struct.unpack_from("<I", mv, pos + 4)[0]
        start = pos + 8
        end = start + size
        if end > n:
            raise TruncatedBlock(f"offset {pos}: payload of {size} bytes exceeds the {n - start} remaining")
        yield _decode_payload(mv, start, end, head, size, pos)
        pos = end


def _decode_payload(mv, start, end, magic, size, offset):
    if size < HEADER_SIZE + 1:
        raise MalformedBlock(f"offset {offset}: payload too small for a block")
    header = BlockHeader.parse(mv, start)
    payload = mv[start:end]
    try:
        count, p = wire.read_varint(payload, HEADER_SIZE)
    except (IndexError, struct.error):
        raise MalformedBlock(f"offset {offset}: missing tx count") from None
    spans, parsed = [], []
    for _ in range(count):
        try:
            tx, q = wire.parse_tx(payload, p)
        except MalformedTransaction as exc:
            raise MalformedBlock(f"offset {offset}: {exc}") from None
        if q > size:
            raise MalformedBlock(f"offset {offset}: transaction overruns payload")
        spans.append(bytes(payload[p:q]))
        parsed.append(tx)
        p = q
    if p != size:
        raise MalformedBlock(f"offset {offset}: consumed {p} of {size} payload bytes")
    return RawBlockEnvelope(magic, size, header, count, spans, offset, parsed)


@dataclass
class Segment:
    blocks: np.ndarray
    txs: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    script_offsets: np.ndarray
    script_data: np.ndarray
    source: str = ""

    def save(self, path):
        """Atomic write (tmp + rename) so a crash never leaves a half segment."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, blocks=self.blocks, txs=self.txs, outputs=self.outputs, inputs=self.inputs,
                 script_offsets=self.script_offsets, script_data=self.script_data)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, source=""):
        with np.load(path, allow_pickle=False) as z:
            return cls(z["blocks"], z["txs"], z["outputs"], z["inputs"],
                       z["script_offsets"], z["script_data"], source)


class SegmentBuilder:
    def __init__(self, source=""):
        self.source = source
        self.blocks, self.txs, self.outs, self.ins = [], [], [], []
        self.scripts = []
        self._script_len = [0]
        self._classify_cache = {}

    def _address(self, script):
        hit = self._classify_cache.get(script)
        if hit is None:
            cls = model.classify_script(script)
            key = model.script_to_address(script, cls)
            hit = (int(cls), _NO_KEY if key is None else pack_address_key(key))
            if len(self._classify_cache) < 1_000_000:
                self._classify_cache[script] = hit
        return hit

    def add_tx(self, txid, is_coinbase, size, inputs, outputs):
        """``inputs``: [(prev_hash, prev_index)], ``outputs``: [(value, script)]."""
        ins_start, outs_start = len(self.ins), len(self.outs)
        if not is_coinbase:
            self.ins.extend(inputs)
        else:
            self.ins.append((wire.NULL_HASH, wire.COINBASE_INDEX))
        for value, script in outputs:
            cls, key = self._address(script)
            self.outs.append((value, cls, key))
            self.scripts.append(script)
        self.txs.append((txid, is_coinbase, size, ins_start, len(self.ins) - ins_start,
                         outs_start, len(self.outs) - outs_start))

    def add_block(self, header: BlockHeader, block_hash: bytes = None):
        """Register a block covering the txs added since the previous call."""
        start = self.blocks[-1][7] + self.blocks[-1][8] if self.blocks else 0
        self.blocks.append((block_hash or header.hash, header.version, header.prev_block_hash,
                            header.merkle_root, header.time, header.bits, header.nonce,
                            start, len(self.txs) - start))

    def add_envelope(self, env: RawBlockEnvelope):
        for tx in env.parsed:
            cb = tx.is_coinbase
            self.add_tx(tx.txid, cb, tx.size,
                        None if cb else [(i.prev_hash, i.prev_index) for i in tx.inputs],
                        [(o.value, o.script) for o in tx.outputs])
        self.add_block(env.header)

    def build(self) -> Segment:
        lens = np.fromiter((len(s) for s in self.scripts), dtype=np.int64, count=len(self.scripts))
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        data = np.frombuffer(b"".join(self.scripts), dtype=np.uint8)
        return Segment(
            np.array(self.blocks, dtype=SEG_BLOCK_DTYPE),
            np.array(self.txs, dtype=SEG_TX_DTYPE),
            np.array(self.outs, dtype=SEG_OUT_DTYPE),
            np.array(self.ins, dtype=SEG_IN_DTYPE),
            offsets, data, self.source,
        )


def segment_from_block_data(data, network_magic=MAINNET_MAGIC, source="") -> Segment:
    b = SegmentBuilder(source)
    for env in parse_block_file(data, network_magic):
        b.add_envelope(env)
    return b.build()


def segment_from_fixture(blocks, source="") -> Segment:
    b = SegmentBuilder(source)
    prev = wire.NULL_HASH
    for block in blocks:
        for tx in block.txs:
            raw = tx.raw(block.height)
            ins = None if tx.is_coinbase else [(wire.hex_to_hash(h), v) for h, v in tx.ins]
            b.add_tx(wire.sha256d(raw), tx.is_coinbase, len(raw), ins, tx.outs)
        header = block.header(prev)
        prev = header.hash
        b.add_block(header, prev)
    return b.build()


def select_chain(hashes, prevs) -> list:
    """Indices of the best chain, genesis first.

    Blocks are rooted at a null prev-hash; the tip with the greatest height
    wins, ties going to the one seen first. Duplicates keep their first copy;
    anything not connected to a root is an orphan and dropped.
    """
    first = {}
    for i, h in enumerate(hashes):
        first.setdefault(h, i)
    children = defaultdict(list)
    roots = []
    for h, i in first.items():
        p = prevs[i]
        if p == wire.NULL_HASH:
            roots.append(i)
        else:
            children[p].append(i)
    height = {}
    parent = {}
    stack = [(r, 0) for r in roots]
    while stack:
        i, hgt = stack.pop()
        height[i] = hgt
        for c in children.get(hashes[i], ()):
            parent[c] = i
            stack.append((c, hgt + 1))
    if not height:
        return []
    tip = min(height, key=lambda i: (-height[i], i))
    chain = [tip]
    while chain[-1] in parent:
        chain.append(parent[chain[-1]])
    chain.reverse()
    return chain


def _ranges(starts, counts) -> np.ndarray:
    """Concatenated ``arange(s, s + c)`` for each pair, vectorized."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    dest = np.cumsum(counts) - counts
    return np.repeat(np.asarray(starts, dtype=np.int64) - dest, counts) + np.arange(total, dtype=np.int64)


def _excl_cumsum(counts) -> np.ndarray:
    out = np.zeros(len(counts), dtype=np.int64)
    if len(counts):
        np.cumsum(counts[:-1], out=out[1:])
    return out


def _concat_segments(segments) -> Segment:
    blocks, txs, outs, ins, offs, datas = [], [], [], [], [], []
    tb = ob = ib = db = 0
    for s in segments:
        b = s.blocks.copy()
        b["tx_start"] += tb
        t = s.txs.copy()
        t["in_start"] += ib
        t["out_start"] += ob
        blocks.append(b)
        txs.append(t)
        outs.append(s.outputs)
        ins.append(s.inputs)
        offs.append(s.script_offsets[:-1] + db)
        datas.append(s.script_data)
        tb += len(s.txs)
        ob += len(s.outputs)
        ib += len(s.inputs)
        db += len(s.script_data)
    offs.append(np.array([db], dtype=np.int64))

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

    return Segment(cat(blocks, SEG_BLOCK_DTYPE), cat(txs, SEG_TX_DTYPE), cat(outs, SEG_OUT_DTYPE),
                   cat(ins, SEG_IN_DTYPE), np.concatenate(offs), cat(datas, np.uint8))


def assemble(segments, height_limit: Optional[int] = None) -> ChainStore:
    """Best-chain selection and dense id assignment; no indexes or links yet."""
    g = _concat_segments(list(segments))
    hashes = [h.tobytes() for h in g.blocks["hash"]]
    prevs = [h.tobytes() for h in g.blocks["prev_hash"]]
    chain = np.array(select_chain(hashes, prevs), dtype=np.int64)
    dropped = len(g.blocks) - len(chain)
    if height_limit is not None:
        chain = chain[: height_limit + 1]
    if dropped:
        log.info("excluded %d stale, orphan or duplicate blocks", dropped)
    sel_blocks = g.blocks[chain]

    blocks = np.zeros(len(chain), dtype=BLOCK_DTYPE)
    blocks["height"] = np.arange(len(chain))
    for name in ("hash", "version", "prev_hash", "merkle_root", "time", "bits", "nonce", "tx_count"):
        blocks[name] = sel_blocks[name]
    blocks["tx_start"] = _excl_cumsum(sel_blocks["tx_count"])

    tx_sel = _ranges(sel_blocks["tx_start"], sel_blocks["tx_count"])
    st = g.txs[tx_sel]
    n_tx = len(st)
    block_of_tx = np.repeat(np.arange(len(chain)), sel_blocks["tx_count"])
    txs = np.zeros(n_tx, dtype=TX_DTYPE)
    txs["hash"] = st["hash"]
    txs["block_id"] = block_of_tx
    txs["index_in_block"] = np.arange(n_tx) - blocks["tx_start"][block_of_tx]
    txs["timestamp"] = blocks["time"][block_of_tx]
    txs["is_coinbase"] = st["is_coinbase"]
    txs["size"] = st["size"]
    txs["in_count"] = st["in_count"]
    txs["out_count"] = st["out_count"]
    txs["in_start"] = _excl_cumsum(st["in_count"])
    txs["out_start"] = _excl_cumsum(st["out_count"])

    out_sel = _ranges(st["out_start"], st["out_count"])
    so = g.outputs[out_sel]
    outputs = np.zeros(len(so), dtype=OUTPUT_DTYPE)
    outputs["tx_id"] = np.repeat(np.arange(n_tx), st["out_count"])
    outputs["index"] = np.arange(len(so)) - txs["out_start"][outputs["tx_id"]]
    outputs["value"] = so["value"]
    outputs["script_class"] = so["script_class"]
    outputs["address_id"] = NONE
    outputs["spending_input"] = NONE

    in_sel = _ranges(st["in_start"], st["in_count"])
    si = g.inputs[in_sel]
    inputs = np.zeros(len(si), dtype=INPUT_DTYPE)
    inputs["tx_id"] = np.repeat(np.arange(n_tx), st["in_count"])
    inputs["prev_hash"] = si["prev_hash"]
    inputs["prev_index"] = si["prev_index"]
    inputs["spent_output_id"] = NONE
    inputs["resolved_address_id"] = NONE

    s_start = g.script_offsets[out_sel]
    s_len = g.script_offsets[out_sel + 1] - s_start
    script_offsets = np.zeros(len(so) + 1, dtype=np.int64)
    np.cumsum(s_len, out=script_offsets[1:])
    script_data = g.script_data[_ranges(s_start, s_len)]

    return ChainStore(blocks, txs, outputs, inputs, None, script_offsets, script_data,
                      meta={"excluded_blocks": int(len(g.blocks) - len(chain))},
                      pending_keys=so["key"])


def build_indexes(store: ChainStore) -> ChainStore:
    """Assign canonical address ids (first-appearance order) and the tx index."""
    if store.pending_keys is None:
        if store.addresses is None:
            raise ValueError("store has neither address keys nor an address table")
        return store
    keys = store.pending_keys
    has = keys.view(ADDRESS_DTYPE)["length"] > 0
    present = keys[has]
    if len(present):
        uniq, first, inverse = np.unique(present, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        store.outputs["address_id"][has] = rank[inverse.reshape(-1)]
        store.addresses = uniq[order].view(ADDRESS_DTYPE).copy()
    else:
        store.addresses = np.zeros(0, dtype=ADDRESS_DTYPE)
    store.pending_keys = None
    store._address_index = None
    store._tx_index = None
    dups = store.tx_index.duplicates
    if dups:
        log.warning("%d duplicate txids; later occurrences shadow earlier ones", dups)
    store.meta["duplicate_txids"] = dups
    return store


def _segment_sums(values, starts, counts):
    # int64 wraparound in the running sum cancels in the difference
    csum = np.zeros(len(values) + 1, dtype=np.int64)
    np.cumsum(values.astype(np.int64), out=csum[1:])
    return csum[starts + counts] - csum[starts]


def _hex(h) -> str:
    return wire.hash_to_hex(bytes(h))


def link_spends(store: ChainStore) -> ChainStore:
    """Resolve every non-coinbase input to the output it spends, then fees."""
    if store.addresses is None:
        build_indexes(store)
    txs, outs, ins = store.txs, store.outputs, store.inputs
    spender = ins["tx_id"]
    mask = ~txs["is_coinbase"][spender]
    input_ids = np.nonzero(mask)[0]
    prev_idx = ins["prev_index"][mask].astype(np.int64)
    creating = store.tx_index.lookup_many(ins["prev_hash"][mask])
    spending_tx = spender[mask]

    bad = creating == NONE
    if bad.any():
        k = int(np.argmax(bad))
        raise DanglingInput(f"tx {_hex(txs['hash'][spending_tx[k]])} input references unknown "
                            f"output {_hex(ins['prev_hash'][input_ids[k]])}:{prev_idx[k]}")
    bad = creating >= spending_tx
    if bad.any():
        k = int(np.argmax(bad))
        raise DanglingInput(f"tx {_hex(txs['hash'][spending_tx[k]])} spends output of "
                            f"{_hex(ins['prev_hash'][input_ids[k]])} which is not yet created")
    bad = prev_idx >= txs["out_count"][creating]
    if bad.any():
        k = int(np.argmax(bad))
        raise DanglingInput(f"tx {_hex(txs['hash'][spending_tx[k]])} references missing output "
                            f"{_hex(ins['prev_hash'][input_ids[k]])}:{prev_idx[k]}")
    spent = txs["out_start"][creating] + prev_idx

    if len(spent):
        order = np.argsort(spent, kind="stable")
        s = spent[order]
        dup = np.nonzero(s[1:] == s[:-1])[0]
        if len(dup):
            out_id = int(s[dup[0]])
            second = int(input_ids[order[dup[0] + 1]])
            raise DoubleSpend(f"output {_hex(txs['hash'][outs['tx_id'][out_id]])}:"
                              f"{int(outs['index'][out_id])} spent twice (second by tx "
                              f"{_hex(txs['hash'][spender[second]])})")

    ins["spent_output_id"][:] = NONE
    ins["resolved_value"][:] = 0
    ins["resolved_address_id"][:] = NONE
    outs["spending_input"][:] = NONE
    ins["spent_output_id"][input_ids] = spent
    ins["resolved_value"][input_ids] = outs["value"][spent]
    ins["resolved_address_id"][input_ids] = outs["address_id"][spent]
    outs["spending_input"][spent] = input_ids

    in_sum = _segment_sums(ins["resolved_value"], txs["in_start"], txs["in_count"])
    out_sum = _segment_sums(outs["value"], txs["out_start"], txs["out_count"])
    fee = np.where(txs["is_coinbase"], 0, in_sum - out_sum)
    neg = fee < 0
    if neg.any():
        k = int(np.argmax(neg))
        raise NegativeFee(f"tx {_hex(txs['hash'][k])} outputs exceed inputs by {-int(fee[k])} sat")
    txs["fee"] = fee
    store.linked = True
    return store


def finish(segments, height_limit=None) -> ChainStore:
    store = assemble(segments, height_limit)
    build_indexes(store)
    link_spends(store)
    return store


def ingest_fixture(lines, height_limit=None) -> ChainStore:
    blocks = fixtures.read_fixture(lines)
    return finish([segment_from_fixture(blocks, "fixture")], height_limit)


def ingest_block_data(datas, network_magic=MAINNET_MAGIC, height_limit=None) -> ChainStore:
    """In-memory ingest of one or more raw block-file byte strings."""
    segs = [segment_from_block_data(d, network_magic, f"buffer{i}") for i, d in enumerate(datas)]
    return finish(segs, height_limit)


def _parse_file_to_segment(args):
    path, cache_path, magic = args
    with open(path, "rb") as f:
        size = os.fstat(f.fileno()).st_size
        if size == 0:
            data = b""
        else:
            data = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        seg = segment_from_block_data(data, magic, str(path))
    seg.save(cache_path)
    return str(path)


def _source_stamp(path: Path, magic: bytes) -> dict:
    st = path.stat()
    return {"size": st.st_size, "mtime_ns": st.st_mtime_ns, "magic": magic.hex()}


def ingest_block_files(paths, cache_dir, network_magic=MAINNET_MAGIC, height_limit=None,
                       workers: int = 1, progress=None) -> ChainStore:
    """Restartable ingest of ``blk*.dat`` files.

    Each file is parsed into a cached segment under ``cache_dir`` (atomically,
    one file at a time), so an interrupted run re-parses only files whose
    segment is missing or stale.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in paths]
    todo, cached = [], []
    for p in paths:
        key = hashlib.sha256(str(p.resolve()).encode()).hexdigest()[:16]
        seg_path = cache_dir / f"{p.name}.{key}.npz"
        stamp_path = seg_path.with_suffix(".json")
        stamp = _source_stamp(p, network_magic)
        if seg_path.exists() and stamp_path.exists() and json.loads(stamp_path.read_text()) == stamp:
            cached.append(p.name)
        else:
            todo.append((p, seg_path, stamp_path, stamp))
    if cached:
        log.info("reusing %d parsed block files", len(cached))
    jobs = [(p, s, network_magic) for p, s, _, _ in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done in pool.map(_parse_file_to_segment, jobs):
                if progress:
                    progress(f"parsed {done}")
    else:
        for job in jobs:
            _parse_file_to_segment(job)
            if progress:
                progress(f"parsed {job[0]}")
    for _, _, stamp_path, stamp in todo:
        stamp_path.write_text(json.dumps(stamp))
    segs = []
    for p in paths:
        key = hashlib.sha256(str(p.resolve()).encode()).hexdigest()[:16]
        segs.append(Segment.load(cache_dir / f"{p.name}.{key}.npz", str(p)))
    return finish(segs, height_limit)
