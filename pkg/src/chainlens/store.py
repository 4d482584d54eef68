"""Columnar chain store: fixed-width little-endian tables plus script blobs.

On disk a store is a directory::

    manifest.json      format version, row counts, dtypes, file checksums
    blocks.bin         one packed record per block, chain order
    txs.bin            one record per transaction, tx_id order
    outputs.bin        one record per output, output_id order
    inputs.bin         one record per input, input_id order
    addresses.bin      one record per canonical address, address_id order
    scripts.bin        concatenated output scripts
    scripts.offsets    int64 offsets into scripts.bin, len(outputs) + 1
"""

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import wire
from .errors import StoreFormatError
from .model import AddressKey, BlockHeader, ScriptClass, Transaction, TxInput, TxOutput

FORMAT_NAME = "chainlens-store"
FORMAT_VERSION = 1
NONE = -1  # sentinel for absent ids in int64 columns
ADDRESS_PAYLOAD_MAX = 41

BLOCK_DTYPE = np.dtype([
    ("height", "<i8"), ("hash", "V32"), ("version", "<i4"), ("prev_hash", "V32"),
    ("merkle_root", "V32"), ("time", "<u4"), ("bits", "<u4"), ("nonce", "<u4"),
    ("tx_start", "<i8"), ("tx_count", "<i8"),
])
TX_DTYPE = np.dtype([
    ("hash", "V32"), ("block_id", "<i8"), ("index_in_block", "<i4"), ("timestamp", "<u4"),
    ("is_coinbase", "?"), ("in_start", "<i8"), ("in_count", "<i8"), ("out_start", "<i8"),
    ("out_count", "<i8"), ("fee", "<i8"), ("size", "<i8"),
])
OUTPUT_DTYPE = np.dtype([
    ("tx_id", "<i8"), ("index", "<u4"), ("value", "<u8"), ("script_class", "u1"),
    ("address_id", "<i8"), ("spending_input", "<i8"),
])
INPUT_DTYPE = np.dtype([
    ("tx_id", "<i8"), ("prev_hash", "V32"), ("prev_index", "<u4"),
    ("spent_output_id", "<i8"), ("resolved_value", "<u8"), ("resolved_address_id", "<i8"),
])
ADDRESS_DTYPE = np.dtype([("kind", "u1"), ("length", "u1"), ("payload", f"V{ADDRESS_PAYLOAD_MAX}")])
ADDRESS_KEY_DTYPE = np.dtype(f"V{ADDRESS_DTYPE.itemsize}")

TABLES = {
    "blocks": BLOCK_DTYPE,
    "txs": TX_DTYPE,
    "outputs": OUTPUT_DTYPE,
    "inputs": INPUT_DTYPE,
    "addresses": ADDRESS_DTYPE,
}


def pack_address_key(key: AddressKey) -> bytes:
    """Fixed-width byte form of an AddressKey, matching ADDRESS_DTYPE records."""
    payload = bytes(key.payload)
    if len(payload) > ADDRESS_PAYLOAD_MAX:
        raise ValueError("address payload too long")
    return bytes((int(key.kind), len(payload))) + payload.ljust(ADDRESS_PAYLOAD_MAX, b"\0")


class TxIndex:
    """hash <-> tx_id lookups over a sorted copy of the hash column.

    Mainnet carries two duplicated coinbase txids; the later occurrence wins,
    matching how the network treats the overwritten outputs.
    """

    def __init__(self, hashes: np.ndarray):
        self.hashes = hashes
        self._order = np.argsort(hashes, kind="stable")
        self._sorted = hashes[self._order]

    def __len__(self):
        return len(self.hashes)

    def lookup_many(self, query: np.ndarray) -> np.ndarray:
        """Vectorized lookup; -1 where absent."""
        query = np.asarray(query, dtype="V32")
        if len(self._sorted) == 0:
            return np.full(len(query), NONE, dtype=np.int64)
        pos = np.searchsorted(self._sorted, query, side="right") - 1
        pos_c = np.clip(pos, 0, None)
        hit = (pos >= 0) & (self._sorted[pos_c] == query)
        return np.where(hit, self._order[pos_c], NONE).astype(np.int64)

    def lookup(self, tx_hash) -> Optional[int]:
        if isinstance(tx_hash, str):
            tx_hash = wire.hex_to_hash(tx_hash)
        q = np.frombuffer(bytes(tx_hash), dtype="V32")
        r = int(self.lookup_many(q)[0])
        return None if r == NONE else r

    def hash_of(self, tx_id: int) -> bytes:
        return self.hashes[tx_id].tobytes()

    @property
    def duplicates(self) -> int:
        return int(len(self._sorted) - len(np.unique(self._sorted)))


class AddressIndex:
    """AddressKey <-> address_id over the addresses table."""

    def __init__(self, table: np.ndarray):
        self.table = table
        keys = table.view(ADDRESS_KEY_DTYPE).reshape(-1)
        self._order = np.argsort(keys, kind="stable")
        self._sorted = keys[self._order]

    def __len__(self):
        return len(self.table)

    def lookup(self, key: AddressKey) -> Optional[int]:
        q = np.frombuffer(pack_address_key(key), dtype=ADDRESS_KEY_DTYPE)
        if len(self._sorted) == 0:
            return None
        pos = int(np.searchsorted(self._sorted, q)[0])
        if pos < len(self._sorted) and self._sorted[pos] == q[0]:
            return int(self._order[pos])
        return None

    def key(self, address_id: int) -> AddressKey:
        rec = self.table[address_id]
        payload = rec["payload"].tobytes()[: int(rec["length"])]
        return AddressKey(ScriptClass(int(rec["kind"])), payload)

    def find_payload(self, payload: bytes) -> list:
        """All address_ids whose payload equals ``payload`` regardless of kind."""
        lengths = self.table["length"]
        padded = np.frombuffer(bytes(payload).ljust(ADDRESS_PAYLOAD_MAX, b"\0"),
                               dtype=f"V{ADDRESS_PAYLOAD_MAX}")
        hits = np.nonzero((lengths == len(payload)) & (self.table["payload"] == padded[0]))[0]
        return [int(h) for h in hits]


@dataclass
class ChainStore:
    blocks: np.ndarray
    txs: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    addresses: Optional[np.ndarray]
    script_offsets: np.ndarray
    script_data: np.ndarray
    meta: dict = field(default_factory=dict)
    # packed AddressKey per output; consumed by build_indexes
    pending_keys: Optional[np.ndarray] = field(default=None, repr=False)
    linked: bool = False
    _tx_index: Optional[TxIndex] = field(default=None, repr=False)
    _address_index: Optional[AddressIndex] = field(default=None, repr=False)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def n_txs(self):
        return len(self.txs)

    @property
    def n_outputs(self):
        return len(self.outputs)

    @property
    def n_inputs(self):
        return len(self.inputs)

    @property
    def n_addresses(self):
        return 0 if self.addresses is None else len(self.addresses)

    @property
    def tx_index(self) -> TxIndex:
        if self._tx_index is None:
            self._tx_index = TxIndex(self.txs["hash"])
        return self._tx_index

    @property
    def address_index(self) -> AddressIndex:
        if self.addresses is None:
            raise StoreFormatError("address index not built")
        if self._address_index is None:
            self._address_index = AddressIndex(self.addresses)
        return self._address_index

    def script(self, output_id: int) -> bytes:
        lo, hi = self.script_offsets[output_id], self.script_offsets[output_id + 1]
        return self.script_data[lo:hi].tobytes()

    def block_header(self, block_id: int) -> BlockHeader:
        b = self.blocks[block_id]
        return BlockHeader(int(b["version"]), b["prev_hash"].tobytes(), b["merkle_root"].tobytes(),
                           int(b["time"]), int(b["bits"]), int(b["nonce"]))

    def transaction(self, tx_id: int) -> Transaction:
        """Materialize one row-oriented Transaction view."""
        t = self.txs[tx_id]
        ins, outs = [], []
        for i in range(int(t["in_start"]), int(t["in_start"] + t["in_count"])):
            r = self.inputs[i]
            spent = int(r["spent_output_id"])
            addr = int(r["resolved_address_id"])
            ins.append(TxInput(i, None if spent == NONE else spent, int(r["resolved_value"]),
                               None if addr == NONE else addr))
        for o in range(int(t["out_start"]), int(t["out_start"] + t["out_count"])):
            r = self.outputs[o]
            addr = int(r["address_id"])
            outs.append(TxOutput(o, int(r["value"]), self.script(o), ScriptClass(int(r["script_class"])),
                                 None if addr == NONE else addr))
        return Transaction(tx_id, t["hash"].tobytes(), int(t["block_id"]), int(t["index_in_block"]),
                           int(t["timestamp"]), bool(t["is_coinbase"]), ins, outs, int(t["fee"]))

    def summary(self) -> dict:
        return {
            "blocks": self.n_blocks,
            "transactions": self.n_txs,
            "outputs": self.n_outputs,
            "inputs": self.n_inputs,
            "addresses": self.n_addresses,
            "spend_links": int((self.outputs["spending_input"] != NONE).sum()),
        }

    # persistence

    def save(self, path) -> str:
        """Write atomically to ``path``; return the manifest hash."""
        if self.addresses is None or not self.linked:
            raise StoreFormatError("only indexed, linked stores can be persisted")
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        files = {}
        tables = {}
        for name, dtype in TABLES.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            fname = f"{name}.bin"
            arr.tofile(tmp / fname)
            tables[name] = {"file": fname, "rows": len(arr), "dtype": _dtype_json(dtype)}
            files[fname] = _sha256_file(tmp / fname)
        np.ascontiguousarray(self.script_data, dtype=np.uint8).tofile(tmp / "scripts.bin")
        np.ascontiguousarray(self.script_offsets, dtype="<i8").tofile(tmp / "scripts.offsets")
        for fname in ("scripts.bin", "scripts.offsets"):
            files[fname] = _sha256_file(tmp / fname)
        manifest = {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "tables": tables,
            "scripts": {"data": "scripts.bin", "offsets": "scripts.offsets",
                        "bytes": int(len(self.script_data))},
            "counts": self.summary(),
            "meta": self.meta,
            "checksums": files,
        }
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        (tmp / "manifest.json").write_text(text)
        _replace_dir(tmp, path)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path, verify: bool = False) -> "ChainStore":
        path = Path(path)
        try:
            manifest = json.loads((path / "manifest.json").read_text())
        except FileNotFoundError:
            raise StoreFormatError(f"no store manifest in {path}") from None
        if manifest.get("format") != FORMAT_NAME or manifest.get("format_version") != FORMAT_VERSION:
            raise StoreFormatError(f"unsupported store format in {path}")
        if verify:
            for fname, digest in manifest["checksums"].items():
                if _sha256_file(path / fname) != digest:
                    raise StoreFormatError(f"checksum mismatch for {fname}")
        arrays = {}
        for name, dtype in TABLES.items():
            info = manifest["tables"][name]
            arr = np.fromfile(path / info["file"], dtype=dtype)
            if len(arr) != info["rows"]:
                raise StoreFormatError(f"{name}: expected {info['rows']} rows, found {len(arr)}")
            arrays[name] = arr
        data = np.fromfile(path / "scripts.bin", dtype=np.uint8)
        offsets = np.fromfile(path / "scripts.offsets", dtype="<i8")
        if len(offsets) != len(arrays["outputs"]) + 1 or (len(offsets) and offsets[-1] != len(data)):
            raise StoreFormatError("script offsets inconsistent with outputs table")
        return cls(script_offsets=offsets, script_data=data, meta=manifest.get("meta", {}),
                   linked=True, **arrays)


def manifest_hash(path) -> str:
    return hashlib.sha256((Path(path) / "manifest.json").read_bytes()).hexdigest()


def _dtype_json(dtype: np.dtype):
    return [[name, dtype.fields[name][0].str] for name in dtype.names]


def _sha256_file(p: Path) -> str:
    h = hashlib.sha256()
    with open(p, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _replace_dir(tmp: Path, dest: Path):
    old = dest.with_name(dest.name + ".old")
    if old.exists():
        shutil.rmtree(old)
    if dest.exists():
        os.replace(dest, old)
    os.replace(tmp, dest)
    if old.exists():
        shutil.rmtree(old)
