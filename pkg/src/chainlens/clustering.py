"""Address linking: multi-input and change-address heuristics, seed tags.

A :class:`Clustering` is a finalized disjoint-set partition over address ids
whose ``parent`` array maps every address straight to its representative,
the smallest address id in its cluster. Every successful union is recorded in
``merges`` with the heuristic that caused it and the witnessing tx.
"""

import csv
import io
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SchemaError, UnknownAddress, UnknownCluster
from .model import AddressKey, ScriptClass
from .store import NONE, AddressIndex, ChainStore, _replace_dir
from . import wire

log = logging.getLogger(__name__)

MULTI_INPUT = "multi-input"
CHANGE = "change"
HEURISTICS = (MULTI_INPUT, CHANGE)

MERGE_DTYPE = np.dtype([("a", "<i8"), ("b", "<i8"), ("heuristic", "u1"), ("tx_id", "<i8")])


class UnionFind:
    """Disjoint-set forest with union by size and path compression."""

    def __init__(self, n: int, parent=None):
        self.parent = list(range(n)) if parent is None else [int(p) for p in parent]
        self.size = [1] * n
        if parent is not None:
            for a, p in enumerate(self.parent):
                if a != p:
                    self.size[p] += 1

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def canonical(self) -> np.ndarray:
        """Representative per element, as the minimum member of its set."""
        roots = np.fromiter((self.find(a) for a in range(len(self.parent))), dtype=np.int64,
                            count=len(self.parent))
        smallest = np.full(len(roots), np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(smallest, roots, np.arange(len(roots)))
        return smallest[roots]


@dataclass
class Clustering:
    parent: np.ndarray  # address_id -> representative
    merges: list = field(default_factory=list)  # (addr_a, addr_b, heuristic, tx_id)
    heuristics: tuple = ()
    addresses: Optional[AddressIndex] = field(default=None, repr=False)

    def __len__(self):
        return len(self.parent)

    def find(self, a: int) -> int:
        return int(self.parent[a])

    @property
    def cluster_ids(self) -> np.ndarray:
        return np.unique(self.parent)

    @property
    def cluster_count(self) -> int:
        return len(self.cluster_ids)

    def members(self, cluster_id: int) -> np.ndarray:
        cluster_id = int(cluster_id)
        if not (0 <= cluster_id < len(self.parent)) or self.parent[cluster_id] != cluster_id:
            raise UnknownCluster(f"{cluster_id} is not a cluster representative")
        return np.nonzero(self.parent == cluster_id)[0]

    def sizes(self) -> np.ndarray:
        """Cluster size for every address (size of the cluster it belongs to)."""
        counts = np.bincount(self.parent, minlength=len(self.parent))
        return counts[self.parent]

    # persistence

    def save(self, path, source_hash=""):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.parent, dtype="<i8").tofile(tmp / "parent.bin")
        m = np.zeros(len(self.merges), dtype=MERGE_DTYPE)
        if self.merges:
            a, b, h, t = zip(*self.merges)
            m["a"], m["b"], m["tx_id"] = a, b, t
            m["heuristic"] = [HEURISTICS.index(x) for x in h]
        m.tofile(tmp / "merges.bin")
        manifest = {"addresses": len(self.parent), "clusters": self.cluster_count,
                    "merges": len(self.merges), "heuristics": list(self.heuristics),
                    "source": source_hash}
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _replace_dir(tmp, path)

    @classmethod
    def load(cls, path, addresses=None) -> "Clustering":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        parent = np.fromfile(path / "parent.bin", dtype="<i8")
        m = np.fromfile(path / "merges.bin", dtype=MERGE_DTYPE)
        merges = [(int(r["a"]), int(r["b"]), HEURISTICS[r["heuristic"]], int(r["tx_id"])) for r in m]
        return cls(parent, merges, tuple(manifest["heuristics"]), addresses)


def identity_clustering(n: int, addresses=None) -> Clustering:
    return Clustering(np.arange(n, dtype=np.int64), [], (), addresses)


def _input_address_groups(store: ChainStore):
    """Per non-coinbase tx: sorted distinct resolved input addresses."""
    ins = store.inputs
    has = ins["resolved_address_id"] != NONE
    if not has.any():
        return {}
    pairs = np.unique(np.stack([ins["tx_id"][has], ins["resolved_address_id"][has]], axis=1), axis=0)
    tx, addr = pairs[:, 0], pairs[:, 1]
    cuts = np.nonzero(np.diff(tx))[0] + 1
    starts = np.concatenate([[0], cuts])
    return {int(tx[s]): addr[s:e].tolist() for s, e in zip(starts, np.concatenate([cuts, [len(tx)]]))}


def multi_input_cluster(store: ChainStore, max_input_addresses: Optional[int] = None) -> Clustering:
    """Union all distinct input addresses of each non-coinbase transaction.

    ``max_input_addresses`` optionally skips transactions with more distinct
    input addresses than that (a crude CoinJoin guard; off by default).
    """
    uf = UnionFind(store.n_addresses)
    merges = []
    skipped = 0
    for tx_id, addrs in _input_address_groups(store).items():
        if len(addrs) < 2:
            continue
        if max_input_addresses is not None and len(addrs) > max_input_addresses:
            skipped += 1
            continue
        first = addrs[0]
        for other in addrs[1:]:
            if uf.union(first, other):
                merges.append((first, other, MULTI_INPUT, tx_id))
    if skipped:
        log.info("skipped %d transactions above %d input addresses", skipped, max_input_addresses)
    return Clustering(uf.canonical(), merges, (MULTI_INPUT,), store.address_index)


def change_candidates(store: ChainStore) -> dict:
    """tx_id -> output_id of the unique change output under the one-time rule.

    An output qualifies when its address is paid exactly once in the whole
    store, is not an input address of the same tx, and is not paid by any
    other output of the tx; the tx must have exactly one such output.
    """
    outs = store.outputs
    addr = outs["address_id"]
    uses = np.bincount(addr[addr != NONE], minlength=store.n_addresses)
    groups = _input_address_groups(store)
    txs = store.txs
    result = {}
    once = np.zeros(len(outs), dtype=bool)
    has = addr != NONE
    once[has] = uses[addr[has]] == 1
    cand_outputs = np.nonzero(once & ~txs["is_coinbase"][outs["tx_id"]])[0]
    by_tx = defaultdict(list)
    for o in cand_outputs.tolist():
        by_tx[int(outs["tx_id"][o])].append(o)
    for tx_id, cands in by_tx.items():
        in_addrs = groups.get(tx_id)
        if not in_addrs:
            continue
        in_set = set(in_addrs)
        lo = int(txs["out_start"][tx_id])
        tx_addrs = addr[lo:lo + int(txs["out_count"][tx_id])].tolist()
        ok = [o for o in cands
              if int(addr[o]) not in in_set and tx_addrs.count(int(addr[o])) == 1]
        if len(ok) == 1:
            result[tx_id] = ok[0]
    return result


def change_address_refine(store: ChainStore, base: Clustering) -> Clustering:
    """Merge each transaction's unique one-time change address into its input cluster."""
    uf = UnionFind(len(base.parent), base.parent)
    merges = list(base.merges)
    groups = _input_address_groups(store)
    addr = store.outputs["address_id"]
    for tx_id, o in sorted(change_candidates(store).items()):
        a = groups[tx_id][0]
        b = int(addr[o])
        if uf.union(a, b):
            merges.append((a, b, CHANGE, tx_id))
    heur = tuple(dict.fromkeys(base.heuristics + (CHANGE,)))
    return Clustering(uf.canonical(), merges, heur, base.addresses or store.address_index)


def cluster_addresses(store, heuristics=(MULTI_INPUT,), max_input_addresses=None) -> Clustering:
    unknown = set(heuristics) - set(HEURISTICS)
    if unknown:
        raise ValueError(f"unknown heuristics: {', '.join(sorted(unknown))}")
    if MULTI_INPUT in heuristics:
        c = multi_input_cluster(store, max_input_addresses)
    else:
        c = identity_clustering(store.n_addresses, store.address_index)
    if CHANGE in heuristics:
        c = change_address_refine(store, c)
    return c


def resolve_address(addresses: AddressIndex, address) -> int:
    """Address id for an AddressKey or a bare payload (pubkeys fold to P2PKH)."""
    if isinstance(address, AddressKey):
        key = address
        if key.kind == ScriptClass.PayToPubkey:
            key = AddressKey(ScriptClass.PayToPubkeyHash, wire.hash160(key.payload))
        found = addresses.lookup(key)
        if found is None:
            raise UnknownAddress(f"address {key} not in store")
        return found
    payload = bytes.fromhex(address) if isinstance(address, str) else bytes(address)
    if len(payload) in (33, 65):
        payload = wire.hash160(payload)
    hits = addresses.find_payload(payload)
    if not hits:
        raise UnknownAddress(f"address payload {payload.hex()} not in store")
    if len(hits) > 1:
        raise UnknownAddress(f"payload {payload.hex()} is ambiguous; give the address kind")
    return hits[0]


def cluster_of(clustering: Clustering, address) -> int:
    if clustering.addresses is None:
        raise UnknownAddress("clustering has no address index attached")
    return clustering.find(resolve_address(clustering.addresses, address))


@dataclass
class SeedTag:
    address_id: int
    label: str
    source: str


@dataclass
class TagSet:
    seeds: list = field(default_factory=list)  # SeedTag
    cluster_labels: dict = field(default_factory=dict)  # representative -> set of labels
    unknown: list = field(default_factory=list)  # (line, payload_hex, kind) not found in store

    def labels_of(self, clustering: Clustering, address_id: int) -> set:
        return set(self.cluster_labels.get(clustering.find(address_id), ()))

    def seed_labels(self) -> dict:
        """address_id -> smallest seed label, for vertex-level propagation."""
        out = {}
        for s in self.seeds:
            if s.address_id not in out or s.label < out[s.address_id]:
                out[s.address_id] = s.label
        return out

    def to_json(self) -> str:
        return json.dumps({
            "seeds": [[s.address_id, s.label, s.source] for s in self.seeds],
            "clusters": {str(k): sorted(v) for k, v in sorted(self.cluster_labels.items())},
            "unknown": self.unknown,
        }, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text) -> "TagSet":
        d = json.loads(text)
        return cls([SeedTag(*s) for s in d["seeds"]],
                   {int(k): set(v) for k, v in d["clusters"].items()},
                   [tuple(u) for u in d["unknown"]])


def read_seed_file(text) -> list:
    """Rows ``(line, payload_bytes, kind, label, source)`` from a seed CSV."""
    if hasattr(text, "read"):
        text = text.read()
    rows = []
    first = True
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if first and row[0].strip() == "address_payload_hex":
            first = False
            continue
        first = False
        if len(row) != 4:
            raise SchemaError(f"expected 4 columns, got {len(row)}", lineno)
        payload_hex, kind, label, source = (c.strip() for c in row)
        try:
            payload = bytes.fromhex(payload_hex)
        except ValueError:
            raise SchemaError(f"bad payload hex {payload_hex!r}", lineno) from None
        if not payload:
            raise SchemaError("empty payload", lineno)
        try:
            cls = ScriptClass.from_label(kind) if kind else None
        except ValueError as exc:
            raise SchemaError(str(exc), lineno) from None
        if not label:
            raise SchemaError("empty label", lineno)
        rows.append((lineno, payload, cls, label, source))
    return rows


def apply_seed_tags(clustering: Clustering, seeds) -> TagSet:
    """Label every cluster that contains a seeded address.

    ``seeds`` is seed-file text, a file object, or rows from
    :func:`read_seed_file`. Unknown addresses are collected, not fatal.
    """
    rows = seeds if isinstance(seeds, list) else read_seed_file(seeds)
    tags = TagSet()
    for lineno, payload, cls, label, source in rows:
        try:
            target = AddressKey(cls, payload) if cls is not None else payload
            aid = resolve_address(clustering.addresses, target)
        except UnknownAddress:
            tags.unknown.append((lineno, payload.hex(), cls.label if cls is not None else ""))
            continue
        tags.seeds.append(SeedTag(aid, label, source))
        tags.cluster_labels.setdefault(clustering.find(aid), set()).add(label)
    if tags.unknown:
        log.warning("%d seed addresses not found in store", len(tags.unknown))
    return tags


def cluster_size_distribution(clustering: Clustering) -> dict:
    """Exact histogram: cluster size -> number of clusters of that size."""
    per_cluster = np.bincount(clustering.parent, minlength=len(clustering.parent))
    sizes = per_cluster[per_cluster > 0]
    hist = Counter(sizes.tolist())
    return dict(sorted(hist.items()))


def _distinct_counts(vert, tx, n):
    if not len(vert):
        return np.zeros(n, dtype=np.int64)
    pairs = np.unique(np.stack([vert, tx], axis=1), axis=0)
    return np.bincount(pairs[:, 0], minlength=n)


def address_degrees(addr_graph=None, store: Optional[ChainStore] = None):
    """Per address: distinct txs paying it (in) and distinct txs it funds (out).

    From the store this is exact. From the address graph alone, payments by
    txs without a resolved input address (coinbase) leave no edge and are
    not counted.
    """
    if store is not None:
        outs, ins = store.outputs, store.inputs
        o = outs["address_id"] != NONE
        i = ins["resolved_address_id"] != NONE
        n = store.n_addresses
        return (_distinct_counts(outs["address_id"][o], outs["tx_id"][o], n),
                _distinct_counts(ins["resolved_address_id"][i], ins["tx_id"][i], n))
    e = addr_graph.edges
    n = addr_graph.vertex_count
    return _distinct_counts(e["dst"], e["tx_id"], n), _distinct_counts(e["src"], e["tx_id"], n)


def cluster_degree_stats(addr_graph, clustering: Clustering, cluster_id: int, store=None, degrees=None):
    """Mean per-address (in_degree, out_degree) over one cluster's members.

    Degrees count distinct transactions, so a tx paying an address twice
    counts once. Pass ``store`` for exact counts (see :func:`address_degrees`);
    ``degrees`` reuses a precomputed pair.
    """
    members = clustering.members(cluster_id)
    in_deg, out_deg = degrees or address_degrees(addr_graph, store)
    return float(in_deg[members].mean()), float(out_deg[members].mean())
