"""Transaction, address and cluster graphs as compact CSR multigraphs.

Edges live in id order in property columns (``src``, ``dst``, ``value``,
``timestamp``, ``tx_id``). Forward and reverse adjacency are CSR arrays whose
rows are sorted by ``(neighbor, edge_id)``, so iteration order is fixed.

Vertex identity per kind:

* ``tx``: vertex = tx_id
* ``address``: vertex = address_id
* ``cluster``: vertex = dense index into ``labels``, the sorted cluster
  representatives (smallest address_id of each cluster)
"""

import enum
import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .store import NONE, ChainStore, _replace_dir

GRAPH_FORMAT_VERSION = 1

EDGE_DTYPE = np.dtype([("src", "<i8"), ("dst", "<i8"), ("value", "<u8"),
                       ("timestamp", "<u4"), ("tx_id", "<i8")])


class GraphKind(enum.Enum):
    TX = "tx"
    ADDRESS = "address"
    CLUSTER = "cluster"


def _csr(n, a, b, eid):
    order = np.lexsort((eid, b, a))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    return indptr, b[order], eid[order]


@dataclass
class Graph:
    kind: GraphKind
    vertex_count: int
    edges: np.ndarray  # EDGE_DTYPE, index = edge id
    fwd_indptr: np.ndarray
    fwd_nbr: np.ndarray
    fwd_eid: np.ndarray
    rev_indptr: np.ndarray
    rev_nbr: np.ndarray
    rev_eid: np.ndarray
    labels: Optional[np.ndarray] = None

    @classmethod
    def from_edges(cls, kind, vertex_count, src, dst, value=None, timestamp=None, tx_id=None, labels=None):
        m = len(src)
        edges = np.zeros(m, dtype=EDGE_DTYPE)
        edges["src"] = src
        edges["dst"] = dst
        if value is not None:
            edges["value"] = value
        if timestamp is not None:
            edges["timestamp"] = timestamp
        edges["tx_id"] = NONE if tx_id is None else tx_id
        s, d = edges["src"], edges["dst"]
        if m and (s.min() < 0 or d.min() < 0 or max(s.max(), d.max()) >= vertex_count):
            raise ValueError("edge endpoint outside vertex range")
        eid = np.arange(m, dtype=np.int64)
        fwd = _csr(vertex_count, s, d, eid)
        rev = _csr(vertex_count, d, s, eid)
        return cls(GraphKind(kind), int(vertex_count), edges, *fwd, *rev, labels=labels)

    @property
    def edge_count(self):
        return len(self.edges)

    @property
    def src(self):
        return self.edges["src"]

    @property
    def dst(self):
        return self.edges["dst"]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.fwd_indptr)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.rev_indptr)

    def out_edges(self, v):
        lo, hi = self.fwd_indptr[v], self.fwd_indptr[v + 1]
        return self.fwd_nbr[lo:hi], self.fwd_eid[lo:hi]

    def in_edges(self, v):
        lo, hi = self.rev_indptr[v], self.rev_indptr[v + 1]
        return self.rev_nbr[lo:hi], self.rev_eid[lo:hi]

    def simple_projection(self, reverse=False):
        """CSR ``(indptr, indices)`` with parallel edges collapsed.

        Self-loops are kept; only multiplicity is dropped.
        """
        indptr, nbr = (self.rev_indptr, self.rev_nbr) if reverse else (self.fwd_indptr, self.fwd_nbr)
        n = self.vertex_count
        row = np.repeat(np.arange(n), np.diff(indptr))
        keep = np.ones(len(nbr), dtype=bool)
        if len(nbr) > 1:
            keep[1:] = (row[1:] != row[:-1]) | (nbr[1:] != nbr[:-1])
        new_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(row[keep], minlength=n), out=new_ptr[1:])
        return new_ptr, nbr[keep]

    def vertex_label(self, v) -> int:
        """External id of vertex ``v`` (address/tx id, or cluster representative)."""
        return int(v if self.labels is None else self.labels[v])

    def vertex_of(self, ext_id) -> int:
        if self.labels is None:
            return int(ext_id)
        i = int(np.searchsorted(self.labels, ext_id))
        if i < len(self.labels) and self.labels[i] == ext_id:
            return i
        return -1

    # persistence

    def save(self, path, source_hash: str = ""):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        self.edges.tofile(tmp / "edges.bin")
        for name in ("fwd_indptr", "fwd_nbr", "fwd_eid", "rev_indptr", "rev_nbr", "rev_eid"):
            np.ascontiguousarray(getattr(self, name), dtype="<i8").tofile(tmp / f"{name}.bin")
        if self.labels is not None:
            np.ascontiguousarray(self.labels, dtype="<i8").tofile(tmp / "labels.bin")
        manifest = {
            "format_version": GRAPH_FORMAT_VERSION,
            "kind": self.kind.value,
            "vertex_count": self.vertex_count,
            "edge_count": self.edge_count,
            "has_labels": self.labels is not None,
            "source": source_hash,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _replace_dir(tmp, path)

    @classmethod
    def load(cls, path) -> "Graph":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        arrs = {name: np.fromfile(path / f"{name}.bin", dtype="<i8")
                for name in ("fwd_indptr", "fwd_nbr", "fwd_eid", "rev_indptr", "rev_nbr", "rev_eid")}
        labels = np.fromfile(path / "labels.bin", dtype="<i8") if manifest["has_labels"] else None
        edges = np.fromfile(path / "edges.bin", dtype=EDGE_DTYPE)
        return cls(GraphKind(manifest["kind"]), manifest["vertex_count"], edges, labels=labels, **arrs)

    def write_csv(self, fp):
        """Edge list ``src,dst,value,timestamp,tx_id`` using external vertex ids."""
        fp.write("src,dst,value,timestamp,tx_id\n")
        e = self.edges
        src, dst = e["src"], e["dst"]
        if self.labels is not None:
            src, dst = self.labels[src], self.labels[dst]
        for row in zip(src.tolist(), dst.tolist(), e["value"].tolist(),
                       e["timestamp"].tolist(), e["tx_id"].tolist()):
            fp.write("%d,%d,%d,%d,%d\n" % row)


def build_tx_graph(store: ChainStore) -> Graph:
    """One edge per spend link, creating tx -> spending tx, in spend order."""
    outs = store.outputs
    spent = np.nonzero(outs["spending_input"] != NONE)[0]
    inp = outs["spending_input"][spent]
    order = np.argsort(inp, kind="stable")
    spent, inp = spent[order], inp[order]
    dst = store.inputs["tx_id"][inp]
    return Graph.from_edges(GraphKind.TX, store.n_txs, outs["tx_id"][spent], dst,
                            outs["value"][spent], store.txs["timestamp"][dst], dst)


def build_address_graph(store: ChainStore) -> Graph:
    """Fan-out: each distinct input address -> each addressed output.

    Edges carry the output's full value; ordered by tx, output, input address.
    """
    txs, outs, ins = store.txs, store.outputs, store.inputs
    n_tx = store.n_txs
    has = ins["resolved_address_id"] != NONE
    pairs = np.unique(np.stack([ins["tx_id"][has], ins["resolved_address_id"][has]], axis=1), axis=0) \
        if has.any() else np.zeros((0, 2), dtype=np.int64)
    in_tx, in_addr = pairs[:, 0], pairs[:, 1]
    per_tx = np.bincount(in_tx, minlength=n_tx)
    first = np.cumsum(per_tx) - per_tx

    o_ids = np.nonzero(outs["address_id"] != NONE)[0]
    o_tx = outs["tx_id"][o_ids]
    reps = per_tx[o_tx]
    e_out = np.repeat(o_ids, reps)
    e_tx = np.repeat(o_tx, reps)
    offs = np.arange(len(e_out)) - np.repeat(np.cumsum(reps) - reps, reps)
    e_src = in_addr[first[e_tx] + offs]
    e_dst = outs["address_id"][e_out]
    return Graph.from_edges(GraphKind.ADDRESS, store.n_addresses, e_src, e_dst,
                            outs["value"][e_out], txs["timestamp"][e_tx], e_tx)


def build_cluster_graph(addr_graph: Graph, clustering) -> Graph:
    """Quotient of the address graph; parallel edges are kept."""
    reps = np.asarray(clustering.parent)
    if len(reps) != addr_graph.vertex_count:
        raise ValueError("clustering does not cover the address graph")
    labels = np.unique(reps)
    dense = np.searchsorted(labels, reps)
    e = addr_graph.edges
    return Graph.from_edges(GraphKind.CLUSTER, len(labels), dense[e["src"]], dense[e["dst"]],
                            e["value"], e["timestamp"], e["tx_id"], labels=labels)
