"""Hop-count shortest paths and forward reachability, optionally temporal.

Under ``temporal=True`` a walk may only use edges whose timestamps never
decrease along the walk. Both operations are level-synchronous sweeps over
the whole edge list, so each hop costs one vectorized pass.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import UnknownVertex

NEG = -1  # "arrived before any edge", and "infeasible" for latest-departure
POS = np.iinfo(np.int64).max


@dataclass
class Path:
    vertices: list
    edges: list

    def __len__(self):
        return len(self.edges)


def _check_vertex(graph, v):
    if not (0 <= int(v) < graph.vertex_count):
        raise UnknownVertex(f"vertex {v} not in {graph.kind.value} graph ({graph.vertex_count} vertices)")
    return int(v)


def _times(graph, temporal):
    e = graph.edges
    if temporal:
        return e["timestamp"].astype(np.int64)
    return np.zeros(len(e), dtype=np.int64)


def shortest_path(graph, src, dst, temporal=False) -> Optional[Path]:
    """Fewest-hop path from src to dst, or None when unreachable.

    Among shortest paths the vertex sequence is the lexicographically
    smallest; between parallel edges the earliest timestamp, then the
    smallest edge id, is taken.
    """
    src, dst = _check_vertex(graph, src), _check_vertex(graph, dst)
    if src == dst:
        return Path([src], [])
    n = graph.vertex_count
    s, d = graph.src, graph.dst
    ts = _times(graph, temporal)
    # latest[j][v]: latest arrival time at v from which dst is reachable in <= j hops
    cur = np.full(n, NEG, dtype=np.int64)
    cur[dst] = POS
    latest = [cur]
    while cur[src] == NEG:
        ok = ts <= cur[d]
        nxt = cur.copy()
        np.maximum.at(nxt, s[ok], ts[ok])
        if np.array_equal(nxt, cur):
            return None
        latest.append(nxt)
        cur = nxt

    hops = len(latest) - 1
    real = graph.edges["timestamp"].astype(np.int64)
    verts, eids = [src], []
    v, t = src, NEG
    for r in range(hops, 0, -1):
        nbr, eid = graph.out_edges(v)
        ets = ts[eid]
        ok = (ets >= t) & (ets <= latest[r - 1][nbr])
        nbr, eid, ets = nbr[ok], eid[ok], ets[ok]
        pick = np.lexsort((eid, real[eid], nbr))[0]
        v, t = int(nbr[pick]), int(ets[pick])
        verts.append(v)
        eids.append(int(eid[pick]))
    return Path(verts, eids)


def reachable_set(graph, src, max_hops=None, temporal=False) -> set:
    """Vertices reachable from src (src included) within max_hops hops."""
    src = _check_vertex(graph, src)
    n = graph.vertex_count
    s, d = graph.src, graph.dst
    ts = _times(graph, temporal)
    # arrive[v]: earliest arrival time at v over walks seen so far
    arrive = np.full(n, POS, dtype=np.int64)
    arrive[src] = NEG
    frontier = np.zeros(n, dtype=bool)
    frontier[src] = True
    hops = 0
    while frontier.any() and (max_hops is None or hops < max_hops):
        hops += 1
        ok = frontier[s] & (ts >= arrive[s])
        cand = np.full(n, POS, dtype=np.int64)
        np.minimum.at(cand, d[ok], ts[ok])
        frontier = cand < arrive
        arrive = np.minimum(arrive, cand)
    return set(np.nonzero(arrive < POS)[0].tolist())
