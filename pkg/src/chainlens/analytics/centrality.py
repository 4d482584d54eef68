"""Centrality measures over a Graph.

Iterative measures (PageRank, HITS, eigenvector) and the path-based ones
(betweenness, harmonic closeness) run on the simple projection: parallel
edges collapse to one, self-loops stay. degree_top_k counts multiplicity.
"""

import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from ..errors import EmptyGraph

SIMPLE = "simple projection (parallel edges collapsed)"
MULTI = "multigraph (parallel edges counted)"


@dataclass
class ScoreVector:
    kind: str
    scores: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)

    def top(self, k):
        order = np.lexsort((np.arange(len(self.scores)), -self.scores))[:k]
        return [(int(v), float(self.scores[v])) for v in order]

    def write_csv(self, fp, graph=None):
        """``vertex,score`` rows, scores with 17 significant digits."""
        fp.write("vertex,score\n")
        for v, s in enumerate(self.scores.tolist()):
            ext = graph.vertex_label(v) if graph is not None else v
            fp.write("%d,%.17g\n" % (ext, s))


def _check(graph):
    if graph.vertex_count == 0:
        raise EmptyGraph(f"{graph.kind.value} graph has no vertices")


def adjacency(graph, reverse=False) -> sp.csr_matrix:
    """0/1 CSR adjacency of the simple projection (row = source)."""
    n = graph.vertex_count
    indptr, nbr = graph.simple_projection(reverse)
    data = np.ones(len(nbr), dtype=np.float64)
    return sp.csr_matrix((data, nbr, indptr), shape=(n, n))


def pagerank(graph, damping=0.85, tolerance=1e-8, max_iter=200) -> ScoreVector:
    _check(graph)
    n = graph.vertex_count
    a = adjacency(graph)
    out = np.asarray(a.sum(axis=1)).ravel()
    dangling = out == 0
    inv = np.where(dangling, 0.0, 1.0 / np.maximum(out, 1))
    mt = (sp.diags(inv) @ a).T.tocsr()
    x = np.full(n, 1.0 / n)
    residual, it, converged = np.inf, 0, False
    while it < max_iter:
        it += 1
        nxt = damping * (mt @ x) + (damping * x[dangling].sum() + 1.0 - damping) / n
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - x).sum())
        x = nxt
        if residual < tolerance:
            converged = True
            break
    return ScoreVector(graph.kind.value, x, {
        "measure": "pagerank", "damping": damping, "tolerance": tolerance,
        "max_iter": max_iter, "iterations": it, "residual": residual,
        "outcome": "converged" if converged else "MaxIterations", "graph": SIMPLE,
    })


def _normalize(v):
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def hits(graph, tolerance=1e-8, max_iter=200):
    """(hubs, authorities), each L2-normalized; starts from uniform hubs."""
    _check(graph)
    n = graph.vertex_count
    a = adjacency(graph)
    at = a.T.tocsr()
    h = np.full(n, 1.0 / np.sqrt(n))
    auth = np.zeros(n)
    residual, it, converged = np.inf, 0, False
    while it < max_iter:
        it += 1
        new_a = _normalize(at @ h)
        new_h = _normalize(a @ new_a)
        residual = float(max(np.abs(new_h - h).sum(), np.abs(new_a - auth).sum()))
        h, auth = new_h, new_a
        if residual < tolerance:
            converged = True
            break
    meta = {"tolerance": tolerance, "max_iter": max_iter, "iterations": it,
            "residual": residual, "outcome": "converged" if converged else "MaxIterations",
            "graph": SIMPLE}
    return (ScoreVector(graph.kind.value, h, dict(meta, measure="hits-hub")),
            ScoreVector(graph.kind.value, auth, dict(meta, measure="hits-authority")))


def eigenvector_centrality(graph, tolerance=1e-8, max_iter=500) -> ScoreVector:
    """Dominant eigenvector of the in-edge adjacency, L2-normalized.

    Iterates x <- (A^T + I) x, which has the same eigenvectors as A^T but
    does not oscillate on bipartite graphs.
    """
    _check(graph)
    n = graph.vertex_count
    at = adjacency(graph).T.tocsr()
    x = np.full(n, 1.0 / np.sqrt(n))
    residual, it, converged = np.inf, 0, False
    while it < max_iter:
        it += 1
        nxt = _normalize(at @ x + x)
        residual = float(np.abs(nxt - x).sum())
        x = nxt
        if residual < tolerance * n:
            converged = True
            break
    return ScoreVector(graph.kind.value, x, {
        "measure": "eigenvector", "tolerance": tolerance, "max_iter": max_iter,
        "iterations": it, "residual": residual,
        "outcome": "converged" if converged else "NonConvergent", "graph": SIMPLE,
    })


def _adjacency_lists(graph):
    indptr, nbr = graph.simple_projection()
    nbr = nbr.tolist()
    ptr = indptr.tolist()
    return [nbr[ptr[v]:ptr[v + 1]] for v in range(graph.vertex_count)]


def sample_sources(n, k, seed=0) -> list:
    """k distinct source vertices drawn uniformly, returned in ascending order."""
    return sorted(random.Random(seed).sample(range(n), min(k, n)))


def betweenness(graph, sources=None) -> ScoreVector:
    """Brandes accumulation, directed and unweighted.

    With ``sources`` (see :func:`sample_sources`) only those sources are
    accumulated and scores are scaled by N/K. Sources are processed in
    ascending order so the float sums are reproducible.
    """
    _check(graph)
    n = graph.vertex_count
    adj = _adjacency_lists(graph)
    bc = [0.0] * n
    srcs = range(n) if sources is None else sorted(set(int(s) for s in sources))
    for s in srcs:
        order = []
        preds = [[] for _ in range(n)]
        sigma = [0] * n
        dist = [-1] * n
        sigma[s], dist[s] = 1, 0
        queue = [s]
        head = 0
        while head < len(queue):
            v = queue[head]
            head += 1
            order.append(v)
            dv = dist[v] + 1
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dv
                    queue.append(w)
                if dist[w] == dv:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                bc[w] += delta[w]
    scores = np.array(bc, dtype=np.float64)
    meta = {"measure": "betweenness", "normalized": False, "graph": SIMPLE, "exact": sources is None}
    if sources is not None:
        k = len(srcs)
        scores *= n / k if k else 0.0
        meta.update(sampled_sources=k, scale=f"N/K = {n}/{k}")
    return ScoreVector(graph.kind.value, scores, meta)


def bfs_distances(adj, s) -> list:
    dist = [-1] * len(adj)
    dist[s] = 0
    frontier = [s]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = d
                    nxt.append(w)
        frontier = nxt
    return dist


def closeness(graph) -> ScoreVector:
    """Harmonic closeness: sum of 1/d(v, u) over vertices u reachable from v.

    Each sum is computed exactly as a rational and rounded once, so the
    result does not depend on summation order.
    """
    _check(graph)
    n = graph.vertex_count
    adj = _adjacency_lists(graph)
    scores = np.zeros(n)
    for v in range(n):
        levels = {}
        for d in bfs_distances(adj, v):
            if d > 0:
                levels[d] = levels.get(d, 0) + 1
        scores[v] = float(sum((Fraction(c, d) for d, c in levels.items()), Fraction(0)))
    return ScoreVector(graph.kind.value, scores, {
        "measure": "closeness", "variant": "harmonic, outgoing distances", "graph": SIMPLE})


def degree_top_k(graph, direction="out", k=10) -> list:
    """Top-k (vertex, degree) by multigraph degree, ties to the smaller vertex id."""
    if direction not in ("in", "out"):
        raise ValueError("direction must be 'in' or 'out'")
    deg = graph.out_degree() if direction == "out" else graph.in_degree()
    order = np.lexsort((np.arange(len(deg)), -deg))[:max(k, 0)]
    return [(int(v), int(deg[v])) for v in order]
