"""Strongly connected components and seeded label propagation."""

from collections import Counter

import numpy as np


def strongly_connected_components(graph) -> np.ndarray:
    """Component number per vertex (iterative Tarjan).

    Components are numbered 0, 1, ... in order of their smallest vertex id.
    """
    n = graph.vertex_count
    indptr, nbr = graph.simple_projection()
    ptr, nbr = indptr.tolist(), nbr.tolist()
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack = []
    comp = [-1] * n
    counter = 0
    ncomp = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, ptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            if i < ptr[v + 1]:
                work[-1] = (v, i + 1)
                w = nbr[i]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, ptr[w]))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work and low[v] < low[work[-1][0]]:
                low[work[-1][0]] = low[v]
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = ncomp
                    if w == v:
                        break
                ncomp += 1
    comp = np.array(comp, dtype=np.int64)
    if n == 0:
        return comp
    # renumber by smallest member
    first = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    rank = np.empty(ncomp, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(ncomp)
    return rank[comp]


def component_sets(comp: np.ndarray) -> list:
    """Partition as a list of sorted vertex lists, in component order."""
    order = np.argsort(comp, kind="stable")
    cuts = np.nonzero(np.diff(comp[order]))[0] + 1
    return [part.tolist() for part in np.split(order, cuts)] if len(comp) else []


def _seed_map(graph, seeds) -> dict:
    """Vertex -> label from a dict or a TagSet (address or cluster graphs)."""
    if isinstance(seeds, dict):
        return {int(v): str(lab) for v, lab in seeds.items()}
    kind = graph.kind.value
    if kind == "address":
        return seeds.seed_labels()
    if kind == "cluster":
        out = {}
        for rep, labels in seeds.cluster_labels.items():
            v = graph.vertex_of(rep)
            if v >= 0 and labels:
                out[v] = min(labels)
        return out
    raise ValueError("tag seeds apply to address or cluster graphs; pass a dict for tx graphs")


def propagate_labels(graph, seeds, max_iters=10):
    """Spread labels forward along edges, one synchronous round at a time.

    An unlabeled vertex takes the most common label among its distinct
    labeled in-neighbors, ties going to the lexicographically smallest
    label. Labeled vertices, seeds included, keep their label. Returns
    ``(labels, rounds)`` with ``labels`` a dict vertex -> label.
    """
    labels = _seed_map(graph, seeds)
    indptr, nbr = graph.simple_projection(reverse=True)
    ptr, nbr = indptr.tolist(), nbr.tolist()
    fptr, fnbr = graph.simple_projection()
    rounds = 0
    frontier = set(labels)
    while rounds < max_iters and frontier:
        # only out-neighbors of newly labeled vertices can change
        cand = set()
        for u in frontier:
            cand.update(fnbr[fptr[u]:fptr[u + 1]].tolist())
        update = {}
        for v in sorted(cand):
            if v in labels:
                continue
            votes = Counter(labels[u] for u in nbr[ptr[v]:ptr[v + 1]] if u in labels)
            if votes:
                best = max(votes.values())
                update[v] = min(lab for lab, c in votes.items() if c == best)
        if not update:
            break
        rounds += 1
        labels.update(update)
        frontier = set(update)
    return labels, rounds
