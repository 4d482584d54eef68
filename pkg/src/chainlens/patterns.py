"""Path templates over property graphs, and peeling-chain detection.

A template is a small text file, one predicate per line (grammar in
docs/pattern-format.md)::

    # three quick, roughly equal hops
    hops 3
    edge.value_tolerance 0.05
    edge.increasing_time true
    edge.max_delay 3600

Matches are simple paths found by depth-first search from each anchor (or
every vertex) in ascending id order, following out-edges in (neighbor,
edge id) order. The first edge of a path is the reference for
``value_tolerance``.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import PatternInvalid
from .store import NONE, ChainStore

VERTEX_SCOPES = ("start", "end", "inner", "vertex")
DEGREE_KEYS = ("min_in_degree", "max_in_degree", "min_out_degree", "max_out_degree")


@dataclass
class VertexPredicate:
    tag: Optional[str] = None
    min_in_degree: Optional[int] = None
    max_in_degree: Optional[int] = None
    min_out_degree: Optional[int] = None
    max_out_degree: Optional[int] = None

    def empty(self):
        return self.tag is None and all(getattr(self, k) is None for k in DEGREE_KEYS)

    def holds(self, v, indeg, outdeg, labels) -> bool:
        if self.tag is not None and self.tag not in labels.get(v, ()):
            return False
        i, o = int(indeg[v]), int(outdeg[v])
        return not ((self.min_in_degree is not None and i < self.min_in_degree)
                    or (self.max_in_degree is not None and i > self.max_in_degree)
                    or (self.min_out_degree is not None and o < self.min_out_degree)
                    or (self.max_out_degree is not None and o > self.max_out_degree))


@dataclass
class PathPattern:
    min_hops: int = 1
    max_hops: int = 1
    min_value: Optional[int] = None  # satoshis, inclusive
    max_value: Optional[int] = None
    value_tolerance: Optional[Fraction] = None  # |v - v_first| <= tol * v_first
    max_delay: Optional[int] = None  # 0 <= t_next - t_prev <= max_delay
    increasing_time: bool = False  # t_next > t_prev
    vertex: dict = field(default_factory=lambda: {s: VertexPredicate() for s in VERTEX_SCOPES})
    anchor: Optional[list] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.min_hops < 1:
            raise PatternInvalid("hops must be at least 1")
        if self.max_hops < self.min_hops:
            raise PatternInvalid(f"hop range {self.min_hops}..{self.max_hops} is empty")
        if self.min_value is not None and self.max_value is not None and self.min_value > self.max_value:
            raise PatternInvalid("edge.value lower bound exceeds upper bound")
        if self.value_tolerance is not None and self.value_tolerance < 0:
            raise PatternInvalid("edge.value_tolerance must be non-negative")
        if self.max_delay is not None and self.max_delay < 0:
            raise PatternInvalid("edge.max_delay must be non-negative")
        for scope, p in self.vertex.items():
            if scope not in VERTEX_SCOPES:
                raise PatternInvalid(f"unknown vertex scope {scope!r}")
            for lo, hi in (("min_in_degree", "max_in_degree"), ("min_out_degree", "max_out_degree")):
                a, b = getattr(p, lo), getattr(p, hi)
                if a is not None and b is not None and a > b:
                    raise PatternInvalid(f"{scope}.{lo} exceeds {scope}.{hi}")

    def uses_tags(self):
        return any(p.tag is not None for p in self.vertex.values())

    def edge_ok(self, value, ts, first_value, prev_ts) -> bool:
        """Edge predicates for one hop; ``prev_ts`` is None on the first hop."""
        if self.min_value is not None and value < self.min_value:
            return False
        if self.max_value is not None and value > self.max_value:
            return False
        if first_value is not None and self.value_tolerance is not None:
            tol = self.value_tolerance
            if abs(value - first_value) * tol.denominator > tol.numerator * first_value:
                return False
        if prev_ts is not None:
            if self.increasing_time and ts <= prev_ts:
                return False
            if self.max_delay is not None and not (0 <= ts - prev_ts <= self.max_delay):
                return False
        return True


def _parse_int(text, key, line):
    try:
        return int(text)
    except ValueError:
        raise PatternInvalid(f"line {line}: {key} needs an integer, got {text!r}") from None


def _parse_range(text, key, line):
    """``N``, ``A..B``, ``A..`` or ``..B``."""
    if ".." not in text:
        v = _parse_int(text, key, line)
        return v, v
    lo, hi = text.split("..", 1)
    return (_parse_int(lo, key, line) if lo.strip() else None,
            _parse_int(hi, key, line) if hi.strip() else None)


def parse_pattern(text) -> PathPattern:
    if hasattr(text, "read"):
        text = text.read()
    kw = {"vertex": {s: VertexPredicate() for s in VERTEX_SCOPES}}
    seen = set()
    for line, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split(None, 1)
        if len(parts) != 2:
            raise PatternInvalid(f"line {line}: expected '<key> <value>'")
        key, val = parts[0], parts[1].strip()
        if key in seen:
            raise PatternInvalid(f"line {line}: {key} given twice")
        seen.add(key)
        if key == "hops":
            lo, hi = _parse_range(val, key, line)
            if lo is None or hi is None:
                raise PatternInvalid(f"line {line}: hops needs both bounds")
            kw["min_hops"], kw["max_hops"] = lo, hi
        elif key == "edge.value":
            kw["min_value"], kw["max_value"] = _parse_range(val, key, line)
        elif key == "edge.value_tolerance":
            try:
                kw["value_tolerance"] = Fraction(val)
            except (ValueError, ZeroDivisionError):
                raise PatternInvalid(f"line {line}: bad tolerance {val!r}") from None
        elif key == "edge.max_delay":
            kw["max_delay"] = _parse_int(val, key, line)
        elif key == "edge.increasing_time":
            if val.lower() not in ("true", "false"):
                raise PatternInvalid(f"line {line}: edge.increasing_time is true or false")
            kw["increasing_time"] = val.lower() == "true"
        elif key == "anchor":
            kw["anchor"] = [_parse_int(v.strip(), key, line) for v in val.split(",") if v.strip()]
        elif "." in key and key.split(".", 1)[0] in VERTEX_SCOPES:
            scope, attr = key.split(".", 1)
            pred = kw["vertex"][scope]
            if attr == "tag":
                pred.tag = val
            elif attr in DEGREE_KEYS:
                setattr(pred, attr, _parse_int(val, key, line))
            else:
                raise PatternInvalid(f"line {line}: unknown vertex predicate {key!r}")
        else:
            raise PatternInvalid(f"line {line}: unknown key {key!r}")
    return PathPattern(**kw)


@dataclass
class Match:
    vertices: list
    edges: list
    bindings: dict = field(default_factory=dict)


def match_path_pattern(graph, pattern: PathPattern, limit=None, labels=None) -> list:
    """All simple paths satisfying ``pattern``, in search order, up to ``limit``.

    ``labels`` maps vertex -> set of tag labels; required when the pattern
    has tag predicates.
    """
    pattern.validate()
    if pattern.uses_tags() and labels is None:
        raise PatternInvalid("pattern has tag predicates but no tags were supplied")
    labels = labels or {}
    n = graph.vertex_count
    indeg, outdeg = graph.in_degree(), graph.out_degree()
    ptr = graph.fwd_indptr.tolist()
    nbr = graph.fwd_nbr.tolist()
    eids = graph.fwd_eid.tolist()
    value = graph.edges["value"].tolist()
    stamp = graph.edges["timestamp"].tolist()
    pv = {s: (None if p.empty() else p) for s, p in pattern.vertex.items()}

    def vok(scope, v):
        p = pv[scope]
        return p is None or p.holds(v, indeg, outdeg, labels)

    if pattern.anchor is not None:
        starts = sorted({int(a) for a in pattern.anchor if 0 <= int(a) < n})
    else:
        starts = range(n)
    out = []
    lo, hi = pattern.min_hops, pattern.max_hops

    def emit(path, edges):
        vals = [value[e] for e in edges]
        ts = [stamp[e] for e in edges]
        b = {"hops": len(edges), "values": vals, "timestamps": ts,
             "delays": [b - a for a, b in zip(ts, ts[1:])]}
        if pattern.value_tolerance is not None:
            b["max_deviation"] = str(max(Fraction(abs(v - vals[0]), vals[0]) if vals[0] else Fraction(0)
                                         for v in vals))
        tagged = {s: p.tag for s, p in pattern.vertex.items() if p.tag is not None}
        if tagged:
            b["tags"] = tagged
        degs = {s: [(int(indeg[v]), int(outdeg[v])) for v in
                    ({"start": path[:1], "end": path[-1:], "inner": path[1:-1], "vertex": path}[s])]
                for s, p in pattern.vertex.items()
                if any(getattr(p, k) is not None for k in DEGREE_KEYS)}
        if degs:
            b["degrees"] = degs
        out.append(Match(list(path), list(edges), b))

    for s in starts:
        if not (vok("start", s) and vok("vertex", s)):
            continue
        path, edges = [s], []
        on_path = {s}
        # stack of iterators: position into the out-edge row of path[-1]
        stack = [ptr[s]]
        while stack:
            if limit is not None and len(out) >= limit:
                return out
            v = path[-1]
            i = stack[-1]
            if i >= ptr[v + 1] or len(edges) >= hi:
                stack.pop()
                on_path.discard(path.pop())
                if edges:
                    edges.pop()
                continue
            stack[-1] = i + 1
            w, e = nbr[i], eids[i]
            if w in on_path:
                continue
            if not pattern.edge_ok(value[e], stamp[e], value[edges[0]] if edges else None,
                                   stamp[edges[-1]] if edges else None):
                continue
            if not vok("vertex", w):
                continue
            # v becomes an inner vertex once the path extends past it
            if len(path) > 1 and not vok("inner", v):
                continue
            path.append(w)
            edges.append(e)
            on_path.add(w)
            stack.append(ptr[w])
            if len(edges) >= lo and vok("end", w):
                emit(path, edges)
                if limit is not None and len(out) >= limit:
                    return out
    return out


def find_peeling_chains(store: ChainStore, min_length=3) -> list:
    """Maximal peeling chains of at least ``min_length`` txs, as tx_id lists.

    A link t -> u needs both txs to have exactly two outputs and u to spend
    exactly one of t's outputs. A tx with several successors continues into
    the one spending its larger output (smaller tx_id on ties); a tx with
    several chosen predecessors keeps only the smallest one.
    """
    txs, outs, ins = store.txs, store.outputs, store.inputs
    two = txs["out_count"] == 2
    spent = outs["spending_input"] != NONE
    o = np.nonzero(spent & two[outs["tx_id"]])[0]
    t = outs["tx_id"][o]
    u = ins["tx_id"][outs["spending_input"][o]]
    keep = two[u]
    o, t, u = o[keep], t[keep], u[keep]
    val = outs["value"][o]
    pair_count = {}
    for a, b in zip(t.tolist(), u.tolist()):
        pair_count[(a, b)] = pair_count.get((a, b), 0) + 1
    succ = {}
    for a, b, v in zip(t.tolist(), u.tolist(), val.tolist()):
        if pair_count[(a, b)] != 1:
            continue
        best = succ.get(a)
        if best is None or (v, -b) > (best[1], -best[0]):
            succ[a] = (b, v)
    pred = {}
    for a in sorted(succ):
        b = succ[a][0]
        if b not in pred:
            pred[b] = a
    nxt = {a: b for b, a in pred.items()}
    chains = []
    for a in sorted(nxt):
        if a in pred:
            continue
        chain = [a]
        while chain[-1] in nxt:
            chain.append(nxt[chain[-1]])
        if len(chain) >= min_length:
            chains.append(chain)
    return chains
