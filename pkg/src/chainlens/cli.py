"""Command-line entry point: ``chainlens <command> ...``.

Every stage reads and writes one data directory (``--data`` or
``$CHAINLENS_DATA``)::

    store/            columnar chain tables (ingest)
    graphs/<kind>/    CSR graphs (graph)
    clusters/         finalized clustering (cluster run)
    tags.json         seed tags (tag)
    stages.json       input fingerprint and output hash per completed stage

Exit status: 0 success, 1 data error (``error: <ErrorName>: ...``), 2 usage.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional

from . import __version__, analytics, clustering, graph, ingest, patterns
from .errors import ChainLensError, NotBuilt, StoreLocked, UnknownVertex
from .fixtures import MAINNET_MAGIC
from .graph import Graph, GraphKind
from .model import AddressKey, ScriptClass
from .store import ChainStore, manifest_hash

log = logging.getLogger("chainlens")

BETWEENNESS_EXACT_LIMIT = 200_000
GRAPH_KINDS = [k.value for k in GraphKind]
FLOAT = "%.17g"


class UsageError(Exception):
    pass


@dataclass
class Config:
    data_dir: Path
    network_magic: bytes = MAINNET_MAGIC
    height_limit: Optional[int] = None
    heuristics: tuple = (clustering.MULTI_INPUT,)
    rates_path: Optional[Path] = None
    tags_path: Optional[Path] = None
    workers: int = 1
    quiet: bool = False
    progress: bool = False

    def __post_init__(self):
        if self.height_limit is not None and self.height_limit < 0:
            raise UsageError("--height-limit must be >= 0")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if len(self.network_magic) != 4:
            raise UsageError("--magic must be 4 bytes of hex")
        for p in (self.rates_path, self.tags_path):
            if p is not None and not p.is_file():
                raise UsageError(f"no such file: {p}")
        unknown = set(self.heuristics) - set(clustering.HEURISTICS)
        if unknown:
            raise UsageError(f"unknown heuristic(s): {', '.join(sorted(unknown))}")

    # layout

    @property
    def store_dir(self):
        return self.data_dir / "store"

    def graph_dir(self, kind):
        return self.data_dir / "graphs" / kind

    @property
    def clusters_dir(self):
        return self.data_dir / "clusters"

    @property
    def tags_file(self):
        return self.data_dir / "tags.json"

    @property
    def stages_file(self):
        return self.data_dir / "stages.json"


# stage bookkeeping

def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stages(cfg):
    if cfg.stages_file.exists():
        return json.loads(cfg.stages_file.read_text())
    return {}


def _record_stage(cfg, name, key, output):
    stages = _stages(cfg)
    stages[name] = {"input": key, "output": output}
    tmp = cfg.stages_file.with_name("stages.json.tmp")
    tmp.write_text(json.dumps(stages, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, cfg.stages_file)


def _up_to_date(cfg, name, key, path) -> bool:
    return _stages(cfg).get(name, {}).get("input") == key and Path(path).exists()


class Lock:
    """Exclusive write lock on the data directory (``.lock`` holding the pid)."""

    def __init__(self, data_dir):
        self.path = Path(data_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise StoreLocked(f"{self.path} is held by another process") from None
            with os.fdopen(fd, "w") as f:
                f.write(str(os.getpid()))
            return self
        raise StoreLocked(f"could not acquire {self.path}")

    def _stale(self):
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return False
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# loading built stages

def _store_hash(cfg):
    if not (cfg.store_dir / "manifest.json").exists():
        raise NotBuilt(f"no store in {cfg.data_dir}; run 'ingest' first")
    return manifest_hash(cfg.store_dir)


def load_store(cfg) -> ChainStore:
    _store_hash(cfg)
    return ChainStore.load(cfg.store_dir)


def load_clustering(cfg, store=None) -> clustering.Clustering:
    if not (cfg.clusters_dir / "manifest.json").exists():
        raise NotBuilt("no clustering; run 'cluster run' first")
    addresses = store.address_index if store is not None else None
    return clustering.Clustering.load(cfg.clusters_dir, addresses)


def load_graph(cfg, kind) -> Graph:
    if not (cfg.graph_dir(kind) / "manifest.json").exists():
        raise NotBuilt(f"no {kind} graph; run 'graph --kind {kind}' first")
    return Graph.load(cfg.graph_dir(kind))


def load_tags(cfg) -> clustering.TagSet:
    if not cfg.tags_file.exists():
        raise NotBuilt("no tags; run 'tag --seeds FILE' first")
    return clustering.TagSet.from_json(cfg.tags_file.read_text())


# output helpers

def _say(cfg, text):
    if not cfg.quiet:
        print(text)


def _write_output(cfg, out, writer, command, params):
    """Write a CSV via ``writer(fp)`` plus its ``.meta.json`` sidecar."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", newline="") as fp:
        writer(fp)
    os.replace(tmp, out)
    meta = {"command": command, "parameters": params,
            "store_manifest_sha256": _store_hash(cfg), "version": __version__}
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _say(cfg, f"wrote {out}")


def _vertex(g: Graph, store: ChainStore, text: str, clusters=None) -> int:
    """Parse a vertex reference for graph ``g``.

    tx graph: tx id or 64-hex txid; address graph: address id or payload
    hex; cluster graph: representative address id or a member's payload hex.
    """
    text = text.strip()
    if text.isdigit() and len(text) < 20:
        ext = int(text)
    elif g.kind == GraphKind.TX:
        found = store.tx_index.lookup(text)
        if found is None:
            raise UnknownVertex(f"txid {text} not in store")
        ext = found
    else:
        ext = clustering.resolve_address(store.address_index, text)
        if g.kind == GraphKind.CLUSTER:
            ext = clusters.find(ext)
    v = g.vertex_of(ext)
    if not (0 <= v < g.vertex_count):
        raise UnknownVertex(f"{text} is not a vertex of the {g.kind.value} graph")
    return v


# commands

def cmd_ingest(cfg, args):
    if bool(args.fixtures) == bool(args.blocks):
        raise UsageError("give exactly one of --fixtures or --blocks")
    sources = [Path(p) for p in (args.blocks or [args.fixtures])]
    for p in sources:
        if not p.is_file():
            raise UsageError(f"no such file: {p}")
    key = _fingerprint({"sources": [[str(p), _file_digest(p)] for p in sources],
                        "kind": "fixture" if args.fixtures else "blocks",
                        "magic": cfg.network_magic.hex(), "height_limit": cfg.height_limit})
    if _up_to_date(cfg, "ingest", key, cfg.store_dir / "manifest.json"):
        _say(cfg, "ingest: up to date")
        return 0
    progress = (lambda msg: print(msg, file=sys.stderr)) if cfg.progress else None
    with Lock(cfg.data_dir):
        if args.fixtures:
            with open(sources[0]) as f:
                store = ingest.ingest_fixture(f, cfg.height_limit)
        else:
            store = ingest.ingest_block_files(sources, cfg.data_dir / "cache", cfg.network_magic,
                                              cfg.height_limit, cfg.workers, progress)
        h = store.save(cfg.store_dir)
        _record_stage(cfg, "ingest", key, h)
    s = store.summary()
    _say(cfg, "ingested: " + ", ".join(f"{k}={v}" for k, v in s.items()))
    return 0


def cmd_graph(cfg, args):
    kinds = GRAPH_KINDS if args.kind == "all" else [args.kind]
    store = None
    for kind in kinds:
        src = {"store": _store_hash(cfg)}
        if kind == "cluster":
            if args.kind == "all" and not (cfg.clusters_dir / "manifest.json").exists():
                _say(cfg, "graph cluster: skipped, no clustering yet")
                continue
            src["clusters"] = _stages(cfg).get("cluster", {}).get("output")
            load_clustering(cfg)
        stage = f"graph.{kind}"
        key = _fingerprint(src)
        if _up_to_date(cfg, stage, key, cfg.graph_dir(kind) / "manifest.json"):
            _say(cfg, f"graph {kind}: up to date")
            continue
        store = store or load_store(cfg)
        with Lock(cfg.data_dir):
            if kind == "tx":
                g = graph.build_tx_graph(store)
            elif kind == "address":
                g = graph.build_address_graph(store)
            else:
                addr = graph.build_address_graph(store)
                g = graph.build_cluster_graph(addr, load_clustering(cfg, store))
            g.save(cfg.graph_dir(kind), key)
            _record_stage(cfg, stage, key, manifest_hash(cfg.graph_dir(kind)))
        _say(cfg, f"graph {kind}: {g.vertex_count} vertices, {g.edge_count} edges")
    return 0


def _address_row(store, a):
    k = store.address_index.key(a)
    return {"address_id": int(a), "kind": k.kind.label, "payload": k.payload.hex()}


def cmd_cluster(cfg, args):
    if args.action == "run":
        key = _fingerprint({"store": _store_hash(cfg), "heuristics": list(cfg.heuristics),
                            "max_input_addresses": args.max_input_addresses})
        if _up_to_date(cfg, "cluster", key, cfg.clusters_dir / "manifest.json"):
            _say(cfg, "cluster: up to date")
            return 0
        store = load_store(cfg)
        with Lock(cfg.data_dir):
            c = clustering.cluster_addresses(store, cfg.heuristics, args.max_input_addresses)
            c.save(cfg.clusters_dir, key)
            _record_stage(cfg, "cluster", key, manifest_hash(cfg.clusters_dir))
        by = {h: sum(1 for m in c.merges if m[2] == h) for h in c.heuristics}
        _say(cfg, f"clusters: {c.cluster_count} over {len(c)} addresses; merges "
             + ", ".join(f"{h}={n}" for h, n in by.items()))
        return 0

    store = load_store(cfg)
    c = load_clustering(cfg, store)
    if args.action == "stats":
        hist = clustering.cluster_size_distribution(c)
        if args.histogram:
            def write(fp):
                fp.write("size,clusters\n")
                for size, count in hist.items():
                    fp.write(f"{size},{count}\n")
            _write_output(cfg, args.histogram, write, "cluster stats", {"histogram": True})
        largest = sorted(hist)[-1] if hist else 0
        _say(cfg, f"clusters: {c.cluster_count}; addresses: {len(c)}; largest: {largest}")
        if args.cluster is not None or args.address:
            cid = args.cluster if args.cluster is not None else clustering.cluster_of(c, _address_arg(args))
            din, dout = clustering.cluster_degree_stats(None, c, cid, store)
            _say(cfg, f"cluster {cid}: size {len(c.members(cid))}, "
                 f"avg in-degree {din:.6f}, avg out-degree {dout:.6f}")
        return 0

    # inspect
    if not args.address and args.cluster is None:
        raise UsageError("cluster inspect needs --address or --cluster")
    cid = args.cluster if args.cluster is not None else clustering.cluster_of(c, _address_arg(args))
    members = c.members(cid)
    labels = sorted(load_tags(cfg).cluster_labels.get(int(cid), ())) if cfg.tags_file.exists() else []
    report = {"cluster": int(cid), "size": len(members), "labels": labels,
              "members": [_address_row(store, a) for a in members.tolist()]}
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"cluster {cid}  size {len(members)}  labels {','.join(labels) or '-'}")
        for m in report["members"]:
            print(f"  {m['address_id']}\t{m['kind']}\t{m['payload']}")
    return 0


def _address_arg(args):
    payload = bytes.fromhex(args.address)
    if args.address_kind:
        return AddressKey(ScriptClass.from_label(args.address_kind), payload)
    return payload


def cmd_tag(cfg, args):
    seeds = Path(args.seeds) if args.seeds else cfg.tags_path
    if seeds is None:
        raise UsageError("tag needs --seeds FILE")
    if not seeds.is_file():
        raise UsageError(f"no such file: {seeds}")
    store = load_store(cfg)
    c = load_clustering(cfg, store)
    tags = clustering.apply_seed_tags(c, seeds.read_text())
    with Lock(cfg.data_dir):
        cfg.tags_file.write_text(tags.to_json())
    for line, payload, kind in tags.unknown:
        print(f"warning: line {line}: address {payload} not in store", file=sys.stderr)
    _say(cfg, f"tagged {len(tags.cluster_labels)} clusters from {len(tags.seeds)} seeds")
    if args.propagate is not None:
        g = load_graph(cfg, args.graph)
        labels, rounds = analytics.propagate_labels(g, tags, args.propagate)
        _say(cfg, f"propagation: {len(labels)} labeled vertices after {rounds} rounds")
        if args.out:
            def write(fp):
                fp.write("vertex,label\n")
                for v in sorted(labels):
                    fp.write(f"{g.vertex_label(v)},{labels[v]}\n")
            _write_output(cfg, args.out, write, "tag", {"graph": args.graph, "propagate": args.propagate})
    return 0


def cmd_centrality(cfg, args):
    g = load_graph(cfg, args.graph)
    m = args.measure
    params = {"measure": m, "graph": args.graph}
    if m == "pagerank":
        sv = analytics.pagerank(g, args.damping, args.tolerance, args.max_iter or 200)
        params.update(damping=args.damping, tolerance=args.tolerance)
    elif m == "hits":
        hub, auth = analytics.hits(g, args.tolerance, args.max_iter or 200)
        sv = hub
    elif m == "eigenvector":
        sv = analytics.eigenvector_centrality(g, args.tolerance, args.max_iter or 500)
    elif m == "betweenness":
        sources = None
        if args.sample_sources:
            sources = analytics.sample_sources(g.vertex_count, args.sample_sources, args.seed)
            params.update(sample_sources=args.sample_sources, seed=args.seed)
        elif g.vertex_count > BETWEENNESS_EXACT_LIMIT:
            raise UsageError(f"exact betweenness is limited to {BETWEENNESS_EXACT_LIMIT} vertices; "
                             "pass --sample-sources K")
        sv = analytics.betweenness(g, sources)
    elif m == "closeness":
        sv = analytics.closeness(g)
    else:
        top = analytics.degree_top_k(g, args.direction, args.top or g.vertex_count)
        params.update(direction=args.direction, counts="multigraph (parallel edges counted)")

        def write(fp):
            fp.write("vertex,degree\n")
            for v, d in top:
                fp.write(f"{g.vertex_label(v)},{d}\n")
        if args.out:
            _write_output(cfg, args.out, write, "centrality", params)
        for v, d in top[:10]:
            _say(cfg, f"{g.vertex_label(v)}\t{d}")
        return 0

    params["metadata"] = sv.metadata
    if args.out:
        if m == "hits":
            def write(fp):
                fp.write("vertex,hub,authority\n")
                for v, (h, a) in enumerate(zip(hub.scores.tolist(), auth.scores.tolist())):
                    fp.write(("%d," + FLOAT + "," + FLOAT + "\n") % (g.vertex_label(v), h, a))
        else:
            def write(fp):
                sv.write_csv(fp, g)
        _write_output(cfg, args.out, write, "centrality", params)
    meta = sv.metadata
    if "outcome" in meta and meta["outcome"] != "converged":
        print(f"warning: {m} {meta['outcome']} after {meta['iterations']} iterations "
              f"(residual {meta['residual']:.3g})", file=sys.stderr)
    for v, s in sv.top(args.top or 10):
        _say(cfg, ("%d\t" + FLOAT) % (g.vertex_label(v), s))
    return 0


def cmd_path(cfg, args):
    store = load_store(cfg)
    clusters = load_clustering(cfg, store) if args.graph == "cluster" else None
    g = load_graph(cfg, args.graph)
    src = _vertex(g, store, args.src, clusters)
    if args.reachable:
        reach = analytics.reachable_set(g, src, args.max_hops, args.temporal)
        ids = sorted(g.vertex_label(v) for v in reach)
        if args.json:
            print(json.dumps({"from": g.vertex_label(src), "reachable": ids}))
        else:
            _say(cfg, f"{len(ids)} reachable vertices")
            print(" ".join(map(str, ids)))
        return 0
    if args.dst is None:
        raise UsageError("path needs --to (or --reachable)")
    dst = _vertex(g, store, args.dst, clusters)
    p = analytics.shortest_path(g, src, dst, args.temporal)
    if p is None:
        if args.json:
            print(json.dumps({"path": None}))
        else:
            print("no path")
        return 0
    verts = [g.vertex_label(v) for v in p.vertices]
    if args.json:
        print(json.dumps({"path": verts, "edges": p.edges,
                          "timestamps": [int(g.edges["timestamp"][e]) for e in p.edges]}))
    else:
        print(" -> ".join(map(str, verts)))
        _say(cfg, f"{len(p)} hops via edges {','.join(map(str, p.edges))}")
    return 0


def cmd_scc(cfg, args):
    g = load_graph(cfg, args.graph)
    comp = analytics.strongly_connected_components(g)
    sizes = sorted((len(s) for s in analytics.component_sets(comp)), reverse=True)
    _say(cfg, f"{len(sizes)} strongly connected components; largest sizes {sizes[:5]}")
    if args.out:
        def write(fp):
            fp.write("vertex,component\n")
            for v, c in enumerate(comp.tolist()):
                fp.write(f"{g.vertex_label(v)},{c}\n")
        _write_output(cfg, args.out, write, "scc", {"graph": args.graph})
    return 0


def _rates(cfg, required=False):
    if cfg.rates_path is None:
        if required:
            raise UsageError("--rates FILE is required")
        return None
    return analytics.read_rates(cfg.rates_path.read_text())


def build_series(cfg, store, which, bucket):
    if which == "fees":
        return analytics.fee_series(store, bucket, _rates(cfg))
    if which == "velocity":
        return analytics.velocity_series(store, bucket)
    return analytics.address_type_series(store, bucket)


def cmd_stats(cfg, args):
    store = load_store(cfg)
    params = {"series": args.series, "bucket": args.bucket,
              "rates": _file_digest(cfg.rates_path) if cfg.rates_path else None}
    if args.series == "high-value":
        try:
            threshold = Decimal(args.threshold)
        except InvalidOperation:
            raise UsageError(f"bad --threshold {args.threshold!r}") from None
        rows = analytics.high_value_transactions(store, _rates(cfg, True), threshold)
        params["threshold_usd"] = str(threshold)

        def write(fp):
            fp.write("tx_id,txid,fee_sats,fee_usd,date\n")
            for t, fee, usd, day in rows:
                fp.write(f"{t},{store.tx_index.hash_of(t)[::-1].hex()},{fee},{usd},{day.isoformat()}\n")
        _say(cfg, f"{len(rows)} transactions with fee above {threshold} USD")
    else:
        ts = build_series(cfg, store, args.series, args.bucket)
        params["metadata"] = ts.metadata
        write = ts.write_csv
        _say(cfg, f"{args.series}: {len(ts.rows)} {args.bucket} buckets")
    if args.out:
        _write_output(cfg, args.out, write, "stats", params)
    elif not cfg.quiet:
        write(sys.stdout)
    return 0


def cmd_match(cfg, args):
    store = load_store(cfg)
    if args.peeling_chains:
        chains = patterns.find_peeling_chains(store, args.min_length)

        def write(fp):
            fp.write("chain,length,tx_ids,txids\n")
            for i, ch in enumerate(chains):
                hexes = ";".join(store.tx_index.hash_of(t)[::-1].hex() for t in ch)
                fp.write(f"{i},{len(ch)},{';'.join(map(str, ch))},{hexes}\n")
        _say(cfg, f"{len(chains)} peeling chains of length >= {args.min_length}")
        if args.out:
            _write_output(cfg, args.out, write, "match", {"peeling_chains": True, "min_length": args.min_length})
        return 0
    if not args.pattern:
        raise UsageError("match needs --pattern FILE or --peeling-chains")
    pattern = patterns.parse_pattern(Path(args.pattern).read_text())
    g = load_graph(cfg, args.graph)
    labels = None
    if pattern.uses_tags():
        labels = _vertex_tags(cfg, store, g)
    found = patterns.match_path_pattern(g, pattern, args.limit, labels)

    def write(fp):
        fp.write("match,vertices,edges,witness\n")
        for i, m in enumerate(found):
            verts = ";".join(str(g.vertex_label(v)) for v in m.vertices)
            edges = ";".join(map(str, m.edges))
            witness = json.dumps(m.bindings, sort_keys=True, separators=(",", ":")).replace('"', '""')
            fp.write(f'{i},{verts},{edges},"{witness}"\n')
    _say(cfg, f"{len(found)} matches")
    params = {"pattern": _file_digest(args.pattern), "graph": args.graph, "limit": args.limit}
    if args.out:
        _write_output(cfg, args.out, write, "match", params)
    elif not cfg.quiet:
        write(sys.stdout)
    return 0


def _vertex_tags(cfg, store, g):
    """vertex -> set of labels, from cluster-level tags."""
    tags = load_tags(cfg)
    if g.kind == GraphKind.CLUSTER:
        return {g.vertex_of(rep): set(l) for rep, l in tags.cluster_labels.items() if g.vertex_of(rep) >= 0}
    if g.kind == GraphKind.ADDRESS:
        c = load_clustering(cfg, store)
        out = {}
        for rep, labs in tags.cluster_labels.items():
            for a in c.members(rep).tolist():
                out[a] = set(labs)
        return out
    raise UsageError("tag predicates need an address or cluster graph")


def cmd_export(cfg, args):
    out = Path(args.out)
    if args.what == "graph":
        g = load_graph(cfg, args.graph)
        _write_output(cfg, out, g.write_csv, "export", {"what": "graph", "graph": args.graph})
    elif args.what == "clusters":
        store = load_store(cfg)
        c = load_clustering(cfg, store)
        table = store.addresses

        def write(fp):
            fp.write("address_id,kind,payload_hex,cluster\n")
            for a, (kind, length, payload) in enumerate(zip(table["kind"].tolist(), table["length"].tolist(),
                                                            table["payload"].tolist())):
                fp.write(f"{a},{ScriptClass(kind).label},{bytes(payload)[:length].hex()},{c.find(a)}\n")
        _write_output(cfg, out, write, "export", {"what": "clusters", "heuristics": list(c.heuristics)})
    elif args.what == "tags":
        tags = load_tags(cfg)

        def write(fp):
            fp.write("cluster,label\n")
            for rep in sorted(tags.cluster_labels):
                for label in sorted(tags.cluster_labels[rep]):
                    fp.write(f"{rep},{label}\n")
        _write_output(cfg, out, write, "export", {"what": "tags"})
    else:
        store = load_store(cfg)
        ts = build_series(cfg, store, args.series, args.bucket)
        _write_output(cfg, out, ts.write_csv, "export",
                      {"what": "series", "series": args.series, "bucket": args.bucket,
                       "metadata": ts.metadata})
    return 0


def cmd_info(cfg, args):
    info = {"data": str(cfg.data_dir)}
    if (cfg.store_dir / "manifest.json").exists():
        manifest = json.loads((cfg.store_dir / "manifest.json").read_text())
        info.update(manifest["counts"])
        info["store_manifest_sha256"] = manifest_hash(cfg.store_dir)
        info["format_version"] = manifest["format_version"]
    else:
        info["store"] = "not built"
    if (cfg.clusters_dir / "manifest.json").exists():
        cm = json.loads((cfg.clusters_dir / "manifest.json").read_text())
        info["clusters"] = cm["clusters"]
        info["heuristics"] = cm["heuristics"]
    else:
        info["clusters"] = "not built"
    info["graphs"] = {k: json.loads((cfg.graph_dir(k) / "manifest.json").read_text())["edge_count"]
                      for k in GRAPH_KINDS if (cfg.graph_dir(k) / "manifest.json").exists()}
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        for k, v in info.items():
            print(f"{k}: {v}")
    return 0


# argument parsing

class Parser(argparse.ArgumentParser):
    json_errors = False

    def error(self, message):
        if Parser.json_errors:
            print(json.dumps({"error": "UsageError", "message": message, "exit": 2}), file=sys.stderr)
            sys.exit(2)
        super().error(message)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--data", default=S, help="data directory (default: $CHAINLENS_DATA or ./chainlens-data)")
    p.add_argument("--quiet", action="store_true", default=S, help="only errors and requested output")
    p.add_argument("--progress", action="store_true", default=S, help="progress messages on stderr")
    p.add_argument("--json-errors", action="store_true", default=S, help="errors as one JSON line on stderr")
    p.add_argument("--workers", type=int, default=S, help="parallel parse workers (>= 1)")
    p.add_argument("--magic", default=S, help="network magic as 8 hex digits (default f9beb4d9)")
    p.add_argument("--height-limit", type=int, default=S, help="ignore blocks above this height")
    p.add_argument("--heuristics", default=S, help="comma list: multi-input,change")
    p.add_argument("--rates", default=S, help="CSV date,usd_per_btc")
    p.add_argument("--tags", default=S, help="seed tag CSV")
    return p


def build_parser():
    common = _common()
    p = Parser(prog="chainlens", description="Bitcoin chain forensics toolkit", parents=[common])
    p.add_argument("--version", action="version", version=f"chainlens {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common], description=help)

    s = add("ingest", "parse a fixture or raw block files into the store")
    s.add_argument("--fixtures", help="JSONL fixture chain")
    s.add_argument("--blocks", nargs="+", help="raw blk*.dat files")

    s = add("graph", "build transaction, address or cluster graphs")
    s.add_argument("--kind", choices=GRAPH_KINDS + ["all"], default="all")

    s = add("cluster", "run address clustering, show stats or inspect a cluster")
    s.add_argument("action", nargs="?", choices=["run", "stats", "inspect"], default="run")
    s.add_argument("--max-input-addresses", type=int, help="skip multi-input merges above N input addresses")
    s.add_argument("--histogram", help="write cluster size histogram CSV")
    s.add_argument("--address", help="address payload hex (pubkey, hash160, script hash)")
    s.add_argument("--address-kind", choices=[c.label for c in ScriptClass])
    s.add_argument("--cluster", type=int, help="cluster representative id")
    s.add_argument("--json", action="store_true")

    s = add("tag", "apply seed tags to clusters, optionally propagate along a graph")
    s.add_argument("--seeds", help="seed CSV address_payload_hex,kind,label,source")
    s.add_argument("--propagate", type=int, metavar="ITERS", help="label propagation rounds")
    s.add_argument("--graph", choices=["address", "cluster"], default="cluster")
    s.add_argument("--out", help="CSV of propagated labels")

    s = add("centrality", "centrality scores")
    s.add_argument("measure", choices=["pagerank", "hits", "betweenness", "closeness", "eigenvector", "degree"])
    s.add_argument("--graph", choices=GRAPH_KINDS, default="address")
    s.add_argument("--out")
    s.add_argument("--damping", type=float, default=0.85)
    s.add_argument("--tolerance", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--sample-sources", type=int, metavar="K", help="approximate betweenness from K sources")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--direction", choices=["in", "out"], default="out")
    s.add_argument("--top", type=int, help="vertices to print (degree: rows to write)")

    s = add("path", "shortest path or reachable set")
    s.add_argument("--from", dest="src", required=True, help="vertex id, txid or address payload hex")
    s.add_argument("--to", dest="dst")
    s.add_argument("--graph", choices=GRAPH_KINDS, default="address")
    s.add_argument("--temporal", action="store_true", help="timestamps must not decrease along the path")
    s.add_argument("--reachable", action="store_true", help="print the forward reachable set instead")
    s.add_argument("--max-hops", type=int)
    s.add_argument("--json", action="store_true")

    s = add("scc", "strongly connected components")
    s.add_argument("--graph", choices=GRAPH_KINDS, default="address")
    s.add_argument("--out")

    s = add("stats", "time series and high-value transactions")
    s.add_argument("series", choices=["fees", "velocity", "address-types", "high-value"])
    s.add_argument("--bucket", choices=["day", "month"], default="month")
    s.add_argument("--threshold", default="1000", help="USD threshold for high-value")
    s.add_argument("--out")

    s = add("match", "path pattern matching and peeling chains")
    s.add_argument("--pattern", help="pattern template file")
    s.add_argument("--graph", choices=GRAPH_KINDS, default="tx")
    s.add_argument("--limit", type=int)
    s.add_argument("--peeling-chains", action="store_true")
    s.add_argument("--min-length", type=int, default=4)
    s.add_argument("--out")

    s = add("export", "export built artifacts as CSV")
    s.add_argument("what", choices=["graph", "clusters", "tags", "series"])
    s.add_argument("--graph", choices=GRAPH_KINDS, default="address")
    s.add_argument("--series", choices=["fees", "velocity", "address-types"], default="fees")
    s.add_argument("--bucket", choices=["day", "month"], default="month")
    s.add_argument("--out", required=True)

    s = add("info", "store manifest summary")
    s.add_argument("--json", action="store_true")
    return p


COMMANDS = {"ingest": cmd_ingest, "graph": cmd_graph, "cluster": cmd_cluster, "tag": cmd_tag,
            "centrality": cmd_centrality, "path": cmd_path, "scc": cmd_scc, "stats": cmd_stats,
            "match": cmd_match, "export": cmd_export, "info": cmd_info}


def make_config(args) -> Config:
    data = getattr(args, "data", None) or os.environ.get("CHAINLENS_DATA") or "chainlens-data"
    try:
        magic = bytes.fromhex(getattr(args, "magic", None) or MAINNET_MAGIC.hex())
    except ValueError:
        raise UsageError("--magic must be hex") from None
    heur = tuple(h.strip() for h in getattr(args, "heuristics", "multi-input").split(",") if h.strip())
    rates = getattr(args, "rates", None)
    tags = getattr(args, "tags", None)
    return Config(Path(data), magic, getattr(args, "height_limit", None), heur,
                  Path(rates) if rates else None, Path(tags) if tags else None,
                  getattr(args, "workers", 1), getattr(args, "quiet", False),
                  getattr(args, "progress", False))


def _report(exc, code, json_errors):
    name = type(exc).__name__ if not isinstance(exc, UsageError) else "UsageError"
    if json_errors:
        print(json.dumps({"error": name, "message": str(exc), "exit": code}), file=sys.stderr)
    else:
        print(f"error: {name}: {exc}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    Parser.json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    json_errors = getattr(args, "json_errors", False)
    logging.basicConfig(level=logging.INFO if getattr(args, "progress", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        return _report(exc, 2, json_errors)
    except ChainLensError as exc:
        return _report(exc, 1, json_errors)
    except ValueError as exc:
        return _report(exc, 1, json_errors)


def main():
    sys.exit(run())
