"""Peeling chains: a large coin pays out small amounts one hop at a time.

Every link has two outputs, a small payment and a large remainder that
the next transaction spends. The planted chains are longer than any run
the noise can produce by chance, so the search recovers them exactly.
"""
from pathlib import Path

from chainlens import synth
from chainlens.graph import build_tx_graph
from chainlens.patterns import find_peeling_chains, match_path_pattern, parse_pattern

from _common import load

chain = synth.planted_peels(seed=0)
store = load(chain)
found = find_peeling_chains(store, min_length=chain.facts["noise_floor"] + 1)
hexes = sorted([store.tx_index.hash_of(t)[::-1].hex() for t in c] for c in found)
print(f"{len(found)} chains found, {len(chain.planted)} planted, exact: {hexes == sorted(chain.planted)}")
for c in found:
    lo = store.txs["out_start"][c]
    vals = [int(store.outputs["value"][i:i + 2].max()) for i in lo]
    print(f"  length {len(c)}: remainders {vals[0]} .. {vals[-1]} sats")

# the same data seen through a generic hop template
g = build_tx_graph(store)
tmpl = parse_pattern((Path(__file__).parent / "patterns" / "launder_hops.tmpl").read_text())
print(f"launder_hops matches on the tx graph: {len(match_path_pattern(g, tmpl, limit=1000))}")
