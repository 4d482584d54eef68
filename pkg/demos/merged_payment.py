"""Three addresses owned by one user pay a merchant jointly.

Spending them together in one transaction is what links them: after the
multi-input pass, A, B and C fall into one cluster and the merchant stays
alone.
"""
from chainlens import clustering, synth
from chainlens.graph import build_address_graph

from _common import load

chain = synth.merged_payment_chain()
store = load(chain)
print(f"{len(store.txs)} transactions, {len(store.addresses)} addresses")

cl = clustering.multi_input_cluster(store)
scripts = chain.facts["scripts"]
for name in ("A", "B", "C", "service"):
    payload = scripts[name][3:23].hex()
    cid = clustering.cluster_of(cl, payload)
    print(f"{name:8s} {payload}  cluster {cid}  size {len(cl.members(cid))}")

for a, b, how, tx in cl.merges:
    print(f"merge {a} + {b} by {how} in tx {tx}")

g = build_address_graph(store)
print(f"address graph: {g.vertex_count} vertices, {g.edge_count} edges")
