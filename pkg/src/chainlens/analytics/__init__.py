"""Graph analytics and chain statistics."""

from .centrality import (ScoreVector, betweenness, closeness, degree_top_k,
                         eigenvector_centrality, hits, pagerank, sample_sources)
from .components import component_sets, propagate_labels, strongly_connected_components
from .series import (RateTable, TimeSeries, address_type_series, fee_series, fee_usd,
                     high_value_transactions, read_rates, velocity_series)
from .traversal import Path, reachable_set, shortest_path

__all__ = [
    "ScoreVector", "betweenness", "closeness", "degree_top_k", "eigenvector_centrality", "hits",
    "pagerank", "sample_sources", "component_sets", "propagate_labels",
    "strongly_connected_components", "RateTable", "TimeSeries", "address_type_series",
    "fee_series", "fee_usd", "high_value_transactions", "read_rates", "velocity_series",
    "Path", "reachable_set", "shortest_path",
]
