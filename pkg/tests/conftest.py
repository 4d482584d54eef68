import io
import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chainlens import fixtures, ingest
from chainlens.graph import Graph

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def fixture_lines(chain_or_blocks):
    blocks = getattr(chain_or_blocks, "blocks", chain_or_blocks)
    buf = io.StringIO()
    fixtures.write_fixture(blocks, buf)
    return buf.getvalue().splitlines()


def store_of(chain_or_blocks):
    return ingest.ingest_fixture(fixture_lines(chain_or_blocks))


def wire_of(chain_or_blocks, **kw):
    blocks = getattr(chain_or_blocks, "blocks", chain_or_blocks)
    buf = io.BytesIO()
    fixtures.write_block_file(blocks, buf, **kw)
    return buf.getvalue()


def random_edges(n, m, seed, t_max=20, v_max=10, self_loops=True):
    """(src, dst, value, timestamp) lists for a random multigraph."""
    rng = random.Random(seed)
    edges = []
    for _ in range(m):
        a, b = rng.randrange(n), rng.randrange(n)
        if a == b and not self_loops:
            continue
        edges.append((a, b, rng.randint(1, v_max), rng.randint(0, t_max)))
    return edges


def graph_of(n, edges, kind="address"):
    if edges:
        s, d, v, t = (np.array(c, dtype=np.int64) for c in zip(*edges))
    else:
        s = d = v = t = np.zeros(0, dtype=np.int64)
    return Graph.from_edges(kind, n, s, d, v, t, np.arange(len(edges)))


@pytest.fixture
def data_dir():
    return DATA
