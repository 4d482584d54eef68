import io

from chainlens import fixtures, ingest


def load(chain):
    """Ingest a synthetic chain through its JSONL fixture form."""
    buf = io.StringIO()
    fixtures.write_fixture(chain.blocks, buf)
    return ingest.ingest_fixture(buf.getvalue().splitlines())
