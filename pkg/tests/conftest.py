import pytest

from solvaudit.ingest import parse_service_features, parse_utxo_transactions

# The 21-provider service-offering catalog used by the categorize tests:
# seven pure buy/sell providers, six custody+buy/sell+consulting providers,
# one payment processor, and assorted custodians and trading platforms.
SERVICE_CATALOG_CSV = """\
vasp_id,custody,buy_sell,payment,consulting,trading
VASP-0,N,Y,N,N,N
VASP-1,N,Y,N,N,N
VASP-2,Y,Y,N,N,Y
VASP-3,Y,Y,N,Y,Y
VASP-4,Y,Y,N,Y,N
VASP-5,Y,Y,N,N,N
VASP-6,Y,Y,N,Y,N
VASP-7,Y,Y,N,Y,N
VASP-8,N,Y,N,N,N
VASP-9,Y,Y,N,N,N
VASP-10,N,Y,N,N,N
VASP-11,N,Y,N,N,N
VASP-12,N,Y,N,N,N
VASP-13,Y,Y,N,Y,N
VASP-14,N,N,Y,N,N
VASP-15,Y,Y,N,Y,N
VASP-16,Y,Y,N,N,Y
VASP-17,Y,Y,N,Y,N
VASP-18,N,Y,N,N,N
VASP-19,Y,N,N,N,N
VASP-20,Y,Y,Y,N,N
"""


@pytest.fixture
def service_catalog():
    return parse_service_features(SERVICE_CATALOG_CSV)


def tx_line(txid, block, ts, inputs, outputs):
    """Build one transactions.jsonl line from (address, value) pairs."""
    import json

    return json.dumps({
        "txid": txid,
        "block": block,
        "timestamp": ts,
        "inputs": [{"address": a, "value": v} for a, v in inputs],
        "outputs": [{"address": a, "value": v} for a, v in outputs],
    })


def make_txs(specs):
    """Parse a list of (txid, block, ts, inputs, outputs) tuples."""
    text = "\n".join(tx_line(*spec) for spec in specs)
    return parse_utxo_transactions(text).records


def txid(n: int) -> str:
    return f"{n:064x}"
