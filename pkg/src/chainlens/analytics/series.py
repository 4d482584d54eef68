"""Time-bucketed chain statistics and USD conversion.

Buckets are UTC days or months keyed by block timestamp, emitted densely
from the first to the last bucket holding a transaction. USD amounts are
Decimals with 8 fractional digits, rounded half-even.
"""

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import ROUND_HALF_EVEN, Context, Decimal, InvalidOperation

import numpy as np

from ..errors import EmptyStore, MissingRate, SchemaError
from ..model import ScriptClass
from ..store import ChainStore

Q8 = Decimal("0.00000001")
SATS_PER_BTC = Decimal(100_000_000)
# wide enough that fee * rate and bucket sums are exact before quantizing
DEC = Context(prec=60)
BUCKETS = ("day", "month")


def usd(value: Decimal) -> Decimal:
    return value.quantize(Q8, rounding=ROUND_HALF_EVEN, context=DEC)


def fee_usd(fee_sats: int, rate: Decimal) -> Decimal:
    return usd(DEC.divide(DEC.multiply(Decimal(int(fee_sats)), rate), SATS_PER_BTC))


@dataclass
class RateTable:
    rows: list = field(default_factory=list)  # [(date, Decimal usd_per_btc)] strictly increasing

    def __post_init__(self):
        for (d0, _), (d1, _) in zip(self.rows, self.rows[1:]):
            if d1 <= d0:
                raise SchemaError(f"rate dates not strictly increasing at {d1}")
        for d, r in self.rows:
            if r <= 0:
                raise SchemaError(f"rate on {d} must be positive")
        self._dates = [d for d, _ in self.rows]

    def rate(self, day: date) -> Decimal:
        """Rate in force on ``day``: the latest row dated on or before it."""
        i = bisect_right(self._dates, day)
        if i == 0:
            raise MissingRate(f"no rate on or before {day.isoformat()}")
        return self.rows[i - 1][1]


def read_rates(text) -> RateTable:
    """Parse ``date,usd_per_btc`` CSV (optional header, ``#`` comments)."""
    if hasattr(text, "read"):
        text = text.read()
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 2:
            raise SchemaError(f"expected 2 columns, got {len(row)}", lineno)
        d, r = row[0].strip(), row[1].strip()
        if lineno == 1 and d.lower() == "date":
            continue
        try:
            day = date.fromisoformat(d)
        except ValueError:
            raise SchemaError(f"bad date {d!r}", lineno) from None
        try:
            rate = usd(Decimal(r))
        except InvalidOperation:
            raise SchemaError(f"bad rate {r!r}", lineno) from None
        if not rate.is_finite() or rate <= 0:
            raise SchemaError(f"rate must be positive, got {r!r}", lineno)
        if rows and day <= rows[-1][0]:
            raise SchemaError(f"dates must be strictly increasing ({day} after {rows[-1][0]})", lineno)
        rows.append((day, rate))
    return RateTable(rows)


@dataclass
class TimeSeries:
    bucket: str
    columns: tuple
    rows: list  # [(bucket_start: date, (values...))]
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return [vals[i] for _, vals in self.rows]

    def write_csv(self, fp):
        """Header ``bucket,<columns>``; floats with 17 significant digits, USD with 8 decimals."""
        fp.write(",".join(("bucket",) + tuple(self.columns)) + "\n")
        for start, vals in self.rows:
            fp.write(",".join([start.isoformat()] + [_fmt(v) for v in vals]) + "\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _utc_day(ts: int) -> date:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def bucket_keys(timestamps, bucket):
    """Bucket index per timestamp and the dense list of bucket starts."""
    if bucket not in BUCKETS:
        raise ValueError(f"bucket must be one of {BUCKETS}")
    ts = np.asarray(timestamps, dtype=np.int64)
    days = ts // 86400  # days since epoch, UTC
    if bucket == "day":
        lo, hi = int(days.min()), int(days.max())
        starts = [date.fromordinal(date(1970, 1, 1).toordinal() + d) for d in range(lo, hi + 1)]
        return days - lo, starts
    months = days.astype("datetime64[D]").astype("datetime64[M]").astype(np.int64)
    lo, hi = int(months.min()), int(months.max())
    starts = [date(1970 + m // 12, m % 12 + 1, 1) for m in range(lo, hi + 1)]
    return months - lo, starts


def _require(store: ChainStore):
    if store.n_txs == 0:
        raise EmptyStore("store has no transactions")


def velocity_series(store: ChainStore, bucket="month") -> TimeSeries:
    """Non-coinbase output value per bucket over coined supply at bucket end."""
    _require(store)
    txs, outs = store.txs, store.outputs
    key, starts = bucket_keys(txs["timestamp"], bucket)
    nb = len(starts)
    # python ints: sums may exceed 2**64
    per_tx = [0] * store.n_txs
    for t, v in zip(outs["tx_id"].tolist(), outs["value"].tolist()):
        per_tx[t] += v
    moved = [0] * nb
    minted = [0] * nb
    for k, cb, total in zip(key.tolist(), txs["is_coinbase"].tolist(), per_tx):
        if cb:
            minted[k] += total
        else:
            moved[k] += total
    rows, supply = [], 0
    for i, start in enumerate(starts):
        supply += minted[i]
        rows.append((start, (moved[i] / supply if supply else 0.0, moved[i], supply)))
    return TimeSeries(bucket, ("velocity", "moved_sats", "supply_sats"), rows, {
        "formula": "velocity = sum of non-coinbase output values in bucket / "
                   "sum of all coinbase output values up to bucket end"})


def address_type_series(store: ChainStore, bucket="month") -> TimeSeries:
    """Output count per script class per bucket."""
    _require(store)
    outs = store.outputs
    key, starts = bucket_keys(store.txs["timestamp"], bucket)
    nb, nc = len(starts), len(ScriptClass)
    flat = key[outs["tx_id"]] * nc + outs["script_class"].astype(np.int64)
    counts = np.bincount(flat, minlength=nb * nc).reshape(nb, nc)
    rows = [(s, tuple(int(c) for c in counts[i])) for i, s in enumerate(starts)]
    return TimeSeries(bucket, tuple(c.label for c in ScriptClass), rows, {"unit": "outputs"})


def _tx_days(store):
    return [_utc_day(t) for t in store.txs["timestamp"].tolist()]


def fee_series(store: ChainStore, bucket="month", rates: RateTable = None) -> TimeSeries:
    """Mean fee (sats), mean fee per byte and, with rates, mean fee in USD.

    Coinbase transactions are excluded. Each tx's USD fee uses the rate in
    force on its UTC date; the bucket mean is quantized once after an exact sum.
    """
    _require(store)
    txs = store.txs
    key, starts = bucket_keys(txs["timestamp"], bucket)
    nb = len(starts)
    fees = [[] for _ in range(nb)]
    per_byte = [[] for _ in range(nb)]
    usd_sum = [Decimal(0)] * nb
    days = _tx_days(store) if rates is not None else None
    for t, (k, cb, fee, size) in enumerate(zip(key.tolist(), txs["is_coinbase"].tolist(),
                                                txs["fee"].tolist(), txs["size"].tolist())):
        if cb:
            continue
        fees[k].append(fee)
        per_byte[k].append(fee / size)
        if rates is not None:
            usd_sum[k] = DEC.add(usd_sum[k], DEC.multiply(Decimal(fee), rates.rate(days[t])))
    columns = ("tx_count", "mean_fee_sats", "mean_fee_per_byte")
    if rates is not None:
        columns += ("mean_fee_usd",)
    rows = []
    for i, start in enumerate(starts):
        n = len(fees[i])
        vals = (n, sum(fees[i]) / n if n else None, math.fsum(per_byte[i]) / n if n else None)
        if rates is not None:
            vals += (usd(DEC.divide(usd_sum[i], DEC.multiply(SATS_PER_BTC, Decimal(n)))) if n else None,)
        rows.append((start, vals))
    return TimeSeries(bucket, columns, rows, {
        "fee_per_byte": "mean over txs of fee_sats / serialized size",
        "usd": "fee_sats * usd_per_btc / 1e8 at the tx's UTC date, 8 decimals half-even"})


def high_value_transactions(store: ChainStore, rates: RateTable, threshold_usd=Decimal(1000)) -> list:
    """(tx_id, fee_sats, fee_usd, date) for non-coinbase txs with fee_usd > threshold.

    The comparison uses the reported, 8-decimal USD value. Sorted by date, then tx_id.
    """
    _require(store)
    threshold = Decimal(threshold_usd)
    txs = store.txs
    out = []
    days = _tx_days(store)
    for t, (cb, fee) in enumerate(zip(txs["is_coinbase"].tolist(), txs["fee"].tolist())):
        if cb:
            continue
        v = fee_usd(fee, rates.rate(days[t]))
        if v > threshold:
            out.append((t, fee, v, days[t]))
    out.sort(key=lambda r: (r[3], r[0]))
    return out
