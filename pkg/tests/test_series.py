import io
from datetime import date
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from chainlens import synth
from chainlens.analytics import (RateTable, address_type_series, fee_series, fee_usd,
                                 high_value_transactions, read_rates, velocity_series)
from chainlens.errors import EmptyStore, MissingRate, SchemaError
from chainlens.fixtures import FixtureBlock, FixtureTx
from chainlens.model import ScriptClass, p2pkh_script
import oracles
from conftest import store_of

DAY = 86400
T0 = 1_400_000_000  # 2014-05-13 16:53:20 UTC


chains = st.tuples(st.integers(5, 120), st.integers(0, 10**6), st.sampled_from([3600, 5 * 3600, 2 * DAY])).map(
    lambda p: synth.random_chain(p[0], seed=p[1], block_interval=p[2], p_opreturn=0.1))


def test_velocity_examples():
    A, B = p2pkh_script(b"\x01" * 20), p2pkh_script(b"\x02" * 20)
    cb = FixtureTx([], [(50 * 10**8, A)])
    s = velocity_series(store_of([FixtureBlock(0, T0, [cb])]), "month")
    assert s.rows[0][1][0] == 0.0
    cb2 = FixtureTx([], [(50 * 10**8, B)])
    spend = FixtureTx([(cb.txid_hex(0), 0)], [(50 * 10**8, B)])
    s = velocity_series(store_of([FixtureBlock(0, T0, [cb]), FixtureBlock(1, T0 + 600, [cb2, spend])]), "month")
    assert s.column("velocity") == [0.5] and s.column("supply_sats") == [100 * 10**8]


@pytest.mark.parametrize("bucket", ["day", "month"])
@given(chain=chains)
def test_series_match_brute_force(bucket, chain):
    store = store_of(chain)
    rates = RateTable(synth.daily_rates(chain, seed=len(store.txs)))
    oracles.check_series(store, chain, bucket, rates)
    got = high_value_transactions(store, rates, Decimal(50))
    assert got == oracles.high_value_oracle(chain, rates, Decimal(50))


def test_address_type_conservation():
    chain = synth.random_chain(300, seed=5, block_interval=20 * 3600)
    store = store_of(chain)
    s = address_type_series(store, "day")
    for c in ScriptClass:
        assert sum(s.column(c.label)) == int((store.outputs["script_class"] == int(c)).sum())


def test_empty_bucket_is_emitted():
    A = p2pkh_script(b"\x01" * 20)
    blocks = [FixtureBlock(0, T0, [FixtureTx([], [(1, A)])]),
              FixtureBlock(1, T0 + 3 * DAY, [FixtureTx([], [(1, A)])])]
    s = address_type_series(store_of(blocks), "day")
    assert len(s.rows) == 4 and s.rows[1][1] == (0, 0, 0, 0, 0)
    f = fee_series(store_of(blocks), "day")
    assert f.rows[1][1] == (0, None, None)


def test_fee_examples():
    A, B = p2pkh_script(b"\x01" * 20), p2pkh_script(b"\x02" * 20)
    cb = FixtureTx([], [(10**8, A), (10**8, A)])
    t1 = FixtureTx([(cb.txid_hex(0), 0)], [(10**8 - 10_000, B)])
    t2 = FixtureTx([(cb.txid_hex(0), 1)], [(10**8 - 30_000, B)])
    store = store_of([FixtureBlock(0, T0, [cb]), FixtureBlock(1, T0 + 60, [FixtureTx([], [(1, B)]), t1, t2])])
    f = fee_series(store, "month", RateTable([(date(2014, 5, 1), Decimal(100))]))
    assert f.column("mean_fee_sats") == [20000]
    assert fee_usd(10**6, Decimal(100)) == Decimal("1.00000000")
    # half-even at the 8th decimal: 1 sat at 0.5 USD/BTC = 0.000000005 USD
    assert fee_usd(1, Decimal("0.5")) == Decimal("0E-8")
    assert fee_usd(3, Decimal("0.5")) == Decimal("2E-8")


def test_missing_rate():
    chain = synth.random_chain(20, seed=1)
    rates = synth.daily_rates(chain)
    store = store_of(chain)
    with pytest.raises(MissingRate):
        fee_series(store, "day", RateTable(rates[1:]) if len(rates) > 1 else RateTable([(date(2100, 1, 1), Decimal(1))]))
    # an earlier rate carries forward
    fee_series(store, "day", RateTable(rates[:1]))


def test_empty_store():
    from chainlens import ingest
    with pytest.raises(EmptyStore):
        velocity_series(ingest.ingest_fixture([]))


def test_high_value_example_and_planted():
    chain = synth.planted_high_fees(n_txs=200, seed=3)
    store = store_of(chain)
    rates = RateTable(synth.daily_rates(chain, lo=550, hi=650))
    hv = high_value_transactions(store, rates)
    got = [store.tx_index.hash_of(t)[::-1].hex() for t, *_ in hv]
    assert sorted(got) == sorted(chain.planted)
    for t, fee, v, d in hv:
        assert v == oracles.q8(oracles.exact_usd(fee, rates.rate(d))) and v > 1000
    assert [(r[3], r[0]) for r in hv] == sorted((r[3], r[0]) for r in hv)
    # 2 BTC at 600 USD/BTC
    assert fee_usd(2 * 10**8, Decimal(600)) == Decimal("1200.00000000")


def test_high_value_threshold_uses_reported_value():
    chain = synth.planted_high_fees(n_txs=30, planted=(2 * 10**8,), seed=2)
    store = store_of(chain)
    rates = RateTable([(date(2000, 1, 1), Decimal(500))])
    assert len(high_value_transactions(store, rates, Decimal("999.99999999"))) == 1
    assert high_value_transactions(store, rates, Decimal(1000)) == []


def test_read_rates():
    t = read_rates("date,usd_per_btc\n# comment\n2014-01-01,800.123456789\n2014-01-03,810\n")
    assert t.rows == [(date(2014, 1, 1), Decimal("800.12345679")), (date(2014, 1, 3), Decimal("810.00000000"))]
    assert t.rate(date(2014, 1, 2)) == Decimal("800.12345679")
    with pytest.raises(MissingRate):
        t.rate(date(2013, 12, 31))
    for bad in ["2014-01-02,1\n2014-01-01,2\n", "2014-01-01,0\n", "2014-13-01,5\n", "2014-01-01\n", "2014-01-01,x\n"]:
        with pytest.raises(SchemaError):
            read_rates(bad)


def test_series_csv():
    chain = synth.random_chain(20, seed=1)
    buf = io.StringIO()
    fee_series(store_of(chain), "month", RateTable(synth.daily_rates(chain))).write_csv(buf)
    head, *rows = buf.getvalue().splitlines()
    assert head == "bucket,tx_count,mean_fee_sats,mean_fee_per_byte,mean_fee_usd"
    assert len(rows[0].split(",")[-1].split(".")[1]) == 8
