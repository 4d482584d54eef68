"""Monthly fees, coin velocity and the script mix, plus unusually large fees.

Fees are converted to USD with the day's rate and rounded half-even to
eight decimals, so the same inputs always give the same CSV.
"""
import sys
from decimal import Decimal

from chainlens import synth
from chainlens.analytics import (RateTable, address_type_series, fee_series,
                                 high_value_transactions, velocity_series)

from _common import load

chain = synth.planted_high_fees(n_txs=400, seed=0)
store = load(chain)
rates = RateTable(synth.daily_rates(chain, lo=550, hi=650))

fee_series(store, "month", rates).write_csv(sys.stdout)
print()
velocity_series(store, "month").write_csv(sys.stdout)
print()
address_type_series(store, "month").write_csv(sys.stdout)
print()
for tx, fee, value, day in high_value_transactions(store, rates, Decimal(1000)):
    print(f"high fee: tx {tx} paid {fee / 1e8:.8f} BTC = {value} USD on {day}")
