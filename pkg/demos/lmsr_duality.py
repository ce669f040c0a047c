"""
Market makers and scoring rules
===============================

The log-loss rule on the simplex and the logarithmic market scoring rule are
two views of one mechanism. This script builds the market from the rule,
checks that profits agree, and trades under a budget.
"""
# %%
# From the rule to the market
# ---------------------------
import numpy as np

from clm import (
    Belief,
    apmm_of_gsr,
    bundle_cost,
    compression_gsr,
    direct_profit,
    instantaneous_prices,
    optimal_trade,
    profit_as_divergence,
)

L = compression_gsr(2)
A = apmm_of_gsr(L)
print(type(A.C).__name__, "prices at zero:", instantaneous_prices(A))

# %%
# One trade, two ledgers
# ----------------------
# Buying one share of outcome 0 costs ``ln(e + 1) - ln 2``. If outcome 0
# happens, the profit equals the drop in log loss of the prices.
r = np.array([1.0, 0.0])
print(f"cost {bundle_cost(A, r):.6f}, prices after {instantaneous_prices(A, r)}")
print(f"share profit {direct_profit(A, [0, 0], r, 0):.9f}")
print(f"loss drop    {profit_as_divergence(A, [0, 0], r, 0):.9f}")

# %%
# Trading on a belief
# -------------------
# A trader who believes outcome 0 has probability 0.75 buys until the prices
# match, unless the budget runs out first.
P = Belief.over_finite([0.75, 0.25])
for B in (0.0, 0.1, 1.0, np.inf):
    r = optimal_trade(A, P, B)
    print(f"budget {B:>4}: bundle {np.round(r, 6)}, cost {bundle_cost(A, r):.6f}, "
          f"prices {np.round(instantaneous_prices(A, r), 6)}")
