"""
Sizing a regression market
==========================

The sponsor of a linear-regression market can lose at most half the scale
``alpha``. Rescaling turns a budget into a scale.
"""
# %%
import numpy as np

from clm import Batch, RegressionMarket, open_ledger, post_bid, regression_clm, rescale_to_budget, settle, worst_case_loss

spec = regression_clm(RegressionMarket(2))
print(f"worst-case loss at alpha=1: {worst_case_loss(spec):.6f}")
funded = rescale_to_budget(spec, 10.0)
print(f"alpha for a budget of 10: {funded.alpha:.4f}")

# %%
# A bid and its settlement
# ------------------------
# Cost is twice the scale times the distance moved; the payout adds back the
# drop in squared error on the test batch.
ledger = open_ledger(funded)
_, cost = post_bid(ledger, funded, "bob", [0.6, -0.2])
test = Batch(np.array([[0.5, 0.5], [0.8, -0.6]]), np.array([0.2, 0.6]))
pays = settle(ledger, funded, test)
print(f"cost {cost:.4f}, payout {pays['bob']:.4f}, profit {pays['bob'] - cost:+.4f}")
