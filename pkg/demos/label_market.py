"""
Betting on labels in stages
===========================

Participants bet directly on ``m`` unknown labels. Labels are revealed in
blocks; each block is paid out as soon as it is known and then frozen.
"""
# %%
# Building the market
# -------------------
import numpy as np

from clm import LabelMarket, label_clm, mini_payout, open_ledger, post_bid, settle

rng = np.random.default_rng(0)
market = LabelMarket(3, K=(1, 5))
spec = label_clm(market)
ledger = open_ledger(spec)
for t in range(6):
    post_bid(ledger, spec, f"p{t % 2}", spec.hypothesis_space.sample(rng, 1)[0])
y = np.array([2.0, 4.0, 5.0])

# %%
# What a one-shot settlement would pay
# ------------------------------------
shadow = open_ledger(spec)
shadow.records = list(ledger.records)
print("one shot:", settle(shadow, spec, y))

# %%
# Paying block by block
# ---------------------
# After the first block is paid its labels are frozen: any bid that moves
# them is rejected.
first = mini_payout(market, ledger, spec, [0], y[[0]])
try:
    post_bid(ledger, spec, "late", ledger.current + [0.5, 0.0, 0.0])
except Exception as exc:
    print("rejected:", exc)
second = mini_payout(market, ledger, spec, [1, 2], y[[1, 2]])
print("staged:  ", {k: first[k] + second[k] for k in first})
