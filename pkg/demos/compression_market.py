"""
Crowdsourced compression
========================

Participants improve a character distribution ``q`` used to encode a
stream. Each update is paid by how much shorter it makes the code of the
character that is finally drawn.
"""
# %%
# A two-letter alphabet
# ---------------------
# The market starts from the uniform code. A participant who believes the
# stream is 25% ``0`` and 75% ``1`` moves the code to match.
import numpy as np

from clm import (
    CompressionMarket,
    compression_clm,
    open_ledger,
    post_bid,
    settle,
    total_expected_cost,
)

market = CompressionMarket(2, stream=[0, 1, 1, 1])
spec = compression_clm(market)
ledger = open_ledger(spec)
_, cost = post_bid(ledger, spec, "alice", [0.25, 0.75])
print(f"alice pays {cost:.6f} to move the code to (0.25, 0.75)")

# %%
# Payouts never go negative
# -------------------------
# The cost is the largest possible growth of any character's code length, so
# the payout is non-negative for every outcome.
for i in range(2):
    print(f"character {i}: payout {spec.payout([0.5, 0.5], [0.25, 0.75], i):.6f}, "
          f"profit {spec.profit([0.5, 0.5], [0.25, 0.75], i):+.6f}")

# %%
# Settling against the stream
# ---------------------------
# Averaging the payout over the whole stream gives alice her expected profit,
# which is the divergence between the stream and the uniform code.
pays = settle(ledger, spec, market.empirical())
print(f"alice receives {pays['alice']:.6f}, profit {pays['alice'] - cost:.6f}")

# %%
# What the crowd costs
# --------------------
# Encoding cost plus payments to the crowd. With ``alpha = 1`` the total does
# not depend on the final code at all: the mechanism has bought insurance.
p = np.array([0.25, 0.75])
for alpha in (0.5, 1.0):
    m = CompressionMarket(2, alpha=alpha)
    costs = [total_expected_cost(m, qT, p) for qT in ([0.5, 0.5], [0.25, 0.75], [0.1, 0.9])]
    print(f"alpha={alpha}: " + ", ".join(f"{c:.6f}" for c in costs))
