"""Crowdsourced learning markets.

Scoring rules over hypotheses, the bid/settle protocol with its trade
ledger, cost-function market makers and their duality with divergence-based
rules, three ready-made markets, and a seeded agent simulator.
"""

from .apmm import (
    Apmm,
    apmm_of_gsr,
    bundle_cost,
    direct_profit,
    execute_trade,
    expected_profit,
    gsr_of_apmm,
    holdings_from_ledger,
    instantaneous_prices,
    lmsr_market,
    optimal_trade,
    profit_as_divergence,
    quadratic_market,
    settle_shares,
)
from .convex import (
    ConvexPotential,
    FeasibleSet,
    HalfSquaredNorm,
    LogSumExp,
    NegativeEntropy,
    SolverOptions,
    bregman_divergence,
    conjugate,
    minimize,
    project,
)
from .errors import *  # noqa: F401,F403
from .ledger_io import read_ledger, replay_verify, write_ledger
from .markets import (
    CompressionMarket,
    LabelMarket,
    RegressionMarket,
    compression_clm,
    label_clm,
    load_batch,
    mini_payout,
    regression_clm,
    settle_by_empirical,
    settle_by_sample,
    spec_from_header,
    encoding_cost,
    mechanism_cost,
    total_expected_cost,
)
from .mechanism import (
    Accounts,
    ClmSpec,
    Ledger,
    Lipschitz,
    TradeRecord,
    VoucherPool,
    WorstCaseGap,
    escrow_audit,
    issue_voucher,
    make_l_clm,
    mechanism_loss,
    open_ledger,
    post_bid,
    rescale_to_budget,
    settle,
    telescoping_residual,
    worst_case_loss,
)
from .scoring import (
    Batch,
    Belief,
    DivergenceGsr,
    Gsr,
    OutcomeSpace,
    compression_gsr,
    divergence_gsr,
    expected_loss,
    label_gsr,
    mean_minimizer,
    minimize_expected_loss,
    regression_gsr,
)
from .simulate import SimConfig, load_config, run_simulation
from .agents import TraderAgent, agent_act

__version__ = "0.1.0"
