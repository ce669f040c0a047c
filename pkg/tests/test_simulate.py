import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clm.agents import TraderAgent, agent_act
from clm.errors import ConfigError
from clm.ledger_io import replay_verify
from clm.markets import CompressionMarket, compression_clm, total_expected_cost
from clm.scoring import Belief
from clm.simulate import SimConfig, load_config, run_simulation

import oracles
from sim_configs import NAMES, config, write_config


def _rows(result, kind):
    return [r for r in result.report if r["type"] == kind]


def _run(cfg, write=False):
    return run_simulation(SimConfig.from_dict(cfg), write=write)


@pytest.mark.parametrize("name", NAMES)
def test_runs_are_byte_identical(tmp_path, name):
    paths = [tmp_path / f"{name}.{suffix}.jsonl" for suffix in ("ledger", "report")]
    run_simulation(SimConfig.from_dict(config(name, tmp_path)))
    first = [p.read_bytes() for p in paths]
    run_simulation(SimConfig.from_dict(config(name, tmp_path)))
    assert [p.read_bytes() for p in paths] == first
    assert replay_verify(paths[0]).ok


@pytest.mark.parametrize("name", NAMES)
def test_zero_sum_and_vouchers(name):
    cfg = config(name)
    result = _run(cfg)
    mech = _rows(result, "mechanism")[0]
    profits = sum(r["profit"] for r in _rows(result, "agent"))
    assert abs(profits - mech["loss"]) <= 1e-9
    assert abs(mech["zero_sum_residual"]) <= 1e-9
    v = cfg.get("vouchers")
    limit = v["count"] * v["amount"] if v else 0.0
    assert mech["voucher_drawn"] <= limit + 1e-12 and mech["voucher_liability"] <= limit


def test_single_informed_agent_loss():
    result = _run(config("compression_informed"))
    mech = _rows(result, "mechanism")[0]
    expected = oracles.kl([0.25, 0.75], [0.5, 0.5])
    assert mech["loss"] == pytest.approx(expected, abs=1e-6)
    assert _rows(result, "agent")[0]["profit"] == pytest.approx(mech["loss"], abs=1e-12)


def test_zero_agents():
    cfg = config("compression_informed")
    cfg["agents"] = []
    result = _run(cfg)
    assert result.ledger.records == []
    assert _rows(result, "mechanism")[0]["loss"] == 0.0


def test_noise_agents_leave_unit_alpha_cost_unchanged():
    cfg = config("compression_noise")
    result = _run(cfg)
    assert len(result.ledger.records) > 0
    stream = cfg["market"]["stream"]
    p = np.bincount(stream, minlength=3) / len(stream)
    market = CompressionMarket(3)
    expected = oracles.entropy(p) + oracles.kl(p, market.q0)
    assert total_expected_cost(market, result.ledger.current, p) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 2), min_size=1, max_size=8))
def test_informed_agent_never_worsens_audit_loss(seed, stream):
    cfg = {
        "market": {"kind": "compression", "n": 3, "stream": stream},
        "agents": [
            {"id": "n", "strategy": "noise", "step_scale": 0.3},
            {"id": "a", "strategy": "informed", "belief": "truth"},
        ],
        "rounds": 3,
        "seed": seed,
    }
    traj = [r["audit_loss"] for r in _rows(_run(cfg), "trajectory")]
    # the informed agent moves last each round, so every round ends at its optimum
    assert traj[-1] <= traj[0] + 1e-9


def test_close_when_idle_stops_early():
    result = _run(config("label_idle_close"))
    rounds = [r["round"] for r in _rows(result, "trajectory")]
    assert max(rounds) < 10
    assert len(result.ledger.records) == 1


def test_label_schedule_pays_in_intervals():
    result = _run(config("label_schedule"))
    assert result.ledger.status == "settled"
    events = [r for r in _rows(result, "event") if r["event"] == "mini_payout"]
    assert [e["indices"] for e in events][:2] == [[0], [2]]


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"market": {"kind": "compression", "n": 2, "stream": [0], "extra": 1}},
    {"market": {"kind": "nope"}},
    {"agents": [{"id": "a", "strategy": "psychic"}]},
    {"agents": [{"id": "a", "strategy": "noise", "mood": "calm"}]},
    {"agents": [{"id": "a", "strategy": "noise"}, {"id": "a", "strategy": "noise"}]},
    {"rounds": -1},
    {"seed": 2**64},
    {"settlement": "labels"},
    {"scheduler": "random"},
])
def test_config_errors(bad):
    cfg = config("compression_informed")
    cfg.update(bad)
    with pytest.raises(ConfigError):
        _run(cfg)


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    good, _ = write_config("regression_informed", tmp_path)
    assert load_config(good).market["kind"] == "regression"


# --- agents -------------------------------------------------------------------------------


def test_informed_agent_bids_empirical_distribution():
    spec = compression_clm(CompressionMarket(2))
    agent = TraderAgent("a", "informed", Belief.over_finite([0.25, 0.75]))
    action = agent_act(agent, spec, spec.initial_hypothesis, np.random.default_rng(0))
    assert np.allclose(action.bid, [0.25, 0.75], atol=1e-9)


def test_agents_pass_at_their_optimum():
    spec = compression_clm(CompressionMarket(2))
    agent = TraderAgent("a", "informed", Belief.over_finite([0.5, 0.5]))
    assert agent_act(agent, spec, spec.initial_hypothesis, np.random.default_rng(0)).bid is None
    broke = TraderAgent("b", "budget_optimizer", Belief.over_finite([0.25, 0.75]), budget=0.0)
    assert agent_act(broke, spec, spec.initial_hypothesis, np.random.default_rng(0)).bid is None


def test_budget_optimizer_respects_budget():
    spec = compression_clm(CompressionMarket(3))
    agent = TraderAgent("b", "budget_optimizer", Belief.over_finite([0.7, 0.2, 0.1]), budget=0.1)
    action = agent_act(agent, spec, spec.initial_hypothesis, np.random.default_rng(0))
    assert action.bid is not None
    assert spec.cost(spec.initial_hypothesis, action.bid) <= 0.1 + 1e-9


def test_noise_bids_stay_in_hypothesis_space():
    spec = compression_clm(CompressionMarket(3))
    agent = TraderAgent("n", "noise", step_scale=2.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        action = agent_act(agent, spec, spec.initial_hypothesis, rng)
        if action.bid is not None:
            assert spec.hypothesis_space.contains(action.bid)
