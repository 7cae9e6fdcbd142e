import math

import numpy as np
import pytest

from riskagent.cppo import (CvarConfig, CvarHook, CvarState, PenaltyData, cppo_loss, cvar_penalty,
                            eta_subgradient, graph_penalty, penalty_data, train_cppo, update_eta,
                            update_lambda)
from riskagent.env import EnvConfig, TradingEnv
from riskagent.errors import ConfigError
from riskagent.ppo import TrainConfig, ppo_loss, train

from gradcheck import TOL, cppo_error, random_instance
from oracles import cvar_penalty_loop


def test_penalty_matches_loop_oracle(rng):
    worst = 0.0
    for _ in range(1000):
        ds = rng.normal(0, 1, int(rng.integers(1, 50)))
        eta, alpha, beta = rng.normal(), rng.uniform(0.01, 0.99), rng.uniform(0, 0.1)
        worst = max(worst, abs(cvar_penalty(ds, eta, alpha, beta) - cvar_penalty_loop(ds, eta, alpha, beta)))
    assert worst <= 1e-12


def test_penalty_hand_values():
    assert cvar_penalty([0.0], 1.0, 0.05, 0.0) == pytest.approx(1 / 0.95 - 1, abs=1e-15)
    assert cvar_penalty([2.0, 3.0, 5.0], 1.0, 0.05, 0.01) == 0.01 - 1.0


def test_penalty_errors():
    with pytest.raises(ValueError):
        cvar_penalty([], 0.0, 0.05, 0.0)
    with pytest.raises(ZeroDivisionError):
        cvar_penalty([1.0], 0.0, 1.0, 0.0)
    with pytest.raises(ConfigError):
        CvarConfig(alpha=1.0)
    with pytest.raises(ConfigError):
        CvarConfig(lambda_init=11.0)


def test_eta_steps():
    assert update_eta(0.0, [1.0, 2.0], 0.05, 0.1) == pytest.approx(0.1)
    assert update_eta(5.0, [1.0, 2.0], 0.05, 0.1) == pytest.approx(5.0 - 0.1 * (1 / 0.95 - 1))
    with pytest.raises(ValueError):
        update_eta(0.0, [], 0.05, 0.1)


def test_lambda_projection():
    assert update_lambda(0.7, 0.0, 0.1, 10.0) == 0.7
    assert update_lambda(0.0, -3.0, 0.1, 10.0) == 0.0
    assert update_lambda(9.99, 5.0, 0.1, 10.0) == 10.0


def grid_argmin(ds, alpha, lo=-5, hi=5, n=20001):
    grid = np.linspace(lo, hi, n)
    g = np.array([cvar_penalty(ds, e, alpha, 0.0) for e in grid])
    return grid, g


def test_penalty_convex_in_eta(rng):
    for _ in range(20):
        ds = rng.normal(0, 1, 30)
        alpha = float(rng.choice([0.05, 0.5, 0.95]))
        grid, g = grid_argmin(ds, alpha)
        second = g[2:] - 2 * g[1:-1] + g[:-2]
        assert second.min() >= -1e-9
        # minimizers form one contiguous flat interval
        at_min = np.flatnonzero(g <= g.min() + 1e-12)
        assert np.all(np.diff(at_min) == 1)


def test_eta_iterates_descend_then_settle(rng):
    for _ in range(20):
        ds = rng.normal(0, 1, 40)
        alpha = float(rng.choice([0.5, 0.95]))
        step = 0.01
        _, g_grid = grid_argmin(ds, alpha)
        eta = 4.0 if rng.random() < 0.5 else -4.0
        sign0 = np.sign(eta_subgradient(ds, eta, alpha))
        g_prev = cvar_penalty(ds, eta, alpha, 0.0)
        flipped = False
        for _ in range(3000):
            eta = update_eta(eta, ds, alpha, step)
            g_now = cvar_penalty(ds, eta, alpha, 0.0)
            flipped = flipped or np.sign(eta_subgradient(ds, eta, alpha)) != sign0
            if not flipped:
                assert g_now <= g_prev + 1e-12
            g_prev = g_now
        slope_bound = 1 / (1 - alpha)
        assert g_prev - g_grid.min() <= 2 * step * slope_bound


def test_minimizer_translation_equivariant(rng):
    for _ in range(10):
        ds = rng.normal(0, 1, 25)
        c = float(rng.uniform(-1, 1))
        grid, g = grid_argmin(ds, 0.9)
        grid2, g2 = grid_argmin(ds + c, 0.9, -5 + c, 5 + c)
        lo, hi = grid[g <= g.min() + 1e-12][[0, -1]]
        lo2, hi2 = grid2[g2 <= g2.min() + 1e-12][[0, -1]]
        assert lo2 == pytest.approx(lo + c, abs=1e-6) and hi2 == pytest.approx(hi + c, abs=1e-6)


def test_lambda_zero_equals_ppo_loss():
    for seed in range(20):
        params, batch, penalty, state, cfg, _ = random_instance(seed)
        state = CvarState(state.eta, 0.0)
        a = cppo_loss(batch, params, state, cfg, penalty).item()
        b = ppo_loss(batch, params).total.item()
        assert abs(a - b) <= 1e-12


def test_lambda_one_all_above_eta_shifts_by_constant():
    for seed in range(20):
        params, batch, penalty, _, cfg, _ = random_instance(seed)
        state = CvarState(float(penalty.returns.min()) - 1.0, 1.0)
        a = cppo_loss(batch, params, state, cfg, penalty).item()
        b = ppo_loss(batch, params).total.item()
        assert a == pytest.approx(b + cfg.beta - state.eta, abs=1e-12)


def test_graph_penalty_at_behaviour_policy_equals_formula():
    # with old log-probs equal to the current ones every weight is 1
    from riskagent.policy import forward, log_prob
    for seed in range(10):
        params, _, penalty, state, cfg, _ = random_instance(seed)
        dist, _ = forward(params, penalty.obs)
        exact = PenaltyData(penalty.obs, penalty.raw_actions, log_prob(dist, penalty.raw_actions),
                            penalty.segment_ids, penalty.returns)
        got = graph_penalty(params, exact, state, cfg).item()
        assert got == pytest.approx(cvar_penalty(penalty.returns, state.eta, cfg.alpha, cfg.beta), abs=1e-12)


def test_active_subset_gives_same_value_and_gradient():
    from riskagent.policy import gradient
    for seed in range(10):
        params, _, penalty, state, cfg, _ = random_instance(seed)
        full = gradient(lambda p: graph_penalty(p, penalty, state, cfg), params)
        sub = penalty.active(state.eta)
        part = gradient(lambda p: graph_penalty(p, sub, state, cfg), params)
        assert graph_penalty(params, penalty, state, cfg).item() == pytest.approx(
            graph_penalty(params, sub, state, cfg).item(), abs=1e-14)
        assert np.allclose(full.flat(), part.flat(), atol=1e-14)


def test_cppo_gradients_match_finite_differences():
    worst = max(cppo_error(random_instance(seed)) for seed in range(100))
    assert worst < TOL


def test_penalty_data_excludes_partial_segments(mr_panel):
    from riskagent.policy import PolicyConfig, init_params
    from riskagent.ppo import Collector
    env = TradingEnv(mr_panel, EnvConfig(episode_length=30))
    col = Collector(env, None, np.random.default_rng(0))
    params = init_params(env.observation_size, 2, PolicyConfig(), 0)
    ro = col.collect(params, 100, "clip")
    data = penalty_data(ro, risk_adjusted=False)
    assert data.n_segments == 3 and len(data.obs) == 90
    assert np.allclose(data.returns, [ro.rewards[k * 30:(k + 1) * 30].sum() for k in range(3)])
    ro2 = col.collect(params, 100, "clip")
    # the episode straddling the two windows is excluded from the second one too
    assert all(s.complete for s in ro2.complete_segments())
    assert penalty_data(ro2, False).n_segments == 2


def _factory(panel):
    return lambda seed: TradingEnv(panel, EnvConfig(episode_length=40, random_start=True), seed=seed)


def test_penalty_disabled_log_identical_to_ppo(mr_panel):
    cfg = TrainConfig(epochs=2, steps_per_epoch=200, update_passes=2, seed=3)
    a = train(_factory(mr_panel), cfg)
    b = train_cppo(_factory(mr_panel), cfg, CvarConfig(lambda_init=0.0, lambda_max=0.0))
    assert a.params.equals(b.params)
    for ra, rb in zip(a.log, b.log):
        for key, val in ra.items():
            if key != "wall_time":
                assert rb[key] == val
        assert {"eta", "lambda", "cvar_penalty", "mean_Rf"} <= set(rb)
        assert rb["lambda"] == 0.0


def test_lambda_trace_bounded(mr_panel):
    cvar = CvarConfig(alpha=0.95, lambda_init=0.5, lambda_max=0.7, lambda_step=5.0)
    res = train_cppo(_factory(mr_panel), TrainConfig(epochs=4, steps_per_epoch=200, update_passes=1),
                     cvar)
    lams = [lam for _, lam in res.hook.trace]
    assert len(lams) == 4 and all(0.0 <= lam <= 0.7 for lam in lams)
    assert all(math.isfinite(eta) for eta, _ in res.hook.trace)


def test_eta_initialised_from_first_epoch(mr_panel):
    hook = CvarHook(CvarConfig())
    from riskagent.policy import PolicyConfig, init_params
    from riskagent.ppo import Collector
    env = _factory(mr_panel)(0)
    ro = Collector(env, None, np.random.default_rng(1)).collect(
        init_params(env.observation_size, 2, PolicyConfig(), 0), 400, "clip")
    hook.begin_epoch(ro)
    assert hook.state.eta == pytest.approx(np.percentile(penalty_data(ro, False).returns, 5))
