import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavpsr.ddpg import ActorPolicy
from uavpsr.env import QUIT
from uavpsr.evaluation import (ActorController, EpisodeTrace, IntractableError, PassiveController,
                               StepRecord, brute_force_placement, detect_window, hold_still,
                               passive_baseline, run_policy, smooth_curve, steady_state_count,
                               select_checkpoint, steady_state_score, transition_gain)
from uavpsr.apc import make_agent, policy_meta
from uavpsr.scenario import Placement, PhysicalConstants

from conftest import small_config


def test_smooth_constant_and_identity():
    assert np.allclose(smooth_curve([3.0] * 50, 10), 3.0)
    v = np.random.default_rng(0).standard_normal(30)
    assert np.allclose(smooth_curve(v, 1), v)


def test_smooth_step_series():
    v = np.r_[np.zeros(100), np.ones(100)]
    assert smooth_curve(v, 100)[149] == pytest.approx(0.5)
    assert smooth_curve([1.0, 3.0], 100).tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        smooth_curve([], 10)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=80), st.integers(1, 30))
@settings(max_examples=60, deadline=None)
def test_smooth_matches_naive_average(values, window):
    out = smooth_curve(values, window)
    for k in range(len(values)):
        chunk = values[max(0, k - window + 1):k + 1]
        assert out[k] == pytest.approx(sum(chunk) / len(chunk), abs=1e-9)


def policy_for(cfg, seed=0):
    agent = make_agent(cfg, seed)
    return ActorPolicy(agent.normalizer, agent.actor.copy(), policy_meta(cfg))


def scripted_policy(cfg, heading_u, distance_u):
    """Actor with zero last-layer weights: a constant action set by the tanh-space bias."""
    pol = policy_for(cfg)
    mlp = pol.actor.mlp
    mlp.weights[-1][:] = 0.0
    n = cfg.n_uavs
    mlp.biases[-1][:n] = np.arctanh(heading_u)
    mlp.biases[-1][n:] = np.arctanh(distance_u) if distance_u > -1 else -30.0
    return pol


def test_hold_still_trace_constant(small_cfg):
    tr = run_policy(hold_still, small_cfg)
    assert len(tr) == small_cfg.horizon.n_steps
    assert len(set(tr.served.tolist())) == 1
    assert tr.first_status_change() is None


def test_accumulated_us_identity(small_cfg):
    tr = run_policy(ActorController(policy_for(small_cfg)), small_cfg)
    n, beta = small_cfg.users.count, small_cfg.constants.beta
    assert tr.scores.sum() == pytest.approx(n ** beta * tr.rewards.sum())


def test_actor_controller_dimension_mismatch(small_cfg):
    pol = policy_for(small_cfg)
    with pytest.raises(ValueError):
        run_policy(ActorController(pol, [0]), small_cfg)
    one = policy_for(small_config(n_uavs=1, placement=Placement(kind="points", points=((3.0, 3.0),))))
    with pytest.raises(ValueError):
        run_policy(ActorController(one), small_cfg)


def test_actor_controller_battery_offset(small_cfg):
    seen = []

    class Spy(ActorPolicy):
        def __call__(self, state):
            seen.append(np.array(state))
            return np.zeros(2)

    one_cfg = small_config(n_uavs=1, placement=Placement(kind="points", points=((3.0, 3.0),)))
    base = policy_for(one_cfg)
    spy = Spy(base.normalizer, base.actor, base.meta)
    cfg = small_config(battery=(300.0, 1500.0))
    run_policy(ActorController(spy, [0]), cfg)
    assert seen[0][2] == 1500.0  # 300 shifted by 1500 - 300


def test_passive_baseline_without_change_equals_pre_policy(small_cfg):
    pre = policy_for(small_cfg)
    a = run_policy(ActorController(pre), small_cfg)
    b = passive_baseline(small_cfg, pre, None)
    assert np.array_equal(a.served, b.served)
    assert np.array_equal(a.positions(), b.positions())
    with pytest.raises(ValueError):
        passive_baseline(small_cfg, None, None)


def test_passive_quit_freezes_one_step_then_switches():
    cfg = small_config(battery=(175.0, 1500.0), horizon=small_config().horizon)
    pre = scripted_policy(small_config(), 0.0, -1.0)  # hold position
    post_cfg = small_config(n_uavs=1, placement=Placement(kind="points", points=((4.5, 3.0),)))
    post = scripted_policy(post_cfg, 0.0, 0.0)  # heading pi, half a unit per step
    tr = passive_baseline(cfg, pre, post)
    q = next(k for k, s in enumerate(tr.steps) if s.fleet.status[0] == QUIT)
    # the step after the quit is observed: nobody moves
    assert np.array_equal(tr.steps[q + 1].fleet.positions, tr.steps[q].fleet.positions)
    # afterwards the post agent drives the survivor
    assert not np.array_equal(tr.steps[q + 2].fleet.positions[1], tr.steps[q + 1].fleet.positions[1])
    assert tr.first_status_change() == tr.steps[q].t


def test_passive_requires_post_agent_after_quit():
    cfg = small_config(battery=(175.0, 1500.0))
    with pytest.raises(ValueError):
        passive_baseline(cfg, scripted_policy(small_config(), 0.0, -1.0), None)


def _trace(served, n_steps=None, moves=None, quit_at=None):
    n_steps = n_steps or len(served)
    from uavpsr.env import FleetState, ACTIVE
    steps = []
    for k, s in enumerate(served):
        x = 0.0 if moves is None else moves[k]
        st = QUIT if quit_at is not None and k + 1 >= quit_at else ACTIVE
        fleet = FleetState(np.array([x, 9.0]), np.array([0.0, 9.0]), np.array([1000.0, 100.0]),
                           np.array([300.0, 300.0]), [ACTIVE, st])
        steps.append(StepRecord(k + 1, fleet, s, float(s) ** 2, (s / 20) ** 2))
    return EpisodeTrace("t", "p", n_steps, 20, 2.0, steps[0].fleet.copy() if steps else None, steps)


def test_transition_gain_identical_is_zero():
    tr = _trace([10, 12, 14, 14, 14])
    rep = transition_gain(tr, tr, (1, 5))
    assert rep.gain_pct == 0.0 and rep.accumulated_psr == rep.accumulated_baseline


def test_transition_gain_arithmetic():
    a, b = _trace([10, 10, 10]), _trace([10, 5, 10])
    rep = transition_gain(a, b, (1, 3))
    assert rep.accumulated_psr == 300 and rep.accumulated_baseline == 225
    assert rep.gain_pct == pytest.approx(100 * 75 / 225)
    assert rep.min_served_psr == 10 and rep.min_served_baseline == 5
    assert set(rep.as_dict()) >= {"window_start", "window_end", "gain_pct"}
    with pytest.raises(ValueError):
        transition_gain(a, b, (0, 3))
    with pytest.raises(ValueError):
        transition_gain(a, b, (2, 4))


def test_truncated_traces_count_zero_after_termination():
    a, b = _trace([10, 10, 10, 10]), _trace([10, 10], n_steps=4)
    rep = transition_gain(a, b, (1, 4))
    assert rep.accumulated_baseline == 200 and rep.min_served_baseline == 0


def test_steady_state_helpers():
    assert steady_state_count(np.array([5, 7, 7, 7, 8]), 0) == 7
    assert steady_state_count(np.array([5, 6, 7]), 0) == 7
    tr = _trace([1, 2, 3, 4, 5, 6])
    assert steady_state_score(tr, tail=2) == pytest.approx((25 + 36) / 2)


def test_detect_window_spans_divergence_to_settling():
    psr = _trace([20, 20, 18, 15, 15, 15, 15, 15], moves=[0, 0, 1, 2, 2, 2, 2, 2], quit_at=4)
    base = _trace([20, 20, 20, 10, 10, 12, 15, 15], moves=[0, 0, 0, 0, 0, 1, 2, 2], quit_at=4)
    # fleets first differ at step 3; the baseline is within one user of 15 from step 7 on
    assert detect_window(psr, base) == (3, 7)
    same = _trace([20, 20, 20, 15, 15, 15], quit_at=4)
    assert detect_window(same, same) == (4, 4)


def test_oracle_one_disk_capped_by_budget(consts):
    rng = np.random.default_rng(0)
    for n_in in (10, 25, 40):
        users = 3.0 + rng.uniform(-0.3, 0.3, (n_in, 2))
        res = brute_force_placement(users, 1, 0.5, 6, consts)
        assert res.served == min(25, n_in)
        assert res.score == float(min(25, n_in)) ** 2


def test_oracle_zero_users(consts):
    res = brute_force_placement(np.zeros((0, 2)), 2, 1.0, 6, consts)
    assert res.served == 0 and res.score == 0.0


def test_oracle_two_clusters_one_uav_each(consts):
    rng = np.random.default_rng(1)
    users = np.vstack([[1.5, 1.5] + 0.2 * rng.standard_normal((20, 2)),
                       [8.5, 8.5] + 0.2 * rng.standard_normal((20, 2))])
    res = brute_force_placement(users, 2, 0.5, 10, consts)
    assert res.served == 40
    near = sorted(np.linalg.norm(res.positions - [1.5, 1.5], axis=1))
    assert near[0] < 1.8 and near[1] > 5


def test_oracle_refinement_never_worse(consts):
    users = np.random.default_rng(2).uniform(0, 6, (20, 2))
    coarse = brute_force_placement(users, 2, 1.0, 6, consts, refine=False)
    fine = brute_force_placement(users, 2, 1.0, 6, consts, refine=True)
    assert fine.served >= coarse.served and fine.evaluated > coarse.evaluated


def test_oracle_refuses_intractable(consts):
    users = np.random.default_rng(3).uniform(0, 10, (100, 2))
    with pytest.raises(IntractableError, match="exceed"):
        brute_force_placement(users, 5, 0.25, 10, consts)


def test_oracle_dominates_random_placements(consts):
    rng = np.random.default_rng(4)
    users = np.vstack([[2, 2] + 0.5 * rng.standard_normal((12, 2)),
                       [4, 4] + 0.5 * rng.standard_normal((8, 2))]).clip(0, 6)
    best = brute_force_placement(users, 2, 0.5, 6, consts)
    from uavpsr.radio import served_counts_batch
    counts = served_counts_batch(users, rng.uniform(0, 6, (2000, 2, 2)), consts)
    assert counts.max() <= best.served


def test_passive_join_holds_until_newcomer_serves():
    from uavpsr.scenario import Horizon, LineupEvent
    pts = ((1.5, 3.0), (4.5, 3.0), (0.0, 0.0))
    cfg = small_config(n_uavs=3, mode="join", horizon=Horizon(n_steps=14, segments=1),
                       placement=Placement(kind="points", points=pts),
                       events=(LineupEvent("join", 2, takeoff_step=2, takeoff_point=(0.0, 0.0)),))
    pre = scripted_policy(small_config(), 0.5, 0.5)
    post = scripted_policy(small_config(n_uavs=3, placement=Placement(kind="points", points=pts)), 0.0, 0.0)
    tr = passive_baseline(cfg, pre, post)
    joined = next(s.t for s in tr.steps if s.fleet.status[2] == "active")
    assert joined == 9  # takeoff 2, eight climbs of 40 m
    for s in tr.steps:
        if s.t <= joined:
            assert np.array_equal(s.fleet.positions, np.array(pts))
    assert not np.array_equal(tr.steps[joined].fleet.positions, np.array(pts))


def test_select_checkpoint_ranks_by_requested_key(small_cfg, tmp_path):
    variants = [(0.0, -1.0), (0.0, -0.2), (0.5, -0.6), (-0.5, 0.3), (0.9, -0.9)]
    paths, keys = [], []
    for k, (h, d) in enumerate(variants):
        pol = scripted_policy(small_cfg, h, d)
        path = tmp_path / f"v{k}.npz"
        pol.save(path)
        tr = run_policy(ActorController(ActorPolicy.load(path)), small_cfg)
        paths.append(path)
        keys.append((steady_state_score(tr), float(tr.rewards.sum())))
    steady = max(range(len(keys)), key=lambda i: keys[i])
    ret = max(range(len(keys)), key=lambda i: keys[i][::-1])
    assert select_checkpoint(small_cfg, paths)[0] == paths[steady]
    best_path, best_pol, best_trace = select_checkpoint(small_cfg, paths, by="return")
    assert best_path == paths[ret]
    assert float(best_trace.rewards.sum()) == keys[ret][1]
    with pytest.raises(ValueError):
        select_checkpoint(small_cfg, [])
    with pytest.raises(ValueError):
        select_checkpoint(small_cfg, paths, by="median")
