import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import exact_problem
from wavesched.mdp import (
    MdpError,
    PlanningState,
    RewardParams,
    WaveAction,
    apply_action,
    episode_objective,
    estimate_containers,
    kernel_rng,
    reward,
)
from wavesched.warehouse import Order, SortationConfig

CFG = SortationConfig(n_c=4, n_w=3, stations=1, chutes=8, t_setup=2, t_per_container=1)


def test_reward_examples():
    p = RewardParams(0.01)
    assert reward([(3, 5)] * 5, p) == 5.0
    assert reward([], p) == 0.0
    assert reward([(30, 10)], p) == pytest.approx(-0.2)
    with pytest.raises(MdpError):
        RewardParams(0.0)


def test_wave_action_validation():
    with pytest.raises(MdpError):
        WaveAction(())
    with pytest.raises(MdpError):
        WaveAction((1, 1))
    assert WaveAction((np.int64(2), 0)).order_ids == (2, 0)


def test_state_invariants():
    with pytest.raises(MdpError):
        PlanningState([-1], [1], 0)
    s = PlanningState([3, 0], [1, 0, 1], 4)
    assert s.pending_ids == [0, 2]
    assert not s.is_terminal(10) and s.is_terminal(4)
    with pytest.raises(ValueError):
        s.quantities[0] = 9


def _static_problem(**kw):
    # everything arrives at step 0, every later row is a self-loop
    orders = [Order(0, {0: 2}, 10), Order(1, {0: 1, 1: 3}, 3), Order(2, {1: 2}, 20)]
    return exact_problem(orders, {0: {0: 5, 1: 6}}, CFG, 24, 6, **kw)


def test_no_replenishment_means_exact_consumption():
    prob = _static_problem()
    s = prob.state([5, 6], [0, 1, 2], 0, progress=prob.progress_from_delivered([5, 6], 0))
    nxt, r = apply_action(prob, s, WaveAction((0, 1)), np.random.default_rng(0))
    assert nxt.quantities.tolist() == [2, 3]
    assert nxt.pending_ids == [2]
    # 2 + 1 (product 0) + 1 (product 1) containers -> 2 + 2 = 4 steps
    assert nxt.t == 4
    assert r == pytest.approx(1 - 0.01 * 1)


def test_clearing_everything_is_terminal():
    prob = _static_problem()
    s = prob.state([5, 6], [0, 1, 2], 0)
    nxt, _ = apply_action(prob, s, WaveAction((0, 1, 2)), kernel_rng(1))
    assert nxt.is_terminal(prob.T)
    with pytest.raises(MdpError):
        apply_action(prob, nxt, WaveAction((0,)), kernel_rng(1))


def test_rejects_bad_actions():
    prob = _static_problem()
    s = prob.state([5, 6], [0, 2], 0)
    with pytest.raises(MdpError):
        apply_action(prob, s, (1,), kernel_rng(0))
    with pytest.raises(MdpError):
        apply_action(prob, prob.state([0, 0], [0, 1, 2], 0), (0,), kernel_rng(0))


def test_replenishment_credited_at_completion():
    orders = [Order(0, {0: 1}, 50)]
    prob = exact_problem(orders, {0: {0: 2}, 2: {0: 3}, 9: {0: 5}}, CFG, 12, 4)
    s = prob.state([2], [0], 0, progress=prob.progress_from_delivered([2], 0))
    nxt, _ = apply_action(prob, s, (0,), kernel_rng(0))
    # 1 container -> 3 steps; the step-2 batch lands, the step-9 batch does not
    assert nxt.t == 3
    assert nxt.quantities.tolist() == [1 + 3]


def _stochastic_problem():
    from wavesched.arrival import HistoricalSeason, fit_tvmc, normalize_season
    from wavesched.mdp import PlanningProblem
    from wavesched.warehouse import ProductCatalog

    rng = np.random.default_rng(4)
    seasons = [normalize_season(HistoricalSeason(0, tuple(rng.integers(0, 5, 16)) + (1,), i)) for i in range(6)]
    models = {0: fit_tvmc(seasons, product_id=0)}
    orders = [Order(i, {0: 1 + i % 3}, 3 * i) for i in range(6)]
    return PlanningProblem(orders, ProductCatalog((0,), {0: 200}), models, CFG, 17, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**40))
def test_apply_action_is_deterministic_and_monotone(seed):
    prob = _stochastic_problem()
    s = prob.state([6], range(6), 0)
    a = apply_action(prob, s, (0, 1), kernel_rng(seed))
    b = apply_action(prob, s, (0, 1), kernel_rng(seed))
    assert a[0].same_as(b[0]) and a[1] == b[1]
    assert a[0].t > s.t
    assert np.all(a[0].progress >= s.progress)


def test_rewards_sum_to_objective_when_all_ship():
    prob = _static_problem()
    orders = [Order(o.id, o.demand, o.deadline) for o in prob.orders]
    s = prob.state([5, 6], [0, 1, 2], 0)
    total = 0.0
    for wave in ((1,), (0,), (2,)):
        s, r = apply_action(prob, s, wave, kernel_rng(0))
        total += r
        orders[wave[0]].mark_fulfilled(s.t, orders[wave[0]].demand)
    obj = episode_objective(orders, prob.T)
    assert obj.unfulfilled == 0
    assert total == pytest.approx(obj.on_time - 0.01 * obj.total_delay)
    assert (obj.on_time, obj.total_delay) == (2, 1)


def test_episode_objective_examples():
    a = Order(0, {0: 1}, 10)
    a.mark_fulfilled(9, {0: 1})
    assert episode_objective([a], 20).total_delay == 0
    b = Order(1, {0: 1}, 10)
    b.mark_fulfilled(14, {0: 1})
    assert episode_objective([b], 20).total_delay == 4


def test_episode_objective_against_summation():
    rows = [(5, 3), (5, 7), (None, 20), (None, 40), (31, 30), (12, 12)]
    orders = []
    for i, (f, d) in enumerate(rows):
        o = Order(i, {0: 1}, d)
        if f is not None:
            o.mark_fulfilled(f, {0: 1})
        orders.append(o)
    T = 35
    expect = 0
    for f, d in rows:
        expect += max(0, (T if f is None else f) - d)
    obj = episode_objective(orders, T)
    assert obj.total_delay == expect == 2 + 15 + 1
    assert (obj.on_time, obj.late, obj.unfulfilled, obj.unfulfilled_delay) == (2, 2, 2, 15)


def test_container_estimate():
    assert estimate_containers({0: 5, 1: 1}, 4, 1.0) == 3
    assert estimate_containers([5, 1], 4, 1.2) == 4
    assert estimate_containers({}, 4, 1.2) == 0
