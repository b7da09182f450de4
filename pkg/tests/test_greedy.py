import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import exact_problem
from oracles import brute_force_cover
from wavesched.greedy import GreedyConfig, GreedyPlanner, plan_wave_greedy
from wavesched.warehouse import IntermediateContainer, Inventory, Order, SortationConfig, wave_feasible


def setup(orders, containers, n_w=3, alpha=1.0, t=0):
    inv = Inventory(IntermediateContainer(i, 0, dict(c)) for i, c in enumerate(containers))
    agg = inv.aggregate
    n_p = 1 + max(agg)
    cfg = SortationConfig(n_c=10, n_w=n_w, stations=1, chutes=8, t_setup=2, t_per_container=1)
    prob = exact_problem(orders, {0: {p: agg.get(p, 0) for p in range(n_p)}}, cfg, 40, 10, alpha=alpha)
    state = prob.state([agg.get(p, 0) for p in range(n_p)], [o.id for o in orders], t)
    return prob, state, inv


def test_single_feasible_order():
    prob, s, inv = setup([Order(0, {0: 3}, 5), Order(1, {1: 9}, 2)], [{0: 3}, {1: 1}])
    assert plan_wave_greedy(prob, s, inv).order_ids == (0,)


def test_nothing_feasible_returns_none():
    prob, s, inv = setup([Order(0, {0: 5}, 5)], [{0: 3}])
    assert plan_wave_greedy(prob, s, inv) is None
    assert GreedyPlanner().plan(prob, s, inv, None) is None


def test_container_sharing_order_goes_second():
    # seed needs container 0; order 2 lives in the same container, order 1 does not
    orders = [Order(0, {0: 1}, 1), Order(1, {1: 1}, 5), Order(2, {2: 1}, 5)]
    containers = [{0: 1, 2: 1}, {1: 1}]
    prob, s, inv = setup(orders, containers, n_w=2)
    cmap = dict(enumerate(containers))
    assert brute_force_cover(cmap, {0: 1, 2: 1}) == 1
    assert brute_force_cover(cmap, {0: 1, 1: 1}) == 2
    assert plan_wave_greedy(prob, s, inv).order_ids == (0, 2)


def test_capacity_and_seed():
    orders = [Order(0, {0: 1}, 9), Order(1, {0: 1}, 4), Order(2, {0: 1}, 7)]
    prob, s, inv = setup(orders, [{0: 3}], n_w=2)
    wave = plan_wave_greedy(prob, s, inv).order_ids
    assert len(wave) == 2 and 1 in wave


def test_config_validation():
    with pytest.raises(ValueError):
        GreedyConfig(candidate_multiplier=0)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n_p = int(rng.integers(1, 4))
    containers = []
    for _ in range(int(rng.integers(1, 6))):
        prods = rng.choice(n_p, size=int(rng.integers(1, n_p + 1)), replace=False)
        containers.append({int(p): int(rng.integers(1, 6)) for p in prods})
    # make sure every product exists somewhere
    for p in range(n_p):
        containers[0].setdefault(p, 1)
    orders = []
    for i in range(int(rng.integers(1, 8))):
        prods = rng.choice(n_p, size=int(rng.integers(1, n_p + 1)), replace=False)
        orders.append(Order(i, {int(p): int(rng.integers(1, 5)) for p in prods}, int(rng.integers(0, 40))))
    alpha = float(rng.choice([1.0, 0.75, 0.5]))
    return setup(orders, containers, n_w=int(rng.integers(1, 4)), alpha=alpha, t=int(rng.integers(0, 40)))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_waves_feasible_and_seeded_by_min_deadline(seed):
    prob, s, inv = _random_case(seed)
    a = plan_wave_greedy(prob, s, inv)
    if a is None:
        return
    orders = [prob.orders[i] for i in a.order_ids]
    assert wave_feasible(orders, inv, prob.alpha, s.t, prob.sortation)
    cand = prob.kernel.feasible_by_deadline(prob.ctx, s.quantities.copy(), s.pending.copy(), s.t, 2 * prob.sortation.n_w)
    assert set(a.order_ids) <= set(cand)
    assert cand[0] in a.order_ids
    assert min(o.deadline for o in orders) == prob.orders[cand[0]].deadline


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**16))
def test_aggregate_feasibility_matches_container_level(seed, pick):
    prob, s, inv = _random_case(seed)
    rng = np.random.default_rng(pick)
    k = int(rng.integers(1, prob.n_o + 1))
    ids = sorted(rng.choice(prob.n_o, size=k, replace=False).tolist())
    agg = prob.is_feasible(s, ids)
    full = wave_feasible([prob.orders[i] for i in ids], inv, prob.alpha, s.t, prob.sortation)
    assert agg == full
