import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavesched.arrival import fit_tvmc, normalize_season, sample_trajectory
from wavesched.greedy import GreedyPlanner
from wavesched.hts import HtsConfig, HtsPlanner
from wavesched.mdp import WaveAction, episode_objective
from wavesched.simulator import (
    ConfigError,
    PlannerContractError,
    PlannerSpec,
    Scenario,
    ScenarioConfig,
    alpha_sweep,
    compare_policies,
    generate_scenario,
    generate_synthetic_history,
    run_episode,
)
from wavesched.warehouse import Order, ProductCatalog

SMALL = ScenarioConfig(
    n_p=5, n_o=120, n_b=10, n_c=10, n_w=6, T=480, arrival_epoch=32, max_unique=3,
    deadline_granularity=32, history_seasons=4,
)
FAST_HTS = HtsConfig(budget=30, K=6, rollout_depth=5)


def test_scenario_shape():
    scen = generate_scenario(SMALL.replace(seed=3))
    assert all(o.size == SMALL.n_b for o in scen.orders)
    assert all(1 <= len(o.demand) <= SMALL.max_unique for o in scen.orders)
    demand = np.zeros(SMALL.n_p, dtype=int)
    for o in scen.orders:
        for p, q in o.demand.items():
            demand[p] += q
    assert scen.arrivals.sum(axis=0).tolist() == demand.tolist()
    assert [scen.catalog.season_total[p] for p in range(SMALL.n_p)] == demand.tolist()
    assert all(0 <= o.deadline <= SMALL.T - 1 for o in scen.orders)


def test_deadline_histogram_is_unimodal_near_mean():
    cfg = ScenarioConfig(n_o=10_000, deadline_std=0.1)
    scen = generate_scenario(cfg)
    d = np.array([o.deadline for o in scen.orders])
    counts = np.bincount(d // (2 * cfg.deadline_granularity))
    mode = int(np.argmax(counts))
    centre = (mode + 0.5) * 2 * cfg.deadline_granularity
    assert abs(centre - cfg.deadline_mean * cfg.T) <= 0.05 * cfg.T
    assert np.all(np.diff(counts[: mode + 1]) >= 0) and np.all(np.diff(counts[mode:]) <= 0)


def test_seed_changes_scenario():
    a, b = generate_scenario(SMALL.replace(seed=1)), generate_scenario(SMALL.replace(seed=2))
    assert a.to_json() != b.to_json()
    assert set(a.to_json()) == set(b.to_json())


def test_history_without_noise_replays_truth():
    cfg = SMALL.replace(history_noise=0.0, history_jitter=False)
    scen = generate_scenario(cfg)
    hist = generate_synthetic_history(cfg, scen, np.random.default_rng(0))
    for p, seasons in hist.items():
        truth = np.zeros(cfg.T, dtype=int)
        truth[scen.arrival_times] = scen.arrivals[:, p]
        assert len(seasons) == cfg.history_seasons
        for s in seasons:
            assert list(s.quantities) == truth.tolist()


def test_noisy_history_totals_and_fit_end_state():
    scen = generate_scenario(SMALL)
    hist = generate_synthetic_history(SMALL, scen, np.random.default_rng(1))
    for p, seasons in hist.items():
        assert {s.total for s in seasons} == {int(scen.arrivals[:, p].sum())}
    model = fit_tvmc([normalize_season(s) for s in hist[0]])
    rng = np.random.default_rng(2)
    assert np.mean([sample_trajectory(model, rng)[-1] for _ in range(50)]) == 1000


def _manual(orders, arrivals_at, T=200, n_p=2, **kw):
    cfg = ScenarioConfig(n_p=n_p, n_o=len(orders), n_b=4, n_c=10, n_w=4, T=T, arrival_epoch=20,
                         max_unique=min(2, n_p), history_seasons=2, **kw)
    times = np.array(sorted(arrivals_at), dtype=np.int64)
    arr = np.array([arrivals_at[t] for t in times], dtype=np.int64).reshape(len(times), n_p)
    totals = {p: int(arr[:, p].sum()) for p in range(n_p)}
    return Scenario(cfg, orders, ProductCatalog(tuple(range(n_p)), totals), times, arr)


def test_everything_on_hand_everything_on_time():
    orders = [Order(i, {i % 2: 4}, 150) for i in range(6)]
    scen = _manual(orders, {0: [12, 12]})
    for planner in (GreedyPlanner(), HtsPlanner(FAST_HTS)):
        m = run_episode(scen, planner).metrics()
        assert m["on_time_pct"] == 100.0 and m["missed_pct"] == 0.0


def test_no_arrivals_no_waves():
    orders = [Order(i, {0: 4}, 50) for i in range(3)]
    scen = _manual(orders, {}, n_p=1)
    res = run_episode(scen, GreedyPlanner())
    m = res.metrics()
    assert m["n_waves"] == 0 and m["missed_pct"] == 100.0
    assert m["unfulfilled_count"] == 3 and m["total_delay"] == 3 * 150


class _Cheater:
    name = "cheater"

    def plan(self, problem, state, inv, rng):
        return WaveAction((0, 1))


def test_infeasible_plan_aborts():
    orders = [Order(0, {0: 4}, 50), Order(1, {0: 4}, 50)]
    scen = _manual(orders, {0: [4]}, n_p=1)
    with pytest.raises(PlannerContractError, match="cheater"):
        run_episode(scen, _Cheater())


@pytest.mark.parametrize("planner", [GreedyPlanner, lambda: HtsPlanner(FAST_HTS)])
def test_episode_is_deterministic(planner):
    scen = generate_scenario(SMALL)
    a = run_episode(scen, planner(), seed=4)
    b = run_episode(scen, planner(), seed=4)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def _check_identities(res, scen):
    m = res.metrics()
    n = len(res.per_order)
    assert m["on_time"] + m["late"] + m["unfulfilled_count"] == n
    assert m["on_time_pct"] + m["missed_pct"] == pytest.approx(100.0)
    D = sum(max(0, (res.T if f is None else f) - d) for _, f, d, _, _, _ in res.per_order)
    assert m["total_delay"] == D
    assert res.conservation_holds()
    # an order cannot finish before the last epoch that fed it could be delivered
    starts = {i: w.start for w in res.waves for i in w.orders}
    for oid, f, d, part, shipped, _ in res.per_order:
        if f is None:
            continue
        assert f > starts[oid]
        fed = [t for t in scen.arrival_times if t <= starts[oid]]
        assert fed and f >= fed[-1]
    late_or_missed = [max(0, (res.T if f is None else f) - d) for _, f, d, _, _, _ in res.per_order
                      if f is None or f > d]
    if late_or_missed:
        assert m["avg_delay_late_days"] == pytest.approx(np.mean(late_or_missed) * res.dt / 1440)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.75, 1.0]))
def test_episode_identities(seed, alpha):
    scen = generate_scenario(SMALL.replace(seed=seed))
    for planner in (GreedyPlanner(), HtsPlanner(FAST_HTS)):
        res = run_episode(scen, planner, alpha=alpha)
        _check_identities(res, scen)


def test_rewards_match_objective_when_all_ship():
    orders = [Order(i, {i % 2: 4}, 30 + 10 * i) for i in range(8)]
    scen = _manual(orders, {0: [8, 8], 40: [8, 8]})
    res = run_episode(scen, GreedyPlanner())
    m = res.metrics()
    assert m["unfulfilled_count"] == 0
    assert res.total_reward == pytest.approx(m["on_time"] - res.lam * m["total_delay"], abs=1e-9)


def test_compare_identical_planners():
    spec = PlannerSpec("greedy")
    table = compare_policies(SMALL, [spec, spec], [7])
    a, b = table.rows
    assert a == b
    agg = compare_policies(SMALL, [spec], [7]).aggregate()
    assert agg[0]["n_seeds"] == 1 and agg[0]["on_time_pct_var"] == 0.0


def test_sweep_single_alpha_matches_compare():
    specs = [PlannerSpec("greedy"), PlannerSpec("hts", FAST_HTS)]
    assert alpha_sweep(SMALL, [1.0], specs, [1, 2]).rows == compare_policies(SMALL, specs, [1, 2], alpha=1.0).rows
    with pytest.raises(ConfigError):
        alpha_sweep(SMALL, [0.4], specs, [1])
    with pytest.raises(ConfigError):
        compare_policies(SMALL, specs, [])


def test_parallel_rows_match_sequential():
    specs = [PlannerSpec("greedy"), PlannerSpec("hts", FAST_HTS)]
    seq = compare_policies(SMALL, specs, [1, 2])
    par = compare_policies(SMALL, specs, [1, 2], workers=2)
    assert seq.rows_csv() == par.rows_csv()


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError, match="alpha"):
        ScenarioConfig(alpha=0.4)
    with pytest.raises(ConfigError, match="max_unique"):
        ScenarioConfig(max_unique=0)
    with pytest.raises(ConfigError, match="scenario.n_w"):
        ScenarioConfig.from_json({"n_w": "many"})
    with pytest.raises(ConfigError, match="scenario.bogus"):
        ScenarioConfig.from_json({"bogus": 1})
    assert ScenarioConfig.from_json(SMALL.to_json()) == SMALL
    with pytest.raises(ConfigError):
        PlannerSpec("random").build()


def test_scenario_file_roundtrip(tmp_path):
    scen = generate_scenario(SMALL)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    scen.save(p1)
    Scenario.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = Scenario.load(p1)
    assert run_episode(back, GreedyPlanner()).to_json() == run_episode(scen, GreedyPlanner()).to_json()


def test_episode_objective_agrees_with_metrics():
    scen = generate_scenario(SMALL.replace(seed=9))
    res = run_episode(scen, GreedyPlanner())
    orders = []
    for oid, f, d, _, _, _ in res.per_order:
        o = Order(oid, {0: 1}, d)
        if f is not None:
            o.mark_fulfilled(f, {0: 1})
        orders.append(o)
    assert episode_objective(orders, res.T).total_delay == res.metrics()["total_delay"]
