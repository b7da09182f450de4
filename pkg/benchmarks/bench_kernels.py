"""Compiled vs pure-Python kernels on one desk-scale decision state.

    python benchmarks/bench_kernels.py [--repeat 5] [--budget 200]
"""

import argparse
import statistics
import time

import numpy as np

from wavesched import _kernel
from wavesched.hts import HtsConfig, build_candidate_sets, search, select_candidate_orders
from wavesched.mdp import PlanningProblem, RewardParams, kernel_rng
from wavesched.simulator import ScenarioConfig, scenario_for_seed


def decision_state(backend, seed):
    scen = scenario_for_seed(ScenarioConfig(), seed)
    cfg = scen.config
    prob = PlanningProblem(
        scen.fresh_orders(), scen.catalog, scen.ensure_models(), cfg.sortation(), cfg.T, cfg.arrival_epoch,
        alpha=cfg.alpha, reward_params=RewardParams(cfg.lam), backend=backend,
    )
    # a mid-season state: everything due by now has arrived, nothing shipped yet
    t = cfg.T // 3
    got = scen.arrivals[scen.arrival_times <= t].sum(axis=0)
    state = prob.state(got, range(prob.n_o), t, progress=prob.progress_from_delivered(got, t))
    return prob, state


def timed(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--budget", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = _kernel.available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the python backend is available")
    results = {}
    for b in backends:
        prob, s = decision_state(b, args.seed)
        k = prob.kernel
        sets = build_candidate_sets(prob, s)
        cand = select_candidate_orders(sets, s.rho, prob.sortation.n_w, prob.min_fraction, k)
        q, prog, pend = s.arrays()
        cases = {
            "candidate_sets": lambda: k.candidate_sets(prob.ctx, q.copy(), pend.copy(), s.t),
            "generate_actions K=10": lambda: k.generate_actions_flat(prob.ctx, q.copy(), s.t, cand, 30, 10, kernel_rng(1)),
            "rollout depth=20": lambda: k.rollout(prob.ctx, q.copy(), prog.copy(), pend.copy(), s.t, s.rho, 20, kernel_rng(2)),
            f"search budget={args.budget}": lambda: search(prob, s, HtsConfig(budget=args.budget), kernel_rng(3)),
        }
        results[b] = {name: timed(fn, args.repeat) for name, fn in cases.items()}

    names = list(next(iter(results.values())))
    print(f"{'kernel':<26}" + "".join(f"{b:>14}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for n in names:
        line = f"{n:<26}" + "".join(f"{results[b][n] * 1e3:>12.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{results['python'][n] / results['compiled'][n]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
