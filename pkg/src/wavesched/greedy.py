"""Industry-baseline wave builder: earliest-deadline seed, then container-minimizing growth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import PlanningProblem, PlanningState, WaveAction
from .warehouse import Inventory


@dataclass(frozen=True)
class GreedyConfig:
    candidate_multiplier: int = 2

    def __post_init__(self) -> None:
        if self.candidate_multiplier < 1:
            raise ValueError("candidate_multiplier must be >= 1")


def container_arrays(inv: Inventory) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """CSR view ``(ptr, product, qty, ids)`` of the containers, ascending id."""
    ids = sorted(inv.containers)
    ptr = [0]
    prod: list[int] = []
    qty: list[int] = []
    for cid in ids:
        for p, q in sorted(inv.containers[cid].contents.items()):
            prod.append(p)
            qty.append(q)
        ptr.append(len(prod))
    return (
        np.asarray(ptr, dtype=np.int64),
        np.asarray(prod, dtype=np.int64),
        np.asarray(qty, dtype=np.int64),
        ids,
    )


def plan_wave_greedy(
    problem: PlanningProblem,
    state: PlanningState,
    inv: Inventory,
    cfg: GreedyConfig = GreedyConfig(),
) -> WaveAction | None:
    """Greedy wave for ``state``, or ``None`` when no pending order can ship.

    ``state.quantities`` must equal the inventory aggregate.
    """
    k = problem.kernel
    qty = state.quantities.copy()
    limit = cfg.candidate_multiplier * problem.sortation.n_w
    cand = k.feasible_by_deadline(problem.ctx, qty, state.pending.copy(), state.t, limit)
    if not cand:
        return None
    cptr, cprod, cqty, _ = container_arrays(inv)
    wave = k.greedy_wave(problem.ctx, qty, state.t, list(cand), cptr, cprod, cqty)
    return problem.action(state, wave)


class GreedyPlanner:
    name = "greedy"

    def __init__(self, cfg: GreedyConfig = GreedyConfig()):
        self.cfg = cfg

    def problem_params(self) -> dict:
        return {}

    def plan(self, problem: PlanningProblem, state: PlanningState, inv: Inventory, rng) -> WaveAction | None:
        return plan_wave_greedy(problem, state, inv, self.cfg)
