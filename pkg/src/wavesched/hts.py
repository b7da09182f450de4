"""Adaptive hybrid tree search: reduced action sets from deadline- and
peak-ordered candidate orders, searched with open-loop UCT."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .mdp import PlanningProblem, PlanningState, WaveAction, kernel_rng
from .warehouse import Inventory, Order


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class HtsConfig:
    rho: float = 0.7
    rho_min: float = 0.25
    rho_max: float = 0.9
    rho_step: float = 0.05
    beta: float = 0.5
    K: int = 10
    c: float | None = None  # None means sqrt(2) * n_w
    budget: int = 2000
    time_limit: float | None = None  # seconds; stops early when set
    rollout_depth: int = 20
    min_fraction: float = 0.1
    kappa: float = 1.2
    trials_per_action: int = 3
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.rho_min <= self.rho_max <= 1:
            raise ValueError("need 0 <= rho_min <= rho_max <= 1")
        if not self.rho_min <= self.rho <= self.rho_max:
            raise ValueError(f"rho={self.rho} outside [{self.rho_min}, {self.rho_max}]")
        if self.K < 1 or self.budget < 1 or self.rollout_depth < 0 or self.workers < 1:
            raise ValueError("K, budget and workers must be >= 1, rollout_depth >= 0")
        if self.c is not None and self.c < 0:
            raise ValueError("c must be >= 0")
        if not 0 <= self.beta <= 1 or not 0 <= self.min_fraction <= 0.5:
            raise ValueError("beta must be in [0, 1] and min_fraction in [0, 0.5]")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")

    def exploration(self, n_w: int) -> float:
        return math.sqrt(2.0) * n_w if self.c is None else self.c

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CandidateSets:
    by_deadline: tuple[int, ...]
    by_peak: tuple[int, ...]
    peak: int


def compute_deadline_peak(deadlines: Iterable[int]) -> int:
    """Most common deadline; ties go to the earliest."""
    ds = sorted(int(d) for d in deadlines)
    if not ds:
        raise SearchError("no pending orders to take a deadline peak over")
    vals, counts = np.unique(ds, return_counts=True)
    return int(vals[int(np.argmax(counts))])


def build_candidate_sets(problem: PlanningProblem, state: PlanningState) -> CandidateSets:
    by_d, by_p, peak = problem.kernel.candidate_sets(
        problem.ctx, state.quantities.copy(), state.pending.copy(), state.t
    )
    return CandidateSets(tuple(by_d), tuple(by_p), int(peak))


def select_candidate_orders(sets: CandidateSets, rho: float, n_w: int, min_fraction: float, kernel=None) -> list[int]:
    if not 0 <= rho <= 1:
        raise SearchError(f"rho={rho} outside [0, 1]")
    if kernel is None:
        from . import _kernel

        kernel = _kernel.impl
    return list(kernel.select_candidates(list(sets.by_deadline), list(sets.by_peak), rho, 2 * n_w, min_fraction))


def _actions_at(problem, qty, t, cand, K, trials, krng) -> list[WaveAction]:
    flat, ptr, dur, kc = problem.kernel.generate_actions_flat(problem.ctx, qty, t, cand, trials * K, K, krng)
    return _materialize(flat, ptr, dur, kc)


def _materialize(flat, ptr, dur, kc) -> list[WaveAction]:
    ids = flat.tolist()
    bounds = ptr.tolist()
    return [
        WaveAction.trusted(tuple(ids[bounds[j]:bounds[j + 1]]), d, k)
        for j, (d, k) in enumerate(zip(dur.tolist(), kc.tolist()))
    ]


def generate_actions(
    problem: PlanningProblem,
    state: PlanningState,
    candidates: Sequence[int],
    cfg: HtsConfig,
    rng: np.random.Generator | np.ndarray,
) -> list[WaveAction]:
    """Up to K distinct random feasible waves over ``candidates``, shortest estimate first."""
    krng = rng if isinstance(rng, np.ndarray) else kernel_rng(rng)
    return _actions_at(problem, state.quantities.copy(), state.t, list(candidates), cfg.K, cfg.trials_per_action, krng)


_EMPTY = (np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


class SearchNode:
    """Open-loop node: actions are frozen when the node is first reached.

    Waves live in CSR form (``flat``, ``ptr``); ``WaveAction`` objects are only
    built when someone asks for ``actions``.
    """

    __slots__ = ("t", "flat", "ptr", "dur", "kc", "n", "visits", "q", "children", "total_visits", "_actions")

    def __init__(self, actions: Sequence[WaveAction] = (), t: int = 0):
        acts = list(actions)
        ptr = np.zeros(len(acts) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(a.order_ids) for a in acts]) if acts else []
        flat = np.array([i for a in acts for i in a.order_ids], dtype=np.int64)
        dur = np.array([a.estimated_duration for a in acts], dtype=np.int64)
        kc = np.array([a.estimated_containers for a in acts], dtype=np.int64)
        self._init(flat, ptr, dur, kc, t)
        self._actions = acts

    @classmethod
    def from_arrays(cls, flat, ptr, dur, kc, t: int) -> "SearchNode":
        node = cls.__new__(cls)
        node._init(flat, ptr, dur, kc, t)
        return node

    def _init(self, flat, ptr, dur, kc, t) -> None:
        self.t = t
        self.flat, self.ptr, self.dur, self.kc = flat, ptr, dur, kc
        self.n = len(ptr) - 1
        self.visits = [0] * self.n
        self.q = [0.0] * self.n
        self.children: list[SearchNode | None] = [None] * self.n
        self.total_visits = 0
        self._actions = None

    @property
    def actions(self) -> list[WaveAction]:
        if self._actions is None:
            self._actions = _materialize(self.flat, self.ptr, self.dur, self.kc)
        return self._actions

    def update(self, j: int, g: float) -> None:
        self.visits[j] += 1
        self.total_visits += 1
        self.q[j] += (g - self.q[j]) / self.visits[j]

    @property
    def q_values(self) -> dict[WaveAction, float]:
        return {a: self.q[j] for j, a in enumerate(self.actions) if self.visits[j]}


def uct_select(node: SearchNode, c: float, allowed: Sequence[int] | None = None) -> int:
    """Index of the next action: unvisited first, then the highest UCB score."""
    if not node.n:
        raise SearchError("uct_select on a node without actions")
    idx = range(node.n) if allowed is None else allowed
    best, best_v = -1, -math.inf
    log_n = math.log(node.total_visits) if node.total_visits > 0 else 0.0
    for j in idx:
        n = node.visits[j]
        if n == 0:
            return j
        v = node.q[j] + c * math.sqrt(log_n / n)
        if v > best_v:
            best, best_v = j, v
    if best < 0:
        raise SearchError("no allowed action at node")
    return best


@dataclass
class ActionStats:
    action: WaveAction
    q: float
    visits: int
    deadline_share: float

    def to_json(self) -> dict:
        return {"order_ids": list(self.action.order_ids), "Q": self.q, "visits": self.visits}


@dataclass
class SearchResult:
    best: WaveAction | None
    stats: list[ActionStats]
    iterations: int
    root: SearchNode | None = None
    candidates: CandidateSets | None = None


def _best_index(stats: Sequence[ActionStats]) -> int:
    best = -1
    for j, s in enumerate(stats):
        if s.visits == 0:
            continue
        if best < 0 or (s.q, s.visits) > (stats[best].q, stats[best].visits):
            best = j
    return best


def search(
    problem: PlanningProblem,
    root: PlanningState,
    cfg: HtsConfig,
    rng: np.random.Generator | np.ndarray,
) -> SearchResult:
    """Run UCT from ``root`` until the budget is spent.

    Returns ``best=None`` when the root has no feasible wave.
    """
    k = problem.kernel
    ctx = problem.ctx
    krng = rng if isinstance(rng, np.ndarray) else kernel_rng(rng)
    c = cfg.exploration(problem.sortation.n_w)
    T = problem.T
    lam = problem.reward_params.lam
    sets = build_candidate_sets(problem, root)
    cand = select_candidate_orders(sets, root.rho, problem.sortation.n_w, problem.min_fraction, k)
    q0, p0, pend0 = root.arrays()
    if root.is_terminal(T) or not cand:
        return SearchResult(None, [], 0, None, sets)
    node0 = SearchNode.from_arrays(
        *k.generate_actions_flat(ctx, q0, root.t, cand, cfg.trials_per_action * cfg.K, cfg.K, krng), root.t
    )
    if not node0.n:
        return SearchResult(None, [], 0, node0, sets)
    two = 2 * problem.sortation.n_w
    deadline = time.perf_counter() + cfg.time_limit if cfg.time_limit else None
    it = 0
    while it < cfg.budget:
        if deadline is not None and it > 0 and time.perf_counter() >= deadline:
            break
        it += 1
        qty, prog, pend = q0.copy(), p0.copy(), pend0.copy()
        t = root.t
        node = node0
        path: list[tuple[SearchNode, int]] = []
        rewards: list[float] = []
        while t < T and node.n:
            if node is node0:
                allowed = None
            else:
                allowed = k.feasible_actions(ctx, qty, t, node.flat, node.ptr)
                if not allowed:
                    break
            j = uct_select(node, c, allowed)
            r, t = k.step(ctx, qty, prog, pend, t, node.flat[node.ptr[j]:node.ptr[j + 1]], krng)
            path.append((node, j))
            rewards.append(r)
            child = node.children[j]
            if child is None:
                arrays = _EMPTY
                if t < T and pend.any():
                    bd, bp, _ = k.candidate_sets(ctx, qty, pend, t)
                    cc = k.select_candidates(bd, bp, root.rho, two, problem.min_fraction)
                    if cc:
                        arrays = k.generate_actions_flat(ctx, qty, t, cc, cfg.trials_per_action * cfg.K, cfg.K, krng)
                node.children[j] = SearchNode.from_arrays(*arrays, t)
                break
            node = child
        if t < T and pend.any():
            g = k.rollout(ctx, qty, prog, pend, t, root.rho, cfg.rollout_depth, krng)[0]
        else:
            g = -lam * k.accrued_delay(ctx, pend, t)
        for (nd, j), r in zip(reversed(path), reversed(rewards)):
            g += r
            nd.update(j, g)
    in_d = set(sets.by_deadline)
    stats = [
        ActionStats(a, node0.q[j], node0.visits[j], sum(i in in_d for i in a.order_ids) / len(a.order_ids))
        for j, a in enumerate(node0.actions)
    ]
    b = _best_index(stats)
    return SearchResult(stats[b].action, stats, it, node0, sets)


def merge_stats(results: Sequence[SearchResult]) -> list[ActionStats]:
    """Combine root statistics of independent searches by visit-weighted averaging."""
    merged: dict[tuple[int, ...], ActionStats] = {}
    for res in results:
        for s in res.stats:
            key = s.action.order_ids
            m = merged.get(key)
            if m is None:
                merged[key] = ActionStats(s.action, s.q, s.visits, s.deadline_share)
            elif s.visits:
                n = m.visits + s.visits
                m.q = (m.q * m.visits + s.q * s.visits) / n
                m.visits = n
    return list(merged.values())


def search_root_parallel(
    problem: PlanningProblem,
    root: PlanningState,
    cfg: HtsConfig,
    rng: np.random.Generator,
    workers: int | None = None,
) -> SearchResult:
    """Independent searchers on the same root, each with its own stream and a
    share of the budget; root statistics are merged before choosing."""
    n = workers or cfg.workers
    if n <= 1:
        return search(problem, root, cfg, rng)
    seeds = rng.integers(0, 2**63, size=n)
    results = []
    for w in range(n):
        share = cfg.budget // n + (1 if w < cfg.budget % n else 0)
        sub = HtsConfig(**{**asdict(cfg), "budget": max(1, share), "workers": 1})
        results.append(search(problem, root, sub, kernel_rng(int(seeds[w]))))
    stats = merge_stats(results)
    if not stats:
        return SearchResult(None, [], 0, None, results[0].candidates)
    b = _best_index(stats)
    return SearchResult(stats[b].action, stats, sum(r.iterations for r in results), None, results[0].candidates)


def adapt_rho(cfg: HtsConfig, rho: float, stats: Sequence[ActionStats]) -> float:
    """Move rho toward whichever group of root actions (mostly deadline orders
    or mostly peak orders) earned the higher visit-weighted mean value."""
    sums = {True: [0.0, 0], False: [0.0, 0]}
    for s in stats:
        if s.visits == 0 or s.deadline_share == 0.5:
            continue
        g = sums[s.deadline_share > 0.5]
        g[0] += s.q * s.visits
        g[1] += s.visits
    if sums[True][1] and sums[False][1]:
        md = sums[True][0] / sums[True][1]
        mp = sums[False][0] / sums[False][1]
        if md > mp:
            rho += cfg.rho_step
        elif md < mp:
            rho -= cfg.rho_step
    return float(min(cfg.rho_max, max(cfg.rho_min, round(rho, 12))))


class HtsPlanner:
    name = "hts"

    def __init__(self, cfg: HtsConfig = HtsConfig(), record: bool = False):
        self.cfg = cfg
        self.record = record
        self.reset()

    def reset(self) -> None:
        self.rho = self.cfg.rho
        self.diagnostics: list[dict] = []

    def problem_params(self) -> dict:
        return {"kappa": self.cfg.kappa, "beta": self.cfg.beta, "min_fraction": self.cfg.min_fraction}

    def plan(self, problem: PlanningProblem, state: PlanningState, inv: Inventory, rng) -> WaveAction | None:
        root = PlanningState(state.quantities, state.pending, state.t, self.rho, state.progress)
        res = search_root_parallel(problem, root, self.cfg, rng)
        if res.best is None:
            return None
        if self.record:
            self.diagnostics.append(
                {
                    "t": int(state.t),
                    "rho": self.rho,
                    "actions": [s.to_json() for s in res.stats],
                    "chosen": list(res.best.order_ids),
                }
            )
        self.rho = adapt_rho(self.cfg, self.rho, res.stats)
        return res.best
