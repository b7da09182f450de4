"""Wave-scheduling MDP: planning state, wave actions, reward, the sampled
transition (wave duration, consumption, arrival-model replenishment) and the
season objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernel
from .arrival import GRID_MAX, TvmcModel
from .warehouse import Order, ProductCatalog, SortationConfig


class MdpError(ValueError):
    pass


@dataclass(frozen=True)
class RewardParams:
    lam: float = 0.01  # penalty per time step of lateness

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise MdpError("lambda must be > 0")


def reward(completed: Iterable[tuple[int, int]], params: RewardParams) -> float:
    """On-time count minus ``lam`` times the summed lateness of ``(f, d)`` pairs."""
    hits = 0
    late = 0
    for f, d in completed:
        if f <= d:
            hits += 1
        else:
            late += f - d
    return hits - params.lam * late


@dataclass(frozen=True)
class WaveAction:
    order_ids: tuple[int, ...]
    estimated_duration: int = 0
    estimated_containers: int = 0

    def __post_init__(self) -> None:
        ids = tuple(int(i) for i in self.order_ids)
        if not ids:
            raise MdpError("a wave action needs at least one order")
        if len(set(ids)) != len(ids):
            raise MdpError(f"duplicate orders in wave {ids}")
        object.__setattr__(self, "order_ids", ids)

    @classmethod
    def trusted(cls, order_ids: tuple[int, ...], estimated_duration: int, estimated_containers: int) -> "WaveAction":
        """Skip validation for ids already known to be distinct ints."""
        a = object.__new__(cls)
        object.__setattr__(a, "order_ids", order_ids)
        object.__setattr__(a, "estimated_duration", estimated_duration)
        object.__setattr__(a, "estimated_containers", estimated_containers)
        return a


@dataclass(frozen=True, eq=False)
class PlanningState:
    """Aggregate quantities, pending-order mask and time, plus the per-product
    arrival-progress states the replenishment model chains from."""

    quantities: np.ndarray
    pending: np.ndarray
    t: int
    rho: float = 0.7
    progress: np.ndarray | None = None

    def __post_init__(self) -> None:
        q = np.array(self.quantities, dtype=np.int64)
        if np.any(q < 0):
            raise MdpError("quantities must be >= 0")
        object.__setattr__(self, "quantities", q)
        object.__setattr__(self, "pending", np.array(self.pending, dtype=np.uint8))
        prog = np.zeros(len(q), dtype=np.int64) if self.progress is None else self.progress
        object.__setattr__(self, "progress", np.array(prog, dtype=np.int64))
        for a in (self.quantities, self.pending, self.progress):
            a.setflags(write=False)

    @property
    def pending_ids(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.pending)]

    def is_terminal(self, T: int) -> bool:
        return self.t >= T or not self.pending.any()

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Writable copies ``(qty, progress, pending)`` for the kernels."""
        return self.quantities.copy(), self.progress.copy(), self.pending.copy()

    def same_as(self, other: "PlanningState") -> bool:
        return (
            self.t == other.t
            and self.rho == other.rho
            and np.array_equal(self.quantities, other.quantities)
            and np.array_equal(self.pending, other.pending)
            and np.array_equal(self.progress, other.progress)
        )

    def to_json(self) -> dict:
        return {
            "t": int(self.t),
            "rho": float(self.rho),
            "quantities": [int(x) for x in self.quantities],
            "pending": self.pending_ids,
            "progress": [int(x) for x in self.progress],
        }


def pack_models(models: Mapping[int, TvmcModel], n_p: int, T: int) -> dict[str, np.ndarray]:
    """Concatenate per-product models into the flat arrays the kernels read."""
    row_ptr, src, tgt_ptr, tgt, cum = [], [], [], [], []
    identity = np.ones((n_p, T), dtype=np.uint8)
    src_off = 0
    tgt_off = 0
    for p in range(n_p):
        m = models.get(p)
        if m is None:
            row_ptr.append(np.full(T + 1, src_off, dtype=np.int64))
            continue
        if m.T != T:
            raise MdpError(f"arrival model for product {p} has T={m.T}, scenario has T={T}")
        row_ptr.append(m.row_ptr + src_off)
        src.append(m.src)
        tgt_ptr.append(m.tgt_ptr[:-1] + tgt_off)
        tgt.append(m.tgt)
        cum.append(m._cum)
        n_tg = np.diff(m.tgt_ptr)
        first = m.tgt[m.tgt_ptr[:-1]] if m.n_rows else np.zeros(0, dtype=np.int64)
        moving = ~((n_tg == 1) & (first == m.src))
        row_t = np.repeat(np.arange(T), np.diff(m.row_ptr))
        identity[p] = np.bincount(row_t[moving], minlength=T) == 0
        src_off += m.n_rows
        tgt_off += len(m.tgt)
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
    return {
        "tv_row_ptr": np.concatenate(row_ptr).astype(np.int64),
        "tv_src": cat(src, np.int64),
        "tv_tgt_ptr": np.r_[cat(tgt_ptr, np.int64), tgt_off].astype(np.int64),
        "tv_tgt": cat(tgt, np.int64),
        "tv_cum": cat(cum, np.float64),
        "tv_identity": identity.ravel(),
    }


@dataclass
class PlanningProblem:
    """Static data shared by every state of one episode, compiled for the kernels.

    Order ids must be ``0..n_o-1`` and product ids ``0..n_p-1``.
    """

    orders: Sequence[Order]
    catalog: ProductCatalog
    models: Mapping[int, TvmcModel]
    sortation: SortationConfig
    T: int
    epoch: int
    alpha: float = 1.0
    reward_params: RewardParams = field(default_factory=RewardParams)
    kappa: float = 1.2
    beta: float = 0.5
    min_fraction: float = 0.1
    backend: str | None = None

    def __post_init__(self) -> None:
        if [o.id for o in self.orders] != list(range(len(self.orders))):
            raise MdpError("order ids must be 0..n_o-1 in order")
        if list(self.catalog.products) != list(range(self.catalog.n_p)):
            raise MdpError("product ids must be 0..n_p-1")
        self.kernel = _kernel.impl if self.backend is None else _kernel.backend(self.backend)
        n_p = self.catalog.n_p
        optr = [0]
        prod, qty = [], []
        for o in self.orders:
            for p, b in o.demand.items():
                prod.append(p)
                qty.append(b)
            optr.append(len(prod))
        tv = pack_models(self.models, n_p, self.T)
        self.ctx = self.kernel.Context(
            np.asarray(optr, dtype=np.int64),
            np.asarray(prod, dtype=np.int64),
            np.asarray(qty, dtype=np.int64),
            np.asarray([o.deadline for o in self.orders], dtype=np.int64),
            np.asarray([self.catalog.season_total.get(p, 0) for p in range(n_p)], dtype=np.int64),
            tv["tv_row_ptr"], tv["tv_src"], tv["tv_tgt_ptr"], tv["tv_tgt"], tv["tv_cum"], tv["tv_identity"],
            self.T, self.sortation.n_w, self.sortation.n_c, self.epoch,
            self.sortation.t_setup, self.sortation.t_per_container, self.kappa,
            self.sortation.duration_noise, self.alpha, self.reward_params.lam,
            self.beta, self.min_fraction,
        )

    @property
    def n_p(self) -> int:
        return self.catalog.n_p

    @property
    def n_o(self) -> int:
        return len(self.orders)

    def progress_from_delivered(self, delivered: Sequence[int], t: int) -> np.ndarray:
        """Map delivered-so-far totals onto arrival-model states at ``t``.

        The raw per-mille progress is snapped to the nearest state the model has
        a row for at ``t + 1`` (ties to the lower state); without that, any
        unseen state would freeze the product's future arrivals.
        """
        out = np.zeros(self.n_p, dtype=np.int64)
        for p in range(self.n_p):
            tot = self.catalog.season_total.get(p, 0)
            raw = GRID_MAX if tot <= 0 else min(GRID_MAX, int(delivered[p]) * GRID_MAX // tot)
            m = self.models.get(p)
            if m is None or t + 1 >= m.T:
                out[p] = raw
                continue
            states = m.states_at(t + 1)
            if len(states) == 0:
                out[p] = raw
                continue
            k = int(np.searchsorted(states, raw))
            best = None
            for j in (k - 1, k):
                if 0 <= j < len(states):
                    s = int(states[j])
                    if best is None or abs(s - raw) < abs(best - raw):
                        best = s
            out[p] = best
        return out

    def state(
        self,
        quantities: Sequence[int],
        pending: Iterable[int] | np.ndarray,
        t: int,
        rho: float = 0.7,
        progress: Sequence[int] | None = None,
    ) -> PlanningState:
        if isinstance(pending, np.ndarray) and pending.dtype == np.uint8 and len(pending) == self.n_o:
            mask = pending
        else:
            mask = np.zeros(self.n_o, dtype=np.uint8)
            mask[list(pending)] = 1
        return PlanningState(quantities, mask, t, rho, progress)

    def allocate(self, state: PlanningState, order_ids: Sequence[int]):
        return self.kernel.allocate(self.ctx, state.quantities.copy(), state.t, list(order_ids))

    def is_feasible(self, state: PlanningState, order_ids: Sequence[int]) -> bool:
        return bool(order_ids) and len(order_ids) <= self.sortation.n_w and self.allocate(state, order_ids)[0]

    def estimate(self, state: PlanningState, order_ids: Sequence[int]) -> tuple[int, int]:
        ok, committed, _ = self.allocate(state, order_ids)
        return self.kernel.estimate(self.ctx, committed)

    def action(self, state: PlanningState, order_ids: Sequence[int]) -> WaveAction:
        dur, k = self.estimate(state, order_ids)
        return WaveAction(tuple(sorted(order_ids)), dur, k)


def kernel_rng(rng: np.random.Generator | int) -> np.ndarray:
    seed = int(rng.integers(0, 2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    return np.array([seed & ((1 << 64) - 1)], dtype=np.uint64)


def apply_action(
    problem: PlanningProblem,
    state: PlanningState,
    action: WaveAction | Sequence[int],
    rng: np.random.Generator | np.ndarray,
) -> tuple[PlanningState, float]:
    """Sample the next state after executing ``action``; returns ``(next, reward)``.

    Items arriving while the wave runs are credited when it completes.
    """
    ids = list(action.order_ids if isinstance(action, WaveAction) else action)
    if state.is_terminal(problem.T):
        raise MdpError("no actions are accepted in a terminal state")
    if not ids or any(not state.pending[i] for i in ids):
        raise MdpError(f"wave {ids} contains orders that are not pending")
    if len(ids) > problem.sortation.n_w:
        raise MdpError(f"wave of {len(ids)} orders exceeds capacity {problem.sortation.n_w}")
    krng = rng if isinstance(rng, np.ndarray) else kernel_rng(rng)
    qty, progress, pending = state.arrays()
    try:
        r, t = problem.kernel.step(problem.ctx, qty, progress, pending, state.t, ids, krng)
    except ValueError as exc:
        raise MdpError(str(exc)) from None
    return PlanningState(qty, pending, int(t), state.rho, progress), float(r)


@dataclass(frozen=True)
class Objective:
    total_delay: int
    on_time: int
    late: int
    unfulfilled: int
    unfulfilled_delay: int


def episode_objective(orders: Iterable[Order], T: int) -> Objective:
    """Total delay over all orders; unfulfilled orders count as finishing at ``T``."""
    total = on_time = late = unf = unf_delay = 0
    for o in orders:
        if o.fulfilled_at is None:
            unf += 1
            d = max(0, T - o.deadline)
            unf_delay += d
            total += d
        elif o.fulfilled_at <= o.deadline:
            on_time += 1
        else:
            late += 1
            total += o.fulfilled_at - o.deadline
    return Objective(total, on_time, late, unf, unf_delay)


def estimate_containers(committed: Mapping[int, int] | Sequence[int], n_c: int, kappa: float) -> int:
    """Aggregate-level container estimate: per-product full containers, scaled by kappa."""
    vals = committed.values() if isinstance(committed, Mapping) else committed
    s = sum(-(-int(w) // n_c) for w in vals if w > 0)
    return math.ceil(kappa * s - 1e-9) if s > 0 else 0
