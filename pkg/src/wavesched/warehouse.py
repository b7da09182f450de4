"""Physical side of the fulfillment problem: orders, intermediate containers,
inventory, wave feasibility with preemptive (partial) processing, container
selection and wave execution timing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

# slack for comparing an integer item count against alpha * size
_EPS = 1e-9


class WarehouseError(ValueError):
    pass


class InfeasibleWaveError(WarehouseError):
    """A wave was submitted whose committed demand does not fit inventory."""


class InsufficientInventoryError(WarehouseError):
    def __init__(self, deficit: Mapping[int, int]):
        self.deficit = dict(deficit)
        detail = ", ".join(f"product {p}: short {q}" for p, q in sorted(self.deficit.items()))
        super().__init__(f"demand not coverable from inventory ({detail})")


@dataclass(frozen=True)
class ProductCatalog:
    products: tuple[int, ...]
    season_total: Mapping[int, int]

    def __post_init__(self) -> None:
        if len(set(self.products)) != len(self.products):
            raise WarehouseError("product ids must be unique")
        if any(v < 0 for v in self.season_total.values()):
            raise WarehouseError("season totals must be >= 0")

    @property
    def n_p(self) -> int:
        return len(self.products)


@dataclass(eq=False)
class Order:
    id: int
    demand: dict[int, int]
    deadline: int
    fulfilled_at: int | None = None
    partial: bool = False
    shipped: dict[int, int] | None = None

    def __post_init__(self) -> None:
        self.demand = {int(p): int(q) for p, q in sorted(self.demand.items()) if q > 0}
        self.size = sum(self.demand.values())

    @property
    def pending(self) -> bool:
        return self.fulfilled_at is None

    def mark_fulfilled(self, f: int, shipped: Mapping[int, int]) -> None:
        if self.fulfilled_at is not None:
            raise WarehouseError(f"order {self.id} fulfilled twice")
        self.fulfilled_at = int(f)
        self.shipped = {p: q for p, q in shipped.items() if q > 0}
        self.partial = sum(self.shipped.values()) < self.size

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "demand": {str(p): q for p, q in self.demand.items()},
            "deadline": self.deadline,
            "fulfilled_at": self.fulfilled_at,
            "partial": self.partial,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "Order":
        o = cls(int(d["id"]), {int(p): int(q) for p, q in d["demand"].items()}, int(d["deadline"]))
        o.fulfilled_at = d.get("fulfilled_at")
        o.partial = bool(d.get("partial", False))
        return o


@dataclass(eq=False)
class IntermediateContainer:
    id: int
    arrived_at: int
    contents: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.contents.values())


class Inventory:
    """Containers on hand plus per-product aggregate quantities kept in lockstep."""

    def __init__(self, containers: Iterable[IntermediateContainer] = ()):
        self.containers: dict[int, IntermediateContainer] = {}
        self.aggregate: dict[int, int] = {}
        self.add(containers)

    def add(self, containers: Iterable[IntermediateContainer]) -> None:
        for c in containers:
            if c.id in self.containers:
                raise WarehouseError(f"duplicate container id {c.id}")
            self.containers[c.id] = c
            for p, q in c.contents.items():
                self.aggregate[p] = self.aggregate.get(p, 0) + q

    def take(self, container_id: int, product: int, qty: int) -> None:
        c = self.containers[container_id]
        have = c.contents.get(product, 0)
        if qty > have:
            raise WarehouseError(f"container {container_id} holds {have} of product {product}, asked {qty}")
        if qty == have:
            del c.contents[product]
        else:
            c.contents[product] = have - qty
        self.aggregate[product] -= qty
        if not c.contents:
            del self.containers[container_id]

    def quantity(self, product: int) -> int:
        return self.aggregate.get(product, 0)

    def quantities(self, n_p: int) -> np.ndarray:
        q = np.zeros(n_p, dtype=np.int64)
        for p, v in self.aggregate.items():
            q[p] = v
        return q

    @property
    def total_items(self) -> int:
        return sum(self.aggregate.values())

    def is_consistent(self) -> bool:
        sums: dict[int, int] = {}
        for c in self.containers.values():
            for p, q in c.contents.items():
                if q <= 0:
                    return False
                sums[p] = sums.get(p, 0) + q
        return all(v >= 0 for v in self.aggregate.values()) and all(
            sums.get(p, 0) == v for p, v in self.aggregate.items()
        ) and set(sums) <= set(self.aggregate)


@dataclass
class Wave:
    orders: list[int]
    containers_used: list[int]
    start: int
    duration: int
    preempted_orders: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class SortationConfig:
    n_c: int = 25
    n_w: int = 40
    stations: int = 30
    chutes: int = 400
    t_setup: float = 4.0
    t_per_container: float = 0.75
    duration_noise: float = 0.0  # sigma of a mean-zero-log lognormal factor; 0 disables

    def __post_init__(self) -> None:
        if self.n_c < 1 or self.n_w < 1:
            raise WarehouseError("n_c and n_w must be >= 1")
        if self.n_w > self.chutes:
            raise WarehouseError(f"n_w={self.n_w} exceeds chute count {self.chutes}")
        if min(self.t_setup, self.t_per_container, self.duration_noise) < 0:
            raise WarehouseError("timing parameters must be >= 0")
        if self.t_setup + self.t_per_container < 1:
            raise WarehouseError("t_setup + t_per_container must be >= 1")

    def max_wave_duration(self, order_size: int) -> int:
        """Worst-case duration of a full wave of ``order_size``-item orders."""
        k = -(-self.n_w * order_size // self.n_c)
        return wave_duration(k, self)


def wave_duration(n_containers: int, cfg: SortationConfig, noise: float = 1.0) -> int:
    base = (cfg.t_setup + cfg.t_per_container * n_containers) * noise
    return max(1, math.ceil(base - _EPS))


def pack_arrivals(
    arrivals: Mapping[int, int], t: int, cfg: SortationConfig, first_id: int = 0
) -> list[IntermediateContainer]:
    """Sequentially fill ``n_c``-item containers in ascending product id order."""
    out: list[IntermediateContainer] = []
    room = 0
    for p in sorted(arrivals):
        q = int(arrivals[p])
        if q < 0:
            raise WarehouseError(f"negative arrival for product {p}")
        while q > 0:
            if room == 0:
                out.append(IntermediateContainer(first_id + len(out), t, {}))
                room = cfg.n_c
            put = min(q, room)
            out[-1].contents[p] = out[-1].contents.get(p, 0) + put
            room -= put
            q -= put
    return out


def availability_fraction(order: Order, quantities: Mapping[int, int] | Inventory) -> float:
    q = quantities.aggregate if isinstance(quantities, Inventory) else quantities
    have = sum(min(q.get(p, 0), b) for p, b in order.demand.items())
    return have / order.size if order.size else 1.0


def is_last_opportunity(order: Order, now: int, cfg: SortationConfig) -> bool:
    return now + cfg.max_wave_duration(order.size) >= order.deadline


def qualifies_for_preemption(
    order: Order, quantities: Mapping[int, int], alpha: float, now: int, cfg: SortationConfig
) -> bool:
    have = sum(min(quantities.get(p, 0), b) for p, b in order.demand.items())
    return have >= alpha * order.size - _EPS and is_last_opportunity(order, now, cfg)


def order_feasible(
    order: Order, quantities: Mapping[int, int], alpha: float, now: int, cfg: SortationConfig
) -> bool:
    """Order can go into some wave on its own: fully stocked, or preemptable."""
    if all(quantities.get(p, 0) >= b for p, b in order.demand.items()):
        return True
    return qualifies_for_preemption(order, quantities, alpha, now, cfg)


@dataclass
class Allocation:
    feasible: bool
    shipped: dict[int, dict[int, int]]
    committed: dict[int, int]
    preempted: list[int]
    reason: str = ""

    def partial_ids(self, orders: Sequence[Order]) -> list[int]:
        return [o.id for o in orders if sum(self.shipped.get(o.id, {}).values()) < o.size]


def allocate_wave(
    orders: Sequence[Order],
    quantities: Mapping[int, int] | Inventory,
    alpha: float,
    now: int,
    cfg: SortationConfig,
) -> Allocation:
    """Decide how many items of each product every order in a wave receives.

    Orders that do not qualify for preemption must be fully stocked and are served
    first. Preemptable orders then share what is left per product, in proportion
    to demand (largest remainder, earlier deadline first on ties), and each must
    end up with at least ``alpha`` of its items.
    """
    q = quantities.aggregate if isinstance(quantities, Inventory) else quantities
    if len({o.id for o in orders}) != len(orders):
        return Allocation(False, {}, {}, [], "duplicate orders")
    if len(orders) > cfg.n_w:
        return Allocation(False, {}, {}, [], f"{len(orders)} orders exceed wave capacity {cfg.n_w}")
    flex = [o for o in orders if qualifies_for_preemption(o, q, alpha, now, cfg)]
    flex_ids = {o.id for o in flex}
    committed: dict[int, int] = {}
    shipped: dict[int, dict[int, int]] = {}
    for o in orders:
        if o.id in flex_ids:
            continue
        shipped[o.id] = dict(o.demand)
        for p, b in o.demand.items():
            committed[p] = committed.get(p, 0) + b
    short = {p: c - q.get(p, 0) for p, c in committed.items() if c > q.get(p, 0)}
    if short:
        return Allocation(False, {}, committed, [], f"short {short}")

    flex.sort(key=lambda o: (o.deadline, o.id))
    for o in flex:
        shipped[o.id] = {}
    products = sorted({p for o in flex for p in o.demand})
    for p in products:
        wants = [(o, o.demand[p]) for o in flex if p in o.demand]
        left = q.get(p, 0) - committed.get(p, 0)
        total = sum(b for _, b in wants)
        if total <= left:
            give = [b for _, b in wants]
        else:
            give = [left * b // total for _, b in wants]
            rems = [left * b % total for _, b in wants]
            extra = left - sum(give)
            for j in sorted(range(len(wants)), key=lambda j: -rems[j])[:extra]:
                give[j] += 1
        for (o, _), g in zip(wants, give):
            if g:
                shipped[o.id][p] = g
                committed[p] = committed.get(p, 0) + g
    for o in flex:
        if sum(shipped[o.id].values()) < alpha * o.size - _EPS:
            return Allocation(False, {}, committed, [], f"order {o.id} falls below alpha after sharing")
    return Allocation(True, shipped, committed, [o.id for o in flex])


def wave_feasible(
    orders: Sequence[Order],
    inv: Mapping[int, int] | Inventory,
    alpha: float,
    now: int,
    cfg: SortationConfig,
) -> bool:
    return allocate_wave(orders, inv, alpha, now, cfg).feasible


def select_containers(demand: Mapping[int, int], inv: Inventory) -> list[int]:
    """Greedy set cover: take the container covering the most outstanding items.

    Ties go to the lowest container id. Returned ids are in pick order.
    """
    outstanding = {p: q for p, q in demand.items() if q > 0}
    deficit = {p: q - inv.quantity(p) for p, q in outstanding.items() if q > inv.quantity(p)}
    if deficit:
        raise InsufficientInventoryError(deficit)
    pool = [c for c in inv.containers.values() if any(p in outstanding for p in c.contents)]
    pool.sort(key=lambda c: c.id)
    chosen: list[int] = []
    while outstanding:
        best, best_cov = None, 0
        for c in pool:
            cov = sum(min(v, outstanding.get(p, 0)) for p, v in c.contents.items())
            if cov > best_cov:
                best, best_cov = c, cov
        assert best is not None
        chosen.append(best.id)
        pool.remove(best)
        for p, v in best.contents.items():
            if p in outstanding:
                left = outstanding[p] - min(v, outstanding[p])
                if left:
                    outstanding[p] = left
                else:
                    del outstanding[p]
    return chosen


@dataclass
class WaveResult:
    wave: Wave
    completed: list[tuple[Order, int, bool]]
    duration: int
    inventory: Inventory
    shipped_items: int = 0
    canceled_items: int = 0


def execute_wave(
    orders: Sequence[Order],
    inv: Inventory,
    alpha: float,
    now: int,
    cfg: SortationConfig,
    rng: np.random.Generator | None = None,
) -> WaveResult:
    """Ship a feasible wave, mutating ``inv`` and the orders' fulfillment status."""
    if any(not o.pending for o in orders):
        raise InfeasibleWaveError("wave contains an order that is already fulfilled")
    alloc = allocate_wave(orders, inv, alpha, now, cfg)
    if not alloc.feasible:
        raise InfeasibleWaveError(f"infeasible wave at t={now}: {alloc.reason}")
    used = select_containers(alloc.committed, inv)
    outstanding = {p: q for p, q in alloc.committed.items() if q > 0}
    for cid in used:
        for p, v in list(inv.containers[cid].contents.items()):
            need = outstanding.get(p, 0)
            if need:
                take = min(v, need)
                inv.take(cid, p, take)
                outstanding[p] = need - take
    noise = 1.0
    if cfg.duration_noise > 0:
        if rng is None:
            raise WarehouseError("duration noise requires an rng")
        noise = float(rng.lognormal(0.0, cfg.duration_noise))
    duration = wave_duration(len(used), cfg, noise)
    f = now + duration
    completed = []
    shipped_items = canceled = 0
    for o in orders:
        o.mark_fulfilled(f, alloc.shipped[o.id])
        n_ship = sum(o.shipped.values())
        shipped_items += n_ship
        canceled += o.size - n_ship
        completed.append((o, f, o.partial))
    wave = Wave(
        orders=[o.id for o in orders],
        containers_used=used,
        start=now,
        duration=duration,
        preempted_orders=[o.id for o in orders if o.partial],
    )
    return WaveResult(wave, completed, duration, inv, shipped_items, canceled)


def snapshot_to_json(t: int, orders: Iterable[Order], inv: Inventory) -> dict:
    return {
        "t": t,
        "orders": [o.to_json() for o in orders],
        "containers": [
            {"id": c.id, "arrived_at": c.arrived_at, "contents": {str(p): q for p, q in c.contents.items()}}
            for c in inv.containers.values()
        ],
    }


def snapshot_from_json(data: Mapping) -> tuple[int, list[Order], Inventory]:
    orders = [Order.from_json(o) for o in data["orders"]]
    inv = Inventory(
        IntermediateContainer(int(c["id"]), int(c["arrived_at"]), {int(p): int(q) for p, q in c["contents"].items()})
        for c in data["containers"]
    )
    return int(data["t"]), orders, inv
