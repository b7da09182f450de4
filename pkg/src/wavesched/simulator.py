"""Scenario generation, synthetic arrival histories, full-season episodes and
paired policy comparisons."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .arrival import HistoricalSeason, TvmcModel, fit_products
from .greedy import GreedyPlanner
from .hts import HtsConfig, HtsPlanner
from .mdp import PlanningProblem, RewardParams, episode_objective, reward
from .warehouse import (
    Inventory,
    Order,
    ProductCatalog,
    SortationConfig,
    allocate_wave,
    execute_wave,
    pack_arrivals,
)

MINUTES_PER_DAY = 1440


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class PlannerContractError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_p: int = 20
    n_o: int = 2000
    n_b: int = 25
    n_c: int = 25
    n_w: int = 40
    T: int = 2880
    dt: float = 15.0
    arrival_epoch: int = 32
    peak_means: tuple[float, float] = (0.1, 0.5)  # fractions of T
    peak_stds: tuple[float, float] = (0.05, 0.15)
    peak_weights: tuple[float, float] = (0.35, 0.65)
    peak_jitter: float = 0.03  # per-product shift of the peak means, fraction of T
    weight_jitter: float = 0.1
    deadline_mean: float = 0.5  # fraction of T
    deadline_std: float = 0.1
    deadline_granularity: int = 96
    early_margin: int = 0
    max_unique: int = 12
    alpha: float = 1.0
    seed: int = 0
    history_seasons: int = 8
    history_noise: float = 0.2
    history_jitter: bool = True
    stations: int = 30
    chutes: int = 400
    t_setup: float = 4.0
    t_per_container: float = 0.75
    duration_noise: float = 0.0
    lam: float = 0.01

    def __post_init__(self) -> None:
        for name in ("n_p", "n_o", "n_b", "n_c", "n_w", "T", "arrival_epoch", "deadline_granularity", "history_seasons"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not 1 <= self.max_unique <= max(1, self.n_b // 2) or self.max_unique > self.n_p:
            raise ConfigError("max_unique", f"must be in [1, {max(1, self.n_b // 2)}] and <= n_p")
        if not 0.5 <= self.alpha <= 1.0:
            raise ConfigError("alpha", f"must be in [0.5, 1.0], got {self.alpha}")
        if not 0 <= self.early_margin < self.T:
            raise ConfigError("early_margin", "must be in [0, T)")
        if self.dt <= 0 or self.deadline_std <= 0:
            raise ConfigError("dt", "dt and deadline_std must be positive")
        for name in ("peak_means", "peak_stds", "peak_weights"):
            v = getattr(self, name)
            if len(v) != 2 or any(x < 0 for x in v):
                raise ConfigError(name, "needs two nonnegative entries")
        if min(self.peak_stds) <= 0 or sum(self.peak_weights) <= 0:
            raise ConfigError("peak_stds", "stds and total weight must be positive")
        if self.history_noise < 0 or self.duration_noise < 0 or self.peak_jitter < 0 or self.weight_jitter < 0:
            raise ConfigError("history_noise", "noise scales must be >= 0")
        if self.lam <= 0:
            raise ConfigError("lam", "must be > 0")
        try:
            self.sortation()
        except ValueError as exc:
            raise ConfigError("sortation", str(exc)) from None

    def sortation(self) -> SortationConfig:
        return SortationConfig(
            n_c=self.n_c, n_w=self.n_w, stations=self.stations, chutes=self.chutes,
            t_setup=self.t_setup, t_per_container=self.t_per_container, duration_noise=self.duration_noise,
        )

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("peak_means", "peak_stds", "peak_weights"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, data: Mapping[str, Any], prefix: str = "scenario") -> "ScenarioConfig":
        if not isinstance(data, Mapping):
            raise ConfigError(prefix, "expected an object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in data.items():
            if k not in fields:
                raise ConfigError(f"{prefix}.{k}", "unknown field")
            default = fields[k].default
            if isinstance(default, tuple):
                if not isinstance(v, (list, tuple)):
                    raise ConfigError(f"{prefix}.{k}", "expected a list")
                v = tuple(float(x) for x in v)
            elif isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{prefix}.{k}", "expected true or false")
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"{prefix}.{k}", f"expected an integer, got {v!r}")
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{prefix}.{k}", f"expected a number, got {v!r}")
                v = float(v)
            kw[k] = v
        try:
            return cls(**kw)
        except ConfigError as exc:
            raise ConfigError(f"{prefix}.{exc.path}", str(exc).split(": ", 1)[1]) from None


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if total == 0 or w.sum() <= 0:
        return np.zeros(len(w), dtype=np.int64)
    exact = w * (total / w.sum())
    base = np.floor(exact).astype(np.int64)
    extra = int(total - base.sum())
    if extra:
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:extra]] += 1
    return base


@dataclass
class Scenario:
    """Orders, catalog and the realized arrival schedule of one season.

    ``arrivals[e, p]`` items of product ``p`` arrive at step ``arrival_times[e]``.
    """

    config: ScenarioConfig
    orders: list[Order]
    catalog: ProductCatalog
    arrival_times: np.ndarray
    arrivals: np.ndarray
    histories: dict[int, list[HistoricalSeason]] | None = None
    models: dict[int, TvmcModel] | None = None

    def schedule(self) -> dict[tuple[int, int], int]:
        return {
            (int(self.arrival_times[e]), p): int(q)
            for e in range(len(self.arrival_times))
            for p, q in enumerate(self.arrivals[e])
            if q > 0
        }

    def fresh_orders(self) -> list[Order]:
        return [Order(o.id, dict(o.demand), o.deadline) for o in self.orders]

    def ensure_models(self) -> dict[int, TvmcModel]:
        if self.models is None:
            if self.histories is None:
                self.histories = generate_synthetic_history(self.config, self, _stream(self.config.seed, 2))
            self.models, _ = fit_products(self.histories)
        return self.models

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "orders": [{"id": o.id, "demand": {str(p): q for p, q in o.demand.items()}, "deadline": o.deadline} for o in self.orders],
            "season_total": {str(p): int(q) for p, q in self.catalog.season_total.items()},
            "arrivals": [
                {"t": int(self.arrival_times[e]), "quantities": [int(x) for x in self.arrivals[e]]}
                for e in range(len(self.arrival_times))
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Scenario":
        try:
            cfg = ScenarioConfig.from_json(data["config"], "config")
            orders = [Order(int(o["id"]), {int(p): int(q) for p, q in o["demand"].items()}, int(o["deadline"])) for o in data["orders"]]
            totals = {int(p): int(q) for p, q in data["season_total"].items()}
            times = np.asarray([int(a["t"]) for a in data["arrivals"]], dtype=np.int64)
            arr = np.asarray([a["quantities"] for a in data["arrivals"]], dtype=np.int64).reshape(len(times), cfg.n_p)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "missing field") from None
        return cls(cfg, orders, ProductCatalog(tuple(range(cfg.n_p)), totals), times, arr)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text()))


def _mixture_mass(means, stds, weights, edges: np.ndarray) -> np.ndarray:
    cdf = np.zeros(len(edges))
    for m, s, w in zip(means, stds, weights):
        cdf += w * np.array([0.5 * (1 + math.erf((x - m) / (s * math.sqrt(2)))) for x in edges])
    mass = np.diff(cdf)
    return mass / mass.sum()


def generate_scenario(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> Scenario:
    """Orders with random compositions and truncated-Gaussian deadlines, and a
    demand-matched arrival schedule drawn from per-product bimodal mixtures."""
    rng = _stream(cfg.seed, 0) if rng is None else rng
    T = cfg.T
    orders = []
    n_unique = rng.integers(1, cfg.max_unique + 1, size=cfg.n_o)
    mu, sd, g = cfg.deadline_mean * T, cfg.deadline_std * T, cfg.deadline_granularity
    lo, hi = cfg.early_margin, T - 1
    raw = rng.normal(mu, sd, size=cfg.n_o)
    bad = (raw < lo) | (raw >= hi + 1)
    while bad.any():
        raw[bad] = rng.normal(mu, sd, size=int(bad.sum()))
        bad = (raw < lo) | (raw >= hi + 1)
    deadlines = np.clip((np.floor(raw / g).astype(np.int64) + 1) * g - 1, lo, hi)
    demand_tot = np.zeros(cfg.n_p, dtype=np.int64)
    for i in range(cfg.n_o):
        u = int(min(n_unique[i], cfg.n_b))
        prods = np.sort(rng.choice(cfg.n_p, size=u, replace=False))
        cuts = np.sort(rng.choice(np.arange(1, cfg.n_b), size=u - 1, replace=False)) if u > 1 else np.zeros(0, dtype=np.int64)
        parts = np.diff(np.concatenate(([0], cuts, [cfg.n_b])))
        demand = {int(p): int(b) for p, b in zip(prods, parts)}
        for p, b in demand.items():
            demand_tot[p] += b
        orders.append(Order(i, demand, int(deadlines[i])))
    times = np.arange(0, T, cfg.arrival_epoch, dtype=np.int64)
    edges = np.append(times, T).astype(float)
    edges[0], edges[-1] = -np.inf, np.inf  # tails fold into the first and last epoch
    arrivals = np.zeros((len(times), cfg.n_p), dtype=np.int64)
    for p in range(cfg.n_p):
        means = [T * (m + rng.normal(0, cfg.peak_jitter)) for m in cfg.peak_means]
        stds = [T * s for s in cfg.peak_stds]
        w = np.asarray(cfg.peak_weights, dtype=float) * np.exp(rng.normal(0, cfg.weight_jitter, size=2))
        mass = _mixture_mass(means, stds, w / w.sum(), edges)
        arrivals[:, p] = rng.multinomial(int(demand_tot[p]), mass)
    catalog = ProductCatalog(tuple(range(cfg.n_p)), {p: int(demand_tot[p]) for p in range(cfg.n_p)})
    return Scenario(cfg, orders, catalog, times, arrivals)


def generate_synthetic_history(
    cfg: ScenarioConfig, scenario: Scenario, rng: np.random.Generator
) -> dict[int, list[HistoricalSeason]]:
    """Past seasons per product: the realized schedule with per-epoch lognormal
    noise and a +-1 epoch shift, rescaled to the same total.

    Products that never arrive get no history (and so no arrival model).
    """
    n_e = len(scenario.arrival_times)
    out: dict[int, list[HistoricalSeason]] = {}
    for p in range(cfg.n_p):
        base = scenario.arrivals[:, p].astype(float)
        tot = int(base.sum())
        if tot == 0:
            continue
        seasons = []
        for m in range(cfg.history_seasons):
            w = base * (rng.lognormal(0.0, cfg.history_noise, size=n_e) if cfg.history_noise > 0 else 1.0)
            if cfg.history_jitter:
                shift = int(rng.integers(-1, 2))
                if shift > 0:
                    w = np.concatenate((np.zeros(shift), w[:-shift]))
                elif shift < 0:
                    w = np.concatenate((w[-shift:], np.zeros(-shift)))
            if w.sum() <= 0:
                w = base
            per_epoch = _largest_remainder(w, tot)
            q = np.zeros(cfg.T, dtype=np.int64)
            q[scenario.arrival_times] = per_epoch
            seasons.append(HistoricalSeason(p, [int(x) for x in q], m))
        out[p] = seasons
    return out


@dataclass
class WaveRecord:
    start: int
    duration: int
    orders: list[int]
    containers: list[int]
    partial: list[int]
    reward: float
    estimated_duration: int


@dataclass
class SimulationResult:
    planner: str
    seed: int
    alpha: float
    T: int
    dt: float
    lam: float
    per_order: list[tuple[int, int | None, int, bool, int, int]]  # id, f, d, partial, shipped, size
    waves: list[WaveRecord]
    delivered: int
    remaining: int
    canceled: int
    demand: int
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return sum(w.reward for w in self.waves)

    def metrics(self) -> dict[str, float]:
        n = len(self.per_order)
        on_time = late = unf = partial = partial_on_time = 0
        delays = []
        total = 0
        for _, f, d, part, _, _ in self.per_order:
            if f is None:
                unf += 1
                dl = max(0, self.T - d)
                delays.append(dl)
                total += dl
                continue
            partial += part
            if f <= d:
                on_time += 1
                partial_on_time += part
            else:
                late += 1
                delays.append(f - d)
                total += f - d
        days = self.dt / MINUTES_PER_DAY
        return {
            "on_time_pct": 100.0 * on_time / n if n else 100.0,
            "missed_pct": 100.0 * (n - on_time) / n if n else 0.0,
            "on_time_full_pct": 100.0 * (on_time - partial_on_time) / n if n else 100.0,
            "avg_delay_late_days": (sum(delays) / len(delays)) * days if delays else 0.0,
            "on_time": on_time,
            "late": late,
            "unfulfilled_count": unf,
            "partial_count": partial,
            "total_delay": total,
            "n_waves": len(self.waves),
            "total_reward": self.total_reward,
        }

    def conservation_holds(self) -> bool:
        shipped = sum(r[4] for r in self.per_order)
        if self.delivered != shipped + self.remaining:
            return False
        # demand side: every ordered item is shipped, canceled by preemption or still owed
        owed = sum(r[5] for r in self.per_order if r[1] is None)
        return self.demand == shipped + self.canceled + owed

    def to_row(self) -> dict[str, Any]:
        return {"planner": self.planner, "seed": self.seed, "alpha": self.alpha, **self.metrics()}

    def to_json(self) -> dict:
        return {
            "planner": self.planner, "seed": self.seed, "alpha": self.alpha, "metrics": self.metrics(),
            "per_order": [list(r) for r in self.per_order],
            "waves": [dataclasses.asdict(w) for w in self.waves],
        }


def _next_event(t: int, next_arrival: int | None, unlock: np.ndarray) -> int | None:
    later = unlock[unlock > t]
    cands = ([next_arrival] if next_arrival is not None else []) + ([int(later.min())] if len(later) else [])
    return min(cands) if cands else None


def run_episode(
    scenario: Scenario,
    planner,
    alpha: float | None = None,
    seed: int | None = None,
    reward_params: RewardParams | None = None,
) -> SimulationResult:
    """Play one season with ``planner`` choosing every wave.

    Planners expose ``plan(problem, state, inv, rng) -> WaveAction | None``.
    """
    cfg = scenario.config
    alpha = cfg.alpha if alpha is None else alpha
    if not 0.5 <= alpha <= 1.0:
        raise ConfigError("alpha", f"must be in [0.5, 1.0], got {alpha}")
    seed = cfg.seed if seed is None else seed
    params = reward_params or RewardParams(cfg.lam)
    sortation = cfg.sortation()
    orders = scenario.fresh_orders()
    extra = planner.problem_params() if hasattr(planner, "problem_params") else {}
    problem = PlanningProblem(
        orders, scenario.catalog, scenario.ensure_models(), sortation, cfg.T, cfg.arrival_epoch,
        alpha=alpha, reward_params=params, **extra,
    )
    if hasattr(planner, "reset"):
        planner.reset()
    plan_rng = _stream(seed, 3)
    noise_rng = _stream(seed, 4)
    n_p = scenario.catalog.n_p
    inv = Inventory()
    next_cid = 0
    delivered = np.zeros(n_p, dtype=np.int64)
    pending = np.ones(len(orders), dtype=np.uint8)
    unlock = np.asarray([o.deadline - sortation.max_wave_duration(o.size) for o in orders], dtype=np.int64)
    times = scenario.arrival_times
    e = 0
    t = 0
    waves: list[WaveRecord] = []
    while t < cfg.T and pending.any():
        while e < len(times) and times[e] <= t:
            row = {p: int(q) for p, q in enumerate(scenario.arrivals[e]) if q > 0}
            boxes = pack_arrivals(row, int(times[e]), sortation, next_cid)
            next_cid += len(boxes)
            inv.add(boxes)
            delivered += scenario.arrivals[e]
            e += 1
        progress = problem.progress_from_delivered(delivered, t)
        state = problem.state(inv.quantities(n_p), pending, t, getattr(planner, "rho", 0.7), progress)
        action = planner.plan(problem, state, inv, plan_rng)
        if action is None:
            nt = _next_event(t, int(times[e]) if e < len(times) else None, unlock)
            if nt is None:
                break
            t = nt
            continue
        batch = [orders[i] for i in action.order_ids]
        if any(not o.pending for o in batch) or not allocate_wave(batch, inv, alpha, t, sortation).feasible:
            raise PlannerContractError(f"{getattr(planner, 'name', planner)} returned infeasible wave {action.order_ids} at t={t}")
        res = execute_wave(batch, inv, alpha, t, sortation, noise_rng)
        r = reward([(f, o.deadline) for o, f, _ in res.completed], params)
        waves.append(
            WaveRecord(t, res.duration, list(action.order_ids), list(res.wave.containers_used),
                       list(res.wave.preempted_orders), r, action.estimated_duration)
        )
        pending[list(action.order_ids)] = 0
        t += res.duration
    per_order = [
        (o.id, o.fulfilled_at, o.deadline, bool(o.partial), sum(o.shipped.values()) if o.shipped else 0, o.size)
        for o in orders
    ]
    canceled = sum(o.size - sum(o.shipped.values()) for o in orders if o.shipped is not None)
    return SimulationResult(
        getattr(planner, "name", type(planner).__name__), seed, alpha, cfg.T, cfg.dt, params.lam,
        per_order, waves, int(delivered.sum()), inv.total_items, canceled,
        sum(o.size for o in orders),
        list(getattr(planner, "diagnostics", [])),
    )


@dataclass(frozen=True)
class PlannerSpec:
    """Picklable recipe for a planner, so episodes can run in worker processes."""

    name: str
    hts: HtsConfig | None = None
    label: str | None = None

    def build(self):
        if self.name == "greedy":
            return GreedyPlanner()
        if self.name == "hts":
            return HtsPlanner(self.hts or HtsConfig())
        raise ConfigError("planner", f"unknown planner {self.name!r} (expected greedy or hts)")

    @property
    def display(self) -> str:
        return self.label or self.name


def _episode_task(args) -> dict:
    cfg, spec, seed, alpha = args
    scen = scenario_for_seed(cfg, seed)
    res = run_episode(scen, spec.build(), alpha=alpha, seed=seed)
    row = res.to_row()
    row["planner"] = spec.display
    row["conserved"] = res.conservation_holds()
    return row


_SCENARIO_CACHE: dict[tuple, Scenario] = {}


def scenario_for_seed(cfg: ScenarioConfig, seed: int) -> Scenario:
    """Scenario of ``cfg`` with its seed replaced; cached because planners are compared on it."""
    key = (json.dumps(cfg.to_json(), sort_keys=True), seed)
    scen = _SCENARIO_CACHE.get(key)
    if scen is None:
        scen = generate_scenario(cfg.replace(seed=seed))
        scen.ensure_models()
        if len(_SCENARIO_CACHE) > 16:
            _SCENARIO_CACHE.clear()
        _SCENARIO_CACHE[key] = scen
    return scen


METRIC_COLUMNS = (
    "on_time_pct", "missed_pct", "on_time_full_pct", "avg_delay_late_days", "on_time", "late",
    "unfulfilled_count", "partial_count", "total_delay", "n_waves", "total_reward",
)


@dataclass
class ComparisonTable:
    rows: list[dict[str, Any]]

    def aggregate(self) -> list[dict[str, Any]]:
        groups: dict[tuple, list[dict]] = {}
        for r in self.rows:
            groups.setdefault((r["planner"], r["alpha"]), []).append(r)
        out = []
        for (planner, alpha), rs in groups.items():
            agg: dict[str, Any] = {"planner": planner, "alpha": alpha, "n_seeds": len(rs)}
            for m in METRIC_COLUMNS:
                vals = [float(r[m]) for r in rs]
                agg[f"{m}_mean"] = statistics.fmean(vals)
                agg[f"{m}_var"] = statistics.variance(vals) if len(vals) > 1 else 0.0
            out.append(agg)
        return out

    def mean(self, planner: str, metric: str, alpha: float | None = None) -> float:
        vals = [float(r[metric]) for r in self.rows if r["planner"] == planner and (alpha is None or r["alpha"] == alpha)]
        return statistics.fmean(vals)

    @staticmethod
    def _csv(rows: list[dict]) -> str:
        if not rows:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def rows_csv(self) -> str:
        return self._csv(self.rows)

    def aggregate_csv(self) -> str:
        return self._csv(self.aggregate())


def _run_all(tasks: list, workers: int) -> list[dict]:
    if workers <= 1 or len(tasks) <= 1:
        return [_episode_task(a) for a in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_episode_task, tasks))


def compare_policies(
    cfg: ScenarioConfig,
    planners: Sequence[PlannerSpec],
    seeds: Sequence[int],
    alpha: float | None = None,
    workers: int = 1,
) -> ComparisonTable:
    """Every planner on the same per-seed scenario and arrival realization."""
    if not seeds:
        raise ConfigError("seeds", "at least one seed is required")
    a = cfg.alpha if alpha is None else alpha
    tasks = [(cfg, spec, int(s), a) for s in seeds for spec in planners]
    return ComparisonTable(_run_all(tasks, workers))


def alpha_sweep(
    cfg: ScenarioConfig,
    alphas: Sequence[float],
    planners: Sequence[PlannerSpec],
    seeds: Sequence[int],
    workers: int = 1,
) -> ComparisonTable:
    for a in alphas:
        if not 0.5 <= a <= 1.0:
            raise ConfigError("alphas", f"alpha {a} outside [0.5, 1.0]")
    if not seeds:
        raise ConfigError("seeds", "at least one seed is required")
    tasks = [(cfg, spec, int(s), float(a)) for a in alphas for s in seeds for spec in planners]
    return ComparisonTable(_run_all(tasks, workers))
