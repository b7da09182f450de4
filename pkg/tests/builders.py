"""Small hand-built planning problems with exactly known arrival schedules."""

from __future__ import annotations

from typing import Mapping, Sequence

from wavesched.arrival import HistoricalSeason, fit_tvmc, normalize_season
from wavesched.mdp import PlanningProblem, RewardParams
from wavesched.warehouse import Order, ProductCatalog, SortationConfig


def exact_problem(
    orders: Sequence[Order],
    arrivals: Mapping[int, Mapping[int, int]],
    cfg: SortationConfig,
    T: int,
    epoch: int,
    *,
    alpha: float = 1.0,
    lam: float = 0.01,
    kappa: float = 1.0,
    backend: str | None = None,
    **extra,
) -> PlanningProblem:
    """Problem whose arrival models replay ``arrivals`` ({step: {product: qty}}) exactly."""
    n_p = 1 + max(p for a in arrivals.values() for p in a)
    totals = {p: sum(a.get(p, 0) for a in arrivals.values()) for p in range(n_p)}
    models = {}
    for p in range(n_p):
        if totals[p]:
            series = tuple(arrivals.get(u, {}).get(p, 0) for u in range(T))
            models[p] = fit_tvmc([normalize_season(HistoricalSeason(p, series))], product_id=p)
    return PlanningProblem(
        list(orders), ProductCatalog(tuple(range(n_p)), totals), models, cfg, T, epoch,
        alpha=alpha, reward_params=RewardParams(lam), kappa=kappa, backend=backend, **extra,
    )
