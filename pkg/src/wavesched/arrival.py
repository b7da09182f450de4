"""Per-product arrival model: per-mille normalization of historical seasons and a
time-varying Markov chain over cumulative arrival progress.

States live on the grid ``0..1000``. A fitted model stores, for every time step
``t`` and every cumulative state observed at ``t - 1``, the empirical
distribution of the state at ``t``. Rows are kept in compressed (CSR-like)
arrays because the dense object would be ``1001 x 1001 x T`` and almost empty.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

GRID_MAX = 1000
SELF_LOOP = "self-loop"


class ArrivalModelError(ValueError):
    """Raised for malformed histories or out-of-range model queries."""


@dataclass(frozen=True)
class HistoricalSeason:
    product_id: int
    quantities: tuple[int, ...]
    season_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "quantities", tuple(int(q) for q in self.quantities))
        if any(q < 0 for q in self.quantities):
            raise ArrivalModelError(
                f"product {self.product_id} season {self.season_index}: negative quantity"
            )

    @property
    def total(self) -> int:
        return sum(self.quantities)


@dataclass(frozen=True)
class NormalizedSeries:
    per_mille: tuple[int, ...]
    product_id: int = 0
    season_index: int = 0

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.per_mille, dtype=np.int64))


def normalize_season(raw: HistoricalSeason) -> NormalizedSeries:
    """Scale a season to a 1000-point total using largest-remainder rounding.

    Every entry lands within one unit of ``raw[t] * 1000 / total``; leftover units
    go to the largest fractional parts, earliest index first on ties.
    """
    total = raw.total
    if total <= 0:
        raise ArrivalModelError(
            f"product {raw.product_id} season {raw.season_index}: all-zero season cannot be normalized"
        )
    scaled = [q * GRID_MAX for q in raw.quantities]
    base = [s // total for s in scaled]
    rem = [s % total for s in scaled]
    deficit = GRID_MAX - sum(base)
    # stable sort keeps earliest index first among equal remainders
    for idx in sorted(range(len(base)), key=lambda i: -rem[i])[:deficit]:
        base[idx] += 1
    return NormalizedSeries(tuple(base), raw.product_id, raw.season_index)


@dataclass(frozen=True)
class TvmcModel:
    """Sparse time-varying transition model for one product.

    Row ``r`` with ``row_ptr[t] <= r < row_ptr[t + 1]`` is ``P_t(src[r], .)``; its
    targets are ``tgt[tgt_ptr[r]:tgt_ptr[r + 1]]`` with probabilities ``prob``.
    Sources within a time step and targets within a row are sorted ascending.
    """

    product_id: int
    T: int
    row_ptr: np.ndarray
    src: np.ndarray
    tgt_ptr: np.ndarray
    tgt: np.ndarray
    prob: np.ndarray
    n_seasons: int = 0
    fallback_rule: str = SELF_LOOP
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        cum = np.cumsum(self.prob)
        if len(cum):
            starts = self.tgt_ptr[:-1]
            offset = np.r_[0.0, cum][starts]
            cum -= np.repeat(offset, np.diff(self.tgt_ptr))
            cum[self.tgt_ptr[1:] - 1] = 1.0
        object.__setattr__(self, "_cum", cum)
        for name in ("row_ptr", "src", "tgt_ptr", "tgt", "prob", "_cum"):
            getattr(self, name).setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.src)

    def _row_index(self, t: int, s: int) -> int:
        a, b = int(self.row_ptr[t]), int(self.row_ptr[t + 1])
        k = a + int(np.searchsorted(self.src[a:b], s))
        if k < b and self.src[k] == s:
            return k
        return -1

    def row(self, t: int, s: int) -> dict[int, float] | None:
        """Return ``{s': p}`` for the stored row, or ``None`` if ``(t, s)`` is unseen."""
        k = self._row_index(t, s)
        if k < 0:
            return None
        a, b = self.tgt_ptr[k], self.tgt_ptr[k + 1]
        return {int(s2): float(p) for s2, p in zip(self.tgt[a:b], self.prob[a:b])}

    def states_at(self, t: int) -> np.ndarray:
        """Source states with a stored row at step ``t`` (i.e. states seen at ``t - 1``)."""
        return self.src[self.row_ptr[t]:self.row_ptr[t + 1]]

    def iter_rows(self) -> Iterable[tuple[int, int, np.ndarray, np.ndarray]]:
        for t in range(self.T):
            for k in range(int(self.row_ptr[t]), int(self.row_ptr[t + 1])):
                a, b = self.tgt_ptr[k], self.tgt_ptr[k + 1]
                yield t, int(self.src[k]), self.tgt[a:b], self.prob[a:b]

    def to_json(self) -> dict:
        rows = [
            {
                "t": t,
                "s": s,
                "targets": [{"s'": int(s2), "p": float(p)} for s2, p in zip(tg, pr)],
            }
            for t, s, tg, pr in self.iter_rows()
        ]
        return {
            "product_id": self.product_id,
            "T": self.T,
            "n_seasons": self.n_seasons,
            "fallback_rule": self.fallback_rule,
            "rows": rows,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "TvmcModel":
        T = int(data["T"])
        per_t: dict[int, list] = defaultdict(list)
        for row in data["rows"]:
            targets = sorted((int(x["s'"]), float(x["p"])) for x in row["targets"])
            per_t[int(row["t"])].append((int(row["s"]), targets))
        row_ptr = [0]
        src, tgt_ptr, tgt, prob = [], [0], [], []
        for t in range(T):
            for s, targets in sorted(per_t.get(t, [])):
                src.append(s)
                tgt.extend(s2 for s2, _ in targets)
                prob.extend(p for _, p in targets)
                tgt_ptr.append(len(tgt))
            row_ptr.append(len(src))
        return cls(
            product_id=data["product_id"],
            T=T,
            row_ptr=np.asarray(row_ptr, dtype=np.int64),
            src=np.asarray(src, dtype=np.int64),
            tgt_ptr=np.asarray(tgt_ptr, dtype=np.int64),
            tgt=np.asarray(tgt, dtype=np.int64),
            prob=np.asarray(prob, dtype=np.float64),
            n_seasons=int(data.get("n_seasons", 0)),
            fallback_rule=data.get("fallback_rule", SELF_LOOP),
        )


def fit_tvmc(seasons: Sequence[NormalizedSeries], product_id: int | None = None) -> TvmcModel:
    """Count-based estimate of ``P_t(s, s')`` from cumulative per-mille paths.

    Every path is prefixed with a virtual state 0 at ``t = -1``, so the step-0
    quantity is the transition at ``t = 0``.
    """
    if not seasons:
        raise ArrivalModelError("fit_tvmc needs at least one season")
    lengths = {len(s.per_mille) for s in seasons}
    if len(lengths) != 1:
        detail = ", ".join(f"season {s.season_index}: T={len(s.per_mille)}" for s in seasons)
        raise ArrivalModelError(f"seasons have mismatched lengths ({detail})")
    T = lengths.pop()
    if product_id is None:
        product_id = seasons[0].product_id

    cum = np.stack([s.cumulative for s in seasons])  # (m, T)
    prev = np.concatenate([np.zeros((len(seasons), 1), dtype=np.int64), cum[:, :-1]], axis=1)
    if np.any(cum < prev) or np.any(cum > GRID_MAX):
        raise ArrivalModelError(f"product {product_id}: cumulative path leaves the 0..1000 grid")

    times = np.broadcast_to(np.arange(T), cum.shape).ravel()
    n = GRID_MAX + 1
    keys = (times * n + prev.ravel()) * n + cum.ravel()
    uniq, counts = np.unique(keys, return_counts=True)
    t_of = uniq // (n * n)
    s_of = (uniq // n) % n
    s2_of = uniq % n

    row_key = t_of * n + s_of
    row_start = np.flatnonzero(np.r_[True, row_key[1:] != row_key[:-1]])
    tgt_ptr = np.r_[row_start, len(uniq)].astype(np.int64)
    row_totals = np.add.reduceat(counts, row_start)
    prob = counts / np.repeat(row_totals, np.diff(tgt_ptr))
    row_t = t_of[row_start]
    row_ptr = np.searchsorted(row_t, np.arange(T + 1)).astype(np.int64)

    return TvmcModel(
        product_id=product_id,
        T=T,
        row_ptr=row_ptr,
        src=s_of[row_start].astype(np.int64),
        tgt_ptr=tgt_ptr,
        tgt=s2_of.astype(np.int64),
        prob=prob.astype(np.float64),
        n_seasons=len(seasons),
    )


def sample_transition(model: TvmcModel, t: int, s: int, rng: np.random.Generator) -> int:
    """Draw the state at ``t`` given state ``s`` at ``t - 1``; unseen rows self-loop."""
    if not 0 <= s <= GRID_MAX:
        raise ArrivalModelError(f"state {s} is outside the 0..{GRID_MAX} grid")
    if not 0 <= t < model.T:
        raise ArrivalModelError(f"time step {t} is outside [0, {model.T})")
    k = model._row_index(t, s)
    if k < 0:
        return s
    a, b = int(model.tgt_ptr[k]), int(model.tgt_ptr[k + 1])
    if b - a == 1:
        return int(model.tgt[a])
    j = int(np.searchsorted(model._cum[a:b], rng.random(), side="right"))
    return int(model.tgt[a + min(j, b - a - 1)])


def sample_trajectory(model: TvmcModel, rng: np.random.Generator) -> np.ndarray:
    """Cumulative states for ``t = 0..T-1``, chained from the virtual origin 0."""
    out = np.empty(model.T, dtype=np.int64)
    s = 0
    for t in range(model.T):
        s = sample_transition(model, t, s, rng)
        out[t] = s
    return out


@dataclass
class FitReport:
    seasons_per_product: dict[int, int]
    low_data_threshold: int = 3

    @property
    def low_data_products(self) -> list[int]:
        return sorted(p for p, m in self.seasons_per_product.items() if m < self.low_data_threshold)


def fit_products(
    histories: Mapping[int, Sequence[HistoricalSeason]],
    low_data_threshold: int = 3,
) -> tuple[dict[int, TvmcModel], FitReport]:
    models = {}
    for pid, seasons in sorted(histories.items()):
        models[pid] = fit_tvmc([normalize_season(s) for s in seasons], product_id=pid)
    report = FitReport({pid: len(s) for pid, s in histories.items()}, low_data_threshold)
    return models, report


class HistoryFormatError(ArrivalModelError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_history_csv(path: str | Path, T: int | None = None) -> dict[int, list[HistoricalSeason]]:
    """Load ``product_id, season_index, time_step, quantity`` rows.

    Missing ``(product, season, t)`` rows count as zero. ``T`` defaults to one past
    the largest time step in the file.
    """
    cells: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["product_id", "season_index", "time_step", "quantity"]
        if header is None or [h.strip() for h in header] != expected:
            raise HistoryFormatError(1, f"expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise HistoryFormatError(lineno, f"expected 4 fields, got {len(row)}")
            try:
                pid, season, step, qty = (int(c) for c in row)
            except ValueError:
                raise HistoryFormatError(lineno, f"non-integer field in {row!r}") from None
            if step < 0 or qty < 0:
                raise HistoryFormatError(lineno, "time_step and quantity must be >= 0")
            cells[(pid, season)][step] = cells[(pid, season)].get(step, 0) + qty
    if not cells:
        raise HistoryFormatError(2, "no data rows")
    if T is None:
        T = 1 + max(max(v) for v in cells.values())
    out: dict[int, list[HistoricalSeason]] = defaultdict(list)
    for (pid, season), steps in sorted(cells.items()):
        if max(steps) >= T:
            raise ArrivalModelError(f"product {pid} season {season}: time step beyond T={T}")
        q = [0] * T
        for step, v in steps.items():
            q[step] = v
        out[pid].append(HistoricalSeason(pid, tuple(q), season))
    return dict(out)


def write_history_csv(path: str | Path, histories: Mapping[int, Sequence[HistoricalSeason]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["product_id", "season_index", "time_step", "quantity"])
        for pid in sorted(histories):
            for season in histories[pid]:
                for t, q in enumerate(season.quantities):
                    if q:
                        w.writerow([pid, season.season_index, t, q])


def save_models(path: str | Path, models: Mapping[int, TvmcModel]) -> None:
    with open(path, "w") as fh:
        json.dump([models[p].to_json() for p in sorted(models)], fh)


def load_models(path: str | Path) -> dict[int, TvmcModel]:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return {m.product_id: m for m in (TvmcModel.from_json(d) for d in data)}
