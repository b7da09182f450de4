"""Pure-Python reference for the search kernels.

Every routine here has a twin in ``_fast.pyx`` that must consume the random
stream identically and return identical results; the test suite checks this.
State is passed as flat arrays (``qty``, ``progress``, ``pending``) that the
routines mutate in place, plus a one-element ``uint64`` array holding the
splitmix64 state.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

_M64 = (1 << 64) - 1
_EPS = 1e-9
GRID_MAX = 1000


def next_u64(rng) -> int:
    s = (int(rng[0]) + 0x9E3779B97F4A7C15) & _M64
    rng[0] = s
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def uniform(rng) -> float:
    return (next_u64(rng) >> 11) * (1.0 / 9007199254740992.0)


def below(rng, n: int) -> int:
    return (next_u64(rng) >> 11) % n


class Context:
    """Static problem data for one episode: orders, arrival model, parameters."""

    def __init__(
        self,
        order_ptr, order_prod, order_qty, deadline, season_total,
        tv_row_ptr, tv_src, tv_tgt_ptr, tv_tgt, tv_cum, tv_identity,
        T, n_w, n_c, epoch, t_setup, t_pc, kappa, noise, alpha, lam, beta, min_fraction,
    ):
        self.order_ptr = [int(x) for x in order_ptr]
        self.order_prod = [int(x) for x in order_prod]
        self.order_qty = [int(x) for x in order_qty]
        self.deadline = [int(x) for x in deadline]
        self.season_total = [int(x) for x in season_total]
        self.tv_row_ptr = [int(x) for x in tv_row_ptr]
        self.tv_src = [int(x) for x in tv_src]
        self.tv_tgt_ptr = [int(x) for x in tv_tgt_ptr]
        self.tv_tgt = [int(x) for x in tv_tgt]
        self.tv_cum = [float(x) for x in tv_cum]
        self.tv_identity = [bool(x) for x in tv_identity]
        self.T = int(T)
        self.n_w = int(n_w)
        self.n_c = int(n_c)
        self.epoch = int(epoch)
        self.t_setup = float(t_setup)
        self.t_pc = float(t_pc)
        self.kappa = float(kappa)
        self.noise = float(noise)
        self.alpha = float(alpha)
        self.lam = float(lam)
        self.beta = float(beta)
        self.min_fraction = float(min_fraction)
        self.n_o = len(self.deadline)
        self.n_p = len(self.season_total)
        self.size = [
            sum(self.order_qty[self.order_ptr[i]:self.order_ptr[i + 1]]) for i in range(self.n_o)
        ]
        self.dmax = [
            max(1, math.ceil(self.t_setup + self.t_pc * (-(-self.n_w * s // self.n_c)) - _EPS))
            for s in self.size
        ]
        self.by_deadline = sorted(range(self.n_o), key=lambda i: (self.deadline[i], i))
        self.rank = [0] * self.n_o
        for r, i in enumerate(self.by_deadline):
            self.rank[i] = r


def _avail(ctx, qty, i) -> int:
    have = 0
    for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
        have += min(int(qty[ctx.order_prod[k]]), ctx.order_qty[k])
    return have


def qualifies(ctx, qty, t, i) -> bool:
    """Order ``i`` may be shipped partially: enough stock and last chance."""
    if t + ctx.dmax[i] < ctx.deadline[i]:
        return False
    return _avail(ctx, qty, i) >= ctx.alpha * ctx.size[i] - _EPS


def order_code(ctx, qty, t, i) -> int:
    """0 = cannot ship alone, 1 = fully stocked, 2 = preemptable."""
    if qualifies(ctx, qty, t, i):
        return 2
    for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
        if ctx.order_qty[k] > qty[ctx.order_prod[k]]:
            return 0
    return 1


def deadline_peak(ctx, pending) -> int:
    best, best_n, cur, cur_n = -1, 0, -1, 0
    for i in ctx.by_deadline:
        if not pending[i]:
            continue
        d = ctx.deadline[i]
        if d != cur:
            cur, cur_n = d, 0
        cur_n += 1
        if cur_n > best_n:
            best, best_n = cur, cur_n
    return best


def candidate_sets(ctx, qty, pending, t):
    """Deadline-ordered and peak-proximity candidate lists plus the peak."""
    two = 2 * ctx.n_w
    peak = deadline_peak(ctx, pending)
    if peak < 0:
        return [], [], -1
    codes = {}

    def code(i):
        c = codes.get(i)
        if c is None:
            c = codes[i] = order_code(ctx, qty, t, i)
        return c

    past, future = [], []
    for i in ctx.by_deadline:
        if not pending[i]:
            continue
        if ctx.deadline[i] < t:
            if len(past) < two and code(i) > 0:
                past.append(i)
        elif code(i) > 0:
            future.append(i)
            if len(future) == two:
                break
    n = min(two, len(past) + len(future))
    while n > 0:
        n_past = min(len(past), int(ctx.beta * n + _EPS))
        if n - n_past <= len(future):
            break
        n -= 1
    if n > 0:
        by_d = past[:n_past] + future[:n - n_past]
    else:
        by_d = []
    in_d = set(by_d)

    by_p = []
    order = ctx.by_deadline
    n_all = len(order)
    # first sorted position with deadline >= peak
    lo, hi = 0, n_all
    while lo < hi:
        mid = (lo + hi) // 2
        if ctx.deadline[order[mid]] < peak:
            lo = mid + 1
        else:
            hi = mid
    left, right = lo - 1, lo
    while len(by_p) < two and (left >= 0 or right < n_all):
        take_left = False
        if left >= 0:
            dl = ctx.deadline[order[left]]
            if right >= n_all or peak - dl <= ctx.deadline[order[right]] - peak:
                take_left = True
        if take_left:
            dl = ctx.deadline[order[left]]
            g = left
            while g > 0 and ctx.deadline[order[g - 1]] == dl:
                g -= 1
            lo_g, hi_g = g, left + 1
            left = g - 1
        else:
            dr = ctx.deadline[order[right]]
            g = right
            while g + 1 < n_all and ctx.deadline[order[g + 1]] == dr:
                g += 1
            lo_g, hi_g = right, g + 1
            right = g + 1
        for r in range(lo_g, hi_g):
            i = order[r]
            if pending[i] and i not in in_d and code(i) > 0:
                by_p.append(i)
                if len(by_p) == two:
                    break
    return by_d, by_p, peak


def select_candidates(by_d, by_p, rho, two, min_fraction):
    nd = int(two * rho + _EPS)
    npk = two - nd
    m = int(min_fraction * two + _EPS)
    if nd < m and len(by_d) >= m:
        nd, npk = m, two - m
    elif npk < m and len(by_p) >= m:
        nd, npk = two - m, m
    td = min(nd, len(by_d))
    tp = min(npk, len(by_p))
    extra = two - td - tp
    a = min(extra, len(by_d) - td)
    td += a
    extra -= a
    tp += min(extra, len(by_p) - tp)
    return list(by_d[:td]) + list(by_p[:tp])


def allocate(ctx, qty, t, wave):
    """Returns ``(feasible, committed[n_p], shipped_total[len(wave)])``."""
    n_p = ctx.n_p
    committed = [0] * n_p
    shipped = [0] * len(wave)
    flex = []
    for j, i in enumerate(wave):
        if qualifies(ctx, qty, t, i):
            flex.append(j)
            continue
        for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
            committed[ctx.order_prod[k]] += ctx.order_qty[k]
        shipped[j] = ctx.size[i]
    for p in range(n_p):
        if committed[p] > qty[p]:
            return False, committed, shipped
    if not flex:
        return True, committed, shipped
    flex.sort(key=lambda j: ctx.rank[wave[j]])
    buckets: dict[int, list[tuple[int, int]]] = {}
    for j in flex:
        i = wave[j]
        for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
            buckets.setdefault(ctx.order_prod[k], []).append((j, ctx.order_qty[k]))
    for p in sorted(buckets):
        js = [j for j, _ in buckets[p]]
        bs = [b for _, b in buckets[p]]
        left = int(qty[p]) - committed[p]
        total = sum(bs)
        if total <= left:
            give = bs
        else:
            give = [left * b // total for b in bs]
            rems = [left * b % total for b in bs]
            extra = left - sum(give)
            while extra > 0:
                best = 0
                for x in range(1, len(rems)):
                    if rems[x] > rems[best]:
                        best = x
                give[best] += 1
                rems[best] = -1
                extra -= 1
        for j, g in zip(js, give):
            shipped[j] += g
            committed[p] += g
    for j in flex:
        if shipped[j] < ctx.alpha * ctx.size[wave[j]] - _EPS:
            return False, committed, shipped
    return True, committed, shipped


def estimate(ctx, committed):
    """Estimated ``(duration, containers)`` of a wave from per-product demand."""
    s = 0
    for w in committed:
        if w > 0:
            s += -(-w // ctx.n_c)
    k = math.ceil(ctx.kappa * s - _EPS) if s > 0 else 0
    return max(1, math.ceil(ctx.t_setup + ctx.t_pc * k - _EPS)), k


def random_wave(ctx, qty, t, cand, rng):
    order = list(cand)
    for a in range(len(order) - 1, 0, -1):
        b = below(rng, a + 1)
        order[a], order[b] = order[b], order[a]
    wave = []
    used = [0] * ctx.n_p
    has_flex = False
    for i in order:
        if len(wave) == ctx.n_w:
            break
        flex = qualifies(ctx, qty, t, i)
        # the whole wave's demand still fits: feasible without sharing
        ok = True
        for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
            if used[ctx.order_prod[k]] + ctx.order_qty[k] > qty[ctx.order_prod[k]]:
                ok = False
                break
        if not ok and (flex or has_flex) and ctx.alpha < 1.0 - _EPS:
            # with alpha = 1 any shortfall starves some order, so only alpha < 1 can share
            ok = allocate(ctx, qty, t, wave + [i])[0]
        if ok:
            wave.append(i)
            if flex:
                has_flex = True
            for k in range(ctx.order_ptr[i], ctx.order_ptr[i + 1]):
                used[ctx.order_prod[k]] += ctx.order_qty[k]
    return wave


def generate_actions(ctx, qty, t, cand, n_trials, K, rng):
    """Up to ``K`` distinct random feasible waves with the lowest estimated duration."""
    if not cand:
        return []
    seen = set()
    scored = []
    for _ in range(n_trials):
        w = random_wave(ctx, qty, t, cand, rng)
        if not w:
            continue
        key = tuple(sorted(w))
        if key in seen:
            continue
        seen.add(key)
        ok, committed, _ = allocate(ctx, qty, t, list(key))
        dur, k = estimate(ctx, committed)
        scored.append((dur, key, k))
    scored.sort()
    return [(key, dur, k) for dur, key, k in scored[:K]]


def generate_actions_flat(ctx, qty, t, cand, n_trials, K, rng):
    """Same waves as ``generate_actions`` as CSR arrays ``(flat, ptr, dur, k)``."""
    acts = generate_actions(ctx, qty, t, cand, n_trials, K, rng)
    ptr = np.zeros(len(acts) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(key) for key, _, _ in acts])
    flat = np.array([i for key, _, _ in acts for i in key], dtype=np.int64)
    dur = np.array([d for _, d, _ in acts], dtype=np.int64)
    k = np.array([c for _, _, c in acts], dtype=np.int64)
    return flat, ptr, dur, k


def feasible_actions(ctx, qty, t, flat, ptr):
    """Indices of the waves ``flat[ptr[j]:ptr[j+1]]`` that are feasible now."""
    return [
        j for j in range(len(ptr) - 1)
        if allocate(ctx, qty, t, [int(x) for x in flat[ptr[j]:ptr[j + 1]]])[0]
    ]


def replenish(ctx, qty, progress, t0, t1, rng):
    """Chain arrival-model transitions over steps ``t0+1..t1`` and credit items."""
    T = ctx.T
    last = min(t1, T - 1)
    n_p = ctx.n_p
    if last <= t0:
        return
    start = [int(progress[p]) for p in range(n_p)]
    for u in range(t0 + 1, last + 1):
        for p in range(n_p):
            if ctx.tv_identity[p * T + u]:
                continue
            s = int(progress[p])
            a = ctx.tv_row_ptr[p * (T + 1) + u]
            b = ctx.tv_row_ptr[p * (T + 1) + u + 1]
            lo, hi = a, b
            while lo < hi:
                mid = (lo + hi) // 2
                if ctx.tv_src[mid] < s:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == b or ctx.tv_src[lo] != s:
                continue
            ta, tb = ctx.tv_tgt_ptr[lo], ctx.tv_tgt_ptr[lo + 1]
            if tb - ta == 1:
                progress[p] = ctx.tv_tgt[ta]
            else:
                x = uniform(rng)
                j = ta
                while j < tb - 1 and ctx.tv_cum[j] <= x:
                    j += 1
                progress[p] = ctx.tv_tgt[j]
    for p in range(n_p):
        tot = ctx.season_total[p]
        qty[p] += int(progress[p]) * tot // GRID_MAX - start[p] * tot // GRID_MAX


def step(ctx, qty, progress, pending, t, wave, rng):
    """Apply one wave; returns ``(reward, new_t)``."""
    ok, committed, _ = allocate(ctx, qty, t, wave)
    if not ok:
        raise ValueError(f"infeasible wave {list(wave)} at t={t}")
    _, k = estimate(ctx, committed)
    base = ctx.t_setup + ctx.t_pc * k
    if ctx.noise > 0:
        u1 = uniform(rng)
        u2 = uniform(rng)
        z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        base *= math.exp(ctx.noise * z)
    f = t + max(1, math.ceil(base - _EPS))
    hits = 0
    late = 0
    for i in wave:
        d = ctx.deadline[i]
        if f <= d:
            hits += 1
        else:
            late += f - d
        pending[i] = 0
    for p in range(ctx.n_p):
        qty[p] -= committed[p]
    replenish(ctx, qty, progress, t, f, rng)
    return hits - ctx.lam * late, f


def idle(ctx, qty, progress, t, rng):
    nt = (t // ctx.epoch + 1) * ctx.epoch
    replenish(ctx, qty, progress, t, nt, rng)
    return nt


def accrued_delay(ctx, pending, t):
    end = min(t, ctx.T)
    acc = 0
    for i in range(ctx.n_o):
        if pending[i] and end > ctx.deadline[i]:
            acc += end - ctx.deadline[i]
    return acc


def rollout(ctx, qty, progress, pending, t, rho, depth, rng):
    """Random playout of up to ``depth`` waves; returns the accumulated reward
    minus ``lam`` times the delay already accrued by still-pending orders."""
    ret = 0.0
    waves = 0
    n_pending = 0
    for i in range(ctx.n_o):
        if pending[i]:
            n_pending += 1
    two = 2 * ctx.n_w
    while waves < depth and t < ctx.T and n_pending > 0:
        by_d, by_p, _ = candidate_sets(ctx, qty, pending, t)
        cand = select_candidates(by_d, by_p, rho, two, ctx.min_fraction)
        w = random_wave(ctx, qty, t, cand, rng) if cand else []
        if not w:
            t = idle(ctx, qty, progress, t, rng)
            continue
        r, t = step(ctx, qty, progress, pending, t, w, rng)
        ret += r
        waves += 1
        n_pending -= len(w)
    return ret - ctx.lam * accrued_delay(ctx, pending, t), t


def greedy_cover(cptr, cprod, cqty, demand):
    """Lazy greedy set cover over containers given in ascending id order.

    Returns chosen container indices in pick order; identical to the plain
    "most coverage, lowest id" greedy because coverages only shrink.
    """
    out = [int(x) for x in demand]
    remaining = sum(v for v in out if v > 0)
    n = len(cptr) - 1
    heap = []
    for c in range(n):
        cov = 0
        for k in range(cptr[c], cptr[c + 1]):
            cov += min(int(cqty[k]), max(out[cprod[k]], 0))
        if cov > 0:
            heap.append((-cov, c))
    heapq.heapify(heap)
    chosen = []
    while remaining > 0 and heap:
        neg, c = heapq.heappop(heap)
        cov = 0
        for k in range(cptr[c], cptr[c + 1]):
            cov += min(int(cqty[k]), max(out[cprod[k]], 0))
        if cov != -neg:
            if cov > 0:
                heapq.heappush(heap, (-cov, c))
            continue
        chosen.append(c)
        for k in range(cptr[c], cptr[c + 1]):
            p = cprod[k]
            if out[p] > 0:
                out[p] -= min(int(cqty[k]), out[p])
        remaining -= cov
    return chosen


def greedy_wave(ctx, qty, t, cand, cptr, cprod, cqty):
    """Earliest-deadline seed, then repeatedly add the candidate whose inclusion
    needs the fewest containers (ties: earlier deadline, lower id)."""
    if not cand:
        return []
    wave = [cand[0]]
    rest = list(cand[1:])
    while len(wave) < ctx.n_w and rest:
        best = -1
        best_key = None
        keep = []
        for i in rest:
            ok, committed, _ = allocate(ctx, qty, t, wave + [i])
            if not ok:
                continue
            keep.append(i)
            key = (len(greedy_cover(cptr, cprod, cqty, committed)), ctx.rank[i])
            if best_key is None or key < best_key:
                best, best_key = i, key
        if best < 0:
            break
        wave.append(best)
        keep.remove(best)
        rest = keep
    return wave


def feasible_by_deadline(ctx, qty, pending, t, limit):
    """First ``limit`` pending orders (deadline order) that can ship alone."""
    out = []
    for i in ctx.by_deadline:
        if pending[i] and order_code(ctx, qty, t, i) > 0:
            out.append(i)
            if len(out) == limit:
                break
    return out
