# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_fallback``. Semantics, tie-breaks and random-stream
consumption must match the reference exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, sqrt, log, cos, exp, M_PI
from libc.stdint cimport int64_t, uint64_t, uint8_t

cnp.import_array()

ctypedef int64_t i64

cdef double EPS = 1e-9
cdef i64 GRID_MAX = 1000


cdef inline uint64_t _next(uint64_t* s) noexcept:
    cdef uint64_t z
    s[0] += 0x9E3779B97F4A7C15ULL
    z = s[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* s) noexcept:
    return <double>(_next(s) >> 11) * (1.0 / 9007199254740992.0)


cdef inline i64 _below(uint64_t* s, i64 n) noexcept:
    return <i64>((_next(s) >> 11) % <uint64_t>n)


def next_u64(uint64_t[::1] rng):
    cdef uint64_t s = rng[0]
    cdef uint64_t z = _next(&s)
    rng[0] = s
    return z


def uniform(uint64_t[::1] rng):
    cdef uint64_t s = rng[0]
    cdef double x = _uniform(&s)
    rng[0] = s
    return x


def below(uint64_t[::1] rng, i64 n):
    cdef uint64_t s = rng[0]
    cdef i64 x = _below(&s, n)
    rng[0] = s
    return x


cdef class Context:
    cdef public i64 T, n_w, n_c, epoch, n_o, n_p
    cdef public double t_setup, t_pc, kappa, noise, alpha, lam, beta, min_fraction
    cdef i64[::1] order_ptr, order_prod, order_qty, deadline, season_total
    cdef i64[::1] tv_row_ptr, tv_src, tv_tgt_ptr, tv_tgt
    cdef double[::1] tv_cum
    cdef uint8_t[::1] tv_identity
    cdef i64[::1] size, dmax, by_deadline, rank
    # scratch
    cdef i64[::1] code_stamp, ind_stamp
    cdef uint8_t[::1] code_val
    cdef i64 stamp
    cdef i64[::1] b_past, b_future, b_flex, b_js, b_bs, b_give, b_rems
    cdef i64[::1] b_used, b_comm, b_ship, b_comm2, b_ship2, b_start, b_shuf
    cdef i64[::1] b_byd, b_byp, b_cand, b_wave, b_cnt

    def __init__(
        self,
        order_ptr, order_prod, order_qty, deadline, season_total,
        tv_row_ptr, tv_src, tv_tgt_ptr, tv_tgt, tv_cum, tv_identity,
        T, n_w, n_c, epoch, t_setup, t_pc, kappa, noise, alpha, lam, beta, min_fraction,
    ):
        def i64a(x):
            a = np.ascontiguousarray(x, dtype=np.int64)
            return a if a.size else np.zeros(1, dtype=np.int64)
        self.order_ptr = np.ascontiguousarray(order_ptr, dtype=np.int64)
        self.order_prod = i64a(order_prod)
        self.order_qty = i64a(order_qty)
        self.deadline = i64a(deadline)
        self.season_total = i64a(season_total)
        self.tv_row_ptr = i64a(tv_row_ptr)
        self.tv_src = i64a(tv_src)
        self.tv_tgt_ptr = i64a(tv_tgt_ptr)
        self.tv_tgt = i64a(tv_tgt)
        cum = np.ascontiguousarray(tv_cum, dtype=np.float64)
        self.tv_cum = cum if cum.size else np.zeros(1)
        ident = np.ascontiguousarray(tv_identity, dtype=np.uint8)
        self.tv_identity = ident if ident.size else np.zeros(1, dtype=np.uint8)
        self.T = T
        self.n_w = n_w
        self.n_c = n_c
        self.epoch = epoch
        self.t_setup = t_setup
        self.t_pc = t_pc
        self.kappa = kappa
        self.noise = noise
        self.alpha = alpha
        self.lam = lam
        self.beta = beta
        self.min_fraction = min_fraction
        self.n_o = len(deadline)
        self.n_p = len(season_total)
        optr = np.asarray(order_ptr, dtype=np.int64)
        oq = np.asarray(order_qty, dtype=np.int64)
        sizes = np.array([int(oq[optr[i]:optr[i + 1]].sum()) for i in range(self.n_o)], dtype=np.int64)
        self.size = i64a(sizes)
        dm = []
        import math
        for s in sizes:
            k = -(-int(n_w) * int(s) // int(n_c))
            dm.append(max(1, math.ceil(float(t_setup) + float(t_pc) * k - 1e-9)))
        self.dmax = i64a(dm)
        dl = list(int(x) for x in deadline)
        order = sorted(range(self.n_o), key=lambda i: (dl[i], i))
        self.by_deadline = i64a(order)
        rk = np.zeros(max(self.n_o, 1), dtype=np.int64)
        for r, i in enumerate(order):
            rk[i] = r
        self.rank = rk
        n_o1 = max(self.n_o, 1)
        self.code_stamp = np.zeros(n_o1, dtype=np.int64)
        self.ind_stamp = np.zeros(n_o1, dtype=np.int64)
        self.code_val = np.zeros(n_o1, dtype=np.uint8)
        self.stamp = 0
        two = 2 * self.n_w + 2
        self.b_past = np.zeros(two, dtype=np.int64)
        self.b_future = np.zeros(two, dtype=np.int64)
        self.b_byd = np.zeros(two, dtype=np.int64)
        self.b_byp = np.zeros(two, dtype=np.int64)
        self.b_cand = np.zeros(two, dtype=np.int64)
        self.b_shuf = np.zeros(max(two, n_o1 + 1), dtype=np.int64)
        w = max(self.n_w + 2, n_o1 + 1)
        self.b_wave = np.zeros(w, dtype=np.int64)
        self.b_flex = np.zeros(w, dtype=np.int64)
        e = max(w, len(order_prod) + 1)
        self.b_js = np.zeros(e, dtype=np.int64)
        self.b_bs = np.zeros(e, dtype=np.int64)
        self.b_give = np.zeros(e, dtype=np.int64)
        self.b_rems = np.zeros(e, dtype=np.int64)
        self.b_ship = np.zeros(w, dtype=np.int64)
        self.b_ship2 = np.zeros(w, dtype=np.int64)
        p1 = max(self.n_p, 1)
        self.b_used = np.zeros(p1, dtype=np.int64)
        self.b_comm = np.zeros(p1, dtype=np.int64)
        self.b_comm2 = np.zeros(p1, dtype=np.int64)
        self.b_start = np.zeros(p1, dtype=np.int64)
        self.b_cnt = np.zeros(p1 + 1, dtype=np.int64)

    @property
    def deadline_list(self):
        return [self.deadline[i] for i in range(self.n_o)]

    @property
    def rank_list(self):
        return [self.rank[i] for i in range(self.n_o)]

    @property
    def by_deadline_list(self):
        return [self.by_deadline[i] for i in range(self.n_o)]


cdef inline i64 _avail(Context c, i64* qty, i64 i) noexcept:
    cdef i64 have = 0, k, q, b
    for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
        q = qty[c.order_prod[k]]
        b = c.order_qty[k]
        have += q if q < b else b
    return have


cdef inline bint _qualifies(Context c, i64* qty, i64 t, i64 i) noexcept:
    if t + c.dmax[i] < c.deadline[i]:
        return False
    return <double>_avail(c, qty, i) >= c.alpha * <double>c.size[i] - EPS


cdef inline int _code(Context c, i64* qty, i64 t, i64 i) noexcept:
    cdef i64 k
    if _qualifies(c, qty, t, i):
        return 2
    for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
        if c.order_qty[k] > qty[c.order_prod[k]]:
            return 0
    return 1


cdef inline int _code_cached(Context c, i64* qty, i64 t, i64 i) noexcept:
    if c.code_stamp[i] != c.stamp:
        c.code_stamp[i] = c.stamp
        c.code_val[i] = _code(c, qty, t, i)
    return c.code_val[i]


cdef i64 _deadline_peak(Context c, uint8_t* pending) noexcept:
    cdef i64 best = -1, best_n = 0, cur = -1, cur_n = 0, r, i, d
    for r in range(c.n_o):
        i = c.by_deadline[r]
        if not pending[i]:
            continue
        d = c.deadline[i]
        if d != cur:
            cur = d
            cur_n = 0
        cur_n += 1
        if cur_n > best_n:
            best = cur
            best_n = cur_n
    return best


cdef i64 _candidate_sets(Context c, i64* qty, uint8_t* pending, i64 t,
                         i64* by_d, i64* nd_out, i64* by_p, i64* np_out) noexcept:
    cdef i64 two = 2 * c.n_w
    cdef i64 peak = _deadline_peak(c, pending)
    cdef i64 n_past = 0, n_fut = 0, r, i, n, k_past, nd = 0, npk = 0
    cdef i64 n_all = c.n_o, lo, hi, mid, left, right, dl, dr, g, lo_g, hi_g
    cdef bint take_left
    nd_out[0] = 0
    np_out[0] = 0
    if peak < 0:
        return -1
    c.stamp += 1
    for r in range(n_all):
        i = c.by_deadline[r]
        if not pending[i]:
            continue
        if c.deadline[i] < t:
            if n_past < two and _code_cached(c, qty, t, i) > 0:
                c.b_past[n_past] = i
                n_past += 1
        elif _code_cached(c, qty, t, i) > 0:
            c.b_future[n_fut] = i
            n_fut += 1
            if n_fut == two:
                break
    n = two if two < n_past + n_fut else n_past + n_fut
    k_past = 0
    while n > 0:
        k_past = <i64>(c.beta * n + EPS)
        if k_past > n_past:
            k_past = n_past
        if n - k_past <= n_fut:
            break
        n -= 1
    if n > 0:
        for r in range(k_past):
            by_d[nd] = c.b_past[r]
            nd += 1
        for r in range(n - k_past):
            by_d[nd] = c.b_future[r]
            nd += 1
    for r in range(nd):
        c.ind_stamp[by_d[r]] = c.stamp

    lo = 0
    hi = n_all
    while lo < hi:
        mid = (lo + hi) // 2
        if c.deadline[c.by_deadline[mid]] < peak:
            lo = mid + 1
        else:
            hi = mid
    left = lo - 1
    right = lo
    while npk < two and (left >= 0 or right < n_all):
        take_left = False
        if left >= 0:
            dl = c.deadline[c.by_deadline[left]]
            if right >= n_all or peak - dl <= c.deadline[c.by_deadline[right]] - peak:
                take_left = True
        if take_left:
            dl = c.deadline[c.by_deadline[left]]
            g = left
            while g > 0 and c.deadline[c.by_deadline[g - 1]] == dl:
                g -= 1
            lo_g = g
            hi_g = left + 1
            left = g - 1
        else:
            dr = c.deadline[c.by_deadline[right]]
            g = right
            while g + 1 < n_all and c.deadline[c.by_deadline[g + 1]] == dr:
                g += 1
            lo_g = right
            hi_g = g + 1
            right = g + 1
        for r in range(lo_g, hi_g):
            i = c.by_deadline[r]
            if pending[i] and c.ind_stamp[i] != c.stamp and _code_cached(c, qty, t, i) > 0:
                by_p[npk] = i
                npk += 1
                if npk == two:
                    break
    nd_out[0] = nd
    np_out[0] = npk
    return peak


cdef i64 _select_candidates(i64* by_d, i64 nd_len, i64* by_p, i64 np_len, double rho,
                            i64 two, double min_fraction, i64* out) noexcept:
    cdef i64 nd = <i64>(two * rho + EPS)
    cdef i64 npk = two - nd
    cdef i64 m = <i64>(min_fraction * two + EPS)
    cdef i64 td, tp, extra, a, r, n = 0
    if nd < m and nd_len >= m:
        nd = m
        npk = two - m
    elif npk < m and np_len >= m:
        nd = two - m
        npk = m
    td = nd if nd < nd_len else nd_len
    tp = npk if npk < np_len else np_len
    extra = two - td - tp
    a = nd_len - td
    if extra < a:
        a = extra
    td += a
    extra -= a
    a = np_len - tp
    if extra < a:
        a = extra
    tp += a
    for r in range(td):
        out[n] = by_d[r]
        n += 1
    for r in range(tp):
        out[n] = by_p[r]
        n += 1
    return n


cdef bint _allocate(Context c, i64* qty, i64 t, i64* wave, i64 nw,
                    i64* committed, i64* shipped) noexcept:
    cdef i64 n_p = c.n_p, j, i, k, p, nflex = 0, a, b, tmp, m, lo, left, total, extra, best, x, g
    for p in range(n_p):
        committed[p] = 0
    for j in range(nw):
        shipped[j] = 0
        i = wave[j]
        if _qualifies(c, qty, t, i):
            c.b_flex[nflex] = j
            nflex += 1
            continue
        for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
            committed[c.order_prod[k]] += c.order_qty[k]
        shipped[j] = c.size[i]
    for p in range(n_p):
        if committed[p] > qty[p]:
            return False
    if nflex == 0:
        return True
    # insertion sort by deadline rank
    for a in range(1, nflex):
        tmp = c.b_flex[a]
        b = a - 1
        while b >= 0 and c.rank[wave[c.b_flex[b]]] > c.rank[wave[tmp]]:
            c.b_flex[b + 1] = c.b_flex[b]
            b -= 1
        c.b_flex[b + 1] = tmp
    # bucket flex demand entries by product, keeping deadline-rank order
    cdef i64* cnt = &c.b_cnt[0]
    for p in range(n_p + 1):
        cnt[p] = 0
    for a in range(nflex):
        i = wave[c.b_flex[a]]
        for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
            cnt[c.order_prod[k] + 1] += 1
    for p in range(n_p):
        cnt[p + 1] += cnt[p]
    for a in range(nflex):
        j = c.b_flex[a]
        i = wave[j]
        for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
            p = c.order_prod[k]
            c.b_js[cnt[p]] = j
            c.b_bs[cnt[p]] = c.order_qty[k]
            cnt[p] += 1
    m = 0
    for p in range(n_p):
        # cnt[p] is now the end of bucket p; m its start
        lo = m
        m = cnt[p]
        if m == lo:
            continue
        total = 0
        for a in range(lo, m):
            total += c.b_bs[a]
        left = qty[p] - committed[p]
        if total <= left:
            for a in range(lo, m):
                c.b_give[a] = c.b_bs[a]
        else:
            extra = left
            for a in range(lo, m):
                c.b_give[a] = left * c.b_bs[a] // total
                c.b_rems[a] = left * c.b_bs[a] % total
                extra -= c.b_give[a]
            while extra > 0:
                best = lo
                for x in range(lo + 1, m):
                    if c.b_rems[x] > c.b_rems[best]:
                        best = x
                c.b_give[best] += 1
                c.b_rems[best] = -1
                extra -= 1
        for a in range(lo, m):
            g = c.b_give[a]
            shipped[c.b_js[a]] += g
            committed[p] += g
    for a in range(nflex):
        j = c.b_flex[a]
        if <double>shipped[j] < c.alpha * <double>c.size[wave[j]] - EPS:
            return False
    return True


cdef inline void _estimate(Context c, i64* committed, i64* dur, i64* kout) noexcept:
    cdef i64 s = 0, p, w, k = 0, d
    for p in range(c.n_p):
        w = committed[p]
        if w > 0:
            s += (w + c.n_c - 1) // c.n_c
    if s > 0:
        k = <i64>ceil(c.kappa * s - EPS)
    d = <i64>ceil(c.t_setup + c.t_pc * k - EPS)
    dur[0] = d if d > 1 else 1
    kout[0] = k


cdef i64 _random_wave(Context c, i64* qty, i64 t, i64* cand, i64 ncand,
                      uint64_t* rng, i64* wave) noexcept:
    cdef i64 a, b, tmp, r, i, k, nw = 0, p
    cdef bint has_flex = False, flex, ok
    cdef i64* order = &c.b_shuf[0]
    cdef i64* used = &c.b_used[0]
    for a in range(ncand):
        order[a] = cand[a]
    a = ncand - 1
    while a > 0:
        b = _below(rng, a + 1)
        tmp = order[a]
        order[a] = order[b]
        order[b] = tmp
        a -= 1
    for p in range(c.n_p):
        used[p] = 0
    for r in range(ncand):
        if nw == c.n_w:
            break
        i = order[r]
        flex = _qualifies(c, qty, t, i)
        # the whole wave's demand still fits: feasible without sharing
        ok = True
        for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
            if used[c.order_prod[k]] + c.order_qty[k] > qty[c.order_prod[k]]:
                ok = False
                break
        if not ok and (flex or has_flex) and c.alpha < 1.0 - EPS:
            # with alpha = 1 any shortfall starves some order, so only alpha < 1 can share
            wave[nw] = i
            ok = _allocate(c, qty, t, wave, nw + 1, &c.b_comm2[0], &c.b_ship2[0])
        if ok:
            wave[nw] = i
            nw += 1
            if flex:
                has_flex = True
            for k in range(c.order_ptr[i], c.order_ptr[i + 1]):
                used[c.order_prod[k]] += c.order_qty[k]
    return nw


cdef void _replenish(Context c, i64* qty, i64* progress, i64 t0, i64 t1, uint64_t* rng) noexcept:
    cdef i64 T = c.T, last = t1 if t1 < T - 1 else T - 1
    cdef i64 n_p = c.n_p, u, p, s, a, b, lo, hi, mid, ta, tb, j, tot
    cdef double x
    cdef i64* start = &c.b_start[0]
    if last <= t0:
        return
    for p in range(n_p):
        start[p] = progress[p]
    for u in range(t0 + 1, last + 1):
        for p in range(n_p):
            if c.tv_identity[p * T + u]:
                continue
            s = progress[p]
            a = c.tv_row_ptr[p * (T + 1) + u]
            b = c.tv_row_ptr[p * (T + 1) + u + 1]
            lo = a
            hi = b
            while lo < hi:
                mid = (lo + hi) // 2
                if c.tv_src[mid] < s:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == b or c.tv_src[lo] != s:
                continue
            ta = c.tv_tgt_ptr[lo]
            tb = c.tv_tgt_ptr[lo + 1]
            if tb - ta == 1:
                progress[p] = c.tv_tgt[ta]
            else:
                x = _uniform(rng)
                j = ta
                while j < tb - 1 and c.tv_cum[j] <= x:
                    j += 1
                progress[p] = c.tv_tgt[j]
    for p in range(n_p):
        tot = c.season_total[p]
        qty[p] += progress[p] * tot // GRID_MAX - start[p] * tot // GRID_MAX


cdef i64 _step(Context c, i64* qty, i64* progress, uint8_t* pending, i64 t,
               i64* wave, i64 nw, uint64_t* rng, double* reward) noexcept:
    cdef i64 dur, k, f, hits = 0, late = 0, j, i, d, p
    cdef double base, u1, u2, z
    cdef i64* committed = &c.b_comm[0]
    if not _allocate(c, qty, t, wave, nw, committed, &c.b_ship[0]):
        return -1
    _estimate(c, committed, &dur, &k)
    base = c.t_setup + c.t_pc * k
    if c.noise > 0:
        u1 = _uniform(rng)
        u2 = _uniform(rng)
        z = sqrt(-2.0 * log(1.0 - u1)) * cos(2.0 * M_PI * u2)
        base *= exp(c.noise * z)
    dur = <i64>ceil(base - EPS)
    if dur < 1:
        dur = 1
    f = t + dur
    for j in range(nw):
        i = wave[j]
        d = c.deadline[i]
        if f <= d:
            hits += 1
        else:
            late += f - d
        pending[i] = 0
    for p in range(c.n_p):
        qty[p] -= committed[p]
    _replenish(c, qty, progress, t, f, rng)
    reward[0] = hits - c.lam * late
    return f


cdef inline i64 _idle(Context c, i64* qty, i64* progress, i64 t, uint64_t* rng) noexcept:
    cdef i64 nt = (t // c.epoch + 1) * c.epoch
    _replenish(c, qty, progress, t, nt, rng)
    return nt


cdef i64 _accrued(Context c, uint8_t* pending, i64 t) noexcept:
    cdef i64 end = t if t < c.T else c.T, acc = 0, i
    for i in range(c.n_o):
        if pending[i] and end > c.deadline[i]:
            acc += end - c.deadline[i]
    return acc


# ---------------------------------------------------------------- python API

def qualifies(Context ctx, i64[::1] qty, i64 t, i64 i):
    return bool(_qualifies(ctx, &qty[0], t, i))


def order_code(Context ctx, i64[::1] qty, i64 t, i64 i):
    return _code(ctx, &qty[0], t, i)


def deadline_peak(Context ctx, uint8_t[::1] pending):
    return _deadline_peak(ctx, &pending[0])


def candidate_sets(Context ctx, i64[::1] qty, uint8_t[::1] pending, i64 t):
    cdef i64 nd, npk, peak
    peak = _candidate_sets(ctx, &qty[0], &pending[0], t, &ctx.b_byd[0], &nd, &ctx.b_byp[0], &npk)
    return [ctx.b_byd[r] for r in range(nd)], [ctx.b_byp[r] for r in range(npk)], peak


def select_candidates(by_d, by_p, double rho, i64 two, double min_fraction):
    cdef i64[::1] d = np.asarray(list(by_d) + [0], dtype=np.int64)
    cdef i64[::1] p = np.asarray(list(by_p) + [0], dtype=np.int64)
    cdef i64[::1] out = np.zeros(two + 1, dtype=np.int64)
    cdef i64 n = _select_candidates(&d[0], len(by_d), &p[0], len(by_p), rho, two, min_fraction, &out[0])
    return [out[r] for r in range(n)]


cdef inline i64[::1] _ids(object xs):
    cdef i64[::1] w
    if len(xs) == 0:
        return np.zeros(1, dtype=np.int64)
    return np.ascontiguousarray(xs, dtype=np.int64)


def allocate(Context ctx, i64[::1] qty, i64 t, wave):
    cdef i64 nw = len(wave), r
    cdef i64[::1] w = _ids(wave)
    cdef i64[::1] committed = np.zeros(max(ctx.n_p, 1), dtype=np.int64)
    cdef i64[::1] shipped = np.zeros(nw + 1, dtype=np.int64)
    ok = _allocate(ctx, &qty[0], t, &w[0], nw, &committed[0], &shipped[0])
    return bool(ok), [committed[r] for r in range(ctx.n_p)], [shipped[r] for r in range(nw)]


def estimate(Context ctx, committed):
    cdef i64[::1] cm = np.asarray(list(committed) + [0], dtype=np.int64)
    cdef i64 dur, k
    _estimate(ctx, &cm[0], &dur, &k)
    return dur, k


def random_wave(Context ctx, i64[::1] qty, i64 t, cand, uint64_t[::1] rng):
    cdef i64[::1] cd = np.asarray(list(cand) + [0], dtype=np.int64)
    cdef uint64_t s = rng[0]
    cdef i64 nw = _random_wave(ctx, &qty[0], t, &cd[0], len(cand), &s, &ctx.b_wave[0])
    rng[0] = s
    return [ctx.b_wave[r] for r in range(nw)]


def generate_actions(Context ctx, i64[::1] qty, i64 t, cand, i64 n_trials, i64 K, uint64_t[::1] rng):
    cdef i64[::1] cd = _ids(cand)
    cdef i64 ncand = len(cand), trial, nw, dur, k, r, a, b, tmp, j, n_uniq = 0, nk
    cdef uint64_t s = rng[0]
    cdef i64 width = ctx.n_w + 1
    cdef i64[::1] store = np.zeros(max(n_trials, 1) * width, dtype=np.int64)
    cdef i64[::1] dur_of = np.zeros(max(n_trials, 1), dtype=np.int64)
    cdef i64[::1] k_of = np.zeros(max(n_trials, 1), dtype=np.int64)
    cdef i64* w
    cdef bint dup
    if ncand == 0:
        return []
    for trial in range(n_trials):
        nw = _random_wave(ctx, &qty[0], t, &cd[0], ncand, &s, &ctx.b_wave[0])
        if nw == 0:
            continue
        w = &store[n_uniq * width]
        w[0] = nw
        for r in range(nw):
            w[r + 1] = ctx.b_wave[r]
        for a in range(2, nw + 1):
            tmp = w[a]
            b = a - 1
            while b >= 1 and w[b] > tmp:
                w[b + 1] = w[b]
                b -= 1
            w[b + 1] = tmp
        dup = False
        for j in range(n_uniq):
            if store[j * width] != nw:
                continue
            dup = True
            for r in range(1, nw + 1):
                if store[j * width + r] != w[r]:
                    dup = False
                    break
            if dup:
                break
        if dup:
            continue
        _allocate(ctx, &qty[0], t, w + 1, nw, &ctx.b_comm2[0], &ctx.b_ship2[0])
        _estimate(ctx, &ctx.b_comm2[0], &dur, &k)
        dur_of[n_uniq] = dur
        k_of[n_uniq] = k
        n_uniq += 1
    rng[0] = s
    scored = []
    for j in range(n_uniq):
        nk = store[j * width]
        scored.append((dur_of[j], tuple([store[j * width + r] for r in range(1, nk + 1)]), k_of[j]))
    scored.sort()
    return [(key, dur, k) for dur, key, k in scored[:K]]


cdef inline bint _wave_less(i64* a, i64* b, i64 da, i64 db) noexcept:
    # (duration, ids) lexicographic; a[0], b[0] hold the lengths
    cdef i64 r, n
    if da != db:
        return da < db
    n = a[0] if a[0] < b[0] else b[0]
    for r in range(1, n + 1):
        if a[r] != b[r]:
            return a[r] < b[r]
    return a[0] < b[0]


def generate_actions_flat(Context ctx, i64[::1] qty, i64 t, cand, i64 n_trials, i64 K, uint64_t[::1] rng):
    """Same waves as ``generate_actions`` as CSR arrays ``(flat, ptr, dur, k)``."""
    cdef i64[::1] cd = _ids(cand)
    cdef i64 ncand = len(cand), trial, nw, dur, k, r, a, b, tmp, j, n_uniq = 0, m, pos
    cdef uint64_t s = rng[0]
    cdef i64 width = ctx.n_w + 1
    cdef i64 cap = max(n_trials, 1)
    cdef i64[::1] store = np.zeros(cap * width, dtype=np.int64)
    cdef i64[::1] dur_of = np.zeros(cap, dtype=np.int64)
    cdef i64[::1] k_of = np.zeros(cap, dtype=np.int64)
    cdef i64[::1] idx = np.zeros(cap, dtype=np.int64)
    cdef i64* w
    cdef bint dup
    if ncand > 0:
        for trial in range(n_trials):
            nw = _random_wave(ctx, &qty[0], t, &cd[0], ncand, &s, &ctx.b_wave[0])
            if nw == 0:
                continue
            w = &store[n_uniq * width]
            w[0] = nw
            for r in range(nw):
                w[r + 1] = ctx.b_wave[r]
            for a in range(2, nw + 1):
                tmp = w[a]
                b = a - 1
                while b >= 1 and w[b] > tmp:
                    w[b + 1] = w[b]
                    b -= 1
                w[b + 1] = tmp
            dup = False
            for j in range(n_uniq):
                if store[j * width] != nw:
                    continue
                dup = True
                for r in range(1, nw + 1):
                    if store[j * width + r] != w[r]:
                        dup = False
                        break
                if dup:
                    break
            if dup:
                continue
            _allocate(ctx, &qty[0], t, w + 1, nw, &ctx.b_comm2[0], &ctx.b_ship2[0])
            _estimate(ctx, &ctx.b_comm2[0], &dur, &k)
            dur_of[n_uniq] = dur
            k_of[n_uniq] = k
            n_uniq += 1
        rng[0] = s
    # insertion sort of indices; waves are distinct so the order is total
    for a in range(n_uniq):
        tmp = a
        b = a - 1
        while b >= 0 and _wave_less(&store[tmp * width], &store[idx[b] * width], dur_of[tmp], dur_of[idx[b]]):
            idx[b + 1] = idx[b]
            b -= 1
        idx[b + 1] = tmp
    m = n_uniq if n_uniq < K else K
    ptr_np = np.zeros(m + 1, dtype=np.int64)
    dur_np = np.zeros(m, dtype=np.int64)
    k_np = np.zeros(m, dtype=np.int64)
    cdef i64[::1] ptr = ptr_np
    for j in range(m):
        ptr[j + 1] = ptr[j] + store[idx[j] * width]
        dur_np[j] = dur_of[idx[j]]
        k_np[j] = k_of[idx[j]]
    flat_np = np.zeros(ptr[m], dtype=np.int64)
    cdef i64[::1] flat = flat_np
    for j in range(m):
        pos = ptr[j]
        for r in range(store[idx[j] * width]):
            flat[pos + r] = store[idx[j] * width + r + 1]
    return flat_np, ptr_np, dur_np, k_np


def feasible_actions(Context ctx, i64[::1] qty, i64 t, i64[::1] flat, i64[::1] ptr):
    """Indices of the waves ``flat[ptr[j]:ptr[j+1]]`` that are feasible now."""
    cdef i64 j, n = len(ptr) - 1
    out = []
    for j in range(n):
        if _allocate(ctx, &qty[0], t, &flat[ptr[j]], ptr[j + 1] - ptr[j], &ctx.b_comm2[0], &ctx.b_ship2[0]):
            out.append(j)
    return out


def replenish(Context ctx, i64[::1] qty, i64[::1] progress, i64 t0, i64 t1, uint64_t[::1] rng):
    cdef uint64_t s = rng[0]
    _replenish(ctx, &qty[0], &progress[0], t0, t1, &s)
    rng[0] = s


def step(Context ctx, i64[::1] qty, i64[::1] progress, uint8_t[::1] pending, i64 t, wave, uint64_t[::1] rng):
    cdef i64 nw = len(wave), r
    cdef i64[::1] w = _ids(wave)
    cdef uint64_t s = rng[0]
    cdef double reward = 0.0
    cdef i64 f = _step(ctx, &qty[0], &progress[0], &pending[0], t, &w[0], nw, &s, &reward)
    if f < 0:
        raise ValueError(f"infeasible wave {list(wave)} at t={t}")
    rng[0] = s
    return reward, f


def idle(Context ctx, i64[::1] qty, i64[::1] progress, i64 t, uint64_t[::1] rng):
    cdef uint64_t s = rng[0]
    cdef i64 nt = _idle(ctx, &qty[0], &progress[0], t, &s)
    rng[0] = s
    return nt


def accrued_delay(Context ctx, uint8_t[::1] pending, i64 t):
    return _accrued(ctx, &pending[0], t)


def rollout(Context ctx, i64[::1] qty, i64[::1] progress, uint8_t[::1] pending,
            i64 t, double rho, i64 depth, uint64_t[::1] rng):
    cdef uint64_t s = rng[0]
    cdef double ret = 0.0, r
    cdef i64 waves = 0, n_pending = 0, i, nd, npk, ncand, nw, two = 2 * ctx.n_w
    cdef i64* q = &qty[0]
    cdef i64* pr = &progress[0]
    cdef uint8_t* pd = &pending[0]
    for i in range(ctx.n_o):
        if pd[i]:
            n_pending += 1
    while waves < depth and t < ctx.T and n_pending > 0:
        _candidate_sets(ctx, q, pd, t, &ctx.b_byd[0], &nd, &ctx.b_byp[0], &npk)
        ncand = _select_candidates(&ctx.b_byd[0], nd, &ctx.b_byp[0], npk, rho, two,
                                   ctx.min_fraction, &ctx.b_cand[0])
        nw = 0
        if ncand > 0:
            nw = _random_wave(ctx, q, t, &ctx.b_cand[0], ncand, &s, &ctx.b_wave[0])
        if nw == 0:
            t = _idle(ctx, q, pr, t, &s)
            continue
        t = _step(ctx, q, pr, pd, t, &ctx.b_wave[0], nw, &s, &r)
        ret += r
        waves += 1
        n_pending -= nw
    rng[0] = s
    return ret - ctx.lam * _accrued(ctx, pd, t), t


cdef i64 _greedy_cover(i64* cptr, i64* cprod, i64* cqty, i64 n, i64 n_p, i64* demand,
                       i64* out, i64* heap, i64* chosen) noexcept:
    cdef i64 remaining = 0, p, c, k, cov, v, o, size = 0, key, pos, child, tmp, top, nch = 0
    cdef i64 base = n + 1
    for p in range(n_p):
        out[p] = demand[p]
        if out[p] > 0:
            remaining += out[p]
    for c in range(n):
        cov = 0
        for k in range(cptr[c], cptr[c + 1]):
            o = out[cprod[k]]
            if o > 0:
                v = cqty[k]
                cov += v if v < o else o
        if cov > 0:
            key = cov * base + (n - c)
            pos = size
            size += 1
            heap[pos] = key
            while pos > 0 and heap[(pos - 1) // 2] < heap[pos]:
                tmp = heap[(pos - 1) // 2]
                heap[(pos - 1) // 2] = heap[pos]
                heap[pos] = tmp
                pos = (pos - 1) // 2
    while remaining > 0 and size > 0:
        top = heap[0]
        size -= 1
        heap[0] = heap[size]
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= size:
                break
            if child + 1 < size and heap[child + 1] > heap[child]:
                child += 1
            if heap[child] <= heap[pos]:
                break
            tmp = heap[child]
            heap[child] = heap[pos]
            heap[pos] = tmp
            pos = child
        c = n - top % base
        cov = 0
        for k in range(cptr[c], cptr[c + 1]):
            o = out[cprod[k]]
            if o > 0:
                v = cqty[k]
                cov += v if v < o else o
        if cov != top // base:
            if cov > 0:
                key = cov * base + (n - c)
                pos = size
                size += 1
                heap[pos] = key
                while pos > 0 and heap[(pos - 1) // 2] < heap[pos]:
                    tmp = heap[(pos - 1) // 2]
                    heap[(pos - 1) // 2] = heap[pos]
                    heap[pos] = tmp
                    pos = (pos - 1) // 2
            continue
        chosen[nch] = c
        nch += 1
        for k in range(cptr[c], cptr[c + 1]):
            p = cprod[k]
            if out[p] > 0:
                v = cqty[k]
                out[p] -= v if v < out[p] else out[p]
        remaining -= cov
    return nch


def greedy_cover(cptr, cprod, cqty, demand):
    cdef i64[::1] cp = np.asarray(list(cptr), dtype=np.int64)
    cdef i64[::1] pr = np.asarray(list(cprod) + [0], dtype=np.int64)
    cdef i64[::1] qq = np.asarray(list(cqty) + [0], dtype=np.int64)
    cdef i64[::1] dm = np.asarray(list(demand) + [0], dtype=np.int64)
    cdef i64 n = len(cp) - 1
    cdef i64[::1] out = np.zeros(len(dm), dtype=np.int64)
    cdef i64[::1] heap = np.zeros(n + 1, dtype=np.int64)
    cdef i64[::1] chosen = np.zeros(n + 1, dtype=np.int64)
    cdef i64 m = _greedy_cover(&cp[0], &pr[0], &qq[0], n, len(dm) - 1, &dm[0], &out[0], &heap[0], &chosen[0])
    return [chosen[r] for r in range(m)]


def greedy_wave(Context ctx, i64[::1] qty, i64 t, cand, cptr, cprod, cqty):
    cdef i64[::1] cp = np.ascontiguousarray(cptr, dtype=np.int64)
    cdef i64[::1] pr = np.asarray(list(cprod) + [0], dtype=np.int64)
    cdef i64[::1] qq = np.asarray(list(cqty) + [0], dtype=np.int64)
    cdef i64 n = len(cp) - 1, nrest = len(cand) - 1, nw = 1, r, i, best, best_cnt, best_rank, cnt, nkeep
    cdef i64[::1] rest = np.asarray(list(cand[1:]) + [0], dtype=np.int64)
    cdef i64[::1] wave = np.zeros(ctx.n_w + 2, dtype=np.int64)
    cdef i64[::1] committed = np.zeros(max(ctx.n_p, 1), dtype=np.int64)
    cdef i64[::1] shipped = np.zeros(ctx.n_w + 2, dtype=np.int64)
    cdef i64[::1] out = np.zeros(max(ctx.n_p, 1), dtype=np.int64)
    cdef i64[::1] heap = np.zeros(n + 1, dtype=np.int64)
    cdef i64[::1] chosen = np.zeros(n + 1, dtype=np.int64)
    if nrest < 0:
        return []
    wave[0] = cand[0]
    while nw < ctx.n_w and nrest > 0:
        best = -1
        best_cnt = 0
        best_rank = 0
        nkeep = 0
        for r in range(nrest):
            i = rest[r]
            wave[nw] = i
            if not _allocate(ctx, &qty[0], t, &wave[0], nw + 1, &committed[0], &shipped[0]):
                continue
            rest[nkeep] = i
            nkeep += 1
            cnt = _greedy_cover(&cp[0], &pr[0], &qq[0], n, ctx.n_p, &committed[0], &out[0], &heap[0], &chosen[0])
            if best < 0 or cnt < best_cnt or (cnt == best_cnt and ctx.rank[i] < best_rank):
                best = i
                best_cnt = cnt
                best_rank = ctx.rank[i]
        if best < 0:
            break
        wave[nw] = best
        nw += 1
        nrest = 0
        for r in range(nkeep):
            if rest[r] != best:
                rest[nrest] = rest[r]
                nrest += 1
    return [wave[r] for r in range(nw)]


def feasible_by_deadline(Context ctx, i64[::1] qty, uint8_t[::1] pending, i64 t, i64 limit):
    out = []
    cdef i64 r, i
    for r in range(ctx.n_o):
        i = ctx.by_deadline[r]
        if pending[i] and _code(ctx, &qty[0], t, i) > 0:
            out.append(i)
            if len(out) == limit:
                break
    return out
