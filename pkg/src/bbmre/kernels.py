"""Hot inner loops.

Every public kernel here has two implementations: a loop version compiled by
numba, and a vectorised numpy version used when ``BBMRE_BACKEND=numpy``.  The
two consume random numbers differently, so results agree in law but not bit for
bit across backends; each backend is deterministic on its own.
"""
import math

import numpy as np
from scipy.linalg import solve_banded

from ._backend import USE_NUMBA, njit

# status codes returned by the simulation kernels
OK = 0
TRUNCATED = 1
EXITED = 2


# --------------------------------------------------------------------------
# table lookups

@njit
def _interp(x, origin, h, vals):
    u = (x - origin) / h
    i = int(math.floor(u))
    n = vals.shape[0]
    if i < 0:
        return vals[0]
    if i >= n - 1:
        return vals[n - 1]
    f = u - i
    return vals[i] * (1.0 - f) + vals[i + 1] * f


def _interp_np(x, origin, h, vals):
    u = (x - origin) / h
    i = np.clip(np.floor(u).astype(np.int64), 0, vals.shape[0] - 2)
    f = np.clip(u - i, 0.0, 1.0)
    return vals[i] * (1.0 - f) + vals[i + 1] * f


@njit
def _sample_offspring(cdf):
    u = np.random.random()
    k = 0
    while k < cdf.shape[0] - 1 and u >= cdf[k]:
        k += 1
    return k + 1


# --------------------------------------------------------------------------
# continuum branching tree (thinning against the dominating rate xi_max)

@njit
def _tree_one(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap):
    stack_s = [0.0]
    stack_x = [x0]
    out = []
    pop = 1
    n_branch = 0
    status = OK
    while len(stack_s) > 0 and status == OK:
        s = stack_s.pop()
        x = stack_x.pop()
        while True:
            w = np.random.exponential(1.0 / xi_max)
            if s + w >= t:
                x += math.sqrt(t - s) * np.random.standard_normal()
                if x < x_lo or x > x_hi:
                    status = EXITED
                out.append(x)
                break
            s += w
            x += math.sqrt(w) * np.random.standard_normal()
            if x < x_lo or x > x_hi:
                status = EXITED
                break
            if np.random.random() * xi_max < _interp(x, origin, h, knots):
                k = _sample_offspring(cdf)
                n_branch += 1
                pop += k - 1
                if pop > cap:
                    status = TRUNCATED
                    break
                for _ in range(k - 1):
                    stack_s.append(s)
                    stack_x.append(x)
    res = np.empty(len(out))
    for i in range(len(out)):
        res[i] = out[i]
    return res, pop, n_branch, status


@njit
def _tree_batch_nb(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap, seeds):
    n = seeds.shape[0]
    mx = np.empty(n)
    pop = np.empty(n, dtype=np.int64)
    nb = np.empty(n, dtype=np.int64)
    st = np.empty(n, dtype=np.int64)
    for r in range(n):
        np.random.seed(seeds[r])
        pos, p, b, s = _tree_one(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap)
        mx[r] = pos.max() if pos.shape[0] > 0 else np.nan
        pop[r] = p
        nb[r] = b
        st[r] = s
    return mx, pop, nb, st


def _tree_one_np(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap, rng):
    s = np.zeros(1)
    x = np.full(1, float(x0))
    done = []
    pop = 1
    n_branch = 0
    while s.size:
        w = rng.exponential(1.0 / xi_max, size=s.size)
        fin = s + w >= t
        if fin.any():
            xf = x[fin] + np.sqrt(t - s[fin]) * rng.standard_normal(fin.sum())
            done.append(xf)
            if xf.min() < x_lo or xf.max() > x_hi:
                return np.concatenate(done), pop, n_branch, EXITED
        keep = ~fin
        s = s[keep] + w[keep]
        x = x[keep] + np.sqrt(w[keep]) * rng.standard_normal(keep.sum())
        if x.size and (x.min() < x_lo or x.max() > x_hi):
            return np.concatenate(done) if done else x, pop, n_branch, EXITED
        acc = rng.random(x.size) * xi_max < _interp_np(x, origin, h, knots)
        if acc.any():
            k = np.searchsorted(cdf, rng.random(acc.sum()), side="right") + 1
            k = np.minimum(k, cdf.size)
            n_branch += int(acc.sum())
            pop += int((k - 1).sum())
            if pop > cap:
                return np.concatenate(done) if done else x, pop, n_branch, TRUNCATED
            extra = np.repeat(np.flatnonzero(acc), k - 1)
            s = np.concatenate([s, s[extra]])
            x = np.concatenate([x, x[extra]])
    return (np.concatenate(done) if done else np.empty(0)), pop, n_branch, OK


def tree_batch(table, xi_max, domain, cdf, x0, t, cap, seeds, rngs=None):
    """Maxima, population sizes, branch counts and status per replicate."""
    origin, h, knots = table
    if USE_NUMBA:
        return _tree_batch_nb(origin, h, knots, xi_max, domain[0], domain[1], cdf,
                              float(x0), float(t), int(cap), seeds)
    n = len(rngs)
    mx = np.empty(n)
    pop = np.empty(n, dtype=np.int64)
    nb = np.empty(n, dtype=np.int64)
    st = np.empty(n, dtype=np.int64)
    for r, rng in enumerate(rngs):
        pos, p, b, s = _tree_one_np(origin, h, knots, xi_max, domain[0], domain[1], cdf,
                                    float(x0), float(t), int(cap), rng)
        mx[r] = pos.max() if pos.size else np.nan
        pop[r], nb[r], st[r] = p, b, s
    return mx, pop, nb, st


def tree_positions(table, xi_max, domain, cdf, x0, t, cap, seed, rng=None):
    origin, h, knots = table
    if USE_NUMBA:
        return _tree_positions_nb(origin, h, knots, xi_max, domain[0], domain[1], cdf,
                                  float(x0), float(t), int(cap), seed)
    return _tree_one_np(origin, h, knots, xi_max, domain[0], domain[1], cdf,
                        float(x0), float(t), int(cap), rng)


@njit
def _tree_positions_nb(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap, seed):
    np.random.seed(seed)
    return _tree_one(origin, h, knots, xi_max, x_lo, x_hi, cdf, x0, t, cap)


@njit
def _lineage_gaps_nb(origin, h, knots, xi_max, x0, n, seed):
    np.random.seed(seed)
    gaps = np.empty(n)
    x = x0
    since = 0.0
    i = 0
    while i < n:
        w = np.random.exponential(1.0 / xi_max)
        since += w
        x += math.sqrt(w) * np.random.standard_normal()
        if np.random.random() * xi_max < _interp(x, origin, h, knots):
            gaps[i] = since
            since = 0.0
            i += 1
    return gaps


def _lineage_gaps_np(origin, h, knots, xi_max, x0, n, rng):
    # Positions are irrelevant for constant potentials but kept for generality.
    gaps = []
    x = x0
    since = 0.0
    while len(gaps) < n:
        w = rng.exponential(1.0 / xi_max, size=256)
        steps = np.sqrt(w) * rng.standard_normal(256)
        path = x + np.cumsum(steps)
        acc = rng.random(256) * xi_max < _interp_np(path, origin, h, knots)
        elapsed = np.cumsum(w)
        prev = 0.0
        for j in np.flatnonzero(acc):
            gaps.append(since + elapsed[j] - prev)
            since = 0.0
            prev = elapsed[j]
        since += elapsed[-1] - prev
        x = path[-1]
    return np.array(gaps[:n])


def lineage_gaps(table, xi_max, x0, n, seed):
    origin, h, knots = table
    if USE_NUMBA:
        return _lineage_gaps_nb(origin, h, knots, xi_max, float(x0), int(n), seed)
    return _lineage_gaps_np(origin, h, knots, xi_max, float(x0), int(n), np.random.default_rng(seed))


# --------------------------------------------------------------------------
# lattice branching random walk (competing exponential clocks)

@njit
def _lattice_one(rates, site_lo, kappa, cdf, x0, t, cap):
    n_sites = rates.shape[0]
    stack_s = [0.0]
    stack_x = [x0]
    out = []
    pop = 1
    n_branch = 0
    status = OK
    while len(stack_s) > 0 and status == OK:
        s = stack_s.pop()
        x = stack_x.pop()
        while True:
            i = x - site_lo
            if i < 0 or i >= n_sites:
                status = EXITED
                break
            xi = rates[i]
            total = kappa + xi
            w = np.random.exponential(1.0 / total)
            if s + w >= t:
                out.append(x)
                break
            s += w
            u = np.random.random() * total
            if u < kappa:
                if u < 0.5 * kappa:
                    x += 1
                else:
                    x -= 1
            else:
                k = _sample_offspring(cdf)
                n_branch += 1
                pop += k - 1
                if pop > cap:
                    status = TRUNCATED
                    break
                for _ in range(k - 1):
                    stack_s.append(s)
                    stack_x.append(x)
    res = np.empty(len(out), dtype=np.int64)
    for i in range(len(out)):
        res[i] = out[i]
    return res, pop, n_branch, status


@njit
def _lattice_batch_nb(rates, site_lo, kappa, cdf, x0, t, cap, seeds):
    n = seeds.shape[0]
    mx = np.empty(n)
    pop = np.empty(n, dtype=np.int64)
    nb = np.empty(n, dtype=np.int64)
    st = np.empty(n, dtype=np.int64)
    for r in range(n):
        np.random.seed(seeds[r])
        pos, p, b, s = _lattice_one(rates, site_lo, kappa, cdf, x0, t, cap)
        mx[r] = pos.max() if pos.shape[0] > 0 else np.nan
        pop[r] = p
        nb[r] = b
        st[r] = s
    return mx, pop, nb, st


def _lattice_one_np(rates, site_lo, kappa, cdf, x0, t, cap, rng):
    s = np.zeros(1)
    x = np.full(1, int(x0), dtype=np.int64)
    done = []
    pop = 1
    n_branch = 0
    while s.size:
        i = x - site_lo
        if i.min() < 0 or i.max() >= rates.size:
            return np.concatenate(done) if done else x, pop, n_branch, EXITED
        total = kappa + rates[i]
        w = rng.exponential(1.0, size=s.size) / total
        fin = s + w >= t
        if fin.any():
            done.append(x[fin])
        keep = ~fin
        s, x, total, w = s[keep] + w[keep], x[keep], total[keep], w[keep]
        u = rng.random(s.size) * total
        jump = u < kappa
        x = x + np.where(jump, np.where(u < 0.5 * kappa, 1, -1), 0)
        br = ~jump
        if br.any():
            k = np.minimum(np.searchsorted(cdf, rng.random(br.sum()), side="right") + 1, cdf.size)
            n_branch += int(br.sum())
            pop += int((k - 1).sum())
            if pop > cap:
                return x, pop, n_branch, TRUNCATED
            extra = np.repeat(np.flatnonzero(br), k - 1)
            s = np.concatenate([s, s[extra]])
            x = np.concatenate([x, x[extra]])
    return (np.concatenate(done) if done else np.empty(0, dtype=np.int64)), pop, n_branch, OK


def lattice_batch(rates, site_lo, kappa, cdf, x0, t, cap, seeds, rngs=None):
    if USE_NUMBA:
        return _lattice_batch_nb(rates, int(site_lo), float(kappa), cdf, int(x0), float(t), int(cap), seeds)
    n = len(rngs)
    mx = np.empty(n)
    pop = np.empty(n, dtype=np.int64)
    nb = np.empty(n, dtype=np.int64)
    st = np.empty(n, dtype=np.int64)
    for r, rng in enumerate(rngs):
        pos, p, b, s = _lattice_one_np(rates, int(site_lo), float(kappa), cdf, int(x0), float(t), int(cap), rng)
        mx[r] = pos.max() if pos.size else np.nan
        pop[r], nb[r], st[r] = p, b, s
    return mx, pop, nb, st


# --------------------------------------------------------------------------
# diffusions with tabulated drift: hitting times, barrier times, path weights

BRIDGE_CUT = 40.0
NORMAL_BLOCK = 256


@njit
def _hit_one(x0, y, dt, t_max, d_o, d_h, d_v, p_o, p_h, p_v, pot_shift, use_pot,
             barrier_on, b_y, b_v, b_t, lo, hi):
    """Euler-Maruyama until the first (bridge-corrected) passage of ``y``.

    Returns (H, T_barrier, integral of potential + shift, status).  H is nan if
    t_max was reached first; T_barrier is nan if the barrier was not hit.
    """
    x = x0
    s = 0.0
    sq = math.sqrt(dt)
    integ = 0.0
    tb = np.nan
    pot_prev = _interp(x, p_o, p_h, p_v) + pot_shift if use_pot else 0.0
    # block draws are about three times cheaper than scalar normals
    buf = np.random.standard_normal(NORMAL_BLOCK)
    k = 0
    while s < t_max:
        if k == NORMAL_BLOCK:
            buf = np.random.standard_normal(NORMAL_BLOCK)
            k = 0
        xn = x + _interp(x, d_o, d_h, d_v) * dt + sq * buf[k]
        k += 1
        if xn < lo or xn > hi:
            if xn < y:
                return np.nan, tb, integ, EXITED
        pot_new = 0.0
        if use_pot and xn >= lo and xn <= hi:
            pot_new = _interp(xn, p_o, p_h, p_v) + pot_shift
        if barrier_on and np.isnan(tb):
            d0 = x - (b_y - b_v * (b_t - s))
            d1 = xn - (b_y - b_v * (b_t - s - dt))
            if d1 >= 0.0:
                tb = s + dt * (-d0) / (d1 - d0) if d1 > d0 else s + dt
            elif 2.0 * d0 * d1 / dt < BRIDGE_CUT and np.random.random() < math.exp(-2.0 * d0 * d1 / dt):
                tb = s + 0.5 * dt
        if xn >= y:
            frac = (y - x) / (xn - x) if xn > x else 1.0
            if use_pot:
                pot_y = _interp(y, p_o, p_h, p_v) + pot_shift
                integ += 0.5 * (pot_prev + pot_y) * frac * dt
            h = s + frac * dt
            if barrier_on and not np.isnan(tb) and tb > h:
                tb = h
            return h, tb, integ, OK
        # bridge crossing; below e^-40 the draw is skipped
        arg = 2.0 * (y - x) * (y - xn) / dt
        if arg < BRIDGE_CUT and np.random.random() < math.exp(-arg):
            if use_pot:
                integ += 0.5 * (pot_prev + pot_new) * 0.5 * dt
            h = s + 0.5 * dt
            if barrier_on and not np.isnan(tb) and tb > h:
                tb = h
            return h, tb, integ, OK
        if use_pot:
            integ += 0.5 * (pot_prev + pot_new) * dt
        pot_prev = pot_new
        x = xn
        s += dt
    return np.nan, tb, integ, OK


@njit
def _hit_batch_nb(x0, y, dt, t_max, d_o, d_h, d_v, p_o, p_h, p_v, pot_shift, use_pot,
                  barrier_on, b_y, b_v, b_t, lo, hi, seeds):
    n = seeds.shape[0]
    H = np.empty(n)
    T = np.empty(n)
    I = np.empty(n)
    st = np.empty(n, dtype=np.int64)
    for r in range(n):
        np.random.seed(seeds[r])
        H[r], T[r], I[r], st[r] = _hit_one(x0, y, dt, t_max, d_o, d_h, d_v, p_o, p_h, p_v,
                                           pot_shift, use_pot, barrier_on, b_y, b_v, b_t, lo, hi)
    return H, T, I, st


def _hit_batch_np(x0, y, dt, t_max, d_o, d_h, d_v, p_o, p_h, p_v, pot_shift, use_pot,
                  barrier_on, b_y, b_v, b_t, lo, hi, n, rng):
    H = np.full(n, np.nan)
    T = np.full(n, np.nan)
    I = np.zeros(n)
    st = np.zeros(n, dtype=np.int64)
    x = np.full(n, float(x0))
    idx = np.arange(n)
    pot_prev = (_interp_np(x, p_o, p_h, p_v) + pot_shift) if use_pot else np.zeros(n)
    s = 0.0
    sq = math.sqrt(dt)
    while idx.size and s < t_max:
        m = idx.size
        xn = x + _interp_np(x, d_o, d_h, d_v) * dt + sq * rng.standard_normal(m)
        out = ((xn < lo) | (xn > hi)) & (xn < y)
        pot_new = (_interp_np(np.clip(xn, lo, hi), p_o, p_h, p_v) + pot_shift) if use_pot else np.zeros(m)
        if barrier_on:
            open_ = np.isnan(T[idx])
            d0 = x - (b_y - b_v * (b_t - s))
            d1 = xn - (b_y - b_v * (b_t - s - dt))
            ub = rng.random(m)
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                direct = open_ & (d1 >= 0)
                tdir = np.where(d1 > d0, s + dt * (-d0) / (d1 - d0), s + dt)
                bridge = open_ & ~direct & (ub < np.exp(-2.0 * d0 * d1 / dt))
            T[idx[direct]] = tdir[direct]
            T[idx[bridge]] = s + 0.5 * dt
        u = rng.random(m)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            direct = xn >= y
            frac = np.where(xn > x, (y - x) / (xn - x), 1.0)
            bridge = ~direct & (u < np.exp(-2.0 * (y - x) * (y - xn) / dt))
        if use_pot:
            pot_y = _interp_np(np.full(m, float(y)), p_o, p_h, p_v) + pot_shift
            inc = np.where(direct, 0.5 * (pot_prev + pot_y) * frac * dt,
                           np.where(bridge, 0.25 * (pot_prev + pot_new) * dt,
                                    0.5 * (pot_prev + pot_new) * dt))
            I[idx] += inc
        hit_t = np.where(direct, s + frac * dt, s + 0.5 * dt)
        hit = (direct | bridge) & ~out
        H[idx[hit]] = hit_t[hit]
        st[idx[out]] = EXITED
        stop = hit | out
        keep = ~stop
        idx, x, pot_prev = idx[keep], xn[keep], pot_new[keep]
        s += dt
    if barrier_on:
        late = ~np.isnan(T) & ~np.isnan(H) & (T > H)
        T[late] = H[late]
    return H, T, I, st


def hit_batch(x0, y, dt, t_max, drift, potential, pot_shift, barrier, bounds, seeds, rng=None):
    """Batch of bridge-corrected first-passage samples.

    ``drift`` and ``potential`` are (origin, spacing, values) tables; pass
    ``potential=None`` to skip the path integral.  ``barrier`` is ``None`` or a
    triple ``(y, speed, horizon)`` describing ``s -> y - speed * (horizon - s)``.
    """
    d_o, d_h, d_v = drift
    use_pot = potential is not None
    p_o, p_h, p_v = potential if use_pot else (0.0, 1.0, np.zeros(2))
    barrier_on = barrier is not None
    b_y, b_v, b_t = barrier if barrier_on else (0.0, 0.0, 0.0)
    lo, hi = bounds
    args = (float(x0), float(y), float(dt), float(t_max), float(d_o), float(d_h), d_v,
            float(p_o), float(p_h), p_v, float(pot_shift), use_pot, barrier_on,
            float(b_y), float(b_v), float(b_t), float(lo), float(hi))
    if USE_NUMBA:
        return _hit_batch_nb(*args, seeds)
    return _hit_batch_np(*args, len(seeds), rng)


@njit
def _endpoint_batch_nb(x0, times, dt, d_o, d_h, d_v, lo, hi, seeds):
    n = seeds.shape[0]
    m = times.shape[0]
    out = np.empty((n, m))
    st = np.zeros(n, dtype=np.int64)
    for r in range(n):
        np.random.seed(seeds[r])
        x = x0
        s = 0.0
        for j in range(m):
            while s < times[j] - 1e-12:
                step = min(dt, times[j] - s)
                x += _interp(x, d_o, d_h, d_v) * step + math.sqrt(step) * np.random.standard_normal()
                s += step
                if x < lo or x > hi:
                    st[r] = EXITED
            out[r, j] = x
    return out, st


def _endpoint_batch_np(x0, times, dt, d_o, d_h, d_v, lo, hi, n, rng):
    x = np.full(n, float(x0))
    st = np.zeros(n, dtype=np.int64)
    out = np.empty((n, times.size))
    s = 0.0
    for j, tj in enumerate(times):
        while s < tj - 1e-12:
            step = min(dt, tj - s)
            x += _interp_np(x, d_o, d_h, d_v) * step + math.sqrt(step) * rng.standard_normal(n)
            s += step
            st[(x < lo) | (x > hi)] = EXITED
        out[:, j] = x
    return out, st


def endpoint_batch(x0, times, dt, drift, bounds, seeds, rng=None):
    """X at each of the increasing ``times`` for dX = b(X) dt + dB from ``x0``; shape (n, len(times))."""
    d_o, d_h, d_v = drift
    times = np.ascontiguousarray(np.atleast_1d(times), dtype=np.float64)
    args = (float(x0), times, float(dt), float(d_o), float(d_h), d_v, float(bounds[0]), float(bounds[1]))
    if USE_NUMBA:
        return _endpoint_batch_nb(*args, seeds)
    return _endpoint_batch_np(*args, len(seeds), rng)


# --------------------------------------------------------------------------
# reaction-diffusion stepping (theta scheme in diffusion, explicit reaction)

DIRICHLET = 0
NEUMANN = 1

# reaction handling in theta_steps
FKPP = 0        # xi * F(w), explicit
LINEAR = 1      # xi * w, explicit
LINEAR_SPLIT = 2  # xi * w, exact half steps around the diffusion solve


@njit
def _reaction(w, xi, pcoef, mode):
    if mode != FKPP:
        return xi * w
    q = 1.0 - w
    # F(w) = q - sum_k p_k q^k, Horner in q over k = 1..K
    acc = 0.0
    for k in range(pcoef.shape[0] - 1, -1, -1):
        acc = acc * q + pcoef[k]
    return xi * (q - acc * q)


@njit
def _theta_steps_nb(W, xi, pcoef, mode, coef, dt, theta, nsteps, bc_l, bc_r,
                    clamp, probe, trace, trace_off):
    rows, n = W.shape
    a = theta * dt * coef
    b = (1.0 - theta) * dt * coef
    lo = np.full(n, -a)
    di = np.full(n, 1.0 + 2.0 * a)
    up = np.full(n, -a)
    if bc_l == DIRICHLET:
        di[0] = 1.0
        up[0] = 0.0
    else:
        up[0] = -2.0 * a
    if bc_r == DIRICHLET:
        di[n - 1] = 1.0
        lo[n - 1] = 0.0
    else:
        lo[n - 1] = -2.0 * a
    cp = np.empty(n)
    den = np.empty(n)
    den[0] = di[0]
    cp[0] = up[0] / den[0]
    for i in range(1, n):
        den[i] = di[i] - lo[i] * cp[i - 1]
        cp[i] = up[i] / den[i]
    half = np.exp(0.5 * dt * xi)
    rhs = np.empty(n)
    dp = np.empty(n)
    clamps = 0
    for step in range(nsteps):
        for r in range(rows):
            w = W[r]
            if mode == LINEAR_SPLIT:
                for i in range(n):
                    w[i] *= half[i]
            for i in range(n):
                if i == 0:
                    if bc_l == DIRICHLET:
                        rhs[i] = w[0]
                        continue
                    lap = 2.0 * (w[1] - w[0])
                elif i == n - 1:
                    if bc_r == DIRICHLET:
                        rhs[i] = w[n - 1]
                        continue
                    lap = 2.0 * (w[n - 2] - w[n - 1])
                else:
                    lap = w[i - 1] - 2.0 * w[i] + w[i + 1]
                rhs[i] = w[i] + b * lap
                if mode != LINEAR_SPLIT:
                    rhs[i] += dt * _reaction(w[i], xi[i], pcoef, mode)
            dp[0] = rhs[0] / den[0]
            for i in range(1, n):
                dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / den[i]
            w[n - 1] = dp[n - 1]
            for i in range(n - 2, -1, -1):
                w[i] = dp[i] - cp[i] * w[i + 1]
            if mode == LINEAR_SPLIT:
                for i in range(n):
                    w[i] *= half[i]
            if clamp:
                for i in range(n):
                    if w[i] < 0.0:
                        w[i] = 0.0
                        clamps += 1
                    elif w[i] > 1.0:
                        w[i] = 1.0
                        clamps += 1
            if probe >= 0:
                trace[r, trace_off + step] = w[probe]
    return clamps


def _reaction_np(w, xi, pcoef, mode):
    if mode != FKPP:
        return xi * w
    q = 1.0 - w
    acc = np.zeros_like(w)
    for pk in pcoef[::-1]:
        acc = acc * q + pk
    return xi * (q - acc * q)


def _theta_steps_np(W, xi, pcoef, mode, coef, dt, theta, nsteps, bc_l, bc_r,
                    clamp, probe, trace, trace_off):
    rows, n = W.shape
    a = theta * dt * coef
    b = (1.0 - theta) * dt * coef
    ab = np.zeros((3, n))
    ab[0, 1:] = -a
    ab[1, :] = 1.0 + 2.0 * a
    ab[2, :-1] = -a
    if bc_l == DIRICHLET:
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
    else:
        ab[0, 1] = -2.0 * a
    if bc_r == DIRICHLET:
        ab[1, -1] = 1.0
        ab[2, -2] = 0.0
    else:
        ab[2, -2] = -2.0 * a
    half = np.exp(0.5 * dt * xi)[None, :]
    lap = np.empty_like(W)
    clamps = 0
    for step in range(nsteps):
        if mode == LINEAR_SPLIT:
            W *= half
        lap[:, 1:-1] = W[:, :-2] - 2.0 * W[:, 1:-1] + W[:, 2:]
        lap[:, 0] = 2.0 * (W[:, 1] - W[:, 0])
        lap[:, -1] = 2.0 * (W[:, -2] - W[:, -1])
        rhs = W + b * lap
        if mode != LINEAR_SPLIT:
            rhs += dt * _reaction_np(W, xi[None, :], pcoef, mode)
        if bc_l == DIRICHLET:
            rhs[:, 0] = W[:, 0]
        if bc_r == DIRICHLET:
            rhs[:, -1] = W[:, -1]
        if a == 0.0:
            W[:] = rhs
        else:
            W[:] = solve_banded((1, 1), ab, rhs.T, check_finite=False).T
        if mode == LINEAR_SPLIT:
            W *= half
        if clamp:
            low = W < 0.0
            high = W > 1.0
            clamps += int(low.sum() + high.sum())
            W[low] = 0.0
            W[high] = 1.0
        if probe >= 0:
            trace[:, trace_off + step] = W[:, probe]
    return clamps


@njit
def _probe_rows_nb(W, xi, pcoef, coef, dt, theta, nsteps, clamp, probe, trace, trace_off,
                   tol, pad, row_lo, done_tol, done, nguard, grow_tol):
    # Row r is stepped on [row_lo[r] + 1, b] where b is where it has settled
    # at 1 (within tol).  row_lo[r] moves left by nguard nodes whenever the
    # tail nguard nodes inside it exceeds grow_tol, and the row is frozen once
    # its probe value is within done_tol of 1 (unless done[r] is 2).
    rows, n = W.shape
    A = theta * dt * coef
    B = (1.0 - theta) * dt * coef
    den = np.empty(n)
    cp = np.empty(n)
    den[0] = 1.0 + 2.0 * A
    cp[0] = -A / den[0]
    for k in range(1, n):
        den[k] = 1.0 + 2.0 * A + A * cp[k - 1]
        cp[k] = -A / den[k]
    rhs = np.empty(n)
    dp = np.empty(n)
    clamps = 0
    for r in range(rows):
        w = W[r]
        a = max(row_lo[r] + 1, 1)
        b = n - 2
        while b > a and w[b] >= 1.0 - tol:
            b -= 1
        b = min(b + pad, n - 2)
        for step in range(nsteps):
            if done[r] != 1 and a <= b:
                for i in range(a, b + 1):
                    lap = w[i - 1] - 2.0 * w[i] + w[i + 1]
                    rhs[i] = w[i] + B * lap + dt * _reaction(w[i], xi[i], pcoef, FKPP)
                rhs[a] += A * w[a - 1]
                rhs[b] += A * w[b + 1]
                dp[a] = rhs[a] / den[0]
                for i in range(a + 1, b + 1):
                    dp[i] = (rhs[i] + A * dp[i - 1]) / den[i - a]
                w[b] = dp[b]
                for i in range(b - 1, a - 1, -1):
                    w[i] = dp[i] - cp[i - a] * w[i + 1]
                if clamp:
                    for i in range(a, b + 1):
                        if w[i] < 0.0:
                            w[i] = 0.0
                            clamps += 1
                        elif w[i] > 1.0:
                            w[i] = 1.0
                            clamps += 1
                i1 = min(b + 1, n - 2)
                while i1 > a and w[i1] >= 1.0 - tol:
                    i1 -= 1
                b = min(i1 + pad, n - 2)
                while a > 1 and w[min(a + nguard, n - 1)] > grow_tol:
                    a = max(a - nguard, 1)
                if done[r] == 0 and probe >= 0 and w[probe] >= 1.0 - done_tol:
                    done[r] = 1
            if probe >= 0:
                trace[r, trace_off + step] = w[probe]
        row_lo[r] = a - 1
    return clamps


def probe_rows_steps(W, xi, pcoef, coef, dt, theta, nsteps, row_lo, done, clamp=True, probe=-1, trace=None,
                     trace_off=0, tol=1e-14, done_tol=1e-9, nguard=50, grow_tol=1e-8):
    """Stacked F-KPP rows rising from 0 (left) to 1 (right) when only the probe column matters.

    Same scheme as :func:`theta_steps`, but row r is only stepped right of
    ``row_lo[r]`` (an int64 array, widened in place by ``nguard`` nodes when
    the tail there exceeds ``grow_tol``) and left of the part already within
    ``tol`` of 1.  A row stops once its probe value is within ``done_tol`` of 1;
    ``done`` (uint8) records this across calls, and rows marked 2 never stop.  Needs the compiled backend.
    """
    if trace is None:
        trace = np.empty((W.shape[0], 0))
    ratio = theta * dt * coef / (1.0 + 2.0 * theta * dt * coef)
    # nodes needed for the implicit solve to spread less than tol past the band
    pad = 2 + (math.ceil(math.log(tol) / math.log(ratio)) if 0 < ratio < 1 else 1)
    return _probe_rows_nb(W, np.ascontiguousarray(xi, dtype=np.float64),
                          np.ascontiguousarray(pcoef, dtype=np.float64), float(coef), float(dt), float(theta),
                          int(nsteps), bool(clamp), int(probe), trace, int(trace_off), float(tol), int(pad),
                          row_lo, float(done_tol), done, int(nguard), float(grow_tol))


def theta_steps(W, xi, pcoef, mode, coef, dt, theta, nsteps, bc=(DIRICHLET, DIRICHLET),
                clamp=True, probe=-1, trace=None, trace_off=0):
    """Advance every row of ``W`` in place by ``nsteps`` steps.

    Discretises ``w_t = D w_xx + reaction`` with ``coef = D / dx**2``.  Returns
    the number of clamping events.  With ``probe >= 0`` the value at that
    column after step ``k`` goes to ``trace[:, trace_off + k]``.
    """
    if trace is None:
        trace = np.empty((W.shape[0], 0))
    pcoef = np.ascontiguousarray(pcoef, dtype=np.float64)
    args = (W, np.ascontiguousarray(xi, dtype=np.float64), pcoef, int(mode), float(coef), float(dt),
            float(theta), int(nsteps), int(bc[0]), int(bc[1]), bool(clamp), int(probe), trace, int(trace_off))
    if USE_NUMBA:
        return _theta_steps_nb(*args)
    return _theta_steps_np(*args)


# --------------------------------------------------------------------------
# Riccati equation for the tilt drift and the mean-hitting-time derivative

@njit
def _riccati_nb(pot_nodes, pot_mid, h, b0):
    n = pot_nodes.shape[0]
    b = np.empty(n)
    p = np.empty(n)
    b[0] = b0
    p[0] = -1.0 / b0
    for i in range(n - 1):
        bi = b[i]
        pi = p[i]
        q0 = pot_nodes[i]
        qm = pot_mid[i]
        q1 = pot_nodes[i + 1]
        kb1 = -2.0 * q0 - bi * bi
        kp1 = -2.0 - 2.0 * bi * pi
        b2 = bi + 0.5 * h * kb1
        p2 = pi + 0.5 * h * kp1
        kb2 = -2.0 * qm - b2 * b2
        kp2 = -2.0 - 2.0 * b2 * p2
        b3 = bi + 0.5 * h * kb2
        p3 = pi + 0.5 * h * kp2
        kb3 = -2.0 * qm - b3 * b3
        kp3 = -2.0 - 2.0 * b3 * p3
        b4 = bi + h * kb3
        p4 = pi + h * kp3
        kb4 = -2.0 * q1 - b4 * b4
        kp4 = -2.0 - 2.0 * b4 * p4
        b[i + 1] = bi + h * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4) / 6.0
        p[i + 1] = pi + h * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4) / 6.0
    return b, p


def riccati(pot_nodes, pot_mid, h, b0):
    """RK4 for ``b' = -2 q - b^2`` and ``p' = -2 - 2 b p`` with ``q = zeta + eta``.

    ``pot_nodes`` holds q at the grid nodes, ``pot_mid`` at cell midpoints.
    """
    pot_nodes = np.ascontiguousarray(pot_nodes, dtype=np.float64)
    pot_mid = np.ascontiguousarray(pot_mid, dtype=np.float64)
    if USE_NUMBA:
        return _riccati_nb(pot_nodes, pot_mid, float(h), float(b0))
    # sequential recurrence; the uncompiled loop is the numpy-path fallback
    return _riccati_nb(pot_nodes, pot_mid, float(h), float(b0))


@njit
def _lattice_positions_nb(rates, site_lo, kappa, cdf, x0, t, cap, seed):
    np.random.seed(seed)
    return _lattice_one(rates, site_lo, kappa, cdf, x0, t, cap)


def lattice_positions(rates, site_lo, kappa, cdf, x0, t, cap, seed, rng=None):
    if USE_NUMBA:
        return _lattice_positions_nb(rates, int(site_lo), float(kappa), cdf, int(x0), float(t), int(cap), seed)
    return _lattice_one_np(rates, int(site_lo), float(kappa), cdf, int(x0), float(t), int(cap), rng)
