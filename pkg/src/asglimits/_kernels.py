"""Compiled event loops for the samplers in :mod:`asglimits.engine`.

Both loops write into caller-owned buffers and return when the buffer is
full, so the Python side can grow storage and resume from the returned
state. The draw order is fixed and mirrored by the pure-Python
``sample_arrival``; a trajectory is therefore bit-identical whichever
route produced it.
"""

import numba as nb
import numpy as np

PAIR = 0
MUTATION = 1
SELECTION = 2

RUNNING = 0
REACHED = 1
HORIZON = 2
ABSORBED = 3


@nb.njit(cache=True)
def _stop_reached(a, b, c, level, coord):
    if coord == 0:
        return a <= level
    if coord == 1:
        return b <= level
    if coord == 2:
        return c <= level
    return max(a, c) <= level


@nb.njit(cache=True)
def coupled_chunk(rng, state, t, theta, sigma, level, coord, horizon,
                  out_time, out_kind, out_i, out_j, out_applied, out_counts):
    """Advance the coupled triple until stop or until the buffers are full.

    ``state`` holds the counts ``(kingman, mutation, asg)`` and is updated in
    place. Returns ``(events_written, status, time)``.
    """
    cap = out_time.shape[0]
    a = state[0]
    b = state[1]
    c = state[2]
    k = 0
    status = RUNNING
    while True:
        if level >= 0 and _stop_reached(a, b, c, level, coord):
            status = REACHED
            break
        m = max(a, c)
        r_pair = 0.5 * m * (m - 1)
        r_mut = 0.5 * theta * c
        r_sel = 0.5 * sigma * c
        total = r_pair + r_mut + r_sel
        if total <= 0.0:
            status = ABSORBED
            break
        if k == cap:
            break
        h = rng.standard_exponential() / total
        if t + h > horizon:
            t = horizon
            status = HORIZON
            break
        t += h
        u = rng.random() * total
        ap = 0
        bp = 0
        cp = 0
        if u < r_pair:
            i0 = rng.integers(0, m)
            j0 = rng.integers(0, m - 1)
            if j0 >= i0:
                j0 += 1
            i = min(i0, j0) + 1
            j = max(i0, j0) + 1
            kind = PAIR
            if a >= j:
                a -= 1
                ap = 1
            if b >= j:
                b -= 1
                bp = 1
            if c >= j:
                c -= 1
                cp = 1
        elif u < r_pair + r_mut:
            i = rng.integers(0, c) + 1
            j = 0
            kind = MUTATION
            if i <= b:
                b -= 1
                bp = 1
            c -= 1
            cp = 1
        else:
            i = rng.integers(0, c) + 1
            j = 0
            kind = SELECTION
            c += 1
            cp = 1
        out_time[k] = t
        out_kind[k] = kind
        out_i[k] = i
        out_j[k] = j
        out_applied[k, 0] = ap
        out_applied[k, 1] = bp
        out_applied[k, 2] = cp
        out_counts[k, 0] = a
        out_counts[k, 1] = b
        out_counts[k, 2] = c
        k += 1
    state[0] = a
    state[1] = b
    state[2] = c
    return k, status, t


@nb.njit(cache=True)
def birth_death_chunk(rng, state, t, theta, sigma, level, horizon, out_time, out_count):
    """Advance the lineage count of a single birth/death chain.

    Birth rate ``sigma*n/2``, death rate ``n*(n-1+theta)/2``. Returns
    ``(events_written, status, time)``; ``state[0]`` is the current count.
    """
    cap = out_time.shape[0]
    n = state[0]
    k = 0
    status = RUNNING
    while True:
        if level >= 0 and n <= level:
            status = REACHED
            break
        s = n - 1 + theta + sigma
        total = 0.5 * n * s
        if total <= 0.0:
            status = ABSORBED
            break
        if k == cap:
            break
        h = rng.standard_exponential() / total
        if t + h > horizon:
            t = horizon
            status = HORIZON
            break
        t += h
        if rng.random() * s < sigma:
            n += 1
        else:
            n -= 1
        out_time[k] = t
        out_count[k] = n
        k += 1
    state[0] = n
    return k, status, t


@nb.njit(cache=True)
def step_moment_recursion(theta, sigma, n_min, n_max, k_max, binom):
    """Moments ``E[T_{n,n-1}^k]`` by first-step analysis, backward in ``n``.

    Row ``n - n_min`` of the result holds the moments of orders
    ``0..k_max`` (order 0 is 1). The top level is made death-only, so
    its row is the exponential moments ``k!/mu^k``.
    """
    rows = n_max - n_min + 1
    a = np.zeros((rows, k_max + 1))
    exi = np.zeros(k_max + 1)
    fact = np.ones(k_max + 1)
    for m in range(1, k_max + 1):
        fact[m] = fact[m - 1] * m
    mu_top = 0.5 * n_max * (n_max - 1 + theta)
    a[rows - 1, 0] = 1.0
    for m in range(1, k_max + 1):
        a[rows - 1, m] = fact[m] * (1.0 / mu_top) ** m
    for r in range(rows - 2, -1, -1):
        n = n_min + r
        s = n - 1 + theta + sigma
        p = sigma / s
        q = (n - 1 + theta) / s
        inv = 2.0 / (n * s)
        exi[0] = 1.0
        for m in range(1, k_max + 1):
            exi[m] = fact[m] * inv**m
        a[r, 0] = 1.0
        for k in range(1, k_max + 1):
            acc = exi[k]
            # excursion after an upward first step: S = T_{n+1,n} + T'_{n,n-1}
            for j in range(1, k + 1):
                es = 0.0
                for i in range(0, j + 1):
                    if j == k and i == 0:
                        continue
                    es += binom[j, i] * a[r + 1, i] * a[r, j - i]
                acc += binom[k, j] * exi[k - j] * p * es
            a[r, k] = acc / q
    return a


@nb.njit(cache=True)
def excursion_count_recursion(theta, sigma, n_min, n_max, k_max, binom):
    """Moments of the number of upward jumps made before first hitting ``n-1``
    from ``n``, backward in ``n`` with no births at ``n_max``."""
    rows = n_max - n_min + 1
    h = np.zeros((rows, k_max + 1))
    h[rows - 1, 0] = 1.0
    for r in range(rows - 2, -1, -1):
        n = n_min + r
        s = n - 1 + theta + sigma
        p = sigma / s
        q = (n - 1 + theta) / s
        h[r, 0] = 1.0
        for k in range(1, k_max + 1):
            acc = 0.0
            # multinomial over (m1, m2, m3), m2 = k excluded
            for m2 in range(0, k):
                for m3 in range(0, k - m2 + 1):
                    m1 = k - m2 - m3
                    coef = binom[k, m1] * binom[k - m1, m2]
                    acc += coef * h[r, m2] * h[r + 1, m3]
            h[r, k] = p * acc / q
    return h


@nb.njit(cache=True)
def birth_death_at_times(rng, n, t, theta, sigma, level, query, out):
    """Run the birth/death chain from count ``n`` at time ``t`` and record
    the right-continuous count at each of the sorted ``query`` times.

    With ``level >= 0`` the run continues until the count is at or below
    ``level`` (queries after that get -2); otherwise it stops at the last
    query. Queries before ``t`` get -1. Returns ``(count, time)`` at the
    stop. Consumes the generator exactly as :func:`birth_death_chunk`
    does with the same level and ``horizon = query[-1]``.
    """
    m = query.shape[0]
    qi = 0
    while qi < m and query[qi] < t:
        out[qi] = -1
        qi += 1
    reached = False
    while True:
        if level >= 0 and n <= level:
            reached = True
            break
        if level < 0 and qi == m:
            break
        s = n - 1 + theta + sigma
        total = 0.5 * n * s
        if total <= 0.0:
            break
        h = rng.standard_exponential() / total
        while qi < m and t + h > query[qi]:
            out[qi] = n
            qi += 1
        if level < 0 and qi == m:
            break
        t += h
        if rng.random() * s < sigma:
            n += 1
        else:
            n -= 1
    while qi < m:
        out[qi] = -2 if reached else n
        qi += 1
    return n, t


@nb.njit(cache=True)
def path_summary(start, times, counts, end, t_stop, theta, sigma, y0):
    """Fused pass over one path, up to ``min(end, t_stop)``.

    Returns ``(sup |u - Y|, integral of s^4 n(n-1+theta+sigma)/2, L)``
    where ``u = s n/2 - 1``, ``L`` is the integral of ``s dM_s`` from
    ``start`` and ``Y_s = (start*y0 - L_s)/s``. ``u - Y`` is continuous,
    so it is sampled at event times and at the stop time.
    """
    stop = min(end, t_stop)
    c0 = start * y0
    lint = 0.0
    comp = 0.0
    sup = 0.0
    m = times.shape[0]
    a = start
    for i in range(m + 1):
        if a >= stop:
            break
        last = i == m or times[i] >= stop
        b = stop if last else times[i]
        n = float(counts[i])
        drift = 0.5 * n * (n - 1 + theta - sigma)
        da = b - a
        lint -= 0.5 * drift * da * (b * b + a * b + a * a) / 3.0
        b2 = b * b
        a2 = a * a
        comp += 0.5 * n * (n - 1 + theta + sigma) * da * (b2 * b2 + b2 * b * a + b2 * a2
                                                          + b * a2 * a + a2 * a2) / 5.0
        if last:
            u = 0.5 * b * n - 1.0
        else:
            d = counts[i + 1] - counts[i]
            lint -= 0.5 * d * b2
            u = 0.5 * b * counts[i + 1] - 1.0
        dev = abs(u - (c0 - lint) / b)
        if dev > sup:
            sup = dev
        if last:
            break
        a = b
    return sup, comp, lint
