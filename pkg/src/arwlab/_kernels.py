"""Compiled inner loops.

Everything here works on plain numpy arrays indexed from the left end of a
window; the public modules wrap these in the immutable types of
:mod:`arwlab.core`.  Hash constants and formulas mirror :mod:`arwlab.rng`
bit-for-bit.

Array conventions shared by the kernels:

* ``counts`` (int64) particle count per site, ``sleeping`` (bool) flag;
* ``odo`` (int64) instructions already consumed per site, so the next
  instruction of site ``i`` has index ``odo[i] + 1``;
* ``keys`` (uint64) oracle site keys, ``keys[i] = site_key(oracle, lo + i)``.

Instruction codes: 0 Left, 1 Right, 2 Sleep.
"""
from __future__ import annotations

import numba as nb
import numpy as np

_U = np.uint64
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)
_GOLDEN = _U(0x9E3779B97F4A7C15)
_MUL_SITE = _U(0xD6E8FEB86659FD93)
_MUL_INDEX = _U(0xA0761D6478BD642F)
_S30 = _U(30)
_S27 = _U(27)
_S31 = _U(31)
_S11 = _U(11)
_UNIT = 2.0 ** -53

LEFT, RIGHT, SLEEP = 0, 1, 2
POLICY_LEFTMOST, POLICY_RANDOM, POLICY_LIFO = 0, 1, 2

ORACLE, ENV, TRIAL, POLICY, PLACE, DERIVE = 1, 2, 3, 4, 5, 6

_jit = nb.njit(cache=True, nogil=True)
_inline = nb.njit(cache=True, nogil=True, inline="always")


@_inline
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@_inline
def stream_key(seed, tag):
    return mix64(_U(seed) + _U(tag) * _GOLDEN)


@_inline
def site_key(skey, site):
    return mix64(skey + _U(np.int64(site)) * _MUL_SITE)


@_inline
def draw(key, index):
    return mix64(key + _U(index) * _MUL_INDEX)


@_inline
def unit(h):
    return np.float64(h >> _S11) * _UNIT


@_jit
def derive_seed(base, a, b):
    h = stream_key(base, DERIVE)
    h = mix64(h + _U(np.int64(a)) * _MUL_SITE)
    return mix64(h + _U(np.int64(b)) * _MUL_SITE)


@_inline
def instruction(key, index, ts, tl):
    v = np.float64(draw(key, index) >> _S11)
    if v < ts:
        return SLEEP
    if v < tl:
        return LEFT
    return RIGHT


@_jit
def fill_keys(keys, okey, lo):
    for i in range(keys.shape[0]):
        keys[i] = site_key(okey, lo + i)


@_jit
def fill_env(counts, sleeping, ekey, lo, start, stop, thresh):
    for i in range(start, stop):
        if np.float64(draw(ekey, _U(np.int64(lo + i))) >> _S11) < thresh:
            counts[i] = 1
            sleeping[i] = True
        else:
            counts[i] = 0
            sleeping[i] = False


# --------------------------------------------------------------------------
# site-wise stabilization


@_jit
def stabilize(counts, sleeping, odo, keys, tlo, thi, kill, ts, tl, policy,
              pkey, budget, log_sites, log_codes):
    """Topple unstable sites of the target until none remain or budget runs out.

    ``tlo``/``thi`` are array indices of the target endpoints.  In Kill mode
    the whole target is toppable and particles leaving it are removed; in
    Freeze mode only ``tlo+1 .. thi-1`` topple.

    Returns ``(topplings, exited_left, exited_right, exhausted, logged)``.
    """
    if kill:
        a = tlo
        b = thi
    else:
        a = tlo + 1
        b = thi - 1
    cap = log_sites.shape[0]
    nlog = 0
    tot = 0
    exl = 0
    exr = 0
    exhausted = False
    if a > b:
        return tot, exl, exr, exhausted, nlog

    if policy == POLICY_LEFTMOST:
        p = a
        while True:
            while p <= b and (counts[p] == 0 or sleeping[p]):
                p += 1
            if p > b:
                break
            if tot >= budget:
                exhausted = True
                break
            o = odo[p] + 1
            odo[p] = o
            tot += 1
            code = instruction(keys[p], o, ts, tl)
            if nlog < cap:
                log_sites[nlog] = p
                log_codes[nlog] = code
                nlog += 1
            if code == SLEEP:
                if counts[p] == 1:
                    sleeping[p] = True
                continue
            q = p - 1 if code == LEFT else p + 1
            counts[p] -= 1
            if q < tlo:
                exl += 1
            elif q > thi:
                exr += 1
            else:
                sleeping[q] = False
                counts[q] += 1
                if q < p and q >= a:
                    p = q
        return tot, exl, exr, exhausted, nlog

    if policy == POLICY_RANDOM:
        n = b - a + 1
        uns = np.empty(n, np.int64)
        pos = np.full(n, -1, np.int64)
        m = 0
        for i in range(a, b + 1):
            if counts[i] > 0 and not sleeping[i]:
                uns[m] = i
                pos[i - a] = m
                m += 1
        step = 0
        while m > 0:
            if tot >= budget:
                exhausted = True
                break
            r = int(unit(draw(pkey, _U(step))) * m)
            step += 1
            p = uns[r]
            o = odo[p] + 1
            odo[p] = o
            tot += 1
            code = instruction(keys[p], o, ts, tl)
            if nlog < cap:
                log_sites[nlog] = p
                log_codes[nlog] = code
                nlog += 1
            if code == SLEEP:
                if counts[p] == 1:
                    sleeping[p] = True
            else:
                q = p - 1 if code == LEFT else p + 1
                counts[p] -= 1
                if q < tlo:
                    exl += 1
                elif q > thi:
                    exr += 1
                else:
                    was_stable = counts[q] == 0 or sleeping[q]
                    sleeping[q] = False
                    counts[q] += 1
                    if was_stable and q >= a and q <= b:
                        uns[m] = q
                        pos[q - a] = m
                        m += 1
            if counts[p] == 0 or sleeping[p]:
                k = pos[p - a]
                last = uns[m - 1]
                uns[k] = last
                pos[last - a] = k
                pos[p - a] = -1
                m -= 1
        return tot, exl, exr, exhausted, nlog

    # LIFO: drain one site completely, pushing neighbours that wake up
    stack = np.empty(b - a + 1, np.int64)
    sp = 0
    for i in range(b, a - 1, -1):
        if counts[i] > 0 and not sleeping[i]:
            stack[sp] = i
            sp += 1
    while sp > 0:
        if tot >= budget:
            exhausted = True
            break
        sp -= 1
        p = stack[sp]
        key = keys[p]
        o = odo[p]
        c = counts[p]
        while True:
            if tot >= budget:
                exhausted = True
                break
            o += 1
            tot += 1
            code = instruction(key, o, ts, tl)
            if nlog < cap:
                log_sites[nlog] = p
                log_codes[nlog] = code
                nlog += 1
            if code == SLEEP:
                if c == 1:
                    sleeping[p] = True
                    break
                continue
            c -= 1
            q = p - 1 if code == LEFT else p + 1
            if q < tlo:
                exl += 1
            elif q > thi:
                exr += 1
            else:
                cq = counts[q]
                if (cq == 0 or sleeping[q]) and q >= a and q <= b:
                    stack[sp] = q
                    sp += 1
                sleeping[q] = False
                counts[q] = cq + 1
            if c == 0:
                break
        odo[p] = o
        counts[p] = c
        if exhausted:
            break
    return tot, exl, exr, exhausted, nlog


# --------------------------------------------------------------------------
# embedded jump chain


@_jit
def _grow(counts, sleeping, odo, keys, lo, okey, ekey, rho_t):
    """Double the half-width of a window centred at 0."""
    half = -lo
    nhalf = 2 * half
    nlo = -nhalf
    size = 2 * nhalf + 1
    nc = np.zeros(size, np.int64)
    ns = np.zeros(size, np.bool_)
    no = np.zeros(size, np.int64)
    nk = np.empty(size, np.uint64)
    shift = lo - nlo
    old = counts.shape[0]
    nc[shift:shift + old] = counts
    ns[shift:shift + old] = sleeping
    no[shift:shift + old] = odo
    nk[shift:shift + old] = keys
    fill_env(nc, ns, ekey, nlo, 0, shift, rho_t)
    fill_env(nc, ns, ekey, nlo, shift + old, size, rho_t)
    for i in range(0, shift):
        nk[i] = site_key(okey, nlo + i)
    for i in range(shift + old, size):
        nk[i] = site_key(okey, nlo + i)
    return nc, ns, no, nk, nlo


@_jit
def jump_run(counts, sleeping, odo, keys, lo, slots, nslots, ts, tl, rate,
             sel_key, hold_key, steps, clock, budget, grow, okey, ekey, rho_t,
             exl, exr):
    """Advance the jump chain until no active particle remains or ``steps == budget``.

    ``slots[:nslots]`` lists the sites of the active particles; a uniformly
    chosen slot selects a site with probability proportional to its active
    count.  With ``grow`` the window (centred at 0) doubles whenever a
    particle lands on one of its edges; otherwise particles leaving the
    window are killed and tallied in ``exl``/``exr``.
    """
    hi = lo + counts.shape[0] - 1
    while nslots > 0 and steps < budget:
        h = draw(sel_key, _U(steps))
        r = int(unit(h) * nslots)
        x = slots[r]
        i = x - lo
        u = (np.float64(draw(hold_key, _U(steps)) >> _S11) + 1.0) * _UNIT
        clock += -np.log(u) / (rate * nslots)
        steps += 1
        o = odo[i] + 1
        odo[i] = o
        code = instruction(keys[i], o, ts, tl)
        if code == SLEEP:
            if counts[i] == 1:
                sleeping[i] = True
                nslots -= 1
                slots[r] = slots[nslots]
            continue
        y = x - 1 if code == LEFT else x + 1
        counts[i] -= 1
        if y < lo or y > hi:
            if y < lo:
                exl += 1
            else:
                exr += 1
            nslots -= 1
            slots[r] = slots[nslots]
            continue
        j = y - lo
        slots[r] = y
        if sleeping[j]:
            sleeping[j] = False
            if nslots == slots.shape[0]:
                bigger = np.empty(2 * nslots, np.int64)
                bigger[:nslots] = slots
                slots = bigger
            slots[nslots] = y
            nslots += 1
        counts[j] += 1
        if grow and (y == lo or y == hi):
            counts, sleeping, odo, keys, lo = _grow(
                counts, sleeping, odo, keys, lo, okey, ekey, rho_t)
            hi = lo + counts.shape[0] - 1
    return counts, sleeping, odo, keys, lo, slots, nslots, steps, clock, exl, exr


@_jit
def omega_star_arrays(half, okey, ekey, rho_t):
    size = 2 * half + 1
    counts = np.zeros(size, np.int64)
    sleeping = np.zeros(size, np.bool_)
    odo = np.zeros(size, np.int64)
    keys = np.empty(size, np.uint64)
    fill_env(counts, sleeping, ekey, -half, 0, size, rho_t)
    fill_keys(keys, okey, -half)
    counts[half] = 1
    sleeping[half] = False
    return counts, sleeping, odo, keys


@_jit
def fixation_batch(base, start, stop, half, ts, tl, rate, rho_t, budget):
    """Run ω* trials ``start..stop-1`` with seeds derived from ``base``.

    Returns per-trial ``(fixated, steps, clock)``.
    """
    n = stop - start
    fixated = np.zeros(n, np.bool_)
    steps_out = np.zeros(n, np.int64)
    clock_out = np.zeros(n, np.float64)
    for t in range(n):
        idx = start + t
        ekey = stream_key(derive_seed(base, idx, 0), ENV)
        okey = stream_key(derive_seed(base, idx, 1), ORACLE)
        tkey = stream_key(derive_seed(base, idx, 2), TRIAL)
        counts, sleeping, odo, keys = omega_star_arrays(half, okey, ekey, rho_t)
        slots = np.zeros(16, np.int64)
        res = jump_run(counts, sleeping, odo, keys, -half, slots, 1, ts, tl, rate,
                       site_key(tkey, 0), site_key(tkey, 1), 0, 0.0, budget, True,
                       okey, ekey, rho_t, 0, 0)
        fixated[t] = res[6] == 0
        steps_out[t] = res[7]
        clock_out[t] = res[8]
    return fixated, steps_out, clock_out


@_jit
def kill_jump_batch(counts0, sleeping0, lo, base, start, stop, ts, tl, rate, budget):
    """Jump chain with Kill boundaries at the window edges, many trials.

    Returns final counts/sleeping per trial (rows), exit tallies and an
    ``exhausted`` flag per trial.
    """
    n = stop - start
    w = counts0.shape[0]
    out_c = np.zeros((n, w), np.int64)
    out_s = np.zeros((n, w), np.bool_)
    out_e = np.zeros((n, 2), np.int64)
    out_x = np.zeros(n, np.bool_)
    nact = 0
    for i in range(w):
        if not sleeping0[i]:
            nact += counts0[i]
    for t in range(n):
        idx = start + t
        okey = stream_key(derive_seed(base, idx, 1), ORACLE)
        tkey = stream_key(derive_seed(base, idx, 2), TRIAL)
        counts = counts0.copy()
        sleeping = sleeping0.copy()
        odo = np.zeros(w, np.int64)
        keys = np.empty(w, np.uint64)
        fill_keys(keys, okey, lo)
        slots = np.empty(max(nact, 1) + 8, np.int64)
        m = 0
        for i in range(w):
            if not sleeping[i]:
                for _ in range(counts[i]):
                    slots[m] = lo + i
                    m += 1
        res = jump_run(counts, sleeping, odo, keys, lo, slots, m, ts, tl, rate,
                       site_key(tkey, 0), site_key(tkey, 1), 0, 0.0, budget, False,
                       okey, okey, 0.0, 0, 0)
        out_c[t] = res[0]
        out_s[t] = res[1]
        out_e[t, 0] = res[9]
        out_e[t, 1] = res[10]
        out_x[t] = res[6] > 0
    return out_c, out_s, out_e, out_x


@_jit
def kill_stabilize_batch(counts0, sleeping0, lo, base, start, stop, ts, tl, policy, budget):
    """Site-wise Kill-mode stabilization of the whole window, many trials."""
    n = stop - start
    w = counts0.shape[0]
    out_c = np.zeros((n, w), np.int64)
    out_s = np.zeros((n, w), np.bool_)
    out_e = np.zeros((n, 2), np.int64)
    out_x = np.zeros(n, np.bool_)
    no_log = np.zeros(0, np.int64)
    no_codes = np.zeros(0, np.int8)
    for t in range(n):
        idx = start + t
        okey = stream_key(derive_seed(base, idx, 1), ORACLE)
        pkey = stream_key(derive_seed(base, idx, 3), POLICY)
        counts = counts0.copy()
        sleeping = sleeping0.copy()
        odo = np.zeros(w, np.int64)
        keys = np.empty(w, np.uint64)
        fill_keys(keys, okey, lo)
        res = stabilize(counts, sleeping, odo, keys, 0, w - 1, True, ts, tl, policy,
                        site_key(pkey, 0), budget, no_log, no_codes)
        out_c[t] = counts
        out_s[t] = sleeping
        out_e[t, 0] = res[1]
        out_e[t, 1] = res[2]
        out_x[t] = res[3]
    return out_c, out_s, out_e, out_x


# --------------------------------------------------------------------------
# interval stabilization from an all-active start


@_jit
def place_particles(counts, pkey, total):
    """Put ``total`` particles on ``counts``: ``total // n`` everywhere, the
    remainder on a uniformly random subset of distinct sites."""
    n = counts.shape[0]
    base = total // n
    extra = total - base * n
    for i in range(n):
        counts[i] = base
    if extra == 0:
        return
    perm = np.arange(n)
    for i in range(extra):
        j = i + int(unit(draw(pkey, _U(i))) * (n - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        counts[perm[i]] += 1


@_jit
def interval_batch(n, total, all_active, base, start, stop, ts, tl, budget):
    """Stabilize ``total`` particles on [0, n-1] with Kill boundaries, many trials.

    Site labels (and hence instruction stacks) are relative to the interval.
    Returns per-trial sleeper counts, topplings, exit tallies and exhaustion.
    """
    m = stop - start
    sleepers = np.zeros(m, np.int64)
    topplings = np.zeros(m, np.int64)
    exits = np.zeros((m, 2), np.int64)
    exhausted = np.zeros(m, np.bool_)
    no_log = np.zeros(0, np.int64)
    no_codes = np.zeros(0, np.int8)
    counts = np.zeros(n, np.int64)
    sleeping = np.zeros(n, np.bool_)
    odo = np.zeros(n, np.int64)
    keys = np.empty(n, np.uint64)
    for t in range(m):
        idx = start + t
        place_particles(counts, stream_key(derive_seed(base, idx, 0), PLACE), total)
        for i in range(n):
            sleeping[i] = (not all_active) and counts[i] == 1
            odo[i] = 0
        fill_keys(keys, stream_key(derive_seed(base, idx, 1), ORACLE), 0)
        res = stabilize(counts, sleeping, odo, keys, 0, n - 1, True, ts, tl,
                        POLICY_LIFO, _U(0), budget, no_log, no_codes)
        s = 0
        for i in range(n):
            if sleeping[i]:
                s += 1
        sleepers[t] = s
        topplings[t] = res[0]
        exits[t, 0] = res[1]
        exits[t, 1] = res[2]
        exhausted[t] = res[3]
    return sleepers, topplings, exits, exhausted
