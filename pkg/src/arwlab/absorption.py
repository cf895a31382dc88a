"""Exact terminal distributions of small Kill-boundary systems.

The embedded jump chain on a window with at most three particles has a few
hundred states, so its absorption probabilities can be solved exactly over
the rationals.  Transitions never raise the number of particles inside the
window and leave exit tallies untouched unless a particle leaves, so states
are solved in blocks of equal (mass, exit tallies), smallest mass first.
"""
from __future__ import annotations

from collections import defaultdict
from fractions import Fraction

from .core import Configuration, Region, SiteState
from .errors import DomainError, StateSpaceTooLarge

MAX_PARTICLES = 3
MAX_WIDTH = 5

State = tuple  # (counts, sleeping, exited_left, exited_right)


def _transitions(state: State, p_sleep: Fraction, p_step: Fraction) -> dict[State, Fraction]:
    counts, sleeping, exl, exr = state
    active = sum(c for c, s in zip(counts, sleeping) if not s)
    out: dict[State, Fraction] = defaultdict(Fraction)
    w = len(counts)
    for i, (c, s) in enumerate(zip(counts, sleeping)):
        if s or c == 0:
            continue
        pick = Fraction(c, active)
        if c == 1:
            sl = list(sleeping)
            sl[i] = True
            out[(counts, tuple(sl), exl, exr)] += pick * p_sleep
        else:
            out[state] += pick * p_sleep
        for d in (-1, 1):
            j = i + d
            nc = list(counts)
            nc[i] -= 1
            if j < 0:
                out[(tuple(nc), sleeping, exl + 1, exr)] += pick * p_step
            elif j >= w:
                out[(tuple(nc), sleeping, exl, exr + 1)] += pick * p_step
            else:
                nc[j] += 1
                sl = list(sleeping)
                sl[j] = False
                out[(tuple(nc), tuple(sl), exl, exr)] += pick * p_step
    return out


def _is_terminal(state: State) -> bool:
    counts, sleeping, _, _ = state
    return all(s or c == 0 for c, s in zip(counts, sleeping))


def _solve_block(block: list[State], trans: dict, known: dict) -> None:
    """Sparse Gauss-Jordan over one block; right-hand sides are distributions."""
    index = {s: k for k, s in enumerate(block)}
    n = len(block)
    rows: list[dict] = []
    rhss: list[dict] = []
    for k, s in enumerate(block):
        row: dict = defaultdict(Fraction)
        row[k] += 1
        rhs: dict = defaultdict(Fraction)
        for t, p in trans[s].items():
            if t in index:
                row[index[t]] -= p
            else:
                for term, q in known[t].items():
                    rhs[term] += p * q
        rows.append(row)
        rhss.append(rhs)
    for col in range(n):
        piv = next(r for r in range(col, n) if rows[r].get(col, 0) != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        rhss[col], rhss[piv] = rhss[piv], rhss[col]
        inv = 1 / rows[col][col]
        prow = {k: v * inv for k, v in rows[col].items() if v != 0}
        prhs = {k: v * inv for k, v in rhss[col].items() if v != 0}
        rows[col], rhss[col] = prow, prhs
        for r in range(n):
            f = rows[r].get(col, 0) if r != col else 0
            if f == 0:
                continue
            _axpy(rows[r], -f, prow)
            _axpy(rhss[r], -f, prhs)
            del rows[r][col]
    for s, rhs in zip(block, rhss):
        known[s] = {k: v for k, v in rhs.items() if v != 0}


def _axpy(y: dict, a: Fraction, x: dict) -> None:
    for k, v in x.items():
        y[k] = y.get(k, 0) + a * v


def absorption_oracle(config: Configuration, lam: float,
                      absorb: Region | None = None) -> dict[Configuration, Fraction]:
    """Exact distribution of the terminal configuration under Kill boundaries.

    Particles stepping outside ``absorb`` (default: the configuration's
    window) are removed and counted in the exit tallies.  Sites of
    ``config`` outside ``absorb`` must be stable and are carried unchanged.
    """
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    absorb = absorb or config.region
    if absorb.width > MAX_WIDTH or sum(config.counts) > MAX_PARTICLES:
        raise StateSpaceTooLarge(
            f"oracle limited to {MAX_PARTICLES} particles on {MAX_WIDTH} sites")
    if not config.region.contains_region(absorb):
        raise ValueError(f"{absorb} not inside {config.region}")
    for x in config.region.sites():
        if x not in absorb and not config.state(x).stable:
            raise ValueError(f"active particles at {x}, outside the absorbing window")

    lam_q = Fraction(repr(lam)) if isinstance(lam, float) else Fraction(lam)
    p_sleep = lam_q / (1 + lam_q)
    p_step = 1 / (2 * (1 + lam_q))
    inner = config.restrict(absorb)
    start: State = (inner.counts, inner.sleeping, config.exited_left, config.exited_right)

    trans: dict[State, dict] = {}
    stack, seen = [start], {start}
    while stack:
        s = stack.pop()
        if _is_terminal(s):
            continue
        trans[s] = _transitions(s, p_sleep, p_step)
        for t in trans[s]:
            if t not in seen:
                seen.add(t)
                stack.append(t)

    known: dict[State, dict] = {s: {s: Fraction(1)} for s in seen if _is_terminal(s)}
    blocks: dict[tuple, list] = defaultdict(list)
    for s in trans:
        blocks[(sum(s[0]), s[2], s[3])].append(s)
    for key in sorted(blocks):
        _solve_block(sorted(blocks[key]), trans, known)

    out: dict[Configuration, Fraction] = {}
    for (counts, sleeping, exl, exr), p in known[start].items():
        final = config
        for k, x in enumerate(absorb.sites()):
            final = final.with_site(x, SiteState(counts[k], sleeping[k]))
        out[Configuration(final.region, final.counts, final.sleeping, exl, exr)] = p
    return out


def total_variation(p: dict, q: dict) -> float:
    """Total-variation distance between two finite distributions (dicts)."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys)


def empirical(samples) -> dict:
    counts: dict = defaultdict(int)
    for s in samples:
        counts[s] += 1
    n = len(samples)
    return {k: v / n for k, v in counts.items()}
