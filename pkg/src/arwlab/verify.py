"""Self-check suites behind ``arw verify`` and the acceptance tests.

Each suite returns a :class:`SuiteResult`; sizes are arguments so the CLI
can run a quick pass while the test suite runs the full-size checks.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from . import rng
from .absorption import absorption_oracle, empirical, total_variation
from .core import (
    BoundaryMode,
    Configuration,
    Instruction,
    InstructionOracle,
    Odometer,
    Region,
    stabilize,
    topple_sequence,
)
from .dynamics import (
    DynamicState,
    EnvironmentSampler,
    initial_state,
    jump_step,
    kill_trials,
    make_omega_star,
)
from .estimators import binomial_sigma, fixation_probability, immediate_fixation, lower_bound
from .procedure import exact

LAMBDAS = (0.5, 1.0, 2.0)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    passed: int = 0
    failures: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.cases > 0 and self.passed == self.cases

    def record(self, ok: bool, what: str = "") -> None:
        self.cases += 1
        if ok:
            self.passed += 1
        elif len(self.failures) < 20:
            self.failures.append(what)

    def to_record(self) -> dict:
        return {"suite": self.name, "cases": self.cases, "passed": self.passed,
                "failed": self.cases - self.passed, "ok": self.ok,
                "seconds": round(self.seconds, 3),
                "first_failure": self.failures[0] if self.failures else ""}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------------------
# random small instances


@dataclass(frozen=True)
class Instance:
    config: Configuration
    lam: float
    oracle_seed: int

    @property
    def oracle(self) -> InstructionOracle:
        return InstructionOracle(self.oracle_seed, self.lam)


def random_instance(r: random.Random, max_width: int = 9, max_particles: int = 6) -> Instance:
    width = r.randint(1, max_width)
    lo = r.randint(-5, 5)
    counts = [0] * width
    for _ in range(r.randint(1, max_particles)):
        counts[r.randrange(width)] += 1
    sleeping = [c == 1 and r.random() < 0.4 for c in counts]
    config = Configuration.from_arrays(lo, counts, sleeping)
    return Instance(config, r.choice(LAMBDAS), r.getrandbits(64))


class _Stacks:
    """Memoised instruction lookup for one oracle."""

    def __init__(self, oracle: InstructionOracle):
        self.oracle = oracle
        self.cache: dict = {}

    def __call__(self, site: int, index: int) -> Instruction:
        key = (site, index)
        v = self.cache.get(key)
        if v is None:
            v = self.cache[key] = self.oracle.instruction_at(site, index)
        return v


def random_legal_order(config: Configuration, stacks: _Stacks, r: random.Random,
                       limit: dict | None = None, max_len: int | None = None) -> list[int] | None:
    """A random legal Kill-mode toppling sequence.

    With ``limit`` (site -> multiplicity) only sites below their limit may
    topple and the sequence must reach the limit exactly; ``None`` is
    returned if it gets stuck.  Without it, toppling stops at stability or
    after ``max_len`` steps.
    """
    lo, w = config.region.lo, config.region.width
    counts = list(config.counts)
    sleeping = list(config.sleeping)
    used = [0] * w
    order: list[int] = []
    remaining = sum(limit.values()) if limit is not None else None
    while True:
        cand = [i for i in range(w) if counts[i] > 0 and not sleeping[i]
                and (limit is None or used[i] < limit.get(lo + i, 0))]
        if not cand:
            break
        if limit is None and max_len is not None and len(order) >= max_len:
            break
        i = r.choice(cand)
        used[i] += 1
        order.append(lo + i)
        ins = stacks(lo + i, used[i])
        if ins is Instruction.SLEEP:
            if counts[i] == 1:
                sleeping[i] = True
            continue
        j = i - 1 if ins is Instruction.LEFT else i + 1
        counts[i] -= 1
        if 0 <= j < w:
            counts[j] += 1
            sleeping[j] = False
    if limit is not None and len(order) != remaining:
        return None
    return order


def multiplicities(order: list[int]) -> dict:
    m: dict = {}
    for x in order:
        m[x] = m.get(x, 0) + 1
    return m


@_timed
def abelian_suite(instances: int = 500, orders: int = 20, seed: int = 1) -> SuiteResult:
    """Random legal orders with matched multiplicities give identical results.

    Per instance one random legal sequence (stopped at a random length, or
    at stability) fixes the multiplicities; ``orders`` further random legal
    orders with exactly those multiplicities are replayed through
    ``topple_sequence`` and must reproduce its final configuration.
    """
    res = SuiteResult("abelian")
    for t in range(instances):
        r = random.Random(rng.derive_seed(seed, t))
        inst = random_instance(r)
        stacks = _Stacks(inst.oracle)
        cfg = inst.config
        zero = Odometer.zeros(cfg.region)
        cap = r.choice([None, r.randint(1, 40)])
        first = random_legal_order(cfg, stacks, r, max_len=cap or 100000)
        ref, _ = topple_sequence(cfg, zero, inst.oracle, first, BoundaryMode.KILL)
        want = ref.to_text()
        limit = multiplicities(first)
        ok = True
        for _ in range(orders):
            order = random_legal_order(cfg, stacks, r, limit=limit)
            if order is None:
                ok = False
                break
            got, _ = topple_sequence(cfg, zero, inst.oracle, order, BoundaryMode.KILL)
            if got.to_text() != want:
                ok = False
                break
        res.record(ok, f"instance {t}: {cfg.to_text()} lambda={inst.lam}")
    return res


@_timed
def uniqueness_suite(instances: int = 500, policies: int = 5, seed: int = 1) -> SuiteResult:
    """Leftmost-unstable and seeded random policies reach the same final
    configuration and odometer, in Kill and Freeze mode."""
    res = SuiteResult("uniqueness")
    for t in range(instances):
        r = random.Random(rng.derive_seed(seed, t))
        inst = random_instance(r)
        cfg = inst.config
        for mode in (BoundaryMode.KILL, BoundaryMode.FREEZE):
            base = stabilize(cfg, inst.oracle, cfg.region, mode)
            ok = not base.exhausted
            for s in range(policies):
                other = stabilize(cfg, inst.oracle, cfg.region, mode,
                                  policy=f"random-unstable({rng.derive_seed(seed, t, s)})")
                ok = ok and not other.exhausted and other.final == base.final \
                    and other.odometer == base.odometer
            lifo = stabilize(cfg, inst.oracle, cfg.region, mode, policy="lifo")
            ok = ok and lifo.final == base.final and lifo.odometer == base.odometer
            res.record(ok, f"instance {t} {mode.name}: {cfg.to_text()}")
    return res


@_timed
def conservation_suite(instances: int = 200, seed: int = 2) -> SuiteResult:
    """Mass (including exit tallies) is preserved by stabilization and by the
    jump chain, and a growing window preserves the fixed part."""
    res = SuiteResult("conservation")
    for t in range(instances):
        r = random.Random(rng.derive_seed(seed, t))
        inst = random_instance(r)
        cfg = inst.config
        for mode in (BoundaryMode.KILL, BoundaryMode.FREEZE):
            out = stabilize(cfg, inst.oracle, cfg.region, mode)
            res.record(out.final.mass == cfg.mass, f"stabilize {mode.name} {cfg.to_text()}")
        state = DynamicState.start(cfg)
        steps = 0
        while state.active_total and steps < 500:
            state = jump_step(state, inst.oracle, t)
            steps += 1
        res.record(state.config.mass == cfg.mass, f"jump chain {cfg.to_text()}")
        env = EnvironmentSampler(t, 0.3 + 0.6 * r.random())
        state = initial_state(env)
        for _ in range(300):
            if not state.active_total:
                break
            state = jump_step(state, inst.oracle, t)
        # particles only move, so the window holds exactly the revealed ω*
        revealed = make_omega_star(env, state.window).mass
        res.record(state.config.mass == revealed, f"growing window seed {t}")
    return res


# --------------------------------------------------------------------------
# oracle catalog

CATALOG: tuple[tuple[str, float], ...] = (
    ("0 0 | 1 | 0 0", 1.0),
    ("0 0 | 2 | 0 0", 1.0),
    ("0 0 | 3 | 0 0", 0.5),
    ("-1 1 | 0 1 0 | 0 0", 1.0),
    ("-1 1 | 0 2 0 | 0 0", 2.0),
    ("-1 1 | 1 0 1 | 0 0", 0.5),
    ("-1 1 | s 1 s | 0 0", 1.0),
    ("-1 1 | 0 3 0 | 0 0", 1.0),
    ("0 1 | 1 1 | 0 0", 1.0),
    ("0 1 | 2 s | 0 0", 0.5),
    ("0 2 | 1 s 0 | 0 0", 2.0),
    ("-2 2 | 0 0 1 0 0 | 0 0", 1.0),
    ("-2 2 | 0 0 1 0 0 | 0 0", 0.25),
    ("-2 2 | 0 s 1 s 0 | 0 0", 1.0),
    ("-2 2 | 0 0 2 0 0 | 0 0", 1.0),
    ("-2 2 | 0 0 3 0 0 | 0 0", 2.0),
    ("-2 2 | 1 0 1 0 1 | 0 0", 1.0),
    ("-2 2 | s 0 1 0 s | 0 0", 0.5),
    ("0 4 | 3 0 0 0 0 | 0 0", 1.0),
    ("0 4 | 1 s 0 0 1 | 0 0", 0.7),
    ("0 3 | 0 2 s 0 | 0 0", 1.0),
    ("0 3 | 1 1 1 0 | 0 0", 4.0),
    ("-1 2 | s 1 0 s | 0 0", 1.0),
    ("-2 2 | 2 0 0 0 1 | 0 0", 0.5),
    ("-2 2 | 0 1 1 1 0 | 0 0", 1.0),
)

_POLICIES = ("leftmost-unstable", "lifo", "random-unstable(7)")


@_timed
def oracle_suite(trials: int = 100_000, tolerance: float = 0.02, seed: int = 3,
                 catalog=CATALOG, threads: int | None = None) -> SuiteResult:
    """Jump chain and site-wise stabilization match the exact oracle in total
    variation; plus the closed-form single-particle sleep probability."""
    res = SuiteResult("oracle")
    for lam in LAMBDAS + (1000.0,):
        cfg = Configuration.from_text("-1 1 | 0 1 0 | 0 0")
        dist = absorption_oracle(cfg, lam, Region(0, 0))
        slept = Configuration.from_text("-1 1 | 0 s 0 | 0 0")
        p = dist[slept]
        res.record(p == exact(lam) / (1 + exact(lam)),
                   f"P(sleep at centre) for lambda={lam}: {p}")
    for idx, (text, lam) in enumerate(catalog):
        cfg = Configuration.from_text(text)
        dist = {c.to_text(): float(p) for c, p in absorption_oracle(cfg, lam).items()}
        s = rng.derive_seed(seed, idx)
        jump = kill_trials(cfg, lam, trials, s, engine="jump", threads=threads)
        tv_j = total_variation(dist, empirical(jump))
        res.record(tv_j <= tolerance, f"{text} lambda={lam}: jump TV {tv_j:.4f}")
        policy = _POLICIES[idx % len(_POLICIES)]
        site = kill_trials(cfg, lam, trials, rng.derive_seed(seed, idx, 1), engine="stabilize",
                           policy=policy, threads=threads)
        tv_s = total_variation(dist, empirical(site))
        res.record(tv_s <= tolerance, f"{text} lambda={lam}: {policy} TV {tv_s:.4f}")
    return res


@_timed
def lower_bound_suite(trials: int = 100_000, step_budget: int = 10_000, seed: int = 4,
                      rhos=(0.5, 0.9), threads: int | None = None) -> SuiteResult:
    """Sleeps-before-moving fraction equals lambda/(1+lambda) within 3 sigma,
    and the fixation estimate is not below that bound by more than 3 CI
    half-widths."""
    res = SuiteResult("lower_bound")
    for i, lam in enumerate(LAMBDAS):
        for j, rho in enumerate(rhos):
            est = fixation_probability(lam, rho, trials, step_budget,
                                       rng.derive_seed(seed, i, j), threads)
            p = lower_bound(lam)
            imm = immediate_fixation(est)
            sigma = binomial_sigma(p, trials)
            res.record(abs(imm.point - p) <= 3 * sigma,
                       f"lambda={lam} rho={rho}: immediate {imm.point:.5f} vs {p:.5f}")
            res.record(est.point >= p - 3 * est.half_width,
                       f"lambda={lam} rho={rho}: fixation {est.point:.5f} vs bound {p:.5f}")
    return res


SUITES = {
    "abelian": abelian_suite,
    "uniqueness": uniqueness_suite,
    "conservation": conservation_suite,
    "oracle": oracle_suite,
    "lower_bound": lower_bound_suite,
}

QUICK = {
    "abelian": dict(instances=100, orders=5),
    "uniqueness": dict(instances=100),
    "conservation": dict(instances=50),
    "oracle": dict(trials=100_000, catalog=CATALOG[:12]),
    "lower_bound": dict(trials=20_000, step_budget=1000),
}


def run_suites(names=None, quick: bool = True, seed: int | None = None,
               threads: int | None = None) -> list[SuiteResult]:
    out = []
    for name in names or SUITES:
        kwargs = dict(QUICK.get(name, {})) if quick else {}
        if seed is not None:
            kwargs["seed"] = seed
        if threads is not None and name in ("oracle", "lower_bound"):
            kwargs["threads"] = threads
        out.append(SUITES[name](**kwargs))
    return out
