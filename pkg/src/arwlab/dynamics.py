"""Continuous-time ARW through its embedded jump chain.

Sites are chosen with probability proportional to their active particle
count by picking a uniformly random entry of an *active-particle slot list*:
``slots`` holds one site per active particle, in an order that depends only
on the trajectory so far.  The chosen site then executes its next unused
instruction.  Three independent randomness sources drive a run: the
environment seed (initial sleeping particles), the oracle seed (instruction
stacks) and the trial seed (slot choice and holding times, keyed by step).
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from . import rng
from .core import (
    BoundaryMode,
    Configuration,
    Instruction,
    InstructionOracle,
    Odometer,
    Region,
    SiteState,
    apply_instruction,
)
from .errors import DomainError, NoActiveParticles, WindowExcludesOrigin
from .parallel import map_trials


@dataclass(frozen=True)
class EnvironmentSampler:
    """I.i.d. Bernoulli(rho) sleeping particles, sampled lazily per site."""

    env_seed: int
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must satisfy ρ ∈ (0,1), got {self.rho}")

    @functools.cached_property
    def key(self) -> int:
        return rng.stream_key(self.env_seed, rng.ENV)

    @property
    def threshold(self) -> float:
        return self.rho * rng.SCALE

    def occupancy(self, site: int) -> SiteState:
        if (rng.draw(self.key, site) >> 11) < self.threshold:
            return SiteState(1, True)
        return SiteState(0, False)

    def sample(self, region: Region) -> Configuration:
        return Configuration.from_states(region.lo, (self.occupancy(x) for x in region.sites()))


def occupancy(env: EnvironmentSampler, site: int) -> SiteState:
    return env.occupancy(site)


def make_omega_star(env: EnvironmentSampler, window: Region) -> Configuration:
    """Environment on ``window`` with its value at 0 replaced by one active particle."""
    if 0 not in window:
        raise WindowExcludesOrigin(f"{window} does not contain 0")
    return env.sample(window).with_site(0, SiteState(1, False))


def _slots_of(config: Configuration) -> tuple[int, ...]:
    out: list[int] = []
    for i, (c, s) in enumerate(zip(config.counts, config.sleeping)):
        if not s:
            out.extend([config.region.lo + i] * c)
    return tuple(out)


@dataclass(frozen=True)
class DynamicState:
    """Position of a jump-chain trajectory.

    With ``env`` set the window is ``[-a, a]`` and doubles lazily; without it
    the window is fixed and particles stepping outside are killed.
    """

    config: Configuration
    odometer: Odometer
    slots: tuple[int, ...]
    clock: float = 0.0
    steps: int = 0
    env: EnvironmentSampler | None = None

    @property
    def window(self) -> Region:
        return self.config.region

    @property
    def active_total(self) -> int:
        return len(self.slots)

    @classmethod
    def start(cls, config: Configuration, env: EnvironmentSampler | None = None) -> DynamicState:
        if env is not None:
            r = config.region
            if r.lo != -r.hi or r.hi < 1:
                raise ValueError("growing windows must be [-a, a] with a >= 1")
        state = cls(config, Odometer.zeros(config.region), _slots_of(config), env=env)
        if env is not None:
            while any(x in (state.window.lo, state.window.hi) for x in state.slots):
                state = _grow(state)
        return state


def initial_state(env: EnvironmentSampler, half: int = 1) -> DynamicState:
    """ω* on ``[-half, half]`` with lazily growing window."""
    return DynamicState.start(make_omega_star(env, Region.centered(half)), env)


def _grow(state: DynamicState) -> DynamicState:
    env = state.env
    half = 2 * state.window.hi
    new = Region.centered(half)
    old = state.config
    a = old.region.lo - new.lo
    states = [env.occupancy(x) for x in new.sites()]
    states[a:a + old.region.width] = old.states
    config = Configuration.from_states(new.lo, states, old.exited_left, old.exited_right)
    return replace(state, config=config, odometer=state.odometer.resized(new))


def _trial_keys(trial_seed: int) -> tuple[int, int]:
    tkey = rng.stream_key(trial_seed, rng.TRIAL)
    return rng.site_key(tkey, 0), rng.site_key(tkey, 1)


def jump_step(state: DynamicState, oracle: InstructionOracle, trial_seed: int) -> DynamicState:
    """One transition of the embedded jump chain (reference implementation)."""
    n = state.active_total
    if n == 0:
        raise NoActiveParticles("no active particle to move")
    sel_key, hold_key = _trial_keys(trial_seed)
    r = int(rng.unit(rng.draw(sel_key, state.steps)) * n)
    x = state.slots[r]
    u = ((rng.draw(hold_key, state.steps) >> 11) + 1.0) * rng.UNIT
    clock = state.clock + -math.log(u) / ((1.0 + oracle.lam) * n)

    odometer = state.odometer.increment(x)
    instr = oracle.instruction_at(x, odometer[x])
    before = state.config
    config = apply_instruction(before, x, instr, BoundaryMode.KILL)
    slots = list(state.slots)
    if instr is Instruction.SLEEP:
        if config.sleeping[x - config.region.lo]:
            slots[r] = slots[-1]
            slots.pop()
    else:
        y = x - 1 if instr is Instruction.LEFT else x + 1
        if y in config.region:
            slots[r] = y
            if before.sleeping[y - before.region.lo]:
                slots.append(y)
        else:
            slots[r] = slots[-1]
            slots.pop()
    nxt = DynamicState(config, odometer, tuple(slots), clock, state.steps + 1, state.env)
    if nxt.env is not None and instr is not Instruction.SLEEP and y in (nxt.window.lo, nxt.window.hi):
        nxt = _grow(nxt)
    return nxt


class OutcomeKind(enum.Enum):
    FIXATED = "fixated"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    steps: int
    clock: float
    final: Configuration
    state: DynamicState


def run_until(state: DynamicState, oracle: InstructionOracle, trial_seed: int,
              step_budget: int) -> Outcome:
    """Iterate the jump chain until fixation or until ``steps == step_budget``."""
    if step_budget < 1:
        raise ValueError("step_budget must be positive")
    cfg = state.config
    counts, sleeping = cfg.arrays()
    odo = np.array(state.odometer.counts, dtype=np.int64)
    keys = oracle.site_keys(cfg.region.lo, cfg.region.width)
    slots = np.array(state.slots + (0,) * 8, dtype=np.int64)
    sel_key, hold_key = _trial_keys(trial_seed)
    grow = state.env is not None
    if grow and oracle.origin:
        raise ValueError("growing windows need an oracle with origin 0")
    ekey = state.env.key if grow else 0
    rho_t = state.env.threshold if grow else 0.0
    ts, tl = oracle.thresholds
    (counts, sleeping, odo, _keys, lo, slots, nslots, steps, clock, exl, exr) = K.jump_run(
        counts, sleeping, odo, keys, cfg.region.lo, slots, len(state.slots), ts, tl,
        1.0 + oracle.lam, np.uint64(sel_key), np.uint64(hold_key), state.steps, state.clock,
        step_budget, grow, np.uint64(oracle.key), np.uint64(ekey), rho_t,
        cfg.exited_left, cfg.exited_right)
    final = Configuration.from_arrays(lo, counts, sleeping, exl, exr)
    new_state = DynamicState(final, Odometer(final.region, tuple(int(v) for v in odo)),
                             tuple(int(s) for s in slots[:nslots]), float(clock), int(steps),
                             state.env)
    kind = OutcomeKind.FIXATED if nslots == 0 else OutcomeKind.BUDGET_EXHAUSTED
    return Outcome(kind, int(steps), float(clock), final, new_state)


# --------------------------------------------------------------------------
# batched trials


@dataclass(frozen=True)
class TrialBatch:
    """Per-trial arrays from a batch of ω* runs."""

    fixated: np.ndarray
    steps: np.ndarray
    clock: np.ndarray

    @property
    def censored(self) -> np.ndarray:
        return ~self.fixated

    @property
    def immediate(self) -> np.ndarray:
        """Trials in which the origin particle fell asleep before moving."""
        return self.fixated & (self.steps == 1)


def trial_seeds(base_seed: int, index: int) -> tuple[int, int, int]:
    """(env, oracle, trial) seeds of trial ``index`` under ``base_seed``."""
    return tuple(rng.derive_seed(base_seed, index, lane) for lane in range(3))


def omega_star_trials(lam: float, rho: float, trials: int, step_budget: int,
                      base_seed: int, threads: int | None = None,
                      half: int = 16) -> TrialBatch:
    """Run ``trials`` independent ω* trajectories; trial ``i`` uses ``trial_seeds(base_seed, i)``."""
    env = EnvironmentSampler(0, rho)
    oracle = InstructionOracle(0, lam)
    ts, tl = oracle.thresholds

    def run(start, stop):
        return K.fixation_batch(np.uint64(base_seed), start, stop, half, ts, tl,
                                1.0 + lam, env.threshold, step_budget)

    fixated, steps, clock = map_trials(run, trials, threads)
    return TrialBatch(fixated, steps, clock)


def kill_trials(config: Configuration, lam: float, trials: int, base_seed: int,
                engine: str = "jump", policy: str = "leftmost-unstable",
                budget: int = 10 ** 9, threads: int | None = None) -> list[str]:
    """Terminal configurations (canonical text) of many Kill-boundary runs.

    ``engine="jump"`` uses the jump chain, ``engine="stabilize"`` the
    site-wise stabilization of the whole window.  Trial ``i`` uses the oracle
    seed ``derive_seed(base_seed, i, 1)`` in both engines, so by the abelian
    property the two engines agree trial by trial.
    """
    from .core import parse_policy

    counts0, sleeping0 = config.arrays()
    ts, tl = InstructionOracle(0, lam).thresholds
    lo = config.region.lo
    if engine == "jump":
        def run(start, stop):
            return K.kill_jump_batch(counts0, sleeping0, lo, np.uint64(base_seed), start, stop,
                                     ts, tl, 1.0 + lam, budget)
    elif engine == "stabilize":
        code, _ = parse_policy(policy)

        def run(start, stop):
            return K.kill_stabilize_batch(counts0, sleeping0, lo, np.uint64(base_seed), start,
                                          stop, ts, tl, code, budget)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    out_c, out_s, out_e, out_x = map_trials(run, trials, threads)
    if out_x.any():
        raise RuntimeError("a Kill-boundary trial exhausted its budget")
    return [
        Configuration.from_arrays(lo, c, s, e[0] + config.exited_left,
                                  e[1] + config.exited_right).to_text()
        for c, s, e in zip(out_c, out_s, out_e)
    ]
