"""Site-wise representation of activated random walk on Z.

A configuration assigns to every site one of ``0, s, 1, 2, ...`` where ``s``
is a single sleeping particle.  Every site carries an infinite stack of
Left/Right/Sleep instructions; toppling a site executes its next unused
instruction and bumps the odometer there.
"""
from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from . import rng
from .errors import IllegalTopple, NonPositiveLambda, OdometerOverflow, OutOfRegion

ODOMETER_LIMIT = 2 ** 127
# compiled paths keep odometers in int64
_KERNEL_LIMIT = 2 ** 62


@functools.total_ordering
@dataclass(frozen=True)
class SiteState:
    """State of one site; ordered as ``0 < s < 1 < 2 < ...``."""

    count: int = 0
    sleeping: bool = False

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if self.sleeping and self.count != 1:
            raise ValueError("a sleeping site holds exactly one particle")

    @property
    def stable(self) -> bool:
        return self.count == 0 or self.sleeping

    def _rank(self) -> int:
        return 2 * self.count - (1 if self.sleeping else 0)

    def __lt__(self, other: SiteState) -> bool:
        return self._rank() < other._rank()

    def __str__(self) -> str:
        return "s" if self.sleeping else str(self.count)

    @classmethod
    def parse(cls, token: str) -> SiteState:
        if token == "s":
            return cls(1, True)
        return cls(int(token), False)


EMPTY = SiteState(0, False)
SLEEPER = SiteState(1, True)


@dataclass(frozen=True)
class Region:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty region [{self.lo}, {self.hi}]")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def __contains__(self, site: int) -> bool:
        return self.lo <= site <= self.hi

    def contains_region(self, other: Region) -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    @classmethod
    def centered(cls, half: int) -> Region:
        """``[-half, half]``."""
        return cls(-half, half)


class Instruction(enum.IntEnum):
    LEFT = K.LEFT
    RIGHT = K.RIGHT
    SLEEP = K.SLEEP


class BoundaryMode(enum.Enum):
    FREEZE = "freeze"
    KILL = "kill"


@dataclass(frozen=True)
class Configuration:
    """Finite window of site states plus particles killed at each boundary.

    ``counts[i]`` and ``sleeping[i]`` describe site ``region.lo + i``.
    Instances are immutable; operations return new configurations.
    """

    region: Region
    counts: tuple[int, ...]
    sleeping: tuple[bool, ...]
    exited_left: int = 0
    exited_right: int = 0

    def __post_init__(self):
        w = self.region.width
        if len(self.counts) != w or len(self.sleeping) != w:
            raise ValueError(f"expected {w} site states")
        for c, s in zip(self.counts, self.sleeping):
            if c < 0 or (s and c != 1):
                raise ValueError("invalid site state")
        if self.exited_left < 0 or self.exited_right < 0:
            raise ValueError("exit tallies must be nonnegative")

    # construction --------------------------------------------------------
    @classmethod
    def from_states(cls, lo: int, states: Iterable[SiteState | int | str],
                    exited_left: int = 0, exited_right: int = 0) -> Configuration:
        conv = [_as_state(s) for s in states]
        return cls(Region(lo, lo + len(conv) - 1),
                   tuple(s.count for s in conv), tuple(s.sleeping for s in conv),
                   exited_left, exited_right)

    @classmethod
    def empty(cls, region: Region) -> Configuration:
        w = region.width
        return cls(region, (0,) * w, (False,) * w)

    @classmethod
    def from_arrays(cls, lo: int, counts, sleeping, exited_left: int = 0,
                    exited_right: int = 0) -> Configuration:
        counts = tuple(int(c) for c in counts)
        return cls(Region(lo, lo + len(counts) - 1), counts,
                   tuple(bool(s) for s in sleeping), int(exited_left), int(exited_right))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Fresh writable ``(counts, sleeping)`` numpy copies."""
        return (np.array(self.counts, dtype=np.int64),
                np.array(self.sleeping, dtype=np.bool_))

    # queries -------------------------------------------------------------
    def _index(self, site: int) -> int:
        if site not in self.region:
            raise OutOfRegion(f"site {site} outside [{self.region.lo}, {self.region.hi}]")
        return site - self.region.lo

    def state(self, site: int) -> SiteState:
        i = self._index(site)
        return SiteState(self.counts[i], self.sleeping[i])

    def count(self, site: int) -> int:
        return self.counts[self._index(site)]

    @property
    def states(self) -> tuple[SiteState, ...]:
        return tuple(SiteState(c, s) for c, s in zip(self.counts, self.sleeping))

    @property
    def mass(self) -> int:
        return sum(self.counts) + self.exited_left + self.exited_right

    @property
    def active_total(self) -> int:
        return sum(c for c, s in zip(self.counts, self.sleeping) if not s)

    @property
    def sleeping_total(self) -> int:
        return sum(self.sleeping)

    def particles_in(self, lo: int, hi: int) -> int:
        """Number of particles (sleeping or not) on sites ``lo..hi``."""
        a = max(lo, self.region.lo) - self.region.lo
        b = min(hi, self.region.hi) - self.region.lo
        return sum(self.counts[a:b + 1]) if a <= b else 0

    def restrict(self, region: Region) -> Configuration:
        if not self.region.contains_region(region):
            raise OutOfRegion(f"{region} not inside {self.region}")
        a = region.lo - self.region.lo
        b = a + region.width
        return Configuration(region, self.counts[a:b], self.sleeping[a:b],
                             self.exited_left, self.exited_right)

    def with_site(self, site: int, state: SiteState) -> Configuration:
        i = self._index(site)
        counts = list(self.counts)
        sleeping = list(self.sleeping)
        counts[i], sleeping[i] = state.count, state.sleeping
        return Configuration(self.region, tuple(counts), tuple(sleeping),
                             self.exited_left, self.exited_right)

    # canonical text --------------------------------------------------------
    def to_text(self) -> str:
        body = " ".join("s" if s else str(c) for c, s in zip(self.counts, self.sleeping))
        return (f"{self.region.lo} {self.region.hi} | {body} | "
                f"{self.exited_left} {self.exited_right}")

    @classmethod
    def from_text(cls, text: str) -> Configuration:
        try:
            head, body, tail = (part.split() for part in text.split("|"))
            lo, hi = (int(t) for t in head)
            exl, exr = (int(t) for t in tail)
        except ValueError as exc:
            raise ValueError(f"malformed configuration text: {text!r}") from exc
        conf = cls.from_states(lo, (SiteState.parse(t) for t in body), exl, exr)
        if conf.region.hi != hi:
            raise ValueError("site count does not match region")
        return conf

    def __str__(self) -> str:
        return self.to_text()


def _as_state(s) -> SiteState:
    if isinstance(s, SiteState):
        return s
    if isinstance(s, str):
        return SiteState.parse(s)
    return SiteState(int(s), False)


@dataclass(frozen=True)
class InstructionOracle:
    """Lazily realised instruction stacks: a pure map (site, index) -> instruction.

    Stacks are labelled relative to ``origin``: site ``origin + j`` reads
    stack ``j``, so shifting ``origin`` with a configuration translates the
    whole experiment.
    """

    seed: int
    lam: float
    origin: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise NonPositiveLambda(f"sleep rate must be positive, got {self.lam}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    @functools.cached_property
    def key(self) -> int:
        return rng.stream_key(self.seed, rng.ORACLE)

    @property
    def p_sleep(self) -> float:
        return self.lam / (1.0 + self.lam)

    @property
    def p_step(self) -> float:
        """Probability of each of Left and Right."""
        return 1.0 / (2.0 * (1.0 + self.lam))

    @functools.cached_property
    def thresholds(self) -> tuple[float, float]:
        # compared against the top 53 bits of a draw; shared with the kernels
        return self.p_sleep * rng.SCALE, (self.p_sleep + self.p_step) * rng.SCALE

    def instruction_at(self, site: int, index: int) -> Instruction:
        if index < 1:
            raise ValueError("instruction indices start at 1")
        v = rng.draw(rng.site_key(self.key, site - self.origin), index) >> 11
        ts, tl = self.thresholds
        if v < ts:
            return Instruction.SLEEP
        return Instruction.LEFT if v < tl else Instruction.RIGHT

    def site_keys(self, lo: int, width: int) -> np.ndarray:
        keys = np.empty(width, dtype=np.uint64)
        K.fill_keys(keys, np.uint64(self.key), lo - self.origin)
        return keys


def instruction_at(oracle: InstructionOracle, site: int, index: int) -> Instruction:
    return oracle.instruction_at(site, index)


@dataclass(frozen=True)
class Odometer:
    """Exact per-site toppling counts over a window."""

    region: Region
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.region.width:
            raise ValueError("odometer length does not match region")
        if any(c < 0 for c in self.counts):
            raise ValueError("odometer counts are nonnegative")
        if self.total > ODOMETER_LIMIT:
            raise OdometerOverflow("odometer total exceeds 2**127")

    @classmethod
    def zeros(cls, region: Region) -> Odometer:
        return cls(region, (0,) * region.width)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __getitem__(self, site: int) -> int:
        if site not in self.region:
            raise OutOfRegion(f"site {site} outside odometer window")
        return self.counts[site - self.region.lo]

    def increment(self, site: int, by: int = 1) -> Odometer:
        i = site - self.region.lo
        if site not in self.region:
            raise OutOfRegion(f"site {site} outside odometer window")
        counts = list(self.counts)
        counts[i] += by
        return Odometer(self.region, tuple(counts))

    def __add__(self, other: Odometer) -> Odometer:
        if other.region != self.region:
            raise ValueError("odometers over different windows")
        return Odometer(self.region, tuple(a + b for a, b in zip(self.counts, other.counts)))

    def resized(self, region: Region) -> Odometer:
        """Same counts on a larger window, zero on the new sites."""
        if not region.contains_region(self.region):
            raise OutOfRegion(f"{region} does not contain {self.region}")
        a = self.region.lo - region.lo
        counts = [0] * region.width
        counts[a:a + self.region.width] = self.counts
        return Odometer(region, tuple(counts))

    def positive_sites(self) -> list[int]:
        return [self.region.lo + i for i, c in enumerate(self.counts) if c > 0]


@dataclass(frozen=True)
class StabilizationResult:
    final: Configuration
    odometer: Odometer
    topplings_total: int
    frozen_left: int
    frozen_right: int
    exhausted: bool
    # optional toppling log: site and instruction code of each toppling
    log_sites: np.ndarray | None = field(default=None, compare=False, repr=False)
    log_codes: np.ndarray | None = field(default=None, compare=False, repr=False)


# --------------------------------------------------------------------------
# operations


def is_stable(config: Configuration, site: int) -> bool:
    i = config._index(site)
    return config.counts[i] == 0 or config.sleeping[i]


def total_mass(config: Configuration) -> int:
    return config.mass


def _step(counts: list, sleeping: list, lo: int, i: int, instr: Instruction,
          kill: bool) -> tuple[int, int]:
    """Execute ``instr`` at index ``i`` in place; return exit tally increments."""
    if instr is Instruction.SLEEP:
        if counts[i] == 1:
            sleeping[i] = True
        return 0, 0
    j = i - 1 if instr is Instruction.LEFT else i + 1
    if j < 0 or j >= len(counts):
        if not kill:
            raise OutOfRegion(f"destination {lo + j} outside region")
        counts[i] -= 1
        return (1, 0) if j < 0 else (0, 1)
    counts[i] -= 1
    sleeping[j] = False
    counts[j] += 1
    return 0, 0


def apply_instruction(config: Configuration, site: int, instr: Instruction,
                      mode: BoundaryMode | None = None) -> Configuration:
    """Execute one instruction at an unstable site.

    A step leaving the region is only allowed in Kill mode, where it is
    tallied as an exit.
    """
    i = config._index(site)
    if config.counts[i] == 0 or config.sleeping[i]:
        raise IllegalTopple(f"site {site} is stable")
    counts = list(config.counts)
    sleeping = list(config.sleeping)
    dl, dr = _step(counts, sleeping, config.region.lo, i, Instruction(instr),
                   mode is BoundaryMode.KILL)
    return Configuration(config.region, tuple(counts), tuple(sleeping),
                         config.exited_left + dl, config.exited_right + dr)


def topple(config: Configuration, odometer: Odometer, oracle: InstructionOracle,
           site: int, mode: BoundaryMode) -> tuple[Configuration, Odometer]:
    """Execute instruction ``U(site) + 1`` of ``site`` and increment the odometer."""
    config, odometer = topple_sequence(config, odometer, oracle, (site,), mode)
    return config, odometer


def topple_sequence(config: Configuration, odometer: Odometer, oracle: InstructionOracle,
                    sites: Sequence[int], mode: BoundaryMode) -> tuple[Configuration, Odometer]:
    """Topple ``sites`` left to right; every toppling must be legal at its turn.

    In Freeze mode the two region endpoints hold frozen particles and may not
    be toppled.
    """
    if odometer.region != config.region:
        raise ValueError("odometer and configuration cover different windows")
    lo, hi = config.region.lo, config.region.hi
    kill = mode is BoundaryMode.KILL
    counts = list(config.counts)
    sleeping = list(config.sleeping)
    odo = list(odometer.counts)
    exl, exr = config.exited_left, config.exited_right
    total = odometer.total
    for pos, site in enumerate(sites):
        if not lo <= site <= hi:
            raise OutOfRegion(f"site {site} outside [{lo}, {hi}]")
        i = site - lo
        if counts[i] == 0 or sleeping[i]:
            raise IllegalTopple(f"site {site} is stable at position {pos}", pos)
        if not kill and (site == lo or site == hi):
            raise IllegalTopple(f"site {site} is a frozen endpoint at position {pos}", pos)
        if total >= ODOMETER_LIMIT:
            raise OdometerOverflow("odometer total would exceed 2**127")
        odo[i] += 1
        total += 1
        dl, dr = _step(counts, sleeping, lo, i, oracle.instruction_at(site, odo[i]), kill)
        exl += dl
        exr += dr
    return (Configuration(config.region, tuple(counts), tuple(sleeping), exl, exr),
            Odometer(config.region, tuple(odo)))


_RANDOM_POLICY = re.compile(r"random-unstable\((\d+)\)$")


def parse_policy(policy: str) -> tuple[int, int]:
    """Map a policy identifier to ``(kernel policy code, policy seed)``.

    Identifiers: ``leftmost-unstable``, ``lifo``, ``random-unstable(<seed>)``.
    """
    if policy == "leftmost-unstable":
        return K.POLICY_LEFTMOST, 0
    if policy == "lifo":
        return K.POLICY_LIFO, 0
    m = _RANDOM_POLICY.match(policy)
    if m:
        return K.POLICY_RANDOM, int(m.group(1))
    raise ValueError(f"unknown policy {policy!r}")


def stabilize(config: Configuration, oracle: InstructionOracle, target: Region,
              mode: BoundaryMode, policy: str = "leftmost-unstable",
              budget: int = 10 ** 12, consumed: Odometer | None = None,
              record: int = 0) -> StabilizationResult:
    """Topple unstable sites of ``target`` until none remain or ``budget`` is spent.

    Parameters
    ----------
    config : Configuration
        Starting configuration; ``target`` must lie inside its region.
    mode : BoundaryMode
        ``FREEZE``: the endpoints of ``target`` collect active particles and
        never topple.  ``KILL``: the whole target topples and particles
        stepping outside it are removed and tallied.
    policy : str
        Order in which unstable sites are chosen.  The final configuration and
        odometer do not depend on it when stabilization completes.
    consumed : Odometer, optional
        Instructions already used at each site (over ``config.region``), so
        that stacks continue where an earlier stabilization stopped.
    record : int
        Capacity of the optional toppling log.

    Returns
    -------
    StabilizationResult
        The odometer reports topplings performed by this call only.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    if not config.region.contains_region(target):
        raise OutOfRegion(f"target {target} not inside {config.region}")
    if budget >= _KERNEL_LIMIT:
        budget = _KERNEL_LIMIT - 1
    code, pseed = parse_policy(policy)
    lo = config.region.lo
    counts, sleeping = config.arrays()
    if consumed is None:
        before = np.zeros(config.region.width, dtype=np.int64)
    else:
        if consumed.region != config.region:
            raise ValueError("consumed odometer must cover the configuration window")
        if max(consumed.counts, default=0) + budget >= _KERNEL_LIMIT:
            raise OdometerOverflow("instruction index beyond the compiled range")
        before = np.array(consumed.counts, dtype=np.int64)
    odo = before.copy()
    keys = oracle.site_keys(lo, config.region.width)
    log_sites = np.zeros(record, dtype=np.int64)
    log_codes = np.zeros(record, dtype=np.int8)
    ts, tl = oracle.thresholds
    kill = mode is BoundaryMode.KILL
    tot, exl, exr, exhausted, nlog = K.stabilize(
        counts, sleeping, odo, keys, target.lo - lo, target.hi - lo, kill, ts, tl,
        code, np.uint64(rng.site_key(rng.stream_key(pseed, rng.POLICY), 0)),
        budget, log_sites, log_codes)
    final = Configuration.from_arrays(lo, counts, sleeping,
                                      config.exited_left + exl, config.exited_right + exr)
    odometer = Odometer(config.region, tuple(int(d) for d in odo - before))
    frozen_left = frozen_right = 0
    if not kill:
        i, j = target.lo - lo, target.hi - lo
        frozen_left = 0 if final.sleeping[i] else final.counts[i]
        if j != i:
            frozen_right = 0 if final.sleeping[j] else final.counts[j]
    return StabilizationResult(
        final=final, odometer=odometer, topplings_total=int(tot),
        frozen_left=frozen_left, frozen_right=frozen_right, exhausted=bool(exhausted),
        log_sites=(log_sites[:nlog] + lo) if record else None,
        log_codes=log_codes[:nlog] if record else None)
