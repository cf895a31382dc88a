"""Inductive interval stabilization with event detection.

Starting from ω* the chain is stabilized on growing intervals
``I_n = [-k**n, k**n]`` with frozen endpoints.  After each stage the final
configuration is classified (good / plentiful / sparse) and the odometer is
scanned for the D and F events.  All thresholds are compared exactly: real
parameters are read as decimal rationals and odometer sums are Python ints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import (
    BoundaryMode,
    Configuration,
    InstructionOracle,
    Odometer,
    Region,
    stabilize,
)
from .dynamics import EnvironmentSampler, make_omega_star
from .errors import DomainError, InvalidDensities

Number = float | int | Fraction


def exact(x: Number) -> Fraction:
    """Rational value of ``x``; floats are read through their shortest repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class ProcedureParams:
    rho: Number
    rho_c_ref: Number
    delta: Number
    k: int
    gamma: Number
    strict: bool = False

    def __post_init__(self):
        rho, rc, d, g = (exact(v) for v in (self.rho, self.rho_c_ref, self.delta, self.gamma))
        if not (0 < rho < 1 and 0 < rc < 1):
            raise DomainError("densities must lie in (0,1)")
        if rho <= rc:
            raise InvalidDensities(f"rho={self.rho} must exceed rho_c_ref={self.rho_c_ref}")
        if d <= 0:
            raise DomainError("delta must be positive")
        if not isinstance(self.k, int) or self.k < 2:
            raise DomainError("k must be an integer >= 2")
        if not 0 < g <= 1:
            raise DomainError("gamma must lie in (0,1]")
        if (1 / g).denominator != 1 or (self.k * g).denominator != 1:
            raise DomainError("k*gamma and 1/gamma must be integers")
        if self.strict:
            if not d < (rho - rc) / 3:
                raise DomainError("strict mode needs delta < (rho - rho_c_ref)/3")
            if not self.k > 200 / d ** 2:
                raise DomainError("strict mode needs k > 200/delta^2")
            if not g < d / 10:
                raise DomainError("strict mode needs gamma < delta/10")

    @property
    def gamma_q(self) -> Fraction:
        return exact(self.gamma)

    @property
    def gamma_inv(self) -> int:
        return int(1 / self.gamma_q)

    def radius(self, n: int) -> int:
        return self.k ** n

    def interval(self, n: int) -> Region:
        return Region.centered(self.k ** n)

    def block(self, n: int) -> int:
        """Window length gamma*k**n in sites (at least one site)."""
        return max(1, math.ceil(self.gamma_q * self.k ** n))

    @property
    def low_density(self) -> Fraction:
        """rho_c + delta: density cap of sparse windows."""
        return exact(self.rho_c_ref) + exact(self.delta)

    @property
    def high_density(self) -> Fraction:
        """rho_c + 2 delta: density floor of plentiful blocks."""
        return exact(self.rho_c_ref) + 2 * exact(self.delta)

    def to_record(self) -> dict:
        return {"rho": float(self.rho), "rho_c_ref": float(self.rho_c_ref),
                "delta": float(self.delta), "k": self.k, "gamma": str(self.gamma_q),
                "strict": self.strict}


def choose_parameters(rho: Number, rho_c_ref: Number, strict: bool = True,
                      k: int | None = None, delta: Number | None = None,
                      gamma: Number | None = None) -> ProcedureParams:
    """Admissible parameters for densities ``rho > rho_c_ref``.

    ``delta`` defaults to ``0.9 (rho - rho_c_ref) / 3``.  In strict mode the
    largest ``gamma = 1/m`` below ``delta/10`` is taken and ``k`` is the
    smallest multiple of ``m`` above ``200/delta**2``.  Otherwise ``k``
    (default 10) and ``gamma`` (default ``1/k``) are the caller's.
    """
    r, rc = exact(rho), exact(rho_c_ref)
    if not (0 < rc < 1 and 0 < r < 1):
        raise DomainError("densities must lie in (0,1)")
    if r <= rc:
        raise InvalidDensities(f"rho={rho} must exceed rho_c_ref={rho_c_ref}")
    d = exact(delta) if delta is not None else Fraction(9, 10) * (r - rc) / 3
    if strict:
        m = math.floor(10 / d) + 1
        g = Fraction(1, m) if gamma is None else exact(gamma)
        m = int(1 / g)
        floor_k = 200 / d ** 2
        kk = (math.floor(floor_k) // m + 1) * m
        if k is not None:
            kk = k
    else:
        kk = 10 if k is None else k
        g = Fraction(1, kk) if gamma is None else exact(gamma)
    return ProcedureParams(rho=rho, rho_c_ref=rho_c_ref, delta=d, k=kk, gamma=g, strict=strict)


# --------------------------------------------------------------------------
# configuration classes


@dataclass(frozen=True)
class Violation:
    criterion: int
    detail: str
    window: Region | None = None


def _prefix(config: Configuration) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.array(config.counts, dtype=np.int64))])


def _window_sums(config: Configuration, lo: int, hi: int, length: int) -> tuple[np.ndarray, int]:
    """Sums over windows [j, j+length-1] for j = lo..hi-length+1."""
    pre = _prefix(config)
    a = lo - config.region.lo
    b = hi - config.region.lo + 1
    if b - a < length:
        return np.zeros(0, dtype=np.int64), lo
    return pre[a + length:b + 1] - pre[a:b - length + 1], lo


def classify_good(config: Configuration, n: int,
                  params: ProcedureParams) -> tuple[bool, list[Violation]]:
    """Criterion 1 (bulk count on I_n, endpoints included) and Criterion 2
    (every gamma*k**n window inside I_n minus its endpoints is below the cap)."""
    r = params.radius(n)
    out: list[Violation] = []
    total = config.particles_in(-r, r)
    need = 2 * r * params.high_density
    if total < need:
        out.append(Violation(1, f"{total} particles in I_{n}, need {need}"))
    length = params.block(n)
    cap = length * params.low_density
    sums, start = _window_sums(config, -r + 1, r - 1, length)
    bad = np.flatnonzero(sums * cap.denominator > cap.numerator)
    if bad.size:
        j = start + int(bad[0])
        out.append(Violation(2, f"{int(sums[bad[0]])} particles in a window of {length}, cap {cap}",
                             Region(j, j + length - 1)))
    return not out, out


def is_plentiful(initial: Configuration, n: int, params: ProcedureParams) -> bool:
    """Blocks of gamma*k**n sites tiling (k**n, k**(n+1)] and its mirror image
    each hold at least gamma*k**n*(rho_c + 2 delta) particles."""
    r, R = params.radius(n), params.radius(n + 1)
    length = params.block(n)
    need = length * params.high_density
    for j in range(1, (R - r) // length + 1):
        lo = r + (j - 1) * length + 1
        hi = r + j * length
        if initial.particles_in(lo, hi) < need or initial.particles_in(-hi, -lo) < need:
            return False
    return True


def is_sparse(final: Configuration, region: Region, params: ProcedureParams, n: int) -> bool:
    """Every window of gamma*k**n sites inside ``region`` holds at most
    gamma*k**n*(rho_c + delta) particles."""
    length = params.block(n)
    cap = length * params.low_density
    sums, _ = _window_sums(final, region.lo, region.hi, length)
    return not bool(np.any(sums * cap.denominator > cap.numerator))


def tilt_statistic(initial: Configuration, final: Configuration, z: int, hi: int) -> int:
    """Exact sum over j in [z, hi] of j * (final(j) - initial(j))."""
    return sum(j * (final.count(j) - initial.count(j)) for j in range(z, hi + 1))


def tilt_threshold(params: ProcedureParams, n: int) -> Fraction:
    return exact(params.delta) / 10 * params.k ** (2 * n + 2)


def runs(sites: Iterable[int]) -> list[Region]:
    """Maximal runs of consecutive integers, as regions."""
    out: list[Region] = []
    for x in sites:
        if out and out[-1].hi == x - 1:
            out[-1] = Region(out[-1].lo, x)
        else:
            out.append(Region(x, x))
    return out


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class EventFlags:
    d1: bool = False
    d2: bool = False
    d3: bool = False
    d4: bool = False
    f1: bool = False
    f2: bool = False
    f3: bool = False
    # leftmost / rightmost zero-odometer site in the open interval
    z_left: int | None = None
    z_right: int | None = None
    # leftmost / rightmost positive-odometer site
    pos_left: int | None = None
    pos_right: int | None = None

    def consistent(self, r: int) -> bool:
        """Structural invariants; ``r`` is k**n for the stage."""
        if self.d2 and self.d1:
            return False
        if (self.f1 or self.f2 or self.f3) and not self.d2:
            return False
        if self.d2 and not (self.f1 or self.f2 or self.f3):
            return False
        if self.d2 and (self.z_left is None or self.z_right is None):
            return False
        if self.f3 and not (self.z_left <= -r and self.z_right >= r):
            return False
        return True

    @property
    def any(self) -> bool:
        return self.d1 or self.d2 or self.d3 or self.d4


def exceeds_d1(odometer_sum: int, k: int, n: int) -> bool:
    """odometer_sum > k**(3.5(n+1)), decided exactly by squaring."""
    return odometer_sum * odometer_sum > k ** (7 * (n + 1))


def detect_events(initial: Configuration, final: Configuration, odometer: Odometer,
                  n: int, params: ProcedureParams) -> EventFlags:
    k = params.k
    R, r = k ** (n + 1), k ** n
    total = odometer.total
    d1 = exceeds_d1(total, k, n)
    zeros = [x for x in range(-R + 1, R) if odometer[x] == 0]
    pos = odometer.positive_sites()
    d2 = (not d1) and bool(zeros)
    good1 = not any(v.criterion == 1 for v in classify_good(final, n + 1, params)[1])
    d3 = (not d1) and not good1
    d4 = False
    if not d1 and not zeros:
        ok, viol = classify_good(final, n + 1, params)
        d4 = any(v.criterion == 2 for v in viol)
    f1 = f2 = f3 = False
    if d2:
        right = any(x >= r for x in zeros)
        left = any(x <= -r for x in zeros)
        f1 = not right
        f2 = not left
        f3 = left and right
    return EventFlags(
        d1=d1, d2=d2, d3=d3, d4=d4, f1=f1, f2=f2, f3=f3,
        z_left=zeros[0] if zeros else None, z_right=zeros[-1] if zeros else None,
        pos_left=pos[0] if pos else None, pos_right=pos[-1] if pos else None)


# --------------------------------------------------------------------------
# stages


@dataclass(frozen=True)
class StageReport:
    n: int
    initial: Configuration
    final: Configuration
    odometer: Odometer
    odometer_sum: int
    flags: EventFlags
    good: bool
    violations: tuple[Violation, ...] = ()
    exhausted: bool = False
    frozen_left: int = 0
    frozen_right: int = 0
    plentiful: bool = False
    # instructions used so far at each site of I_{n+1}, all stages included
    consumed: Odometer | None = field(default=None, repr=False, compare=False)
    log_sites: np.ndarray | None = field(default=None, repr=False, compare=False)
    log_codes: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def frozen(self) -> int:
        return self.frozen_left + self.frozen_right

    @property
    def halted(self) -> bool:
        """The chain fixated inside I_{n+1} or the stage was censored."""
        return self.frozen == 0 or self.exhausted

    def to_record(self) -> dict:
        f = self.flags
        return {
            "n": self.n,
            "odometer_sum": str(self.odometer_sum),
            "d1": f.d1, "d2": f.d2, "d3": f.d3, "d4": f.d4,
            "f1": f.f1, "f2": f.f2, "f3": f.f3,
            "good": self.good,
            "plentiful": self.plentiful,
            "exhausted": self.exhausted,
            "mass": sum(self.final.counts),
            "sleeping": self.final.sleeping_total,
            "frozen_left": self.frozen_left,
            "frozen_right": self.frozen_right,
            "z_left": f.z_left, "z_right": f.z_right,
            "pos_left": f.pos_left, "pos_right": f.pos_right,
        }


def extend(prev: Configuration, window: Region, env: EnvironmentSampler) -> Configuration:
    """``prev`` on its own window, fresh environment elsewhere in ``window``."""
    if not window.contains_region(prev.region):
        raise ValueError(f"{window} does not contain {prev.region}")
    states = [env.occupancy(x) for x in window.sites()]
    a = prev.region.lo - window.lo
    states[a:a + prev.region.width] = prev.states
    return Configuration.from_states(window.lo, states, prev.exited_left, prev.exited_right)


def run_stage(prev: Configuration, params: ProcedureParams, n: int,
              oracle: InstructionOracle, env: EnvironmentSampler, budget: int,
              consumed: Odometer | None = None, policy: str = "lifo",
              record: int = 0) -> StageReport:
    """Grow to I_{n+1}, release the frozen endpoints of I_n and stabilize."""
    window = params.interval(n + 1)
    initial = extend(prev, window, env)
    used = (consumed or Odometer.zeros(prev.region)).resized(window)
    res = stabilize(initial, oracle, window, BoundaryMode.FREEZE, policy=policy,
                    budget=budget, consumed=used, record=record)
    odo = res.odometer
    total = odo.total
    flags = detect_events(initial, res.final, odo, n, params)
    good, viol = classify_good(res.final, n + 1, params)
    return StageReport(
        n=n, initial=initial, final=res.final, odometer=odo, odometer_sum=total,
        flags=flags, good=good, violations=tuple(viol), exhausted=res.exhausted,
        frozen_left=res.frozen_left, frozen_right=res.frozen_right,
        plentiful=is_plentiful(initial, n, params), consumed=used + odo,
        log_sites=res.log_sites, log_codes=res.log_codes)


def base_stage(env: EnvironmentSampler, oracle: InstructionOracle, budget: int,
               policy: str = "lifo"):
    """ω* on [-1, 1] stabilized with frozen endpoints."""
    start = make_omega_star(env, Region.centered(1))
    return start, stabilize(start, oracle, start.region, BoundaryMode.FREEZE,
                            policy=policy, budget=budget)


def run_inductive(env: EnvironmentSampler, params: ProcedureParams,
                  oracle: InstructionOracle, max_stage: int, budget_per_stage: int,
                  policy: str = "lifo", record: int = 0) -> list[StageReport]:
    """Stages n = 0 .. max_stage-1 on I_1, I_2, ...; stops early once no
    frozen active particle is left or a stage runs out of budget."""
    if max_stage < 1:
        raise ValueError("max_stage must be >= 1")
    _, base = base_stage(env, oracle, budget_per_stage, policy)
    prev, consumed = base.final, base.odometer
    reports: list[StageReport] = []
    for n in range(max_stage):
        rep = run_stage(prev, params, n, oracle, env, budget_per_stage, consumed,
                        policy=policy, record=record)
        reports.append(rep)
        if rep.halted:
            break
        prev, consumed = rep.final, rep.consumed
    return reports


def tilt_increments(initial: Configuration, log_sites, log_codes, z: int, hi: int,
                    only_inside: bool = True) -> np.ndarray:
    """Change of the partial tilt statistic after each logged toppling.

    A toppling at ``x`` moving one particle to ``y`` changes the statistic
    by ``y*[z<=y<=hi] - x*[z<=x<=hi]``; sleep instructions change nothing.
    With ``only_inside`` the increments of topplings outside [z, hi] are
    dropped.
    """
    from .core import Instruction

    sites = np.asarray(log_sites, dtype=np.int64)
    codes = np.asarray(log_codes)
    step = np.where(codes == int(Instruction.LEFT), -1,
                    np.where(codes == int(Instruction.RIGHT), 1, 0))
    dest = sites + step
    moved = step != 0

    def inside(v):
        return (v >= z) & (v <= hi)

    inc = np.where(moved, dest * inside(dest) - sites * inside(sites), 0)
    if only_inside:
        inc = inc[inside(sites)]
    return inc
