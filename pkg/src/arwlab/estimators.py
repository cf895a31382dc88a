"""Monte Carlo estimators built on the dynamics and stabilization kernels.

Every estimator is a pure function of its arguments: trial ``i`` draws its
seeds from ``derive_seed(seed, i, lane)``, so results do not depend on the
number of worker threads.  Trials that hit a budget are *censored* and kept
apart from both outcomes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from . import rng
from .core import BoundaryMode, Configuration, InstructionOracle, Region, stabilize
from .dynamics import omega_star_trials
from .errors import DomainError, NonPositiveLambda
from .parallel import map_trials
from .procedure import exact

Z95 = 1.959963984540054
DEFAULT_BUDGET = 2 ** 62


@dataclass(frozen=True)
class Estimate:
    """A proportion or mean with a 95% interval.

    For proportions ``successes`` counts favourable trials and the interval
    is Wilson's; ``censored`` trials are neither successes nor failures.
    For means (``std`` set) ``successes`` is the summed observable.
    """

    point: float
    ci_lo: float
    ci_hi: float
    trials: int
    successes: int
    seed: int
    censored: int = 0
    std: float | None = None
    immediate: int | None = None

    @property
    def failures(self) -> int:
        return self.trials - self.successes - self.censored

    @property
    def half_width(self) -> float:
        return (self.ci_hi - self.ci_lo) / 2

    @property
    def bracket(self) -> tuple[float, float]:
        """Bounds on the probability if every censored trial went either way."""
        return self.successes / self.trials, (self.successes + self.censored) / self.trials

    def overlaps(self, other: Estimate) -> bool:
        return self.ci_lo <= other.ci_hi and other.ci_lo <= self.ci_hi

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def wilson(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise DomainError("need at least one trial")
    p = successes / trials
    z2 = z * z
    denom = 1 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def proportion(successes: int, trials: int, seed: int, censored: int = 0,
               immediate: int | None = None) -> Estimate:
    lo, hi = wilson(successes, trials)
    return Estimate(successes / trials, lo, hi, trials, successes, seed, censored,
                    immediate=immediate)


def binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(p * (1 - p) / trials)


def lower_bound(lam: float) -> float:
    """Probability that the origin particle sleeps before its first step."""
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam}")
    return lam / (1 + lam)


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam}")


def _check_trials(trials: int) -> None:
    if trials < 1:
        raise DomainError("trials must be >= 1")


def fixation_probability(lam: float, rho: float, trials: int, step_budget: int,
                         base_seed: int, threads: int | None = None) -> Estimate:
    """Fraction of ω* trajectories fixating within ``step_budget`` jump steps.

    ``immediate`` counts trials whose origin particle slept on its first
    instruction (fixation after exactly one executed instruction).
    """
    _check_lambda(lam)
    _check_trials(trials)
    batch = omega_star_trials(lam, rho, trials, step_budget, base_seed, threads)
    fixated = int(batch.fixated.sum())
    return proportion(fixated, trials, base_seed, censored=trials - fixated,
                      immediate=int(batch.immediate.sum()))


def immediate_fixation(est: Estimate) -> Estimate:
    """The sleeps-before-moving sub-event of a fixation estimate as a proportion."""
    return proportion(est.immediate, est.trials, est.seed)


# --------------------------------------------------------------------------
# interval stabilization from an all-active start


@dataclass(frozen=True)
class IntervalRuns:
    sleepers: np.ndarray
    topplings: np.ndarray
    exits: np.ndarray
    exhausted: np.ndarray


def particle_total(n: int, density: float) -> int:
    if n < 1:
        raise DomainError("interval length must be >= 1")
    if not density > 0:
        raise DomainError("density must be positive")
    return math.floor(exact(density) * n)


def interval_runs(lam: float, n: int, density: float, all_active: bool, trials: int,
                  seed: int, budget: int = DEFAULT_BUDGET,
                  threads: int | None = None) -> IntervalRuns:
    """Stabilize ``floor(density*n)`` particles on an ``n``-site interval with
    Kill boundaries, once per trial, and return the raw per-trial tallies.

    Particles are spread as ``total // n`` per site plus one more on a
    uniformly random set of ``total % n`` distinct sites.  With
    ``all_active=False`` singly occupied sites start asleep.
    """
    _check_lambda(lam)
    _check_trials(trials)
    total = particle_total(n, density)
    ts, tl = InstructionOracle(0, lam).thresholds

    def run(start, stop):
        return K.interval_batch(n, total, all_active, np.uint64(seed), start, stop,
                                ts, tl, budget)

    return IntervalRuns(*map_trials(run, trials, threads, chunks_per_thread=1))


def interval_trial(lam: float, n: int, density: float, all_active: bool, seed: int,
                   index: int, offset: int = 0, policy: str = "leftmost-unstable"):
    """One trial of :func:`interval_runs` on ``[offset, offset+n-1]`` through the
    reference stabilizer; the outcome does not depend on ``offset``."""
    total = particle_total(n, density)
    counts = np.zeros(n, dtype=np.int64)
    K.place_particles(counts, np.uint64(rng.stream_key(rng.derive_seed(seed, index, 0),
                                                       rng.PLACE)), total)
    sleeping = (counts == 1) & (not all_active)
    config = Configuration.from_arrays(offset, counts, sleeping)
    oracle = InstructionOracle(rng.derive_seed(seed, index, 1), lam, origin=offset)
    return stabilize(config, oracle, config.region, BoundaryMode.KILL, policy=policy)


def _mean_estimate(values: np.ndarray, trials: int, seed: int, censored: int,
                   successes: int) -> Estimate:
    m = values.size
    if m == 0:
        return Estimate(math.nan, math.nan, math.nan, trials, 0, seed, censored)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if m > 1 else 0.0
    half = Z95 * std / math.sqrt(m)
    return Estimate(mean, max(0.0, mean - half), min(1.0, mean + half), trials,
                    successes, seed, censored, std=std)


def sleeping_fraction(lam: float, n: int, initial_density: float, all_active: bool,
                      trials: int, seed: int, budget: int = DEFAULT_BUDGET,
                      threads: int | None = None) -> Estimate:
    """Mean of X_n / n, the fraction of sites left with a sleeping particle."""
    runs = interval_runs(lam, n, initial_density, all_active, trials, seed, budget, threads)
    done = ~runs.exhausted
    x = runs.sleepers[done]
    return _mean_estimate(x / n, trials, seed, int(runs.exhausted.sum()), int(x.sum()))


def estimate_rho_c(lam: float, n: int, trials: int, seed: int,
                   threads: int | None = None) -> Estimate:
    """Density-1 all-active sleeping fraction, used as the critical-density proxy.

    It concentrates at or below the critical density, so it is an
    upper-consistent proxy with unknown convergence rate, not an unbiased
    estimator.
    """
    return sleeping_fraction(lam, n, 1.0, True, trials, seed, threads=threads)


def tail_probability(lam: float, n: int, delta: float, rho_c_ref: float, trials: int,
                     seed: int, threads: int | None = None) -> Estimate:
    """Fraction of density-1 all-active trials with X_n >= (rho_c_ref + delta) n."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    _check_trials(trials)
    runs = interval_runs(lam, n, 1.0, True, trials, seed, threads=threads)
    cut = (exact(rho_c_ref) + exact(delta)) * n
    done = ~runs.exhausted
    hits = int(np.sum(runs.sleepers[done] * cut.denominator >= cut.numerator))
    return proportion(hits, trials, seed, censored=int(runs.exhausted.sum()))


def windowed_sleeper_check(final: Configuration, window_len: int,
                           threshold_density: float) -> tuple[bool, Region | None]:
    """Whether every ``window_len``-site window holds at most
    ``threshold_density * window_len`` sleepers; also the fullest window."""
    if window_len < 1:
        raise DomainError("window_len must be >= 1")
    if final.region.width < window_len:
        return True, None
    s = np.concatenate([[0], np.cumsum(np.array(final.sleeping, dtype=np.int64))])
    sums = s[window_len:] - s[:-window_len]
    j = int(np.argmax(sums))
    worst = Region(final.region.lo + j, final.region.lo + j + window_len - 1)
    cap = exact(threshold_density) * window_len
    ok = not bool(np.any(sums * cap.denominator > cap.numerator))
    return ok, worst


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    lambda_grid: tuple[float, ...]
    rho_grid: tuple[float, ...]
    trials_per_cell: int
    step_budget: int
    base_seed: int

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(self.lambda_grid))
        object.__setattr__(self, "rho_grid", tuple(self.rho_grid))
        if not self.lambda_grid or not self.rho_grid:
            raise DomainError("sweep grids must be nonempty")
        if self.trials_per_cell < 1 or self.step_budget < 1:
            raise DomainError("trials_per_cell and step_budget must be >= 1")
        for lam in self.lambda_grid:
            _check_lambda(lam)
        for rho in self.rho_grid:
            if not 0 < rho < 1:
                raise DomainError(f"rho must lie in (0,1), got {rho}")

    def cell_seed(self, i: int, j: int) -> int:
        return rng.derive_seed(self.base_seed, i, j)


@dataclass(frozen=True)
class SweepCell:
    i: int
    j: int
    lam: float
    rho: float
    seed: int
    estimate: Estimate | None
    error: str | None = field(default=None)

    def to_record(self) -> dict:
        rec = {"lambda": self.lam, "rho": self.rho, "seed": self.seed}
        e = self.estimate
        if e is None:
            rec.update(trials=0, fixated=0, censored=0, point=None, ci_lo=None, ci_hi=None,
                       error=self.error)
        else:
            rec.update(trials=e.trials, fixated=e.successes, censored=e.censored,
                       point=e.point, ci_lo=e.ci_lo, ci_hi=e.ci_hi)
        return rec


def sweep(spec: SweepSpec, threads: int | None = None) -> list[SweepCell]:
    """One fixation-probability cell per (lambda, rho), in grid order."""
    seeds = {(i, j): spec.cell_seed(i, j)
             for i in range(len(spec.lambda_grid)) for j in range(len(spec.rho_grid))}
    if len(set(seeds.values())) != len(seeds):
        raise RuntimeError("derived cell seeds collide")
    cells = []
    for (i, j), seed in seeds.items():
        lam, rho = spec.lambda_grid[i], spec.rho_grid[j]
        try:
            est = fixation_probability(lam, rho, spec.trials_per_cell, spec.step_budget,
                                       seed, threads)
            cells.append(SweepCell(i, j, lam, rho, seed, est))
        except Exception as exc:  # recorded per cell, never fatal to the sweep
            cells.append(SweepCell(i, j, lam, rho, seed, None, f"{type(exc).__name__}: {exc}"))
    return cells


def survival(est: Estimate) -> Estimate:
    """Censored (still active at budget) fraction as its own proportion."""
    return proportion(est.censored, est.trials, est.seed)
