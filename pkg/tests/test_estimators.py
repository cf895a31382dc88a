import math
import random

import numpy as np
import pytest

from arwlab import estimators as E
from arwlab.core import Configuration, SiteState
from arwlab.errors import DomainError, NonPositiveLambda
from arwlab.procedure import ProcedureParams, is_sparse


def test_lower_bound_values():
    assert E.lower_bound(1) == 0.5
    assert E.lower_bound(3) == 0.75
    with pytest.raises(NonPositiveLambda):
        E.lower_bound(0)


def test_wilson_extremes_stay_in_unit_interval():
    lo, hi = E.wilson(0, 50)
    assert lo == 0.0 and 0 < hi < 1
    lo, hi = E.wilson(50, 50)
    assert hi == 1.0 and 0 < lo < 1
    lo, hi = E.wilson(20, 50)
    assert lo < 0.4 < hi


def test_estimate_accounting():
    est = E.proportion(30, 100, 1, censored=10)
    assert est.successes + est.failures + est.censored == est.trials
    assert est.ci_lo <= est.point <= est.ci_hi
    assert est.bracket == (0.3, 0.4)


def test_fixation_estimate_respects_lower_bound():
    for lam in (0.5, 2.0):
        est = E.fixation_probability(lam, 0.5, 20_000, 1000, 3)
        p = E.lower_bound(lam)
        imm = E.immediate_fixation(est)
        assert abs(imm.point - p) <= 3 * E.binomial_sigma(p, est.trials)
        assert est.point >= p - 3 * est.half_width
        assert est.successes + est.censored == est.trials


def test_supercritical_cell_has_censored_trials():
    est = E.fixation_probability(0.1, 0.999, 50, 10 ** 5, 8)
    assert est.censored > 0


def test_fixation_requires_trials_and_positive_lambda():
    with pytest.raises(DomainError):
        E.fixation_probability(1.0, 0.5, 0, 10, 1)
    with pytest.raises(NonPositiveLambda):
        E.fixation_probability(-1.0, 0.5, 10, 10, 1)


def test_one_site_sleeping_fraction():
    n = 100_000
    est = E.sleeping_fraction(1.0, 1, 1.0, True, n, 5)
    assert abs(est.point - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_sleepers_never_exceed_sites():
    runs = E.interval_runs(1.0, 50, 1.0, True, 200, 2)
    assert (runs.sleepers <= 50).all()
    assert not runs.exhausted.any()
    assert (runs.sleepers + runs.exits.sum(axis=1) == 50).all()


def test_interval_trials_are_translation_invariant():
    runs = E.interval_runs(0.7, 30, 0.6, True, 12, 9)
    for i in range(12):
        base = E.interval_trial(0.7, 30, 0.6, True, 9, i)
        assert base.final.sleeping_total == runs.sleepers[i]
        for offset in (17, -40):
            moved = E.interval_trial(0.7, 30, 0.6, True, 9, i, offset=offset)
            assert moved.final.counts == base.final.counts
            assert moved.final.sleeping == base.final.sleeping
            assert moved.odometer.counts == base.odometer.counts


def test_particle_placement_uses_floor():
    runs = E.interval_runs(1.0, 10, 0.35, False, 20, 1)
    assert (runs.sleepers + runs.exits.sum(axis=1) == 3).all()


def test_rho_c_estimate_is_proper_and_deterministic():
    vals = {}
    for lam in (0.25, 1.0, 4.0):
        est = E.estimate_rho_c(lam, 100, 60, 4)
        assert 0 < est.point < 1
        vals[lam] = est
    for a, b in ((0.25, 1.0), (1.0, 4.0)):
        assert vals[a].point <= vals[b].point or vals[a].overlaps(vals[b])
    assert E.estimate_rho_c(1.0, 100, 60, 4) == vals[1.0]


def test_tail_probability_exactly_zero_above_one():
    est = E.tail_probability(1.0, 50, 0.5, 0.6, 100, 3)
    assert est.successes == 0 and est.point == 0.0
    with pytest.raises(DomainError):
        E.tail_probability(1.0, 50, 0.1, 0.6, 0, 3)


def test_windowed_check_trivial_cases():
    empty = Configuration.from_text("0 4 | 0 0 0 0 0 | 0 0")
    assert E.windowed_sleeper_check(empty, 3, 0.1)[0]
    full = Configuration.from_text("0 4 | s s s s s | 0 0")
    assert E.windowed_sleeper_check(full, 2, 1.0)[0]
    assert not E.windowed_sleeper_check(full, 2, 0.9)[0]


def test_windowed_check_agrees_with_sparse():
    r = random.Random(12)
    params = ProcedureParams(0.9, 0.5, 0.1, 10, 0.5)  # windows of 5 at n=1, cap 3
    for _ in range(100):
        states = [SiteState(1, True) if r.random() < r.random() else SiteState(0)
                  for _ in range(31)]
        cfg = Configuration.from_states(-15, states)
        ok, worst = E.windowed_sleeper_check(cfg, params.block(1), float(params.low_density))
        assert ok == is_sparse(cfg, cfg.region, params, 1)
        sums = [cfg.particles_in(j, j + 4) for j in range(-15, 12)]
        assert cfg.particles_in(worst.lo, worst.hi) == max(sums)


def test_sweep_cells_in_grid_order_with_distinct_seeds():
    spec = E.SweepSpec((0.5, 1.0), (0.3, 0.6, 0.9), 200, 1000, 17)
    cells = E.sweep(spec)
    assert [(c.i, c.j) for c in cells] == [(i, j) for i in range(2) for j in range(3)]
    assert len({c.seed for c in cells}) == 6
    assert all(c.seed == spec.cell_seed(c.i, c.j) for c in cells)
    assert cells == E.sweep(spec, threads=3)


def test_sweep_records_cell_errors(monkeypatch):
    real = E.fixation_probability

    def flaky(lam, rho, *args):
        if rho == 0.6:
            raise RuntimeError("boom")
        return real(lam, rho, *args)

    monkeypatch.setattr(E, "fixation_probability", flaky)
    cells = E.sweep(E.SweepSpec((1.0,), (0.3, 0.6), 50, 100, 1))
    assert cells[0].estimate is not None
    assert cells[1].estimate is None and "boom" in cells[1].error
    assert cells[1].to_record()["trials"] == 0


def test_sweep_spec_validation():
    with pytest.raises(DomainError):
        E.SweepSpec((), (0.5,), 10, 10, 1)
    with pytest.raises(DomainError):
        E.SweepSpec((1.0,), (1.5,), 10, 10, 1)


def test_survival_is_censored_fraction():
    est = E.proportion(70, 100, 1, censored=30)
    assert E.survival(est).point == pytest.approx(0.3)
    assert np.isclose(E.survival(est).point + est.point, 1.0)
