import math

import pytest

from arwlab.core import Configuration, Instruction, InstructionOracle, Region, SiteState
from arwlab.dynamics import (
    DynamicState,
    EnvironmentSampler,
    OutcomeKind,
    initial_state,
    jump_step,
    kill_trials,
    make_omega_star,
    occupancy,
    omega_star_trials,
    run_until,
)
from arwlab.errors import DomainError, NoActiveParticles, WindowExcludesOrigin

# upper 0.1% point of the chi-square distribution with one degree of freedom
CHI2_1_999 = 10.828


def test_occupancy_is_pure_and_bernoulli():
    env = EnvironmentSampler(17, 0.3)
    assert occupancy(env, -5) == occupancy(EnvironmentSampler(17, 0.3), -5)
    n = 2 * 10 ** 5 + 1
    occupied = sum(occupancy(env, x).count for x in range(-10 ** 5, 10 ** 5 + 1))
    assert abs(occupied / n - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / n)
    for x in range(-50, 50):
        assert occupancy(env, x) in (SiteState(0), SiteState(1, True))


def test_environment_density_domain():
    EnvironmentSampler(1, 0.97)
    with pytest.raises(DomainError):
        EnvironmentSampler(1, 1.2)


def test_omega_star_on_empty_environment():
    env = EnvironmentSampler(3, 1e-15)
    c = make_omega_star(env, Region(-2, 2))
    assert c.to_text() == "-2 2 | 0 0 1 0 0 | 0 0"


def test_omega_star_matches_environment_off_origin():
    for seed in range(20):
        env = EnvironmentSampler(seed, 0.6)
        c = make_omega_star(env, Region(-6, 6))
        assert c.state(0) == SiteState(1, False)
        for x in range(-6, 7):
            if x:
                assert c.state(x) == occupancy(env, x)


def test_omega_star_needs_origin():
    with pytest.raises(WindowExcludesOrigin):
        make_omega_star(EnvironmentSampler(1, 0.5), Region(1, 4))


def test_single_active_particle_is_always_selected():
    c = Configuration.from_text("-2 2 | s 0 1 0 s | 0 0")
    o = InstructionOracle(2, 1.0)
    for t in range(200):
        nxt = jump_step(DynamicState.start(c), o, t)
        assert nxt.odometer.positive_sites() == [0]


def test_selection_proportional_to_active_count():
    c = Configuration.from_text("0 1 | 2 1 | 0 0")
    o = InstructionOracle(5, 1.0)
    state = DynamicState.start(c)
    n = 10 ** 5
    hits = sum(jump_step(state, o, t).odometer[0] for t in range(n))
    expected = (2 * n / 3, n / 3)
    chi2 = sum((obs - e) ** 2 / e for obs, e in zip((hits, n - hits), expected))
    assert chi2 < CHI2_1_999


def test_mean_holding_time_with_four_active_particles():
    c = Configuration.from_text("0 3 | 1 1 1 1 | 0 0")
    o = InstructionOracle(5, 1.0)
    state = DynamicState.start(c)
    n = 10 ** 5
    mean = sum(jump_step(state, o, t).clock for t in range(n)) / n
    assert abs(mean - 1 / 8) <= 3 * (1 / 8) / math.sqrt(n)


def test_jump_step_without_active_particles():
    c = Configuration.from_text("0 1 | s 0 | 0 0")
    with pytest.raises(NoActiveParticles):
        jump_step(DynamicState.start(c), InstructionOracle(1, 1.0), 0)


def test_run_until_with_nothing_active_is_fixated_at_step_zero():
    c = Configuration.from_text("0 2 | s 0 s | 0 0")
    out = run_until(DynamicState.start(c), InstructionOracle(1, 1.0), 0, 10)
    assert out.kind is OutcomeKind.FIXATED and out.steps == 0 and out.final == c


def test_origin_sleeping_first_fixates_after_one_instruction():
    for seed in range(1000):
        o = InstructionOracle(seed, 1.0)
        if o.instruction_at(0, 1) is Instruction.SLEEP:
            break
    env = EnvironmentSampler(8, 0.5)
    out = run_until(initial_state(env), o, 3, 1000)
    assert out.kind is OutcomeKind.FIXATED and out.steps == 1
    assert out.final.state(0) == SiteState(1, True)


def test_compiled_run_matches_reference_steps():
    for t in range(30):
        env = EnvironmentSampler(t, 0.5)
        o = InstructionOracle(100 + t, 0.8)
        ref = initial_state(env)
        for _ in range(60):
            if not ref.active_total:
                break
            ref = jump_step(ref, o, t)
        out = run_until(initial_state(env), o, t, 60)
        assert out.state.config == ref.config
        assert out.state.odometer == ref.odometer
        assert out.state.slots == ref.slots
        assert out.steps == ref.steps and out.clock == pytest.approx(ref.clock, rel=1e-12)


def test_kill_mode_reference_matches_compiled():
    c = Configuration.from_text("-3 3 | 0 2 s 1 0 1 0 | 0 0")
    o = InstructionOracle(9, 0.6)
    ref = DynamicState.start(c)
    while ref.active_total:
        ref = jump_step(ref, o, 4)
    out = run_until(DynamicState.start(c), o, 4, 10 ** 6)
    assert out.kind is OutcomeKind.FIXATED
    assert out.final == ref.config and out.steps == ref.steps
    assert out.final.mass == c.mass


def _as_dict(state):
    cfg = state.config
    return {x: cfg.state(x) for x in cfg.region.sites()}


def test_window_growth_is_transparent():
    for t in range(40):
        env = EnvironmentSampler(t, 0.7)
        o = InstructionOracle(t, 0.5)
        a = run_until(initial_state(env, 1), o, t, 5000)
        b = run_until(initial_state(env, 5), o, t, 5000)
        assert (a.kind, a.steps, a.clock) == (b.kind, b.steps, b.clock)
        da, db = _as_dict(a.state), _as_dict(b.state)
        for x in set(da) & set(db):
            assert da[x] == db[x]
        pa = {x: a.state.odometer[x] for x in a.state.odometer.positive_sites()}
        pb = {x: b.state.odometer[x] for x in b.state.odometer.positive_sites()}
        assert pa == pb


def test_omega_star_batches_are_deterministic_and_thread_free():
    a = omega_star_trials(1.0, 0.5, 500, 2000, 11, threads=1)
    b = omega_star_trials(1.0, 0.5, 500, 2000, 11, threads=4)
    assert (a.fixated == b.fixated).all() and (a.steps == b.steps).all()
    assert (a.clock == b.clock).all()


def test_jump_and_site_wise_engines_agree_per_trial():
    c = Configuration.from_text("-2 2 | 1 0 2 s 0 | 0 0")
    jump = kill_trials(c, 1.0, 300, 5, engine="jump")
    site = kill_trials(c, 1.0, 300, 5, engine="stabilize", policy="lifo")
    assert jump == site
    for text in jump:
        assert Configuration.from_text(text).mass == c.mass
