from fractions import Fraction

import pytest

from arwlab.absorption import absorption_oracle, empirical, total_variation
from arwlab.core import Configuration, Region
from arwlab.dynamics import kill_trials
from arwlab.errors import DomainError, StateSpaceTooLarge
from arwlab.verify import CATALOG


def _by_text(dist):
    return {c.to_text(): p for c, p in dist.items()}


def test_single_particle_kill_at_neighbours():
    c = Configuration.from_text("-1 1 | 0 1 0 | 0 0")
    d = _by_text(absorption_oracle(c, 1.0, Region(0, 0)))
    assert d == {
        "-1 1 | 0 s 0 | 0 0": Fraction(1, 2),
        "-1 1 | 0 0 0 | 1 0": Fraction(1, 4),
        "-1 1 | 0 0 0 | 0 1": Fraction(1, 4),
    }


def test_large_lambda_closed_form():
    c = Configuration.from_text("-1 1 | 0 1 0 | 0 0")
    d = _by_text(absorption_oracle(c, 1000.0, Region(0, 0)))
    assert d["-1 1 | 0 s 0 | 0 0"] == Fraction(1000, 1001)


def test_two_particles_on_one_site():
    # the pair cannot sleep; one leaves, then the survivor sleeps w.p. 1/2
    c = Configuration.from_text("0 0 | 2 | 0 0")
    d = _by_text(absorption_oracle(c, 1.0))
    assert d == {
        "0 0 | s | 1 0": Fraction(1, 4),
        "0 0 | s | 0 1": Fraction(1, 4),
        "0 0 | 0 | 2 0": Fraction(1, 8),
        "0 0 | 0 | 0 2": Fraction(1, 8),
        "0 0 | 0 | 1 1": Fraction(1, 4),
    }
    sim = kill_trials(c, 1.0, 100_000, 21)
    assert total_variation(d, empirical(sim)) <= 0.02


@pytest.mark.parametrize("text,lam", CATALOG[:6])
def test_catalog_distributions_are_normalised(text, lam):
    c = Configuration.from_text(text)
    d = absorption_oracle(c, lam)
    assert sum(d.values()) == 1
    for final in d:
        assert final.mass == c.mass
        assert final.active_total == 0


def test_limits_and_domain():
    with pytest.raises(StateSpaceTooLarge):
        absorption_oracle(Configuration.from_text("0 0 | 4 | 0 0"), 1.0)
    with pytest.raises(StateSpaceTooLarge):
        absorption_oracle(Configuration.from_text("0 5 | 1 0 0 0 0 0 | 0 0"), 1.0)
    with pytest.raises(DomainError):
        absorption_oracle(Configuration.from_text("0 0 | 1 | 0 0"), 0.0)


def test_total_variation_basics():
    assert total_variation({"a": 1.0}, {"a": 1.0}) == 0
    assert total_variation({"a": 1.0}, {"b": 1.0}) == 1
    assert empirical(["x", "y", "x", "x"]) == {"x": 0.75, "y": 0.25}
