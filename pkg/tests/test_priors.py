import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from consistency_lab.densities import Histogram, NormalLocation, SpikedUniform, uniform
from consistency_lab.priors import (
    DiscretizedPrior,
    SubsetSelector,
    ZeroLikelihood,
    check_kl_support,
    improper_location_grid,
    kl_neighborhood_mass,
    location_grid_prior,
    marginal_log_density,
    mixture_with_atom,
    restrict_and_normalize,
)


@pytest.fixture
def grid():
    return location_grid_prior(np.round(np.arange(-10, 11) * 0.1, 10), weights=np.arange(1, 22))


def test_duplicate_densities_rejected():
    with pytest.raises(ValueError, match="one-to-one"):
        DiscretizedPrior.from_weights([NormalLocation(0), NormalLocation(0)])


def test_masses_normalized(grid):
    assert grid.weights().sum() == pytest.approx(1.0, abs=1e-14)
    A = SubsetSelector.of([0, 1])
    assert grid.mass(A) == pytest.approx(3 / 231, abs=1e-15)
    assert grid.mass(SubsetSelector()) == 0.0
    with pytest.raises(KeyError):
        grid.mask(SubsetSelector.of([99]))


def test_restrict_and_normalize(grid):
    A = SubsetSelector.where(grid, lambda p: p.density.mu > 0.5)
    r = restrict_and_normalize(grid, A)
    assert r.weights().sum() == pytest.approx(1.0, abs=1e-14)
    assert len(r) == len(A) == 5
    with pytest.raises(ValueError):
        restrict_and_normalize(grid, SubsetSelector())


def test_mixture_with_atom_adds_or_merges():
    base = DiscretizedPrior.from_weights([SpikedUniform(0.2, 2), SpikedUniform(0.2, 4)])
    mixed = mixture_with_atom(base, uniform(), 0.5)
    assert len(mixed) == 3
    assert mixed.mass(SubsetSelector.of([2])) == pytest.approx(0.5)
    merged = mixture_with_atom(base, SpikedUniform(0.2, 2), 0.3)
    assert len(merged) == 2
    assert merged.mass(SubsetSelector.of([0])) == pytest.approx(0.3 + 0.7 * 0.5)
    with pytest.raises(ValueError):
        mixture_with_atom(base, uniform(), 1.0)


def test_kl_neighbourhoods(grid):
    theta0 = NormalLocation(0.0)
    # KL(N(0,1), N(t,1)) = t^2 / 2 < 0.02 keeps |t| < 0.2
    inside = [i for i, p in enumerate(grid.support) if abs(p.density.mu) < 0.2 - 1e-12]
    assert kl_neighborhood_mass(grid, theta0, 0.02) == pytest.approx(grid.weights()[inside].sum(), abs=1e-15)
    chk = check_kl_support(grid, NormalLocation(0.05), [1e-4, 0.01])
    assert chk.resolution == pytest.approx(0.05**2 / 2, abs=1e-14)
    assert chk.flags == (False, True)


def test_marginal_density_matches_brute_force(grid):
    x = np.array([0.3, -0.2, 1.1])
    brute = sum(w * np.prod(stats.norm.pdf(x, p.density.mu)) for w, p in zip(grid.weights(), grid.support))
    assert marginal_log_density(grid, x) == pytest.approx(math.log(brute), abs=1e-12)


def test_zero_likelihood():
    prior = DiscretizedPrior.from_weights([Histogram((0.0, 0.5, 1.0), (2.0, 0.0))])
    with pytest.raises(ZeroLikelihood):
        marginal_log_density(prior, [0.75])
    assert np.isfinite(marginal_log_density(DiscretizedPrior.from_weights([uniform()]), [0.75]))


def test_improper_grid_is_flagged_and_extends():
    prior = improper_location_grid(-1.0, 1.0, 0.5)
    assert not prior.proper
    assert np.allclose(prior.log_weights, math.log(0.5))
    wider = prior.extender(prior)
    assert [d.mu for d in wider.densities] == pytest.approx(np.arange(-2.5, 2.51, 0.5))


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=12), st.data())
def test_restriction_is_conditional_probability(ws, data):
    prior = location_grid_prior(np.arange(len(ws), dtype=float), weights=ws)
    ids = data.draw(st.sets(st.integers(0, len(ws) - 1), min_size=1))
    A = SubsetSelector.of(ids)
    r = restrict_and_normalize(prior, A)
    for i in ids:
        assert r.mass(SubsetSelector.of([i])) == pytest.approx(prior.mass(SubsetSelector.of([i])) / prior.mass(A), rel=1e-12)
