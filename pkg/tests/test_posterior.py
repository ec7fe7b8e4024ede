import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from consistency_lab.densities import Histogram, NormalLocation, uniform
from consistency_lab.posterior import (
    DegeneratePosterior,
    DivergentPosterior,
    PosteriorState,
    formal_posterior,
    log_mass_trace,
    log_normalizer_trace,
    log_posterior_mass,
    log_ratio_numerator,
    posterior_mass,
    update,
    update_batch,
)
from consistency_lab.priors import DiscretizedPrior, SubsetSelector, improper_location_grid, location_grid_prior


@pytest.fixture
def grid():
    return location_grid_prior(np.round(np.arange(-30, 31) * 0.1, 10))


def test_two_point_posterior_matches_hand_computation():
    prior = DiscretizedPrior.from_weights([NormalLocation(0), NormalLocation(1)], [0.3, 0.7])
    x = np.array([0.4, 1.2])
    st_ = update_batch(PosteriorState.start(prior), x)
    l0, l1 = np.prod(stats.norm.pdf(x)), np.prod(stats.norm.pdf(x, 1))
    assert posterior_mass(st_, SubsetSelector.of([1])) == pytest.approx(0.7 * l1 / (0.3 * l0 + 0.7 * l1), rel=1e-13)


def test_ratio_form_equals_plain(grid, rng):
    theta0 = NormalLocation(0.0)
    A = SubsetSelector.where(grid, lambda p: abs(p.density.mu) >= 1)
    full = SubsetSelector.of(grid.ids)
    s = update_batch(PosteriorState.start(grid, theta0), rng.standard_normal(300))
    assert log_ratio_numerator(s, A) - log_ratio_numerator(s, full) == pytest.approx(log_posterior_mass(s, A), abs=1e-10)


def test_degenerate_posterior():
    prior = DiscretizedPrior.from_weights([Histogram((0.0, 0.5, 1.0), (2.0, 0.0))])
    s = update(PosteriorState.start(prior), 0.75)
    with pytest.raises(DegeneratePosterior):
        s.posterior_weights()


def test_empty_target_has_zero_mass(grid, rng):
    s = update_batch(PosteriorState.start(grid), rng.standard_normal(5))
    assert log_posterior_mass(s, SubsetSelector()) == -math.inf


def test_trace_matches_stepwise_updates(grid, rng):
    x = rng.standard_normal(50)
    A = SubsetSelector.where(grid, lambda p: p.density.mu > 0.5)
    cps = [0, 1, 10, 50]
    trace = log_mass_trace(grid, x, A, cps)
    for c, v in zip(cps, trace):
        s = update_batch(PosteriorState.start(grid), x[:c])
        assert v == pytest.approx(log_posterior_mass(s, A), abs=1e-11)
    norm = log_normalizer_trace(grid, NormalLocation(0), x, cps)
    s = update_batch(PosteriorState.start(grid, NormalLocation(0)), x)
    assert norm[-1] == pytest.approx(log_ratio_numerator(s, SubsetSelector.of(grid.ids)), abs=1e-10)


def test_formal_posterior_matches_conjugate_oracle(rng):
    x = 0.3 + rng.standard_normal(200)
    prior = improper_location_grid(-19.995, 19.995, 0.01)
    s = formal_posterior(prior, x)
    w = s.posterior_weights()
    mu = np.array([d.mu for d in prior.densities])
    xbar, sd = x.mean(), 1 / math.sqrt(x.size)
    assert w @ mu == pytest.approx(xbar, abs=1e-8)
    assert math.sqrt(w @ (mu - xbar) ** 2) == pytest.approx(sd, rel=1e-4)
    A = SubsetSelector.where(prior, lambda p: abs(p.density.mu - 0.3) < 0.1)
    inside = stats.norm.cdf(0.4, xbar, sd) - stats.norm.cdf(0.2, xbar, sd)
    assert posterior_mass(s, A) == pytest.approx(inside, abs=2e-3)
    assert s.normalizer.relative_change < 1e-6


def test_fast_path_equals_likelihood_matrix(rng):
    x = rng.standard_normal(40)
    prior = improper_location_grid(-4.995, 4.995, 0.01)
    a = formal_posterior(prior, x).log_lik
    b = update_batch(PosteriorState.start(prior), x).log_lik
    assert np.allclose(a, b, rtol=0, atol=1e-9)


def test_formal_posterior_without_data_diverges():
    with pytest.raises(DivergentPosterior):
        formal_posterior(improper_location_grid(-5.0, 5.0, 0.1), [])


def test_formal_posterior_needs_improper_prior(grid):
    with pytest.raises(ValueError):
        formal_posterior(grid, [0.0])


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=25))
def test_sequential_equals_batch(xs):
    prior = location_grid_prior(np.linspace(-2, 2, 9), weights=np.arange(1, 10))
    s = PosteriorState.start(prior)
    for x in xs:
        s = update(s, x)
    b = update_batch(PosteriorState.start(prior), xs)
    assert s.n == b.n == len(xs)
    assert np.max(np.abs(s.log_joint() - b.log_joint())) < 1e-10


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_posterior_weights_are_a_distribution(xs):
    from consistency_lab.densities import SpikedUniform
    from consistency_lab.priors import mixture_with_atom

    base = DiscretizedPrior.from_weights([SpikedUniform(0.2, 2**k) for k in range(1, 5)])
    prior = mixture_with_atom(base, uniform(), 0.5)
    w = update_batch(PosteriorState.start(prior), xs).posterior_weights()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)
