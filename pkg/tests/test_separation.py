import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from consistency_lab.densities import NormalLocation, affinity
from consistency_lab.priors import DiscretizedPrior, SubsetSelector, location_grid_prior
from consistency_lab.separation import (
    MixingWeights,
    SeparationCertificate,
    certify,
    l1_ball_certificate,
    max_mixture_affinity,
    product_affinity,
    product_affinity_table,
    uniform_slln_test,
    schwartz_decay_bound,
    schwartz_identity,
    root_mean_numerator_bound,
    uniform_slln_statistic,
    walker_decay_bound,
    weak_functional_set,
)

N = NormalLocation


def mixture_affinity_oracle(theta0, comps, w):
    def q(x):
        return sum(wi * c.pdf(x) for wi, c in zip(w, comps))

    return integrate.quad(lambda x: math.sqrt(theta0.pdf(x) * q(x)), -40, 40, limit=400, epsabs=1e-13)[0]


class TestMixtureAffinity:
    def test_singleton_equals_pairwise(self):
        res = max_mixture_affinity(N(0), [N(1.7)])
        assert res.delta_hat == pytest.approx(affinity(N(0), N(1.7)), abs=1e-8)
        assert res.gap < 1e-6

    def test_symmetric_pair_has_balanced_maximizer(self):
        comps = [N(4), N(-4)]
        res = max_mixture_affinity(N(0), comps)
        assert res.converged and res.gap < 1e-6
        assert res.argmax.weights == pytest.approx([0.5, 0.5], abs=1e-4)
        assert res.delta_hat == pytest.approx(mixture_affinity_oracle(N(0), comps, [0.5, 0.5]), abs=1e-8)
        assert res.delta_hat > math.exp(-2)

    @given(st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
    def test_any_mixture_is_below_certificate(self, w):
        comps = [N(1.5), N(-2.0), N(3.0)]
        prior = DiscretizedPrior.from_weights(comps)
        cert = certify(prior, SubsetSelector.of(prior.ids), N(0))
        w = np.asarray(w) / np.sum(w)
        assert mixture_affinity_oracle(N(0), comps, w) <= cert.delta + 1e-9

    def test_empty_set_is_vacuous(self):
        prior = location_grid_prior([0.0, 1.0])
        cert = certify(prior, SubsetSelector(), N(0))
        assert cert.delta == 0 and cert.beta0 == math.inf

    def test_certificate_rate(self):
        cert = SeparationCertificate(SubsetSelector.of([1]), N(0), 0.5, "per-coordinate", k=2)
        assert cert.beta0 == pytest.approx(math.log(2) / 2)
        with pytest.raises(ValueError):
            SeparationCertificate(SubsetSelector(), N(0), 1.5, "l1-ball")

    def test_mixing_weights_validation(self):
        with pytest.raises(ValueError):
            MixingWeights((N(0), N(1)), np.array([0.6, 0.6]))
        assert MixingWeights.point_mass((N(0), N(1)), 1).weights.tolist() == [0.0, 1.0]


class TestSets:
    def test_l1_ball_certificate_respects_analytic_bound(self):
        grid = location_grid_prior(np.round(np.arange(-40, 41) * 0.1, 10))
        cert = l1_ball_certificate(N(3.0), 0.4, N(0.0), grid)
        assert cert.delta <= cert.notes["analytic_delta"] + 1e-9
        assert len(cert.A) > 0
        with pytest.raises(ValueError):
            l1_ball_certificate(N(0.1), 0.4, N(0.0), grid)

    def test_weak_functional_set(self):
        grid = location_grid_prior(np.round(np.arange(-20, 21) * 0.1, 10))
        A = weak_functional_set(np.tanh, 0.3, N(0.0), grid)
        mus = sorted(grid.support[i].density.mu for i in A.ids)
        oracle = [p.density.mu for p in grid.support
                  if integrate.quad(lambda x: np.tanh(x) * stats.norm.pdf(x, p.density.mu), -30, 30)[0] >= 0.3]
        assert mus == pytest.approx(oracle)
        assert len(weak_functional_set(np.tanh, 2.5, N(0.0), grid)) == 0
        with pytest.raises(ValueError):
            weak_functional_set(lambda x: 2 * np.tanh(x), 0.3, N(0.0), grid)


class TestProductAffinity:
    def test_point_mass_matches_closed_form(self, rng):
        nu = MixingWeights.point_mass((N(1.0), N(2.0)), 0)
        for n in (1, 3):
            est = product_affinity(N(0), nu, n, rng, budget=200_000)
            assert abs(est.value - math.exp(-n / 8)) < 4 * est.se + 1e-12

    def test_n1_matches_mixture_quadrature(self, rng):
        comps = (N(1.0), N(-2.0))
        nu = MixingWeights(comps, np.array([0.3, 0.7]))
        est = product_affinity(N(0), nu, 1, rng, budget=200_000)
        assert abs(est.value - mixture_affinity_oracle(N(0), comps, [0.3, 0.7])) < 4 * est.se

    def test_table_rejects_large_n(self, rng):
        nu = MixingWeights.point_mass((N(1.0),))
        with pytest.raises(ValueError):
            product_affinity_table(N(0), [nu], [7], rng)

    def test_schwartz_identity(self, rng):
        prior = location_grid_prior([-1.5, 0.0, 1.0, 2.0], weights=[1, 2, 3, 4])
        A = SubsetSelector.of([0, 3])
        lhs, rhs = schwartz_identity(prior, A, N(0), 3, rng, budget=100_000)
        assert abs(lhs.value - rhs.value) < 3 * math.hypot(lhs.se, rhs.se)


class TestBounds:
    def test_schwartz_bound(self):
        cert = SeparationCertificate(SubsetSelector.of([0]), N(0), math.exp(-0.4), "l1-ball")
        assert schwartz_decay_bound(cert, 0.25, 10) == pytest.approx(0.5 * math.exp(10 * (0.1 - 0.4)))
        with pytest.raises(ValueError):
            schwartz_decay_bound(cert, 0.25, 10, gamma=0.5)

    def test_walker_bound(self):
        masses = [0.25] * 4
        assert walker_decay_bound(masses, 0.4, 5) == pytest.approx(2.0 * math.exp(5 * (0.1 - 0.4)))
        val = walker_decay_bound(lambda i: 6 / math.pi**2 * i**-4.0, 0.4, 5)
        assert val == pytest.approx(math.sqrt(6) / math.pi * math.pi**2 / 6 * math.exp(-1.5), rel=1e-5)
        with pytest.raises(ValueError):
            walker_decay_bound(lambda i: 1 / i**2, 0.4, 5)

    def test_numerator_bound_holds(self, rng):
        prior = location_grid_prior([-2.0, -1.0, 0.0, 1.5, 2.5])
        A = SubsetSelector.of([0, 3, 4])
        for n in (1, 10, 100):
            res = root_mean_numerator_bound(A, N(0), prior, rng.standard_normal(n))
            assert res.log_J_A <= res.log_bound + 1e-12

    def test_uniform_slln_shrinks(self, rng):
        A = [N(1.0), N(-1.5)]
        small = uniform_slln_statistic(A, N(0), rng.standard_normal(100))
        large = uniform_slln_statistic(A, N(0), rng.standard_normal(100_000))
        assert large < small and large < 0.02

    def test_uniform_slln_test_error_rates(self, rng):
        res = uniform_slln_test([N(2.0), N(-2.5)], N(0.0), 10, 0.25, 20_000, rng)
        assert res.delta == pytest.approx(math.exp(-0.5))
        assert res.beta_derived == pytest.approx(1 - math.exp(-0.5) - 0.25)
        assert res.holds(res.beta_derived)
        assert res.indicator(np.zeros((1, 10))).shape == (1,)
