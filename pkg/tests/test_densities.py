import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from consistency_lab.densities import (
    DomainError,
    EmpiricalSample,
    Histogram,
    MeasureDescriptor,
    NormalLocation,
    SpikedUniform,
    SupportViolation,
    SymmetricNoise,
    affinity,
    divergence,
    hellinger_sq,
    kl_divergence,
    l1_distance,
    log_likelihood_matrix,
    root_likelihood_ratio_mean,
    uniform,
)


def quad_affinity(f, g, lo=-40, hi=40):
    return integrate.quad(lambda x: math.sqrt(f.pdf(x) * g.pdf(x)), lo, hi, epsabs=1e-13, limit=400)[0]


class TestNormalPairs:
    @pytest.mark.parametrize("d", [0.0, 0.5, 1.0, 2.0, 4.0])
    def test_affinity_closed_form_matches_quadrature(self, d):
        f, g = NormalLocation(0.0), NormalLocation(d)
        assert affinity(f, g) == pytest.approx(math.exp(-d * d / 8), abs=1e-14)
        assert affinity(f, g) == pytest.approx(quad_affinity(f, g), abs=1e-10)

    def test_frozen_affinity_value(self):
        # quadrature oracle, frozen
        assert affinity(NormalLocation(0), NormalLocation(2)) == pytest.approx(0.6065306597126334, abs=1e-13)

    def test_unequal_scales(self):
        f, g = NormalLocation(0.3, 0.7), NormalLocation(-1.0, 1.8)
        assert affinity(f, g) == pytest.approx(quad_affinity(f, g), abs=1e-10)
        kl_oracle = integrate.quad(lambda x: f.pdf(x) * (f.logpdf(x) - g.logpdf(x)), -30, 30, limit=400)[0]
        assert kl_divergence(f, g) == pytest.approx(kl_oracle, abs=1e-9)

    def test_kl_and_l1(self):
        f, g = NormalLocation(0), NormalLocation(1.5)
        assert kl_divergence(f, g) == pytest.approx(1.5**2 / 2, abs=1e-14)
        l1_oracle = integrate.quad(lambda x: abs(f.pdf(x) - g.pdf(x)), -30, 30, points=[0.75], limit=400)[0]
        assert l1_distance(f, g) == pytest.approx(l1_oracle, abs=1e-10)

    def test_identity(self):
        f = NormalLocation(0.2, 1.3)
        assert affinity(f, f) == pytest.approx(1.0, abs=1e-14)
        assert hellinger_sq(f, f) == pytest.approx(0.0, abs=1e-13)
        assert l1_distance(f, f) == pytest.approx(0.0, abs=1e-13)
        assert kl_divergence(f, f) == pytest.approx(0.0, abs=1e-13)


class TestPiecewise:
    def test_spiked_against_uniform(self):
        f0, f = uniform(), SpikedUniform(0.2, 4)
        oracle = 0.25 * math.sqrt(1.6) + 0.75 * math.sqrt(0.8)
        assert affinity(f0, f) == pytest.approx(oracle, abs=1e-14)
        assert affinity(f0, f) == pytest.approx(0.98704815926677, abs=1e-13)
        assert l1_distance(f0, f) == pytest.approx(2 * 0.2 * (1 - 1 / 4), abs=1e-14)
        kl = -(0.25 * math.log(1.6) + 0.75 * math.log(0.8))
        assert kl_divergence(f0, f) == pytest.approx(kl, abs=1e-14)
        assert divergence(f0, f, "aff").method == "piecewise-exact"

    def test_support_violation_gives_infinite_kl(self):
        g = Histogram((0.0, 0.5, 1.0), (2.0, 0.0))
        assert kl_divergence(uniform(), g) == math.inf
        assert kl_divergence(g, uniform()) == pytest.approx(math.log(2), abs=1e-14)

    def test_histogram_must_integrate_to_one(self):
        with pytest.raises(ValueError):
            Histogram((0.0, 1.0), (0.9,))
        with pytest.raises(ValueError):
            Histogram((0.0, 0.5, 1.0), (2.5, -0.5))

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            uniform().pdf(1.5)
        with pytest.raises(DomainError):
            affinity(uniform(), NormalLocation(0))

    def test_spiked_pdf_and_sampling(self, rng):
        f = SpikedUniform(0.3, 8)
        assert f.pdf(0.1) == pytest.approx(0.7 + 0.3 * 8)
        assert f.pdf(0.5) == pytest.approx(0.7)
        x = f.sample(rng, 200_000)
        p = np.mean(x <= 1 / 8)
        assert abs(p - (0.3 + 0.7 / 8)) < 4 * math.sqrt(0.4 * 0.6 / x.size)


class TestMixedFamilies:
    def test_laplace_against_normal_uses_quadrature(self):
        f, g = SymmetricNoise("laplace", 1.0), NormalLocation(0.5)
        res = divergence(f, g, "aff")
        assert res.method == "quadrature"
        oracle = quad_affinity(f, g)
        assert res.value == pytest.approx(oracle, abs=1e-9)

    def test_noise_tail_probabilities(self):
        assert SymmetricNoise().sf(1.0) == pytest.approx(stats.norm.sf(1.0))
        assert SymmetricNoise("laplace", 2.0).sf(1.0) == pytest.approx(0.5 * math.exp(-0.5))

    def test_root_ratio_mean(self, rng):
        f0, f = NormalLocation(0), NormalLocation(1)
        x = f0.sample(rng, 400_000)
        assert root_likelihood_ratio_mean(f0, f, x) == pytest.approx(math.exp(-1 / 8), abs=5e-3)
        with pytest.raises(SupportViolation):
            root_likelihood_ratio_mean(Histogram((0.0, 0.5, 1.0), (2.0, 0.0)), uniform(), [0.75])

    def test_likelihood_matrix_matches_logpdf(self):
        dens = [NormalLocation(0), SpikedUniform(0.2, 4), NormalLocation(1, 2)]
        x = np.array([0.05, 0.4, 0.9])
        L = log_likelihood_matrix([dens[0], dens[2]], x)
        assert np.allclose(L[0], stats.norm.logpdf(x), atol=1e-14)
        assert np.allclose(L[1], stats.norm.logpdf(x, 1, 2), atol=1e-14)

    def test_empirical_sample(self):
        s = EmpiricalSample((1.0, 2.0, 3.0))
        assert s.n == 3
        assert np.array_equal(s.as_array(), [1.0, 2.0, 3.0])

    def test_measure_descriptor(self):
        m = MeasureDescriptor.interval(0, 1)
        assert m.same_domain(MeasureDescriptor.interval(0, 1))
        assert not m.same_domain(MeasureDescriptor.real_line())


# ------------------------------------------------------------------ properties

heights = st.lists(st.floats(0.05, 5.0), min_size=4, max_size=4)


def _hist(h):
    h = np.asarray(h)
    h = h / (h.sum() * 0.25)
    return Histogram((0.0, 0.25, 0.5, 0.75, 1.0), tuple(h))


def _check_inequalities(f, g):
    a, l1, kl, h2 = affinity(f, g), l1_distance(f, g), kl_divergence(f, g), hellinger_sq(f, g)
    assert -1e-12 <= a <= 1 + 1e-12
    assert h2 == pytest.approx(2 * (1 - a), abs=1e-12)
    assert kl >= 0.5 * l1 * l1 - 1e-9  # Pinsker
    assert 1 - a <= 0.5 * l1 + 1e-9
    assert 0.5 * l1 <= math.sqrt(max(1 - a * a, 0.0)) + 1e-9


@given(heights, heights)
def test_histogram_divergence_inequalities(h1, h2):
    f, g = _hist(h1), _hist(h2)
    _check_inequalities(f, g)
    assert affinity(f, g) == pytest.approx(affinity(g, f), abs=1e-14)
    assert l1_distance(f, g) == pytest.approx(l1_distance(g, f), abs=1e-14)


@given(st.floats(-3, 3), st.floats(0.3, 3), st.floats(-3, 3), st.floats(0.3, 3))
def test_normal_divergence_inequalities(m1, s1, m2, s2):
    _check_inequalities(NormalLocation(m1, s1), NormalLocation(m2, s2))


@given(st.floats(0.01, 0.9), st.integers(1, 10))
def test_spiked_l1_formula(eps, k):
    m = 2**k
    assert l1_distance(uniform(), SpikedUniform(eps, m)) == pytest.approx(2 * eps * (1 - 1 / m), abs=1e-12)
