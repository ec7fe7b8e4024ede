"""Cross-module invariant suite run by ``consistency-lab check``.

Every check calls library functions through their module objects, so a
patched or broken implementation surfaces here under the check's name.
"""

from __future__ import annotations

import math
import time
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate

from . import densities, entropy_sieves, experiments, noniid_regression, posterior, priors, separation

BUDGETS = {"small": 1, "full": 10}


class Check(NamedTuple):
    module: str
    operation: str
    invariant: str
    fn: Callable[[int], tuple[bool, object]]


class CheckResult(NamedTuple):
    check: Check
    passed: bool
    observed: object
    seconds: float

    @property
    def label(self) -> str:
        c = self.check
        return f"{c.module}.{c.operation}: {c.invariant}"


def _gaussian_affinity(scale):
    worst = 0.0
    for d in (0.0, 0.5, 1.0, 2.0, 4.0):
        f, g = densities.NormalLocation(0.0), densities.NormalLocation(d)
        quad = integrate.quad(lambda x: math.sqrt(f._pdf(np.array(x)) * g._pdf(np.array(x))), -np.inf, np.inf, epsabs=1e-13)[0]
        worst = max(worst, abs(densities.affinity(f, g) - quad), abs(densities.affinity(f, g) - math.exp(-d * d / 8)))
    return worst < 1e-8, worst


def _shipped_pairs():
    fam = [
        densities.NormalLocation(0.0),
        densities.NormalLocation(1.0),
        densities.NormalLocation(0.5, 2.0),
    ]
    unit = [
        densities.uniform(),
        densities.SpikedUniform(0.2, 4),
        densities.SpikedUniform(0.5, 8),
        densities.Histogram((0.0, 0.3, 1.0), (2.0, 4.0 / 7.0)),
    ]
    for group in (fam, unit):
        for i, f in enumerate(group):
            for g in group[i + 1 :]:
                yield f, g


def _divergence_inequalities(scale):
    bad = []
    for f, g in _shipped_pairs():
        a, l1, kl = densities.affinity(f, g), densities.l1_distance(f, g), densities.kl_divergence(f, g)
        ok = kl >= 0.5 * l1 * l1 - 1e-9 and 1 - a <= 0.5 * l1 + 1e-9 and 0.5 * l1 <= math.sqrt(max(1 - a * a, 0)) + 1e-9
        ok = ok and 0 <= a <= 1 + 1e-12
        if not ok:
            bad.append((repr(f), repr(g), a, l1, kl))
    return not bad, bad or "all pairs"


def _sequential_batch(scale):
    rng = np.random.default_rng(11)
    prior = priors.location_grid_prior(np.linspace(-2, 2, 21))
    x = rng.standard_normal(50 * scale)
    s = posterior.PosteriorState.start(prior)
    for v in x:
        s = posterior.update(s, v)
    b = posterior.update_batch(posterior.PosteriorState.start(prior), x)
    err = float(np.max(np.abs(s.posterior_weights() - b.posterior_weights())))
    return err < 1e-10, err


def _ratio_plain(scale):
    rng = np.random.default_rng(12)
    prior = priors.location_grid_prior(np.linspace(-2, 2, 21))
    theta0 = densities.NormalLocation(0.0)
    A = priors.SubsetSelector.where(prior, lambda p: abs(p.density.mu) >= 1)
    full = priors.SubsetSelector.of(prior.ids)
    st = posterior.update_batch(posterior.PosteriorState.start(prior, theta0), rng.standard_normal(40 * scale))
    ratio = posterior.log_ratio_numerator(st, A) - posterior.log_ratio_numerator(st, full)
    err = abs(ratio - posterior.log_posterior_mass(st, A))
    return err < 1e-10, err


def _lemma_bound(scale):
    rng = np.random.default_rng(13)
    theta0 = densities.NormalLocation(0.0)
    comps = [densities.NormalLocation(2.0), densities.NormalLocation(-2.5)]
    prior = priors.DiscretizedPrior.from_weights(comps)
    cert = separation.certify(prior, priors.SubsetSelector.of(prior.ids), theta0)
    worst = -math.inf
    for _ in range(2 * scale):
        nu = separation.MixingWeights(tuple(comps), rng.dirichlet(np.ones(2)))
        vals, ses = separation.product_affinity_table(theta0, [nu], [1, 2, 3], rng, budget=20_000 * scale)
        for n, v, se in zip([1, 2, 3], vals[0], ses[0]):
            worst = max(worst, v - cert.delta**n - 3 * se)
    return worst <= 0, worst


def _sieve_tail(scale):
    i = np.arange(1, 10_001, dtype=float)
    m = i**-4 / np.sum(i**-4)
    c = np.sqrt(m).sum()
    tail = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0.0]])
    worst = float(np.max(tail - 2 * c * c / i))
    s = entropy_sieves.w_to_ggr_sieve(m, 0.05, 40)
    return worst <= 0 and s.complement_mass <= s.mass_bound, worst


def _entropy_order(scale):
    rng = np.random.default_rng(14)
    worst = -math.inf
    for _ in range(3 * scale):
        K = int(rng.integers(3, 9))
        edges = np.linspace(0, 1, 5)
        H = rng.gamma(2.0, size=(K, 4))
        H /= (H * 0.25).sum(axis=1, keepdims=True)
        fam = [densities.Histogram(tuple(edges), tuple(h)) for h in H]
        delta = float(rng.uniform(0.05, 0.6))
        h, _ = entropy_sieves.bracketing_entropy(fam, delta)
        j, _ = entropy_sieves.metric_entropy(fam, 2 * delta)
        worst = max(worst, j - h)
    return worst <= 1e-12, worst


def _exponent_additivity(scale):
    m, m0 = noniid_regression.LinearSemiparametricModel(1.0, 2.0), noniid_regression.LinearSemiparametricModel(0.5, 1.0)
    x = noniid_regression.DesignPoints.alternating(25 * scale).points()
    lhs = sum(math.log(noniid_regression.per_index_affinity(xi, m, m0)) for xi in x)
    rhs = -float(np.sum((m.mean(x) - m0.mean(x)) ** 2)) / 8
    return abs(lhs - rhs) < 1e-12 * max(1, abs(rhs)), abs(lhs - rhs)


def _kakutani_limit(scale):
    tr = noniid_regression.kakutani_product_affinity(noniid_regression.DesignPoints.power_decay(10**5 * scale), 1.0, 0.0)
    err = abs(tr.affinity[-1] - math.exp(-math.pi**2 / 48))
    return err <= tr.tail_bound * (1 + 1e-9) + 1e-15 and tr.classification == "equivalent", err


def _exact_fit(scale):
    n = (100, 200, 400, 800)
    tr = experiments.DecayTrace("check", 0, n, tuple(-0.2 * k for k in n))
    fit = experiments.estimate_decay_rate(tr)
    return abs(fit.slope + 0.2) < 1e-10, fit.slope


def _restriction(scale):
    prior = priors.location_grid_prior(np.linspace(-1, 1, 11), weights=np.arange(1, 12))
    A = priors.SubsetSelector.of([0, 3, 7])
    r = priors.restrict_and_normalize(prior, A)
    err = abs(r.weights().sum() - 1) + abs(r.mass(priors.SubsetSelector.of([0])) - prior.mass(priors.SubsetSelector.of([0])) / prior.mass(A))
    return err < 1e-12, err


CHECKS: list[Check] = [
    Check("densities", "affinity", "Gaussian closed form equals quadrature to 1e-8", _gaussian_affinity),
    Check("densities", "divergence", "Pinsker and L1/affinity sandwich on shipped pairs", _divergence_inequalities),
    Check("priors", "restrict_and_normalize", "restricted prior is proper and proportional", _restriction),
    Check("posterior", "update", "sequential updating equals batch", _sequential_batch),
    Check("posterior", "log_ratio_numerator", "ratio form equals plain posterior to 1e-10", _ratio_plain),
    Check("separation", "product_affinity", "mixture product affinity below delta^n + 3 SE", _lemma_bound),
    Check("entropy_sieves", "w_to_ggr_sieve", "tail mass at most 2c^2/k", _sieve_tail),
    Check("entropy_sieves", "bsw_to_ggr_net", "J(2 delta) <= H(delta)", _entropy_order),
    Check("noniid_regression", "per_index_affinity", "log product affinity is -sum(d_i^2)/8", _exponent_additivity),
    Check("noniid_regression", "kakutani_product_affinity", "partial product within tail bound of the limit", _kakutani_limit),
    Check("experiments", "estimate_decay_rate", "exact exponential trace recovers its slope", _exact_fit),
]


def run_checks(budget: str = "small", checks: list[Check] | None = None) -> list[CheckResult]:
    scale = BUDGETS[budget]
    results = []
    for c in checks or CHECKS:
        t = time.perf_counter()
        try:
            ok, obs = c.fn(scale)
        except Exception as exc:  # a crash is a failure of that invariant
            ok, obs = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(c, bool(ok), obs, time.perf_counter() - t))
    return results
