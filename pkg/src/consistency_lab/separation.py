"""Strong separation of a set of densities from the truth, and what it buys.

The central object is the supremum over mixing measures nu on A of
Aff(f0, q_nu).  The objective is concave in nu, so it is maximized on the
simplex by a pairwise Frank-Wolfe iteration whose duality gap certifies the
result; certificates report the estimate plus the gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from .densities import (
    Density,
    DomainError,
    SupportViolation,
    _as_array,
    affinity,
    l1_distance,
    log_likelihood_matrix,
    root_likelihood_ratio_mean,
)
from .entropy_sieves import sqrt_mass_sum
from .priors import DiscretizedPrior, SubsetSelector

__all__ = [
    "MixingWeights",
    "MixtureAffinity",
    "SeparationCertificate",
    "MCEstimate",
    "NumeratorBound",
    "SllnTestResult",
    "quadrature_nodes",
    "maximize_mixture_affinity",
    "max_mixture_affinity",
    "certify",
    "l1_ball_certificate",
    "weak_functional_set",
    "product_affinity",
    "product_affinity_table",
    "schwartz_decay_bound",
    "walker_decay_bound",
    "schwartz_identity",
    "uniform_slln_statistic",
    "root_mean_numerator_bound",
    "uniform_slln_test",
]


@dataclass(frozen=True, eq=False)
class MixingWeights:
    """A probability vector over a finite list of component densities."""

    components: tuple[Density, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.components),):
            raise ValueError("one weight per component is required")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixing weights must lie on the simplex")
        w = np.clip(w, 0.0, None)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, components, index: int = 0) -> "MixingWeights":
        w = np.zeros(len(components))
        w[index] = 1.0
        return cls(tuple(components), w)


class MixtureAffinity(NamedTuple):
    delta_hat: float
    argmax: MixingWeights | None
    gap: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class SeparationCertificate:
    """Certified bound ``Aff(f0, q_nu) < delta`` for every mixing measure nu on A."""

    A: SubsetSelector
    theta0: Density
    delta: float
    method: str
    k: int = 1
    delta_hat: float = math.nan
    gap: float = 0.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.method not in ("mixture-maximization", "l1-ball", "weak-functional", "per-coordinate"):
            raise ValueError(f"unknown certificate method {self.method!r}")

    @property
    def beta0(self) -> float:
        """Exponential rate ``-log(delta) / k`` (infinite for the empty set)."""
        if self.delta == 0:
            return math.inf
        return -math.log(self.delta) / self.k

    def as_dict(self) -> dict:
        return {
            "ids": sorted(self.A.ids),
            "delta": self.delta,
            "delta_hat": self.delta_hat,
            "gap": self.gap,
            "beta0": self.beta0,
            "method": self.method,
            "k": self.k,
            "notes": self.notes,
        }


# ------------------------------------------------------------ mixture affinity


def _scale(d: Density) -> float:
    for attr in ("sigma", "scale"):
        if hasattr(d, attr):
            return float(getattr(d, attr))
    return math.inf


def quadrature_nodes(densities: Sequence[Density], panels: int = 400, order: int = 16):
    """Composite Gauss-Legendre nodes and weights covering all the densities.

    Panel edges include every breakpoint, so piecewise-constant integrands are
    integrated exactly.
    """
    m0 = densities[0].measure
    for d in densities[1:]:
        if not d.measure.same_domain(m0):
            raise DomainError("densities live on different domains")
    if m0.kind == "interval":
        lo, hi = m0.lo, m0.hi
    else:
        ranges = [d.effective_range() for d in densities]
        lo, hi = min(r[0] for r in ranges), max(r[1] for r in ranges)
    width = min(_scale(d) for d in densities) / 8
    count = panels if not math.isfinite(width) else max(panels, int(math.ceil((hi - lo) / width)))
    count = min(count, 20000)
    edges = set(np.linspace(lo, hi, count + 1).tolist())
    for d in densities:
        edges.update(p for p in d.breakpoints() if lo <= p <= hi)
    edges = np.array(sorted(edges))
    g, gw = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * g[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * gw[None, :]
    return nodes.ravel(), weights.ravel()


def _objective(f0v, F, w, nu):
    mix = nu @ F
    return float(w @ np.sqrt(f0v * mix))


def _gradient(f0v, F, w, nu):
    mix = nu @ F
    root = np.sqrt(f0v * mix)
    coef = np.where(root > 0, w * f0v / (2 * np.maximum(root, 1e-300)), np.where(f0v > 0, 1e300, 0.0))
    return F @ coef


def maximize_mixture_affinity(
    f0v: np.ndarray,
    F: np.ndarray,
    w: np.ndarray,
    *,
    max_iter: int = 500,
    tol: float = 1e-6,
    starts: int = 5,
    rng: np.random.Generator | None = None,
):
    """Maximize ``sum_k w_k sqrt(f0_k (nu @ F)_k)`` over the simplex.

    ``F[i, k]`` is component i at node k.  Returns ``(value, nu, gap, iterations,
    converged)`` for the best of several vertex starts.
    """
    K = F.shape[0]
    rng = rng if rng is not None else np.random.default_rng(0)
    first = rng.choice(K, size=min(starts, K), replace=False)
    best = None
    for v in first:
        nu = np.zeros(K)
        nu[v] = 1.0
        it, gap = 0, math.inf
        for it in range(1, max_iter + 1):
            grad = _gradient(f0v, F, w, nu)
            s = int(np.argmax(grad))
            gap = float(grad[s] - grad @ nu)
            if gap < tol:
                break
            active = np.flatnonzero(nu > 0)
            a = int(active[np.argmin(grad[active])])
            if a == s:
                break
            tmax = nu[a]
            direction = F[s] - F[a]
            base = nu @ F

            def neg(t):
                return -float(w @ np.sqrt(f0v * np.maximum(base + t * direction, 0.0)))

            res = optimize.minimize_scalar(neg, bounds=(0.0, tmax), method="bounded", options={"xatol": 1e-13})
            t = res.x if neg(res.x) <= neg(tmax) else tmax
            nu[s] += t
            nu[a] -= t
            if nu[a] < 1e-15:
                nu[a] = 0.0
            nu /= nu.sum()
        grad = _gradient(f0v, F, w, nu)
        gap = max(float(grad.max() - grad @ nu), 0.0)
        value = _objective(f0v, F, w, nu)
        cand = (value, nu.copy(), gap, it, gap < tol)
        if best is None or value > best[0] + 1e-15 or (abs(value - best[0]) <= 1e-15 and gap < best[2]):
            best = cand
    return best


def max_mixture_affinity(
    theta0: Density,
    components: Sequence[Density],
    *,
    max_iter: int = 500,
    tol: float = 1e-6,
    starts: int = 5,
    rng: np.random.Generator | None = None,
) -> MixtureAffinity:
    """Supremum over mixing measures on the components of Aff(theta0, mixture)."""
    components = tuple(components)
    if not components:
        raise ValueError("A must be nonempty")
    nodes, w = quadrature_nodes((theta0,) + components)
    f0v = theta0._pdf(nodes)
    F = np.vstack([c._pdf(nodes) for c in components])
    value, nu, gap, iters, ok = maximize_mixture_affinity(
        f0v, F, w, max_iter=max_iter, tol=tol, starts=starts, rng=rng
    )
    return MixtureAffinity(min(value, 1.0), MixingWeights(components, nu), gap, iters, ok)


def certify(
    prior: DiscretizedPrior, A: SubsetSelector, theta0: Density, method: str = "mixture-maximization", **kw
) -> SeparationCertificate:
    """Certificate for A built from the mixture maximizer; delta is estimate + gap."""
    comps = [p.density for p in prior.support if p.id in A.ids]
    if not comps:
        return SeparationCertificate(A, theta0, 0.0, method, delta_hat=0.0, notes={"vacuous": True})
    res = max_mixture_affinity(theta0, comps, **kw)
    delta = min(res.delta_hat + res.gap, 1.0)
    notes = {"converged": res.converged, "iterations": res.iterations}
    return SeparationCertificate(A, theta0, delta, method, delta_hat=res.delta_hat, gap=res.gap, notes=notes)


def l1_ball_certificate(
    theta_star: Density, delta_star: float, theta0: Density, grid: DiscretizedPrior, **kw
) -> SeparationCertificate:
    """Certificate for the grid points of the L1 ball of radius delta*/2 about theta*.

    Requires ``||f* - f0|| > delta*``.  Besides the numeric delta the notes carry
    the analytic bound from ``||q - f0|| > ||f* - f0|| - delta*/2`` and
    ``Aff <= sqrt(1 - L1^2 / 4)``.
    """
    dist = l1_distance(theta_star, theta0)
    if not dist > delta_star:
        raise ValueError(f"need ||f* - f0|| > delta*, got {dist:.6g} <= {delta_star:.6g}")
    A = SubsetSelector.where(grid, lambda p: l1_distance(theta_star, p.density) < delta_star / 2)
    cert = certify(grid, A, theta0, method="l1-ball", **kw)
    floor = dist - delta_star / 2
    cert.notes.update(
        {
            "l1_center_to_truth": dist,
            "mixture_l1_lower_bound": floor,
            "analytic_delta": math.sqrt(max(1.0 - floor * floor / 4.0, 0.0)),
        }
    )
    return cert


def _expectation(d: Density, g: Callable, tol: float = 1e-10) -> float:
    lo, hi = d.effective_range()
    pts = [p for p in d.breakpoints() if lo < p < hi]
    val, _ = integrate.quad(
        lambda x: float(g(x)) * float(d._pdf(np.asarray(x))), lo, hi, points=pts or None, epsabs=tol, limit=200
    )
    return val


def weak_functional_set(g: Callable, eps: float, theta0: Density, grid: DiscretizedPrior) -> SubsetSelector:
    """Grid points whose g-moment exceeds theta0's by at least eps (|g| <= 1)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    lo, hi = theta0.effective_range()
    for p in grid.support:
        a, b = p.density.effective_range()
        lo, hi = min(lo, a), max(hi, b)
    probe = np.linspace(lo, hi, 2001)
    if np.max(np.abs(np.vectorize(g)(probe))) > 1 + 1e-12:
        raise ValueError("g must be bounded by 1 in absolute value")
    if eps > 2:
        return SubsetSelector()
    m0 = _expectation(theta0, g)
    return SubsetSelector.where(grid, lambda p: _expectation(p.density, g) - m0 >= eps)


# -------------------------------------------------------- Monte Carlo affinity


class MCEstimate(NamedTuple):
    value: float
    se: float
    draws: int


def _ratio_draws(theta0, components, n, rng, budget, chunk):
    """Yield per-chunk cumulative log ratios ``L[s, i, t]`` for t = 1..n."""
    left = budget
    while left > 0:
        m = min(chunk, left)
        x = theta0.sample(rng, (m, n))
        l0 = theta0.logpdf(x)
        L = np.stack([c.logpdf(x) - l0 for c in components], axis=1)
        yield np.cumsum(L, axis=2)
        left -= m


def product_affinity_table(
    theta0: Density,
    nus: Sequence[MixingWeights],
    n_values: Sequence[int],
    rng: np.random.Generator,
    budget: int = 10**6,
    chunk: int = 100_000,
):
    """MC estimates of Aff(f0^(n), q_nu^(n)) for every nu and n on common draws.

    Returns ``(values, ses)`` with shape ``(len(nus), len(n_values))``.
    """
    n_values = [int(n) for n in n_values]
    if max(n_values) > 6 or min(n_values) < 0:
        raise ValueError("direct product affinity is capped at n <= 6")
    comps = nus[0].components
    if any(nu.components != comps for nu in nus):
        raise ValueError("all mixing measures must share components")
    W = np.stack([nu.weights for nu in nus])  # (V, K)
    nmax = max(max(n_values), 1)
    s1 = np.zeros((len(nus), len(n_values)))
    s2 = np.zeros_like(s1)
    total = 0
    with np.errstate(divide="ignore"):
        for L in _ratio_draws(theta0, comps, nmax, rng, budget, chunk):
            total += L.shape[0]
            for j, n in enumerate(n_values):
                if n == 0:
                    s1[:, j] += L.shape[0]
                    s2[:, j] += L.shape[0]
                    continue
                Ln = L[:, :, n - 1]  # (S, K)
                top = Ln.max(axis=1, keepdims=True)
                top[~np.isfinite(top)] = 0.0
                val = np.sqrt(np.exp(Ln - top) @ W.T) * np.exp(0.5 * top)  # (S, V)
                s1[:, j] += val.sum(axis=0)
                s2[:, j] += (val * val).sum(axis=0)
    mean = s1 / total
    var = np.maximum(s2 / total - mean * mean, 0.0)
    return mean, np.sqrt(var / total)


def product_affinity(
    theta0: Density,
    nu: MixingWeights,
    n: int,
    rng: np.random.Generator,
    budget: int = 10**6,
    target_se: float | None = None,
) -> MCEstimate:
    """Aff between the n-fold product of theta0 and the n-fold mixture marginal.

    Importance estimate ``E_{f0} sqrt(q_nu^(n) / f0^(n))``; the integrand has
    second moment 1, so the standard error is at most ``budget**-0.5``.
    """
    v, s = product_affinity_table(theta0, [nu], [n], rng, budget)
    value, se = float(v[0, 0]), float(s[0, 0])
    if target_se is not None and se > target_se:
        raise RuntimeError(f"MC budget {budget} exhausted with SE {se:.3g} above target {target_se:.3g}")
    return MCEstimate(value, se, budget)


def schwartz_identity(
    prior: DiscretizedPrior, A: SubsetSelector, theta0: Density, n: int, rng: np.random.Generator, budget: int = 200_000
):
    """Both sides of ``E sqrt(J_A) = sqrt(Pi(A)) Aff(f0^(n), q_{Pi*}^(n))`` by independent MC.

    Returns ``(lhs, rhs)`` as MCEstimates.  The left side goes through the
    prior's likelihood matrix, the right side through product_affinity with the
    restricted, renormalized prior.
    """
    m = prior.mask(A)
    lw = prior.normalized_log_weights()
    densities = prior.densities
    comps = [d for d, keep in zip(densities, m) if keep]
    x = theta0.sample(rng, (budget, n))
    l0 = theta0.logpdf(x).sum(axis=1)
    logJ = np.full(budget, -math.inf)
    for d, lwi in zip(comps, lw[m]):
        logJ = np.logaddexp(logJ, lwi + d.logpdf(x).sum(axis=1) - l0)
    vals = np.exp(0.5 * logJ)
    lhs = MCEstimate(float(vals.mean()), float(vals.std() / math.sqrt(budget)), budget)
    mass_A = float(np.exp(logsumexp(lw[m])))
    nu = MixingWeights(tuple(comps), np.exp(lw[m]) / mass_A)
    est = product_affinity(theta0, nu, n, rng, budget)
    rhs = MCEstimate(math.sqrt(mass_A) * est.value, math.sqrt(mass_A) * est.se, budget)
    return lhs, rhs


# ------------------------------------------------------------- decay bounds


def schwartz_decay_bound(cert: SeparationCertificate, prior_mass_A: float, n: int, gamma: float | None = None) -> float:
    """``sqrt(Pi(A)) exp(n (gamma - beta0))``; gamma defaults to beta0 / 4."""
    beta0 = cert.beta0
    if gamma is None:
        gamma = beta0 / 4
    if not 0 < gamma < beta0:
        raise ValueError("gamma must lie in (0, beta0)")
    if not 0 <= prior_mass_A <= 1:
        raise ValueError("prior mass of A must lie in [0, 1]")
    if math.isinf(beta0):
        return math.sqrt(prior_mass_A) if n == 0 else 0.0
    return math.sqrt(prior_mass_A) * math.exp(n * (gamma - beta0))


def walker_decay_bound(cover_masses, beta0: float, n: int, gamma: float | None = None, truncation: int = 2**20) -> float:
    """``exp(n (gamma - beta0)) * sum_i sqrt(Pi(A_i))``.

    ``cover_masses`` is a finite sequence or a callable ``i -> Pi(A_i)`` for an
    infinite cover (i = 1, 2, ...); a divergent square-root sum raises ValueError.
    """
    if gamma is None:
        gamma = beta0 / 4
    if not 0 < gamma < beta0:
        raise ValueError("gamma must lie in (0, beta0)")
    res = sqrt_mass_sum(cover_masses, truncation=truncation)
    if not res.finite:
        raise ValueError("sum of square-root cover masses diverges")
    return math.exp(n * (gamma - beta0)) * (res.total + res.remainder_bound)


# ------------------------------------------------------------ uniform SLLN


def uniform_slln_statistic(A: Sequence[Density], theta0: Density, sample) -> float:
    """``max_{theta in A} |mean sqrt(f_theta / f0) - Aff(f0, f_theta)|`` over a finite A."""
    x = _as_array(sample)
    return max(abs(root_likelihood_ratio_mean(theta0, f, x) - affinity(theta0, f)) for f in A)


class NumeratorBound(NamedTuple):
    J_A: float
    bound: float
    log_J_A: float
    log_bound: float
    s_bar: float


def root_mean_numerator_bound(
    A: SubsetSelector, theta0: Density, prior: DiscretizedPrior, sample
) -> NumeratorBound:
    """``J_A`` and the bound ``Pi(A) exp(2n (s_bar - 1))`` from ``log x <= x - 1``.

    ``s_bar`` is the largest empirical root likelihood ratio mean over A.
    """
    x = _as_array(sample)
    n = x.size
    m = prior.mask(A)
    if not m.any():
        return NumeratorBound(0.0, 0.0, -math.inf, -math.inf, math.nan)
    l0 = theta0.logpdf(x)
    if np.any(np.isneginf(l0)):
        raise SupportViolation("theta0 density vanishes at a sample point")
    comps = [d for d, keep in zip(prior.densities, m) if keep]
    lw = prior.normalized_log_weights()[m]
    ll = log_likelihood_matrix(comps, x) - l0[None, :]
    log_J_A = float(logsumexp(lw + ll.sum(axis=1)))
    s = np.exp(0.5 * ll).mean(axis=1)
    s_bar = float(s.max())
    log_bound = float(logsumexp(lw)) + 2 * n * (s_bar - 1.0)
    if log_J_A > log_bound + 1e-9 * max(1.0, abs(log_bound)):
        raise AssertionError(f"log J_A = {log_J_A} exceeds log bound {log_bound}")
    return NumeratorBound(math.exp(log_J_A), math.exp(log_bound), log_J_A, log_bound, s_bar)


# ------------------------------------------------- uniform-SLLN test


@dataclass(frozen=True, eq=False)
class SllnTestResult:
    indicator: Callable[[np.ndarray], np.ndarray]
    delta: float
    delta0: float
    n: int
    p_theta0: float
    se_theta0: float
    p_theta: np.ndarray
    se_theta: np.ndarray
    beta_literal: float  # delta + delta0
    beta_derived: float  # 1 - delta - delta0

    def bound(self, beta: float) -> float:
        return self.p_theta0 * math.exp(-2 * self.n * beta)

    def holds(self, beta: float) -> bool:
        return bool(np.all(self.p_theta <= self.bound(beta) + 3 * self.se_theta))


def uniform_slln_test(
    A: Sequence[Density],
    theta0: Density,
    n: int,
    delta0: float,
    mc_budget: int,
    rng: np.random.Generator,
    chunk: int = 50_000,
) -> SllnTestResult:
    """Acceptance region C of the uniform-SLLN test and its MC error rates.

    ``C`` holds the datasets whose root likelihood ratio means all sit within
    delta0 of the corresponding affinities.  Its probability under theta0 and
    under every theta in A is estimated from ``mc_budget`` datasets each.
    """
    A = tuple(A)
    affs = np.array([affinity(theta0, f) for f in A])
    delta = float(affs.max())
    if not delta + delta0 < 1:
        raise ValueError(f"need delta + delta0 < 1, got {delta:.4g} + {delta0:.4g}")

    def indicator(data) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        l0 = theta0.logpdf(data)
        if np.any(np.isneginf(l0)):
            raise SupportViolation("theta0 density vanishes at a sample point")
        worst = np.zeros(data.shape[0])
        for f, a in zip(A, affs):
            s = np.exp(0.5 * (f.logpdf(data) - l0)).mean(axis=1)
            worst = np.maximum(worst, np.abs(s - a))
        return worst < delta0

    def estimate(law: Density):
        hits, left = 0, mc_budget
        while left > 0:
            m = min(chunk, left)
            hits += int(indicator(law.sample(rng, (m, n))).sum())
            left -= m
        p = hits / mc_budget
        return p, math.sqrt(p * (1 - p) / mc_budget)

    p0, se0 = estimate(theta0)
    pt = np.array([estimate(f) for f in A])
    return SllnTestResult(
        indicator, delta, delta0, n, p0, se0, pt[:, 0], pt[:, 1], delta + delta0, 1 - delta - delta0
    )
