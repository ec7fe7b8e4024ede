"""Independent, non-identically distributed models.

Fixed-design and random-design regression, per-index affinities, coefficient
box covers for orthogonal-series regression, product-affinity diagnostics for
Gaussian sequence models, and residual-exceedance statistics that identify
the parameters of a linear model with symmetric noise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp, zeta

from .densities import SymmetricNoise
from .separation import SeparationCertificate, maximize_mixture_affinity
from .priors import SubsetSelector

__all__ = [
    "DesignPoints",
    "SeriesRegressionModel",
    "LinearSemiparametricModel",
    "CoefficientBox",
    "RegressionSample",
    "AssumptionACheck",
    "KakutaniTrace",
    "Witness",
    "cosine_basis",
    "box_widths",
    "coefficient_box_cover",
    "generate_regression_data",
    "per_index_affinity",
    "noniid_numerator_trace",
    "series_mixture_certificate",
    "assumption_a_check",
    "kakutani_product_affinity",
    "doob_identification_statistic",
    "separation_witness",
]

SQRT2 = math.sqrt(2.0)


# ----------------------------------------------------------------- designs


@dataclass(frozen=True)
class DesignPoints:
    """Deterministic design ``x_1, ..., x_horizon``.

    kinds: ``explicit`` (``values``), ``power-decay`` (``a * i**-p``),
    ``alternating`` (``+a, -a, +a, ...``) and ``periodic`` (``values`` repeated).
    """

    kind: str
    horizon: int
    values: tuple[float, ...] = ()
    a: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind not in ("explicit", "power-decay", "alternating", "periodic"):
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.kind == "explicit" and len(self.values) < self.horizon:
            raise ValueError("explicit design shorter than its horizon")
        if self.kind == "periodic" and not self.values:
            raise ValueError("periodic design needs a pattern")
        if self.kind == "power-decay" and self.p < 0:
            raise ValueError("power-decay exponent must be nonnegative")

    @classmethod
    def explicit(cls, values) -> "DesignPoints":
        values = tuple(values)
        return cls("explicit", len(values), values)

    @classmethod
    def power_decay(cls, horizon: int, a: float = 1.0, p: float = 1.0) -> "DesignPoints":
        return cls("power-decay", horizon, a=a, p=p)

    @classmethod
    def alternating(cls, horizon: int, a: float = 1.0) -> "DesignPoints":
        return cls("alternating", horizon, a=a)

    @classmethod
    def periodic(cls, pattern, horizon: int) -> "DesignPoints":
        return cls("periodic", horizon, tuple(pattern))

    def points(self, n: int | None = None) -> np.ndarray:
        n = self.horizon if n is None else n
        if n > self.horizon:
            raise ValueError(f"design only defined up to {self.horizon}")
        i = np.arange(1, n + 1, dtype=float)
        if self.kind == "explicit":
            return np.array(self.values[:n])
        if self.kind == "power-decay":
            return self.a * i ** (-self.p)
        if self.kind == "alternating":
            return np.where(i % 2 == 1, self.a, -self.a)
        return np.resize(np.array(self.values), n)


# ------------------------------------------------------------------ models


def cosine_basis(x, J: int) -> np.ndarray:
    """``phi_j(x) = sqrt(2) cos(j pi x)`` for j = 1..J, shape ``(J, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    j = np.arange(1, J + 1)[:, None]
    return SQRT2 * np.cos(j * np.pi * x[None, :])


@dataclass(frozen=True)
class SeriesRegressionModel:
    """``Y = eta(X) + eps`` with ``eta = sum_j eta_j phi_j`` on [0, 1] and N(0, 1) noise."""

    coefficients: tuple[float, ...]
    noise: SymmetricNoise = field(default_factory=SymmetricNoise)
    basis_bound: float = field(default=SQRT2, init=False)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def J(self) -> int:
        return len(self.coefficients)

    def mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise ValueError("series model is defined on [0, 1]")
        if not self.coefficients:
            return np.zeros(np.shape(x))
        return (np.asarray(self.coefficients) @ cosine_basis(x.ravel(), self.J)).reshape(np.shape(x))


@dataclass(frozen=True)
class LinearSemiparametricModel:
    """``Y_i = alpha + beta x_i + eps_i`` with a symmetric noise law."""

    alpha: float
    beta: float
    noise: SymmetricNoise = field(default_factory=SymmetricNoise)

    def __post_init__(self):
        if not isinstance(self.noise, SymmetricNoise):
            raise TypeError("noise must be a SymmetricNoise (symmetric, continuous at 0, positive there)")

    def mean(self, x) -> np.ndarray:
        return self.alpha + self.beta * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class CoefficientBox:
    """``{psi : n_j w_j < psi_j < (n_j + 1) w_j}``; ``diameter_bound`` caps the L1 diameter it induces."""

    n: tuple[int, ...]
    widths: tuple[float, ...]
    diameter_bound: float = math.nan

    def __post_init__(self):
        if len(self.n) != len(self.widths):
            raise ValueError("one width per coordinate")
        if any(not w > 0 for w in self.widths):
            raise ValueError("box widths must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.n) * np.asarray(self.widths)

    @property
    def upper(self) -> np.ndarray:
        return (np.asarray(self.n) + 1) * np.asarray(self.widths)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, psi) -> bool:
        psi = np.asarray(psi, dtype=float)
        return bool(np.all((self.lower < psi) & (psi < self.upper)))


def box_widths(delta: float, J: int) -> tuple[float, ...]:
    """Geometric widths ``delta * 2**-j``, j = 1..J, so their sum stays below delta."""
    return tuple(delta * 2.0 ** (-j) for j in range(1, J + 1))


def coefficient_box_cover(J: int, delta_js, bound: float) -> list[CoefficientBox]:
    """All boxes meeting the cube ``[-bound, bound]^J``.

    Two series models in one box have mean functions within ``sqrt(2) sum_j w_j``
    in sup norm, and two unit Gaussians with means d apart are
    ``2 erf(d / (2 sqrt 2)) <= d sqrt(2/pi)`` apart in L1, which gives the
    recorded diameter bound ``(2 / sqrt(pi)) sum_j w_j``.
    """
    widths = tuple(float(w) for w in delta_js)
    if len(widths) != J or any(not w > 0 for w in widths):
        raise ValueError("need J positive widths")
    if not 0 < bound < math.inf:
        raise ValueError("bound must be positive and finite")
    diam = 2 / math.sqrt(math.pi) * sum(widths)
    ranges = [range(math.floor(-bound / w), math.ceil(bound / w)) for w in widths]
    return [CoefficientBox(tuple(n), widths, diam) for n in itertools.product(*ranges)]


# --------------------------------------------------------------------- data


class RegressionSample(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def generate_regression_data(model, n: int, rng: np.random.Generator, design: DesignPoints | None = None):
    """Draw ``(x_i, y_i)``: uniform X for series models, the fixed design for linear ones."""
    if isinstance(model, SeriesRegressionModel):
        x = rng.random(n) if design is None else design.points(n)
    else:
        if design is None:
            raise ValueError("linear model needs a design")
        x = design.points(n)
    y = model.mean(x) + model.noise.sample(rng, n)
    return RegressionSample(x, y)


def _is_gaussian(noise: SymmetricNoise) -> bool:
    return noise.kind == "standard-normal"


def per_index_affinity(x: float, model, model0) -> float:
    """Affinity between the laws of Y at design point x under two models."""
    d = float(model.mean(x) - model0.mean(x))
    if _is_gaussian(model.noise) and _is_gaussian(model0.noise):
        return math.exp(-d * d / 8)
    f, g = model.noise, model0.noise

    def integrand(u):
        return math.sqrt(f._pdf(np.array(u - d))[()] * g._pdf(np.array(u))[()])

    pts = sorted({0.0, d})
    lo, hi = pts[0], pts[-1]
    total = integrate.quad(integrand, -np.inf, lo, epsabs=1e-12, epsrel=0, limit=200)[0]
    if hi > lo:
        total += integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=0, limit=200)[0]
    total += integrate.quad(integrand, hi, np.inf, epsabs=1e-12, epsrel=0, limit=200)[0]
    return min(total, 1.0)


def _loglik(model, x, y) -> np.ndarray:
    return model.noise.logpdf(y - model.mean(x))


def noniid_numerator_trace(models: Sequence, weights, A, theta0, x, y, checkpoints=None) -> np.ndarray:
    """``log int_A prod_{i<=n} f_{i,theta}(y_i) / f_{i,theta0}(y_i) Pi(d theta)`` for each checkpoint n.

    ``A`` is an iterable of model indices; ``weights`` are normalized internally.
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    cps = np.arange(x.size + 1) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    idx = sorted(set(int(a) for a in A))
    l0 = _loglik(theta0, x, y)
    if not np.all(np.isfinite(l0)):
        raise ValueError("theta0 assigns zero density to an observation")
    if not idx:
        return np.full(cps.size, -math.inf)
    ll = np.vstack([_loglik(models[i], x, y) - l0 for i in idx])
    cum = np.concatenate([np.zeros((len(idx), 1)), np.cumsum(ll, axis=1)], axis=1)[:, cps]
    with np.errstate(divide="ignore"):
        lw = np.log(w[idx])
    return logsumexp(lw[:, None] + cum, axis=0)


def series_mixture_certificate(
    models: Sequence[SeriesRegressionModel],
    model0: SeriesRegressionModel,
    x_nodes: int = 48,
    y_nodes: int = 96,
    **fw,
) -> SeparationCertificate:
    """Separation certificate for a set of series models against model0.

    The joint density of (X, Y) is ``phi(y - eta(x))`` on [0,1] x R; the mixture
    affinity is maximized on a tensor Gauss-Legendre grid over x and a window of
    y wide enough that the Gaussian tails beyond it are below 1e-16.
    """
    models = tuple(models)
    if not models:
        raise ValueError("need at least one model")
    gx, wx = np.polynomial.legendre.leggauss(x_nodes)
    xs, wxs = 0.5 * (gx + 1), 0.5 * wx
    means = np.vstack([m.mean(xs) for m in (model0,) + models])
    lo, hi = means.min() - 8.6, means.max() + 8.6
    edges = np.linspace(lo, hi, 9)
    gy, wy = np.polynomial.legendre.leggauss(y_nodes // 8)
    ys = np.concatenate([0.5 * (b - a) * gy + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    wys = np.concatenate([0.5 * (b - a) * wy for a, b in zip(edges[:-1], edges[1:])])
    W = (wxs[:, None] * wys[None, :]).ravel()
    dens = np.exp(-0.5 * (ys[None, None, :] - means[:, :, None]) ** 2) / math.sqrt(2 * math.pi)
    dens = dens.reshape(len(means), -1)
    value, nu, gap, iters, ok = maximize_mixture_affinity(dens[0], dens[1:], W, **fw)
    delta = min(value + gap, 1.0)
    return SeparationCertificate(
        SubsetSelector.of(range(len(models))),
        None,
        delta,
        "mixture-maximization",
        delta_hat=value,
        gap=gap,
        notes={"iterations": iters, "converged": ok, "weights": nu.tolist()},
    )


# -------------------------------------------------------------- design checks


class AssumptionACheck(NamedTuple):
    count_below: int
    count_above: int
    verdict: str  # certified | certified-false | empirical-only
    consistent: bool  # both counts grow at least linearly along the checkpoints


def assumption_a_check(design: DesignPoints, eps0: float, horizon: int | None = None, rho: float = 0.05):
    """Counts of design points below ``-eps0`` and above ``eps0``.

    Divergence of both counts is decided analytically where the generator
    allows it; explicit lists only get the empirical linear-growth test at
    checkpoints ``horizon / 4, horizon / 2, horizon``.
    """
    horizon = design.horizon if horizon is None else horizon
    x = design.points(horizon)
    below, above = int(np.sum(x < -eps0)), int(np.sum(x > eps0))
    consistent = True
    for frac in (4, 2, 1):
        m = max(horizon // frac, 1)
        xm = x[:m]
        if np.sum(xm < -eps0) < rho * m or np.sum(xm > eps0) < rho * m:
            consistent = False
    if design.kind == "alternating":
        verdict = "certified" if abs(design.a) > eps0 else "certified-false"
    elif design.kind == "periodic":
        pat = np.asarray(design.values)
        verdict = "certified" if np.any(pat > eps0) and np.any(pat < -eps0) else "certified-false"
    elif design.kind == "power-decay":
        # p > 0: x_i -> 0, so each side is hit finitely often; p = 0: constant, one side never
        verdict = "certified-false"
    else:
        verdict = "empirical-only"
    return AssumptionACheck(below, above, verdict, consistent)


class KakutaniTrace(NamedTuple):
    n: np.ndarray
    log_affinity: np.ndarray
    limit: float
    tail_bound: float  # bound on |partial product at horizon - limit|
    classification: str  # equivalent | orthogonal | undetermined

    @property
    def affinity(self) -> np.ndarray:
        return np.exp(self.log_affinity)


def kakutani_product_affinity(design: DesignPoints, beta1: float, beta2: float, horizon: int | None = None):
    """Affinities ``prod_{i<=n} exp(-(beta1 - beta2)^2 x_i^2 / 8)`` of the product laws.

    The infinite product is positive iff ``sum x_i^2 < inf``.  For power-decay
    designs with ``2p > 1`` the limit is closed form via zeta(2p) and the
    tail ``sum_{i>n} i^-2p < n^{1-2p} / (2p-1)`` bounds the truncation error.
    """
    horizon = design.horizon if horizon is None else horizon
    x = design.points(horizon)
    c = (beta1 - beta2) ** 2 / 8
    log_aff = -c * np.cumsum(x * x)
    n = np.arange(1, horizon + 1)
    if c == 0:
        return KakutaniTrace(n, log_aff, 1.0, 0.0, "equivalent")
    if design.kind == "power-decay":
        if design.a == 0:
            return KakutaniTrace(n, log_aff, 1.0, 0.0, "equivalent")
        q = 2 * design.p
        if q > 1:
            limit = math.exp(-c * design.a**2 * float(zeta(q)))
            tail = design.a**2 * horizon ** (1 - q) / (q - 1)
            err = math.exp(log_aff[-1]) * -math.expm1(-c * tail)
            return KakutaniTrace(n, log_aff, limit, err, "equivalent")
        return KakutaniTrace(n, log_aff, 0.0, math.exp(log_aff[-1]), "orthogonal")
    if design.kind in ("alternating", "periodic"):
        if np.any(np.asarray(design.values or (design.a,)) != 0):
            return KakutaniTrace(n, log_aff, 0.0, math.exp(log_aff[-1]), "orthogonal")
        return KakutaniTrace(n, log_aff, 1.0, 0.0, "equivalent")
    return KakutaniTrace(n, log_aff, math.nan, math.nan, "undetermined")


# ----------------------------------------------------- identification statistics


def _subsequence_mask(x: np.ndarray, subsequence: str, eps0: float) -> np.ndarray:
    if subsequence == "all":
        return np.ones(x.size, dtype=bool)
    if subsequence == "N1":
        return x > eps0
    if subsequence == "M1":
        return x < -eps0
    raise ValueError(f"unknown subsequence {subsequence!r}")


def doob_identification_statistic(
    x, y, candidate: LinearSemiparametricModel, t: float, subsequence: str = "all", eps0: float = 0.5
) -> float:
    """Fraction of residuals ``y_i - (alpha + beta x_i)`` above t over the chosen indices.

    ``N1`` keeps ``x_i > eps0``, ``M1`` keeps ``x_i < -eps0``.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    m = _subsequence_mask(x, subsequence, eps0)
    if not m.any():
        raise ValueError(f"subsequence {subsequence} is empty for eps0={eps0}")
    return float(np.mean(y[m] - candidate.mean(x[m]) > t))


@dataclass(frozen=True)
class Witness:
    """A threshold t and index subsequence on which two candidates predict different exceedance rates.

    ``p_true``/``p_other`` are the exceedance probabilities of A_t under each
    candidate's own noise law.  For a location mismatch, ``mismatch_side`` says
    whether the statistic computed under the wrong candidate tends to at least
    1/2 (``">="``) or at most 1/2 (``"<="``).
    """

    case: str  # noise | location
    t: float
    subsequence: str
    gap: float
    p_true: float
    p_other: float
    mismatch_side: str | None = None
    resolution: float | None = None


def separation_witness(
    true: LinearSemiparametricModel,
    other: LinearSemiparametricModel,
    eps0: float = 0.5,
    grid=(-5.0, 5.0, 0.01),
) -> Witness:
    """Threshold that tells ``other`` apart from the data-generating ``true`` candidate."""
    da, db = true.alpha - other.alpha, true.beta - other.beta
    f1, f2 = true.noise, other.noise
    if da == 0 and db == 0:
        if f1 == f2:
            raise ValueError("candidates are identical")
        lo, hi, step = grid
        ts = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
        diff = np.abs(f1.sf(ts) - f2.sf(ts))
        k = int(np.argmax(diff))
        if diff[k] < 1e-12:
            raise ValueError(f"noise laws indistinguishable on the t grid (resolution {step})")
        t = float(round(ts[k], 10))
        return Witness("noise", t, "all", float(diff[k]), float(f1.sf(t)), float(f2.sf(t)), resolution=step)
    if db == 0:
        # shift da on every index
        eta, sub, shift_sign = abs(da) / 2, "all", np.sign(da)
        gap = abs(da)
    else:
        gap = abs(db) if da == 0 else min(abs(da), abs(db))
        eta = gap * eps0 / 2
        # on N1 the shift da + db x has the sign of db once da shares it; otherwise use M1
        if da == 0 or np.sign(da) == np.sign(db):
            sub, shift_sign = "N1", np.sign(db)
        else:
            sub, shift_sign = "M1", np.sign(da)
    t = float(eta if shift_sign > 0 else -eta)
    side = ">=" if shift_sign > 0 else "<="
    return Witness("location", t, sub, float(gap), float(f1.sf(t)), float(f2.sf(t)), mismatch_side=side)
