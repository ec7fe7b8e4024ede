"""Density families on the line and divergences between them.

Every family is a frozen dataclass carrying its dominating measure.  Affinity,
Hellinger, Kullback-Leibler and L1 computations use closed forms where they
exist, exact cell sums for piecewise-constant pairs, and adaptive
Gauss-Kronrod quadrature (QUADPACK via scipy) otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

__all__ = [
    "DomainError",
    "SupportViolation",
    "QuadratureError",
    "MeasureDescriptor",
    "Density",
    "NormalLocation",
    "Histogram",
    "SpikedUniform",
    "SymmetricNoise",
    "EmpiricalSample",
    "DivergenceValue",
    "uniform",
    "pdf",
    "logpdf",
    "sample",
    "log_likelihood_matrix",
    "divergence",
    "affinity",
    "hellinger_sq",
    "kl_divergence",
    "l1_distance",
    "root_likelihood_ratio_mean",
]

# a density is considered negligible below this fraction of its peak
TAIL_REL = 1e-16
_LOG_TAIL = -math.log(TAIL_REL)


class DomainError(ValueError):
    """Point or density pair outside the admissible domain."""


class SupportViolation(ValueError):
    """A reference density vanishes where it must be positive."""


class QuadratureError(RuntimeError):
    def __init__(self, message: str, value: float, abserr: float):
        super().__init__(f"{message} (value={value!r}, achieved error={abserr:.3g})")
        self.value = value
        self.abserr = abserr


@dataclass(frozen=True)
class MeasureDescriptor:
    """Lebesgue measure on an interval or on the whole line, plus quadrature hints."""

    kind: str = "real-line"
    lo: float = -math.inf
    hi: float = math.inf
    max_subdivisions: int = 200
    abs_tol: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("interval", "real-line"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "interval" and not (self.lo < self.hi):
            raise ValueError("interval measure needs lo < hi")
        if self.kind == "real-line" and (self.lo != -math.inf or self.hi != math.inf):
            raise ValueError("real-line measure cannot carry finite bounds")
        if not self.abs_tol > 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")

    @classmethod
    def interval(cls, lo: float, hi: float, **hints) -> "MeasureDescriptor":
        return cls("interval", float(lo), float(hi), **hints)

    @classmethod
    def real_line(cls, **hints) -> "MeasureDescriptor":
        return cls("real-line", **hints)

    def same_domain(self, other: "MeasureDescriptor") -> bool:
        return (self.kind, self.lo, self.hi) == (other.kind, other.lo, other.hi)

    def check(self, x: np.ndarray) -> None:
        if self.kind == "interval":
            bad = (x < self.lo) | (x > self.hi) | np.isnan(x)
            if np.any(bad):
                raise DomainError(
                    f"point {np.asarray(x)[bad].flat[0]!r} outside [{self.lo}, {self.hi}]"
                )


UNIT_INTERVAL = MeasureDescriptor.interval(0.0, 1.0)
REAL_LINE = MeasureDescriptor.real_line()


class Density:
    """Shared behaviour of the concrete families below."""

    measure: MeasureDescriptor

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _logpdf(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._pdf(x))

    def pdf(self, x):
        arr = np.asarray(x, dtype=float)
        self.measure.check(arr)
        out = self._pdf(arr)
        return float(out) if out.ndim == 0 else out

    def logpdf(self, x):
        arr = np.asarray(x, dtype=float)
        self.measure.check(arr)
        out = self._logpdf(arr)
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Points where the pdf may be discontinuous or sharply peaked."""
        return ()

    def effective_range(self) -> tuple[float, float]:
        """Finite range outside which the pdf is below ``TAIL_REL`` of its peak."""
        return self.measure.lo, self.measure.hi

    def cells(self):
        """``(breaks, heights)`` for piecewise-constant families, else ``None``."""
        return None


@dataclass(frozen=True)
class NormalLocation(Density):
    mu: float = 0.0
    sigma: float = 1.0
    measure: MeasureDescriptor = field(default=REAL_LINE, repr=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def _pdf(self, x):
        return np.exp(self._logpdf(x))

    def _logpdf(self, x):
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * math.log(2 * math.pi)

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.sigma, size)

    def breakpoints(self):
        return (self.mu,)

    def effective_range(self):
        half = self.sigma * math.sqrt(2 * _LOG_TAIL)
        return self.mu - half, self.mu + half


@dataclass(frozen=True)
class Histogram(Density):
    """Piecewise-constant density; bins are ``[b_i, b_{i+1})``, the last one closed."""

    breaks: tuple[float, ...] = (0.0, 1.0)
    heights: tuple[float, ...] = (1.0,)
    measure: MeasureDescriptor = field(default=UNIT_INTERVAL, repr=False)

    def __post_init__(self):
        b = tuple(float(v) for v in self.breaks)
        h = tuple(float(v) for v in self.heights)
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "heights", h)
        if len(b) != len(h) + 1 or len(h) == 0:
            raise ValueError("need len(breaks) == len(heights) + 1 >= 2")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if b[0] < self.measure.lo or b[-1] > self.measure.hi:
            raise ValueError("breakpoints must lie inside the measure's interval")
        if any(v < 0 for v in h):
            raise ValueError("heights must be nonnegative")
        total = math.fsum(w * v for w, v in zip(np.diff(b), h))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"histogram integrates to {total!r}, not 1")

    def _pdf(self, x):
        b = np.asarray(self.breaks)
        h = np.append(np.asarray(self.heights), 0.0)
        idx = np.searchsorted(b, x, side="right") - 1
        idx = np.where(x == b[-1], len(self.heights) - 1, idx)
        out = np.where((idx >= 0) & (idx < len(self.heights)), h[np.clip(idx, 0, len(h) - 1)], 0.0)
        return out

    def sample(self, rng, size=None):
        b = np.asarray(self.breaks)
        widths = np.diff(b)
        p = widths * np.asarray(self.heights)
        p = p / p.sum()
        n = 1 if size is None else size
        i = rng.choice(len(p), size=n, p=p)
        x = b[i] + widths[i] * rng.random(n)
        return float(x[0]) if size is None else x

    def breakpoints(self):
        return self.breaks

    def cells(self):
        return self.breaks, self.heights


def uniform() -> Histogram:
    """The uniform density on [0, 1]."""
    return Histogram((0.0, 1.0), (1.0,))


@dataclass(frozen=True)
class SpikedUniform(Density):
    """``(1 - eps) + eps*m`` on ``[0, 1/m]`` and ``1 - eps`` on ``(1/m, 1]``."""

    eps: float = 0.2
    m: int = 2
    measure: MeasureDescriptor = field(default=UNIT_INTERVAL, repr=False)

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError("m must be an integer >= 2")
        if (self.measure.lo, self.measure.hi) != (0.0, 1.0):
            raise ValueError("SpikedUniform lives on [0, 1]")

    def _pdf(self, x):
        flat = 1.0 - self.eps
        return np.where(x <= 1.0 / self.m, flat + self.eps * self.m, flat)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        spike = rng.random(n) < self.eps
        u = rng.random(n)
        x = np.where(spike, u / self.m, u)
        return float(x[0]) if size is None else x

    def breakpoints(self):
        return (0.0, 1.0 / self.m, 1.0)

    def cells(self):
        flat = 1.0 - self.eps
        return (0.0, 1.0 / self.m, 1.0), (flat + self.eps * self.m, flat)


@dataclass(frozen=True)
class SymmetricNoise(Density):
    """Noise law symmetric about zero: standard normal or Laplace(scale)."""

    kind: str = "standard-normal"
    scale: float = 1.0
    measure: MeasureDescriptor = field(default=REAL_LINE, repr=False)

    def __post_init__(self):
        if self.kind not in ("standard-normal", "laplace"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "standard-normal" and self.scale != 1.0:
            raise ValueError("standard-normal noise has unit scale")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def _logpdf(self, x):
        if self.kind == "standard-normal":
            return -0.5 * x * x - 0.5 * math.log(2 * math.pi)
        return -np.abs(x) / self.scale - math.log(2 * self.scale)

    def _pdf(self, x):
        return np.exp(self._logpdf(x))

    def sf(self, t):
        """``P(eps > t)``."""
        if self.kind == "standard-normal":
            return stats.norm.sf(t)
        return stats.laplace.sf(t, scale=self.scale)

    def sample(self, rng, size=None):
        if self.kind == "standard-normal":
            return rng.standard_normal(size)
        return rng.laplace(0.0, self.scale, size)

    def breakpoints(self):
        return (0.0,)

    def effective_range(self):
        if self.kind == "standard-normal":
            half = math.sqrt(2 * _LOG_TAIL)
        else:
            half = self.scale * _LOG_TAIL
        return -half, half


@dataclass(frozen=True)
class EmpiricalSample:
    observations: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(float(v) for v in self.observations))

    @property
    def n(self) -> int:
        return len(self.observations)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.observations, dtype=float)


def _as_array(xs) -> np.ndarray:
    if isinstance(xs, EmpiricalSample):
        return xs.as_array()
    return np.asarray(xs, dtype=float)


def pdf(d: Density, x):
    return d.pdf(x)


def logpdf(d: Density, x):
    return d.logpdf(x)


def sample(d: Density, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


def log_likelihood_matrix(densities: Sequence[Density], xs) -> np.ndarray:
    """``out[i, t] = log f_i(x_t)``; NormalLocation members are evaluated in one pass."""
    x = _as_array(xs)
    out = np.empty((len(densities), x.size))
    normal = [i for i, d in enumerate(densities) if type(d) is NormalLocation]
    if normal:
        mus = np.array([densities[i].mu for i in normal])[:, None]
        sig = np.array([densities[i].sigma for i in normal])[:, None]
        z = (x[None, :] - mus) / sig
        out[normal] = -0.5 * z * z - np.log(sig) - 0.5 * math.log(2 * math.pi)
    normal_set = set(normal)
    for i, d in enumerate(densities):
        if i not in normal_set:
            out[i] = d.logpdf(x)
    return out


# ---------------------------------------------------------------- divergences


class DivergenceValue(NamedTuple):
    value: float
    abserr: float
    method: str


def _check_pair(f: Density, g: Density) -> MeasureDescriptor:
    if not f.measure.same_domain(g.measure):
        raise DomainError(f"densities live on different domains: {f.measure} vs {g.measure}")
    # the tighter of the two sets of hints wins
    return MeasureDescriptor(
        f.measure.kind,
        f.measure.lo,
        f.measure.hi,
        max(f.measure.max_subdivisions, g.measure.max_subdivisions),
        min(f.measure.abs_tol, g.measure.abs_tol),
    )


def _merged_cells(f: Density, g: Density):
    bf, hf = f.cells()
    bg, hg = g.cells()
    lo, hi = f.measure.lo, f.measure.hi
    edges = np.unique(np.concatenate([[lo, hi], bf, bg]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return np.diff(edges), f._pdf(mids), g._pdf(mids)


def _integration_window(f: Density, g: Density, measure: MeasureDescriptor):
    if measure.kind == "interval":
        lo, hi = measure.lo, measure.hi
    else:
        (a1, b1), (a2, b2) = f.effective_range(), g.effective_range()
        lo, hi = min(a1, a2), max(b1, b2)
    pts = {p for p in f.breakpoints() + g.breakpoints() if lo < p < hi}
    return lo, hi, pts


def _quad(func, lo, hi, points, measure: MeasureDescriptor, what: str) -> DivergenceValue:
    pts = sorted(points)
    limit = max(measure.max_subdivisions, 2 * len(pts) + 10)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        value, abserr = integrate.quad(
            func, lo, hi, points=pts or None, epsabs=measure.abs_tol, epsrel=0.0, limit=limit
        )
    if caught and abserr > measure.abs_tol:
        raise QuadratureError(f"{what} quadrature did not converge", value, abserr)
    return DivergenceValue(float(value), float(abserr), "quadrature")


def _crossings(f: Density, g: Density, lo: float, hi: float) -> set[float]:
    """Sign changes of f - g, located by bisection from a dense scan."""
    grid = np.linspace(lo, hi, 4001)
    diff = f._pdf(grid) - g._pdf(grid)
    roots = set()
    for i in np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0):
        a, b = grid[i], grid[i + 1]
        try:
            roots.add(optimize.brentq(lambda x: float(f._pdf(np.asarray(x)) - g._pdf(np.asarray(x))), a, b))
        except ValueError:
            roots.add(0.5 * (a + b))
    return roots


def _normal_pair(f: Density, g: Density) -> bool:
    return type(f) is NormalLocation and type(g) is NormalLocation


def _affinity(f: Density, g: Density) -> DivergenceValue:
    measure = _check_pair(f, g)
    if _normal_pair(f, g):
        s1, s2 = f.sigma, g.sigma
        v = s1 * s1 + s2 * s2
        d = f.mu - g.mu
        value = math.sqrt(2 * s1 * s2 / v) * math.exp(-d * d / (4 * v))
        return DivergenceValue(value, 0.0, "closed-form")
    if f.cells() is not None and g.cells() is not None:
        w, a, b = _merged_cells(f, g)
        return DivergenceValue(float(np.sum(w * np.sqrt(a * b))), 0.0, "piecewise-exact")
    lo, hi, pts = _integration_window(f, g, measure)

    def integrand(x):
        x = np.asarray(x)
        return float(np.exp(0.5 * (f._logpdf(x) + g._logpdf(x))))

    res = _quad(integrand, lo, hi, pts, measure, "affinity")
    return res._replace(value=min(max(res.value, 0.0), 1.0))


def _kl(f0: Density, f: Density) -> DivergenceValue:
    measure = _check_pair(f0, f)
    if _normal_pair(f0, f):
        s0, s1 = f0.sigma, f.sigma
        d = f0.mu - f.mu
        value = math.log(s1 / s0) + (s0 * s0 + d * d) / (2 * s1 * s1) - 0.5
        return DivergenceValue(value, 0.0, "closed-form")
    if f0.cells() is not None and f.cells() is not None:
        w, a, b = _merged_cells(f0, f)
        live = (a > 0) & (w > 0)
        if np.any(live & (b <= 0)):
            return DivergenceValue(math.inf, 0.0, "piecewise-exact")
        value = float(np.sum(w[live] * a[live] * (np.log(a[live]) - np.log(b[live]))))
        return DivergenceValue(max(value, 0.0), 0.0, "piecewise-exact")
    lo, hi, pts = _integration_window(f0, f, measure)
    grid = np.linspace(lo, hi, 4001)
    if np.any((f0._pdf(grid) > 0) & np.isneginf(f._logpdf(grid))):
        return DivergenceValue(math.inf, 0.0, "support-check")

    def integrand(x):
        x = np.asarray(x)
        l0 = f0._logpdf(x)
        if np.isneginf(l0):
            return 0.0
        return float(np.exp(l0) * (l0 - f._logpdf(x)))

    res = _quad(integrand, lo, hi, pts, measure, "kl")
    return res._replace(value=max(res.value, 0.0))


def _l1(f: Density, g: Density) -> DivergenceValue:
    measure = _check_pair(f, g)
    if _normal_pair(f, g) and f.sigma == g.sigma:
        value = 2.0 * special.erf(abs(f.mu - g.mu) / (2 * math.sqrt(2) * f.sigma))
        return DivergenceValue(float(value), 0.0, "closed-form")
    if f.cells() is not None and g.cells() is not None:
        w, a, b = _merged_cells(f, g)
        return DivergenceValue(float(np.sum(w * np.abs(a - b))), 0.0, "piecewise-exact")
    lo, hi, pts = _integration_window(f, g, measure)
    pts |= _crossings(f, g, lo, hi)

    def integrand(x):
        x = np.asarray(x)
        return float(abs(f._pdf(x) - g._pdf(x)))

    res = _quad(integrand, lo, hi, pts, measure, "l1")
    return res._replace(value=min(max(res.value, 0.0), 2.0))


def divergence(f: Density, g: Density, metric: str) -> DivergenceValue:
    """Value, error estimate and method for ``metric`` in {aff, hell2, kl, l1}."""
    if metric == "aff":
        return _affinity(f, g)
    if metric == "hell2":
        a = _affinity(f, g)
        return DivergenceValue(2.0 * (1.0 - a.value), 2.0 * a.abserr, a.method)
    if metric == "kl":
        return _kl(f, g)
    if metric == "l1":
        return _l1(f, g)
    raise ValueError(f"unknown metric {metric!r}")


def affinity(f: Density, g: Density) -> float:
    """Integral of sqrt(f g) over the common domain."""
    return _affinity(f, g).value


def hellinger_sq(f: Density, g: Density) -> float:
    """Squared Hellinger distance in the ``2 (1 - Aff)`` convention, range [0, 2]."""
    return 2.0 * (1.0 - affinity(f, g))


def kl_divergence(f0: Density, f: Density) -> float:
    """``E_{f0} log(f0 / f)``; ``inf`` when f0 puts mass where f vanishes."""
    return _kl(f0, f).value


def l1_distance(f: Density, g: Density) -> float:
    return _l1(f, g).value


def root_likelihood_ratio_mean(f0: Density, f: Density, sample) -> float:
    """Empirical mean of sqrt(f / f0) over the sample."""
    x = _as_array(sample)
    if x.size == 0:
        raise ValueError("empty sample")
    l0 = f0.logpdf(x)
    if np.any(np.isneginf(l0)):
        raise SupportViolation("reference density is zero at a sample point")
    return float(np.mean(np.exp(0.5 * (f.logpdf(x) - l0))))
