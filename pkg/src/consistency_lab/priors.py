"""Discretized priors over density families.

A prior is a finite list of support points with unnormalized log weights.
Improper priors (infinite total mass in the continuum) are represented by a
finite window of a grid together with a recipe that doubles the window; the
posterior module uses that recipe to decide whether a normalizer is finite.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .densities import Density, NormalLocation, _as_array, kl_divergence, log_likelihood_matrix

__all__ = [
    "ThetaPoint",
    "SubsetSelector",
    "DiscretizedPrior",
    "ZeroLikelihood",
    "KLSupportCheck",
    "location_grid_prior",
    "improper_location_grid",
    "kl_neighborhood_mass",
    "check_kl_support",
    "restrict_and_normalize",
    "mixture_with_atom",
    "marginal_log_density",
]


class ZeroLikelihood(ArithmeticError):
    """Every support point assigns zero likelihood to the data."""


@dataclass(frozen=True)
class ThetaPoint:
    id: int
    density: Density
    label: str | None = None


@dataclass(frozen=True)
class SubsetSelector:
    """An explicit set of support-point ids."""

    ids: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "ids", frozenset(int(i) for i in self.ids))

    @classmethod
    def of(cls, ids: Iterable[int]) -> "SubsetSelector":
        return cls(frozenset(ids))

    @classmethod
    def where(cls, prior: "DiscretizedPrior", predicate: Callable[[ThetaPoint], bool]) -> "SubsetSelector":
        return cls(frozenset(p.id for p in prior.support if predicate(p)))

    def __contains__(self, i) -> bool:
        return i in self.ids

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class DiscretizedPrior:
    support: tuple[ThetaPoint, ...]
    log_weights: np.ndarray
    proper: bool = True
    extender: Callable[["DiscretizedPrior"], "DiscretizedPrior"] | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        lw = np.array(self.log_weights, dtype=float)
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)
        if lw.shape != (len(self.support),):
            raise ValueError("one log weight per support point is required")
        ids = [p.id for p in self.support]
        if len(set(ids)) != len(ids):
            raise ValueError("support ids must be unique")
        if len(set(p.density for p in self.support)) != len(ids):
            raise ValueError("theta -> f_theta must be one-to-one: duplicate densities in support")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must be finite or -inf")
        if self.proper and len(lw) and not np.isfinite(logsumexp(lw)):
            raise ValueError("proper prior needs positive finite total mass")

    @classmethod
    def from_weights(cls, densities: Sequence[Density], weights=None, proper=True, labels=None, extender=None):
        k = len(densities)
        w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        labels = labels or [None] * k
        support = tuple(ThetaPoint(i, d, lab) for i, (d, lab) in enumerate(zip(densities, labels)))
        return cls(support, lw, proper, extender)

    def __len__(self) -> int:
        return len(self.support)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.support)

    @property
    def densities(self) -> tuple[Density, ...]:
        return tuple(p.density for p in self.support)

    def mask(self, A: SubsetSelector) -> np.ndarray:
        unknown = A.ids - set(self.ids)
        if unknown:
            raise KeyError(f"ids {sorted(unknown)[:5]} not in prior support")
        return np.array([p.id in A.ids for p in self.support], dtype=bool)

    def log_total_mass(self) -> float:
        return float(logsumexp(self.log_weights)) if len(self) else -math.inf

    def normalized_log_weights(self) -> np.ndarray:
        """Log weights summing to one for proper priors; raw weights otherwise."""
        if not self.proper:
            return self.log_weights
        return self.log_weights - self.log_total_mass()

    def weights(self) -> np.ndarray:
        return np.exp(self.normalized_log_weights())

    def mass(self, A: SubsetSelector) -> float:
        m = self.mask(A)
        if not m.any():
            return 0.0
        return float(np.exp(logsumexp(self.normalized_log_weights()[m])))

    def index_of(self, density: Density) -> int | None:
        for p in self.support:
            if p.density == density:
                return p.id
        return None


def location_grid_prior(thetas, sigma: float = 1.0, weights=None) -> DiscretizedPrior:
    """Proper prior over N(theta, sigma^2) for the given grid of locations."""
    dens = [NormalLocation(float(t), sigma) for t in thetas]
    return DiscretizedPrior.from_weights(dens, weights, labels=[f"theta={float(t):g}" for t in thetas])


@functools.lru_cache(maxsize=8)
def improper_location_grid(lo: float, hi: float, step: float, sigma: float = 1.0) -> DiscretizedPrior:
    """Lebesgue measure on the line, discretized with mass ``step`` per grid point.

    Grid points are ``lo, lo + step, ..., hi``, each standing for the cell of
    width ``step`` around it.  The prior is flagged improper; its extender pads
    the grid on both sides with as many aligned points as it already has.
    """
    k = int(round((hi - lo) / step))
    thetas = lo + step * np.arange(k + 1)
    dens = [NormalLocation(float(t), sigma) for t in thetas]
    lw = np.full(len(dens), math.log(step))
    pad = step * math.ceil((k + 1) / 2)

    def extend(_prior):
        return improper_location_grid(lo - pad, hi + pad, step, sigma)

    support = tuple(ThetaPoint(i, d) for i, d in enumerate(dens))
    return DiscretizedPrior(support, lw, proper=False, extender=extend)


def _kl_to_support(prior: DiscretizedPrior, theta0: Density) -> np.ndarray:
    return np.array([kl_divergence(theta0, p.density) for p in prior.support])


def kl_neighborhood_mass(prior: DiscretizedPrior, theta0: Density, eps: float) -> float:
    """Prior mass of ``{theta : KL(theta0, f_theta) < eps}``.

    Normalized for proper priors, raw for improper ones.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    inside = _kl_to_support(prior, theta0) < eps
    if not inside.any():
        return 0.0
    return float(np.exp(logsumexp(prior.normalized_log_weights()[inside])))


class KLSupportCheck(NamedTuple):
    flags: tuple[bool, ...]
    resolution: float  # smallest KL from theta0 to a positive-weight support point


def check_kl_support(prior: DiscretizedPrior, theta0: Density, eps_list) -> KLSupportCheck:
    """Positivity of KL-neighbourhood mass for each eps.

    On a grid the answer is only meaningful for eps above ``resolution``; below
    it every neighbourhood is empty by construction.
    """
    kl = _kl_to_support(prior, theta0)
    live = np.isfinite(prior.log_weights)
    resolution = float(kl[live].min()) if live.any() else math.inf
    flags = []
    for eps in eps_list:
        if not eps > 0:
            raise ValueError("eps values must be positive")
        flags.append(bool(np.any(live & (kl < eps))))
    return KLSupportCheck(tuple(flags), resolution)


def restrict_and_normalize(prior: DiscretizedPrior, A: SubsetSelector) -> DiscretizedPrior:
    """The prior conditioned on A, as a proper prior supported on A."""
    m = prior.mask(A)
    lw = prior.log_weights[m]
    total = logsumexp(lw) if lw.size else -math.inf
    if total == -math.inf:
        raise ValueError("restriction has zero prior mass")
    if not np.isfinite(total):
        raise ValueError("restriction has infinite prior mass")
    support = tuple(p for p, keep in zip(prior.support, m) if keep)
    return DiscretizedPrior(support, lw - total, proper=True)


def mixture_with_atom(prior: DiscretizedPrior, f0: Density, w: float) -> DiscretizedPrior:
    """``w * delta_{f0} + (1 - w) * prior``; f0 joins the support if absent."""
    if not prior.proper:
        raise ValueError("mixture_with_atom needs a proper prior")
    if not 0 < w < 1:
        raise ValueError("atom weight must lie in (0, 1)")
    lw = prior.normalized_log_weights() + math.log1p(-w)
    support = list(prior.support)
    existing = prior.index_of(f0)
    if existing is None:
        new_id = max(prior.ids, default=-1) + 1
        support.append(ThetaPoint(new_id, f0, "atom"))
        lw = np.append(lw, math.log(w))
    else:
        pos = prior.ids.index(existing)
        lw = lw.copy()
        lw[pos] = np.logaddexp(lw[pos], math.log(w))
    return DiscretizedPrior(tuple(support), lw, proper=True)


def marginal_log_density(prior: DiscretizedPrior, xs) -> float:
    """``log sum_i w_i prod_t f_i(x_t)`` for a proper prior."""
    if not prior.proper:
        raise ValueError("marginal density needs a proper prior")
    x = _as_array(xs)
    ll = log_likelihood_matrix(prior.densities, x).sum(axis=1)
    value = float(logsumexp(prior.normalized_log_weights() + ll))
    if value == -math.inf:
        raise ZeroLikelihood("all support points give the data zero likelihood")
    return value
