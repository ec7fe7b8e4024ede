"""Log-space posterior engine over a discretized prior.

The posterior of a set A is J_A / J, where J_A integrates the likelihood
ratio against the true density over A.  Accumulators are kept per support
point so the ratio form and the plain form can be compared directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .densities import Density, NormalLocation, SupportViolation, _as_array, log_likelihood_matrix
from .priors import DiscretizedPrior, SubsetSelector

__all__ = [
    "DegeneratePosterior",
    "DivergentPosterior",
    "NormalizerCheck",
    "PosteriorState",
    "update",
    "update_batch",
    "posterior_mass",
    "log_posterior_mass",
    "log_ratio_numerator",
    "formal_posterior",
    "cumulative_log_likelihood",
    "log_mass_trace",
    "log_normalizer_trace",
]


class DegeneratePosterior(ArithmeticError):
    """Every support point has zero accumulated likelihood; the posterior is undefined."""


class DivergentPosterior(ArithmeticError):
    """The normalizer J is infinite, so the formal posterior does not exist."""

    def __init__(self, message: str, log_J: float = math.nan, log_J_extended: float = math.nan):
        super().__init__(message)
        self.log_J = log_J
        self.log_J_extended = log_J_extended


class NormalizerCheck(NamedTuple):
    """Grid-doubling surrogate for finiteness of J."""

    log_J: float
    log_J_extended: float
    relative_change: float
    tolerance: float
    surrogate: str = "grid-extension doubling"


@dataclass(frozen=True, eq=False)
class PosteriorState:
    prior: DiscretizedPrior
    log_lik: np.ndarray
    n: int = 0
    theta0: Density | None = None
    log_lik0: float = 0.0
    normalizer: NormalizerCheck | None = None

    @classmethod
    def start(cls, prior: DiscretizedPrior, theta0: Density | None = None) -> "PosteriorState":
        return cls(prior, np.zeros(len(prior)), 0, theta0, 0.0)

    def log_joint(self) -> np.ndarray:
        return self.prior.normalized_log_weights() + self.log_lik

    def posterior_weights(self) -> np.ndarray:
        lj = self.log_joint()
        total = logsumexp(lj)
        if total == -math.inf:
            raise DegeneratePosterior("all accumulated likelihoods are zero")
        return np.exp(lj - total)


def update_batch(state: PosteriorState, xs) -> PosteriorState:
    x = _as_array(xs)
    if x.size == 0:
        return state
    ll = log_likelihood_matrix(state.prior.densities, x).sum(axis=1)
    l0 = state.log_lik0
    if state.theta0 is not None:
        l0 = l0 + float(np.sum(state.theta0.logpdf(x)))
    return replace(state, log_lik=state.log_lik + ll, n=state.n + x.size, log_lik0=l0)


def update(state: PosteriorState, x: float) -> PosteriorState:
    """One Bayes step: add ``log f_theta(x)`` to every accumulator."""
    return update_batch(state, np.array([x], dtype=float))


def log_posterior_mass(state: PosteriorState, A: SubsetSelector) -> float:
    lj = state.log_joint()
    total = logsumexp(lj)
    if total == -math.inf:
        raise DegeneratePosterior("all accumulated likelihoods are zero")
    m = state.prior.mask(A)
    if not m.any():
        return -math.inf
    return float(min(logsumexp(lj[m]) - total, 0.0))


def posterior_mass(state: PosteriorState, A: SubsetSelector) -> float:
    return math.exp(log_posterior_mass(state, A))


def log_ratio_numerator(state: PosteriorState, A: SubsetSelector) -> float:
    """``log J_A``: the prior integral over A of the likelihood ratio against theta0."""
    if state.theta0 is None:
        raise ValueError("ratio form needs theta0")
    if state.log_lik0 == -math.inf:
        raise SupportViolation("theta0 density vanishes at an observation")
    m = state.prior.mask(A)
    if not m.any():
        return -math.inf
    return float(logsumexp(state.log_joint()[m]) - state.log_lik0)


def _summed_log_likelihood(densities, x: np.ndarray) -> np.ndarray:
    """Total log-likelihood per density; Gaussian location families go through (mean, scatter)."""
    if x.size == 0:
        return np.zeros(len(densities))
    sigmas = {getattr(d, "sigma", None) for d in densities}
    if all(type(d) is NormalLocation for d in densities) and len(sigmas) == 1:
        s = sigmas.pop()
        mu = np.array([d.mu for d in densities])
        xbar = float(x.mean())
        scatter = float(np.sum((x - xbar) ** 2))
        return -x.size * math.log(s * math.sqrt(2 * math.pi)) - (scatter + x.size * (xbar - mu) ** 2) / (2 * s * s)
    return log_likelihood_matrix(densities, x).sum(axis=1)


def _log_J(prior: DiscretizedPrior, ll: np.ndarray) -> float:
    return float(logsumexp(prior.log_weights + ll))


def formal_posterior(prior: DiscretizedPrior, xs, tol: float = 1e-6) -> PosteriorState:
    """Posterior from an improper prior, provided its normalizer is finite.

    Finiteness is decided by doubling the grid window: if J changes by less than
    ``tol`` (relatively) the normalizer is declared finite.  Raises
    DivergentPosterior otherwise.
    """
    if prior.proper:
        raise ValueError("formal_posterior expects an improper prior")
    x = _as_array(xs)
    ll = _summed_log_likelihood(prior.densities, x)
    log_J = _log_J(prior, ll)
    if log_J == -math.inf:
        raise DegeneratePosterior("all support points give the data zero likelihood")
    if not np.isfinite(log_J):
        raise DivergentPosterior("normalizer is infinite on the grid", log_J)
    check = None
    if prior.extender is not None:
        wider = prior.extender(prior)
        log_J_ext = _log_J(wider, _summed_log_likelihood(wider.densities, x))
        change = abs(math.expm1(log_J_ext - log_J)) if np.isfinite(log_J_ext) else math.inf
        if not change < tol:
            raise DivergentPosterior(
                f"normalizer not stable under grid doubling (relative change {change:.3g})",
                log_J,
                log_J_ext,
            )
        check = NormalizerCheck(log_J, log_J_ext, change, tol)
    return replace(PosteriorState.start(prior), log_lik=ll, n=x.size, normalizer=check)


# ------------------------------------------------------------ trace helpers


def cumulative_log_likelihood(prior: DiscretizedPrior, xs, checkpoints) -> np.ndarray:
    """``out[i, c]``: log-likelihood of the first ``checkpoints[c]`` observations under point i."""
    x = _as_array(xs)
    cps = np.asarray(checkpoints, dtype=int)
    if cps.size and (cps.min() < 0 or cps.max() > x.size):
        raise ValueError("checkpoints must lie in [0, len(xs)]")
    ll = log_likelihood_matrix(prior.densities, x)
    csum = np.concatenate([np.zeros((len(prior), 1)), np.cumsum(ll, axis=1)], axis=1)
    return csum[:, cps]


def log_mass_trace(prior: DiscretizedPrior, xs, A: SubsetSelector, checkpoints) -> np.ndarray:
    """Log posterior mass of A after each checkpoint; equal to sequential updating."""
    cum = cumulative_log_likelihood(prior, xs, checkpoints)
    lj = prior.normalized_log_weights()[:, None] + cum
    total = logsumexp(lj, axis=0)
    if np.any(total == -math.inf):
        raise DegeneratePosterior("all accumulated likelihoods are zero at a checkpoint")
    m = prior.mask(A)
    if not m.any():
        return np.full(len(total), -math.inf)
    return np.minimum(logsumexp(lj[m], axis=0) - total, 0.0)


def log_normalizer_trace(prior: DiscretizedPrior, theta0: Density, xs, checkpoints) -> np.ndarray:
    """``log J`` (ratio form against theta0) at each checkpoint."""
    x = _as_array(xs)
    cum = cumulative_log_likelihood(prior, x, checkpoints)
    l0 = np.concatenate([[0.0], np.cumsum(theta0.logpdf(x))])[np.asarray(checkpoints, dtype=int)]
    return logsumexp(prior.normalized_log_weights()[:, None] + cum, axis=0) - l0
