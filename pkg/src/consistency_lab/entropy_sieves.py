"""Covers, sieves, and bracketing / metric entropy of finite density families.

Minimal covering problems are solved exactly for families of at most 20
members by inclusion-exclusion over subsets (counting k-tuples of feasible
sets whose union is everything), and greedily above that.  Greedy answers are
upper bounds on the true minima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .densities import Density, l1_distance
from .priors import DiscretizedPrior, SubsetSelector

__all__ = [
    "SqrtMassSum",
    "CoverSieve",
    "Sieve",
    "EnvelopeGrid",
    "BracketSet",
    "Net",
    "sqrt_mass_sum",
    "pairwise_l1",
    "l1_diameter",
    "build_cover",
    "walker_condition_check",
    "w_to_ggr_sieve",
    "envelope_grid",
    "bracketing_entropy",
    "metric_entropy",
    "bsw_to_ggr_net",
    "ggr_condition_check",
    "min_cover",
]

EXACT_LIMIT = 20
_PRIMES = (2147483629, 2147483587)


# ------------------------------------------------------ square-root mass sums


class SqrtMassSum(NamedTuple):
    total: float
    remainder_bound: float
    finite: bool
    terms: int


def sqrt_mass_sum(masses, truncation: int = 2**20, growth_threshold: float = 0.9) -> SqrtMassSum:
    """``sum_i sqrt(Pi_i)`` for a finite list or an analytic mass function.

    For a callable ``i -> Pi_i`` (vectorized over i = 1, 2, ...), partial sums
    are taken to ``truncation``.  With D1, D2 the increments over the last two
    doubling blocks, ``r = D1 / D2``; ``r >= growth_threshold`` is read as
    divergence (terms decaying like i^-p give r ~ 2^(1-p)), otherwise the tail
    is bounded by continuing the doubling increments geometrically,
    ``D1 r / (1 - r)``.
    """
    if not callable(masses):
        m = np.asarray(masses, dtype=float)
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("cover masses must be finite and nonnegative")
        return SqrtMassSum(float(np.sqrt(m).sum()), 0.0, True, m.size)
    T = 1 << max(int(math.ceil(math.log2(max(truncation, 8)))), 3)
    i = np.arange(1, T + 1, dtype=float)
    try:
        vals = np.asarray(masses(i), dtype=float)
    except Exception:
        vals = np.array([masses(int(k)) for k in range(1, T + 1)], dtype=float)
    if vals.shape != i.shape or np.any(vals < 0):
        raise ValueError("mass function must return nonnegative values")
    a = np.sqrt(vals)
    s = np.cumsum(a)
    d1 = s[T - 1] - s[T // 2 - 1]
    d2 = s[T // 2 - 1] - s[T // 4 - 1]
    if d1 == 0:
        return SqrtMassSum(float(s[-1]), 0.0, True, T)
    r = d1 / d2 if d2 > 0 else math.inf
    if r >= growth_threshold:
        return SqrtMassSum(math.inf, math.inf, False, T)
    return SqrtMassSum(float(s[-1]), float(d1 * r / (1 - r)), True, T)


# -------------------------------------------------------------- L1 geometry


def pairwise_l1(densities: Sequence[Density]) -> np.ndarray:
    k = len(densities)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = l1_distance(densities[i], densities[j])
    return D


def l1_diameter(densities: Sequence[Density]) -> float:
    """Largest pairwise L1 distance (0 for singletons and the empty set)."""
    if len(densities) < 2:
        return 0.0
    return float(pairwise_l1(densities).max())


@dataclass(frozen=True, eq=False)
class CoverSieve:
    """Partition of a prior's support into blocks of L1 diameter below delta."""

    blocks: tuple[SubsetSelector, ...]
    diameters: tuple[float, ...]
    masses: tuple[float, ...]
    delta: float
    support_ids: frozenset[int] = field(default=frozenset())

    def __post_init__(self):
        seen: set[int] = set()
        for b in self.blocks:
            if seen & b.ids:
                raise ValueError("cover blocks overlap")
            seen |= b.ids
        if self.support_ids and seen != set(self.support_ids):
            raise ValueError("cover blocks do not exhaust the support")
        if any(not d < self.delta for d in self.diameters):
            raise ValueError("a block diameter is not below delta")
        if not (len(self.blocks) == len(self.diameters) == len(self.masses)):
            raise ValueError("blocks, diameters and masses must align")

    def __len__(self):
        return len(self.blocks)

    def sorted_masses(self) -> np.ndarray:
        return np.sort(np.asarray(self.masses))[::-1]


def build_cover(prior: DiscretizedPrior, delta: float, D: np.ndarray | None = None) -> CoverSieve:
    """Greedy partition with every block's L1 diameter below delta.

    Each block is seeded by the lowest unassigned id and grown with the
    unassigned points nearest the seed, as long as the diameter stays below delta.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    order = np.argsort(prior.ids, kind="stable")
    D = pairwise_l1(prior.densities) if D is None else D
    weights = prior.weights()
    ids = np.asarray(prior.ids)
    unassigned = [int(i) for i in order]
    blocks, diams, masses = [], [], []
    while unassigned:
        seed = unassigned[0]
        rest = sorted(unassigned[1:], key=lambda j: (D[seed, j], ids[j]))
        block = [seed]
        for j in rest:
            if D[j, block].max() < delta:
                block.append(j)
        taken = set(block)
        unassigned = [j for j in unassigned if j not in taken]
        blocks.append(SubsetSelector.of(ids[block]))
        diams.append(float(D[np.ix_(block, block)].max()))
        masses.append(float(weights[block].sum()))
    return CoverSieve(tuple(blocks), tuple(diams), tuple(masses), delta, frozenset(prior.ids))


def walker_condition_check(cover: CoverSieve, prior: DiscretizedPrior) -> tuple[float, bool]:
    """``(sum_i sqrt(Pi(A_i)), finite?)``; always finite for a finite cover."""
    res = sqrt_mass_sum([prior.mass(b) for b in cover.blocks])
    return res.total, res.finite


# ------------------------------------------------------------------- sieves


@dataclass(frozen=True)
class Sieve:
    """The first k blocks of a mass-sorted cover, with the bounds W => GGR provides."""

    n: int
    k: float  # k_n; infinite once exp(n beta) overflows
    block_indices: tuple[int, ...]
    complement_mass: float
    mass_bound: float
    entropy_bound: float
    cover_delta: float = math.nan
    theta_n: SubsetSelector | None = None

    @property
    def entropy(self) -> float:
        """log of the number of blocks kept: a metric entropy bound at the cover's delta."""
        return math.log(len(self.block_indices)) if self.block_indices else 0.0


def w_to_ggr_sieve(
    masses, beta: float, n: int, cover_delta: float = math.nan, blocks: Sequence[SubsetSelector] | None = None
) -> Sieve:
    """Keep the ``k_n = floor(exp(n beta))`` heaviest blocks.

    The complement mass is checked against ``2 c^2 / k_n`` with
    ``c = sum_i sqrt(Pi_i)``, and ``log k_n <= n beta`` is the entropy bound.
    When ``blocks`` (aligned with ``masses``) is given, ``theta_n`` is their union
    over the kept blocks.
    """
    m = np.asarray(masses, dtype=float)
    if np.any(np.diff(m) > 1e-15 * max(m.max(initial=0.0), 1.0)):
        raise ValueError("cover masses must be sorted in nonincreasing order")
    if not beta > 0 or n < 0:
        raise ValueError("need beta > 0 and n >= 0")
    x = n * beta
    if x > 700:
        k = math.inf
        log_k = x
    else:
        k = max(int(math.floor(math.exp(x) * (1 + 1e-15))), 1)
        log_k = math.log(k)
    kept = int(min(k, m.size))
    c = float(np.sqrt(m).sum())
    complement = float(m[kept:].sum())
    bound = 2 * c * c / k
    if complement > bound * (1 + 1e-12):
        raise AssertionError(f"complement mass {complement} exceeds 2c^2/k = {bound}")
    theta_n = None
    if blocks is not None:
        if len(blocks) != m.size:
            raise ValueError("blocks and masses must align")
        theta_n = SubsetSelector(frozenset().union(*(b.ids for b in blocks[:kept])))
    return Sieve(n, k, tuple(range(kept)), complement, bound, log_k, cover_delta, theta_n)


def ggr_condition_check(
    sieves: Sequence[Sieve], delta: float, beta: float, eps: float, c1: float = 1.0
) -> tuple[bool, ...]:
    """Per sieve: ``Pi(Theta_n^c) < c1 e^{-n beta}`` and ``J(Theta_n, delta) <= n beta``."""
    if not beta < eps * eps / 2:
        raise ValueError("GGR needs beta < eps^2 / 2")
    if not 0 < delta < eps:
        raise ValueError("GGR needs 0 < delta < eps")
    out = []
    for s in sieves:
        if s.cover_delta > delta:
            raise ValueError("sieve built from a cover coarser than delta")
        mass_ok = s.complement_mass < c1 * math.exp(-s.n * beta)
        ent_ok = s.entropy <= s.n * beta + 1e-12
        out.append(bool(mass_ok and ent_ok))
    return tuple(out)


# --------------------------------------------------------- exact min covers


def _zeta(a: np.ndarray, K: int) -> np.ndarray:
    a = a.copy()
    for b in range(K):
        v = a.reshape(-1, 2, 1 << b)
        v[:, 1, :] += v[:, 0, :]
    return a


def _mobius_mod(a: np.ndarray, K: int, p: int) -> np.ndarray:
    a = a.copy()
    for b in range(K):
        v = a.reshape(-1, 2, 1 << b)
        v[:, 1, :] = (v[:, 1, :] - v[:, 0, :]) % p
    return a


def min_cover(feasible: np.ndarray, K: int) -> list[int]:
    """Smallest list of feasible masks whose union is all K bits.

    ``feasible`` is a downward-closed boolean array over the ``2**K`` masks.
    A set U is coverable by at most j feasible sets iff the Mobius transform of
    ``zeta(feasible)**j`` is nonzero at U; counts are kept modulo two primes.
    """
    full = (1 << K) - 1
    if K == 0:
        return []
    feasible = feasible.copy()
    feasible[0] = True
    a = _zeta(feasible.astype(np.int64), K)
    cover_tables = [None]  # cover_tables[j][U] != 0  <=>  U coverable by <= j sets
    powers = [np.ones_like(a) for _ in _PRIMES]
    for j in range(1, K + 1):
        tabs = []
        for q, p in enumerate(_PRIMES):
            powers[q] = (powers[q] * (a % p)) % p
            tabs.append(_mobius_mod(powers[q], K, p))
        table = (tabs[0] != 0) | (tabs[1] != 0)
        cover_tables.append(table)
        if table[full]:
            break
    k = len(cover_tables) - 1
    masks = np.arange(1 << K)
    chosen, U = [], full
    for j in range(k, 0, -1):
        low = U & -U
        cand = masks[feasible & ((masks & ~U) == 0) & ((masks & low) != 0)]
        rest = U ^ cand
        ok = (rest == 0) if j == 1 else cover_tables[j - 1][rest] | (rest == 0)
        cand = cand[ok]
        # prefer the largest feasible block
        T = int(cand[np.argmax([bin(int(t)).count("1") for t in cand])])
        chosen.append(T)
        U ^= T
        if U == 0:
            break
    return chosen


def _bits(mask: int, K: int) -> list[int]:
    return [i for i in range(K) if mask >> i & 1]


# ---------------------------------------------------------------- brackets


class EnvelopeGrid(NamedTuple):
    """Points and weights on which envelopes are represented and integrated."""

    x: np.ndarray
    w: np.ndarray
    exact: bool


def envelope_grid(densities: Sequence[Density], points: int = 10_000) -> EnvelopeGrid:
    """Cell midpoints for piecewise-constant families, else a dense trapezoid grid plus breakpoints."""
    m0 = densities[0].measure
    if all(d.cells() is not None for d in densities):
        edges = np.unique(np.concatenate([[m0.lo, m0.hi]] + [np.asarray(d.cells()[0]) for d in densities]))
        return EnvelopeGrid(0.5 * (edges[:-1] + edges[1:]), np.diff(edges), True)
    if m0.kind == "interval":
        lo, hi = m0.lo, m0.hi
    else:
        ranges = [d.effective_range() for d in densities]
        lo, hi = min(r[0] for r in ranges), max(r[1] for r in ranges)
    x = set(np.linspace(lo, hi, points).tolist())
    for d in densities:
        x.update(p for p in d.breakpoints() if lo <= p <= hi)
    x = np.array(sorted(x))
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return EnvelopeGrid(x, w, False)


@dataclass(frozen=True, eq=False)
class BracketSet:
    """Upper envelopes on a validation grid and the member each one dominates."""

    members: tuple[Density, ...]
    grid: EnvelopeGrid
    envelopes: np.ndarray  # (E, G)
    assignment: tuple[int, ...]  # member index -> envelope index
    delta: float

    def __post_init__(self):
        env = np.atleast_2d(np.asarray(self.envelopes, dtype=float))
        object.__setattr__(self, "envelopes", env)
        if np.any(env < 0):
            raise ValueError("envelopes must be nonnegative")
        ints = self.integrals()
        if np.any(ints >= 1 + self.delta):
            raise ValueError(f"envelope integral {ints.max():.6g} is not below 1 + delta")
        if len(self.assignment) != len(self.members):
            raise ValueError("every member needs an envelope")
        for d, e in zip(self.members, self.assignment):
            if np.any(d._pdf(self.grid.x) > env[e] * (1 + 1e-12) + 1e-300):
                raise ValueError("an envelope does not dominate its assigned member")

    def integrals(self) -> np.ndarray:
        return self.envelopes @ self.grid.w

    @property
    def entropy(self) -> float:
        return math.log(len(self.envelopes))


def _values(densities, grid: EnvelopeGrid) -> np.ndarray:
    return np.vstack([d._pdf(grid.x) for d in densities])


def _exact_groups_brackets(V: np.ndarray, w: np.ndarray, delta: float):
    K = V.shape[0]
    env = np.zeros((1 << K, V.shape[1]))
    for b in range(K):
        half = 1 << b
        env[half : 2 * half] = np.maximum(env[:half], V[b])
    feasible = env @ w < 1 + delta
    return [_bits(m, K) for m in min_cover(feasible, K)]


def _greedy_groups_brackets(V: np.ndarray, w: np.ndarray, delta: float, D: np.ndarray):
    K = V.shape[0]
    candidates = []
    for seed in range(K):
        group, env = [seed], V[seed].copy()
        for j in sorted(range(K), key=lambda j: (D[seed, j], j)):
            if j == seed:
                continue
            trial = np.maximum(env, V[j])
            if trial @ w < 1 + delta:
                group.append(j)
                env = trial
        candidates.append(set(group))
    uncovered, groups = set(range(K)), []
    while uncovered:
        best = max(range(K), key=lambda c: (len(candidates[c] & uncovered), -c))
        groups.append(sorted(candidates[best] & uncovered))
        uncovered -= candidates[best]
    return groups


def bracketing_entropy(support: Sequence[Density], delta: float, exact: bool | None = None):
    """``(H, brackets)``: log of the number of envelopes needed at level delta.

    Envelopes are pointwise maxima of groups of members, which is the tightest
    choice for a given grouping.  With ``exact`` (default for at most 20
    members when memory allows) the grouping is minimal; otherwise it comes from
    greedy set cover and H is an upper bound.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    support = tuple(support)
    grid = envelope_grid(support)
    V = _values(support, grid)
    K = len(support)
    if exact is None:
        exact = K <= EXACT_LIMIT and (1 << K) * V.shape[1] <= 4 * 10**7
    if exact:
        groups = _exact_groups_brackets(V, grid.w, delta)
    else:
        groups = _greedy_groups_brackets(V, grid.w, delta, pairwise_l1(support))
    envs = np.vstack([V[g].max(axis=0) for g in groups])
    assignment = [0] * K
    for e, g in enumerate(groups):
        for i in g:
            assignment[i] = e
    brackets = BracketSet(support, grid, envs, tuple(assignment), delta)
    return brackets.entropy, brackets


class Net(NamedTuple):
    centers: list  # densities (metric_entropy) or tabulated arrays (bsw_to_ggr_net)
    assignment: tuple[int, ...]
    distances: np.ndarray
    radius: float


def metric_entropy(support: Sequence[Density], delta: float, exact: bool | None = None):
    """``(J, net)``: log of the size of an L1 delta-net drawn from the family itself.

    Exact minimum for at most 20 members, greedy set cover above.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    support = tuple(support)
    K = len(support)
    D = pairwise_l1(support)
    balls = [set(np.flatnonzero(D[c] < delta).tolist()) for c in range(K)]
    if exact is None:
        exact = K <= EXACT_LIMIT
    centers = []
    if exact:
        masks = np.arange(1 << K)
        feasible = np.zeros(1 << K, dtype=bool)
        for b in balls:
            bm = sum(1 << i for i in b)
            feasible |= (masks & ~bm) == 0
        for T in min_cover(feasible, K):
            members = set(_bits(T, K))
            centers.append(next(c for c in range(K) if members <= balls[c]))
    else:
        uncovered = set(range(K))
        while uncovered:
            c = max(range(K), key=lambda c: (len(balls[c] & uncovered), -c))
            centers.append(c)
            uncovered -= balls[c]
    assignment = tuple(int(min(centers, key=lambda c: (D[c, i], c))) for i in range(K))
    dist = np.array([D[a, i] for i, a in enumerate(assignment)])
    J = math.log(len(centers))
    return J, Net([support[c] for c in centers], tuple(centers.index(a) for a in assignment), dist, delta)


def bsw_to_ggr_net(brackets: BracketSet) -> Net:
    """Normalize each envelope to a density; every member lands within 2 delta of its own."""
    ints = brackets.integrals()
    if np.any(ints <= 0):
        raise ValueError("an envelope has zero mass and cannot be normalized")
    centers = brackets.envelopes / ints[:, None]
    w = brackets.grid.w
    dist = np.array(
        [np.abs(centers[e] - d._pdf(brackets.grid.x)) @ w for d, e in zip(brackets.members, brackets.assignment)]
    )
    limit = 2 * brackets.delta
    if np.any(dist > limit * (1 + 1e-12)):
        bad = int(np.argmax(dist))
        raise ValueError(f"member {bad} is {dist[bad]:.6g} from its normalized envelope, above 2 delta")
    return Net(list(centers), brackets.assignment, dist, limit)
