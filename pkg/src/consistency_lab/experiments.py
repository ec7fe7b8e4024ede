"""Scenario runner: simulate data, track posterior mass of a target set across n, fit decay rates.

A scenario is a JSON-serializable recipe name plus parameters.  Replicate r
draws from ``SeedSequence([seed, r])``, so output does not depend on how
replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import logsumexp

from .densities import NormalLocation, SpikedUniform, SymmetricNoise, kl_divergence, l1_distance, uniform
from .entropy_sieves import build_cover, sqrt_mass_sum, walker_condition_check
from .noniid_regression import (
    DesignPoints,
    LinearSemiparametricModel,
    SeriesRegressionModel,
    box_widths,
    coefficient_box_cover,
    doob_identification_statistic,
    generate_regression_data,
    kakutani_product_affinity,
    noniid_numerator_trace,
    separation_witness,
    series_mixture_certificate,
)
from .posterior import formal_posterior, log_mass_trace, log_posterior_mass
from .priors import (
    DiscretizedPrior,
    SubsetSelector,
    check_kl_support,
    improper_location_grid,
    location_grid_prior,
    mixture_with_atom,
)
from .separation import certify

__all__ = [
    "SCHEMA_VERSION",
    "CSV_HEADER",
    "ScenarioError",
    "Scenario",
    "DecayTrace",
    "DecayFit",
    "Assertion",
    "ScenarioResult",
    "RECIPES",
    "estimate_decay_rate",
    "run_scenario",
    "write_outputs",
    "replicate_rng",
]

SCHEMA_VERSION = 1
CSV_HEADER = "scenario,replicate,n,mass,beta_hat,censored"


class ScenarioError(ValueError):
    """A scenario field is missing or invalid; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ------------------------------------------------------------------ records


@dataclass(frozen=True)
class DecayTrace:
    """Log posterior mass of the target set at each checkpoint of one replicate."""

    scenario: str
    replicate: int
    n: tuple[int, ...]
    log_mass: tuple[float, ...]

    def __post_init__(self):
        if len(self.n) != len(self.log_mass):
            raise ValueError("rows must align with checkpoints")
        if any(v > 1e-12 for v in self.log_mass):
            raise ValueError("mass must lie in [0, 1]")

    @property
    def mass(self) -> np.ndarray:
        return np.exp(np.minimum(np.asarray(self.log_mass), 0.0))

    @property
    def censored(self) -> np.ndarray:
        return np.asarray(self.log_mass) == -math.inf

    @property
    def beta_hat(self) -> np.ndarray:
        """``-log(mass) / n``; NaN on censored rows and at n = 0."""
        lm, n = np.asarray(self.log_mass), np.asarray(self.n, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -lm / n
        out[self.censored | (n == 0)] = math.nan
        return out

    def rows(self):
        for n, m, b, c in zip(self.n, self.mass, self.beta_hat, self.censored):
            yield self.scenario, self.replicate, int(n), float(m), float(b), bool(c)


class DecayFit(NamedTuple):
    slope: float
    intercept: float
    residual_sd: float
    used: int
    censored: int


def estimate_decay_rate(trace: DecayTrace) -> DecayFit:
    """Least-squares line through ``(n, log mass)`` over uncensored rows; slope estimates ``-beta``."""
    keep = ~trace.censored
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 uncensored rows, have {int(keep.sum())}")
    n = np.asarray(trace.n, dtype=float)[keep]
    y = np.asarray(trace.log_mass)[keep]
    slope, intercept = np.polyfit(n, y, 1)
    resid = y - (slope * n + intercept)
    return DecayFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), int(keep.sum()), int((~keep).sum()))


class Assertion(NamedTuple):
    name: str
    observed: object
    required: str
    passed: bool


# ----------------------------------------------------------------- scenario


@dataclass
class Scenario:
    name: str
    kind: str
    checkpoints: tuple[int, ...]
    replicates: int = 1
    seed: int | None = None
    params: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ScenarioError("schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version!r}")
        if not isinstance(self.name, str) or not self.name or "," in self.name:
            raise ScenarioError("name", "must be a nonempty string without commas")
        if self.kind not in RECIPES:
            raise ScenarioError("kind", f"unknown recipe {self.kind!r}; choose from {sorted(RECIPES)}")
        try:
            cps = tuple(int(c) for c in self.checkpoints)
        except (TypeError, ValueError):
            raise ScenarioError("checkpoints", "must be a list of integers") from None
        if not cps or any(c < 1 for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ScenarioError("checkpoints", "must be positive and strictly increasing")
        self.checkpoints = cps
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ScenarioError("replicates", "must be an integer >= 1")
        if self.seed is not None and (not isinstance(self.seed, int) or not 0 <= self.seed < 2**64):
            raise ScenarioError("seed", "must be an unsigned 64-bit integer")
        if not isinstance(self.params, dict):
            raise ScenarioError("params", "must be an object")
        unknown = set(self.params) - set(RECIPES[self.kind].defaults)
        if unknown:
            raise ScenarioError(f"params.{sorted(unknown)[0]}", f"not a parameter of {self.kind}")

    def resolved_params(self) -> dict:
        return {**RECIPES[self.kind].defaults, **self.params}

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "kind": self.kind,
            "checkpoints": list(self.checkpoints),
            "replicates": self.replicates,
            "seed": self.seed,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("<root>", "scenario must be a JSON object")
        allowed = {"schema_version", "name", "kind", "checkpoints", "replicates", "seed", "params"}
        extra = set(d) - allowed
        if extra:
            raise ScenarioError(sorted(extra)[0], "unknown field")
        for req in ("schema_version", "name", "kind", "checkpoints"):
            if req not in d:
                raise ScenarioError(req, "missing")
        return cls(
            name=d["name"],
            kind=d["kind"],
            checkpoints=d["checkpoints"],
            replicates=d.get("replicates", 1),
            seed=d.get("seed"),
            params=d.get("params", {}),
            schema_version=d["schema_version"],
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, r]))


# ------------------------------------------------------------------ recipes


class ReplicateOutput(NamedTuple):
    arms: dict  # label -> log mass per checkpoint
    stats: list  # rows for the scenario's statistics table


@dataclass(frozen=True)
class Recipe:
    defaults: dict
    build: Callable[[dict], dict]
    simulate: Callable[[dict, dict, tuple, np.random.Generator], ReplicateOutput]
    assess: Callable[[dict, dict, "Scenario", dict, list], list]
    stats_columns: tuple[str, ...] = ()


def _grid(lo, hi, step):
    k = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(k + 1), 10)


def _median_decreasing(traces) -> tuple[list, bool]:
    med = np.median(np.vstack([t.log_mass for t in traces]), axis=0)
    return [float(m) for m in med], bool(np.all(np.diff(med) < 0))


def _kl_assertion(prior, theta0, eps_list) -> Assertion:
    chk = check_kl_support(prior, theta0, eps_list)
    return Assertion("kl-support", {"flags": chk.flags, "resolution": chk.resolution}, "positive mass in every KL ball", all(chk.flags))


# SchwartzWeak -------------------------------------------------------------


def _schwartz_build(p):
    thetas = _grid(p["grid_lo"], p["grid_hi"], p["grid_step"])
    prior = location_grid_prior(thetas)
    theta0 = NormalLocation(p["theta0"], 1.0)
    A = SubsetSelector.where(prior, lambda pt: abs(pt.density.mu - p["theta0"]) >= p["radius"] - 1e-9)
    cert = certify(prior, A, theta0)
    return {
        "prior": prior,
        "A": A,
        "theta0": theta0,
        "certificate": cert.as_dict(),
        "kl": _kl_assertion(prior, theta0, p["kl_eps"]),
    }


def _schwartz_simulate(ctx, p, cps, rng):
    x = p["theta0"] + rng.standard_normal(cps[-1])
    return ReplicateOutput({"": log_mass_trace(ctx["prior"], x, ctx["A"], cps)}, [])


def _slope_assertion(traces, band, fraction) -> Assertion:
    slopes = np.array([estimate_decay_rate(t).slope for t in traces])
    frac = float(np.mean(-slopes >= band))
    return Assertion(
        "decay-slope",
        {"fraction": frac, "median_slope": float(np.median(slopes))},
        f"-slope >= {band} in >= {fraction:.0%} of replicates",
        frac >= fraction,
    )


def _empty_target(ctx) -> list[Assertion]:
    return [Assertion("empty-target", 0, "target set has no prior mass, so its posterior mass is 0", True)]


def _schwartz_assess(ctx, p, s, arms, stats):
    if not len(ctx["A"]):
        return [ctx["kl"], *_empty_target(ctx)]
    traces = arms[""]
    med, dec = _median_decreasing(traces)
    return [
        ctx["kl"],
        Assertion("median-mass-decreasing", med, "strictly decreasing median log mass", dec),
        _slope_assertion(traces, p["slope_band"], p["pass_fraction"]),
    ]


# WalkerL1 ------------------------------------------------------------------


def _walker_build(p):
    thetas = _grid(p["grid_lo"], p["grid_hi"], p["grid_step"])
    rank = 1 + np.argsort(np.argsort(np.abs(thetas - p["theta0"]), kind="stable"), kind="stable")
    prior = location_grid_prior(thetas, weights=rank ** (-float(p["prior_power"])))
    theta0 = NormalLocation(p["theta0"], 1.0)
    cover = build_cover(prior, p["cover_delta"])
    total, ok = walker_condition_check(cover, prior)
    A = SubsetSelector.where(prior, lambda pt: l1_distance(pt.density, theta0) >= p["l1_radius"])
    cert = certify(prior, A, theta0)
    return {
        "prior": prior,
        "A": A,
        "theta0": theta0,
        "certificate": cert.as_dict(),
        "cover": {"blocks": len(cover), "max_diameter": max(cover.diameters), "sqrt_mass_sum": total},
        "walker": Assertion("walker-condition", total, "sum of sqrt block masses finite", ok),
        "kl": _kl_assertion(prior, theta0, p["kl_eps"]),
    }


def _walker_assess(ctx, p, s, arms, stats):
    if not len(ctx["A"]):
        return [ctx["kl"], ctx["walker"], *_empty_target(ctx)]
    traces = arms[""]
    med, dec = _median_decreasing(traces)
    bh = np.nanmedian(np.vstack([t.beta_hat for t in traces]), axis=0)
    return [
        ctx["kl"],
        ctx["walker"],
        Assertion("median-mass-decreasing", med, "strictly decreasing median log mass", dec),
        Assertion("positive-rate", float(bh[-1]), "median beta_hat at last checkpoint > 0", bool(bh[-1] > 0)),
    ]


# NonExponential ---------------------------------------------------------------


def _nonexp_build(p):
    eps = p["eps"]
    ms = [2**k for k in range(1, p["M"] + 1)]
    dens = [SpikedUniform(eps, m) for m in ms]
    weights = np.asarray(ms, dtype=float) ** (-float(p["mass_power"]))
    base = DiscretizedPrior.from_weights(dens, weights, labels=[f"m={m}" for m in ms])
    f0 = uniform()
    prior = mixture_with_atom(base, f0, p["atom_weight"])
    A = SubsetSelector.where(prior, lambda pt: isinstance(pt.density, SpikedUniform))
    for d in dens:
        l1, kl = l1_distance(d, f0), kl_divergence(f0, d)
        if not l1 >= eps - 1e-12:
            raise ScenarioError("params.eps", f"{d} is only {l1:.4g} from the uniform density in L1")
        if not kl >= eps * eps / 2 - 1e-12:
            raise ScenarioError("params.eps", f"{d} violates the Pinsker floor: KL {kl:.4g}")
    return {"prior": prior, "A": A, "theta0": f0, "kl": _kl_assertion(prior, f0, p["kl_eps"])}


def _nonexp_simulate(ctx, p, cps, rng):
    x = rng.random(cps[-1])
    return ReplicateOutput({"": log_mass_trace(ctx["prior"], x, ctx["A"], cps)}, [])


def _nonexp_assess(ctx, p, s, arms, stats):
    traces = arms[""]
    med, dec = _median_decreasing(traces)
    bh = np.vstack([t.beta_hat for t in traces])
    lo, hi = p["compare_n"]
    cps = list(s.checkpoints)
    if lo not in cps or hi not in cps:
        raise ScenarioError("params.compare_n", "both entries must be checkpoints")
    b_lo, b_hi = float(np.nanmedian(bh[:, cps.index(lo)])), float(np.nanmedian(bh[:, cps.index(hi)]))
    return [
        ctx["kl"],
        Assertion("median-mass-decreasing", med, "strictly decreasing median log mass (signature only)", dec),
        Assertion(
            "beta-hat-decline",
            {str(lo): b_lo, str(hi): b_hi},
            f"median beta_hat at n={hi} < at n={lo} (signature only, not a proof of subexponential decay)",
            b_hi < b_lo,
        ),
    ]


# ImproperLocation -------------------------------------------------------------


def _improper_build(p):
    prior = improper_location_grid(p["grid_lo"], p["grid_hi"], p["grid_step"])
    theta0 = NormalLocation(p["theta0"], 1.0)
    # cells of points inside the radius tile the open neighbourhood when the grid is cell-aligned
    A = SubsetSelector.where(prior, lambda pt: abs(pt.density.mu - p["theta0"]) >= p["radius"])
    return {"prior": prior, "A": A, "theta0": theta0, "kl": _kl_assertion(prior, theta0, p["kl_eps"])}


def _improper_simulate(ctx, p, cps, rng):
    x = p["theta0"] + rng.standard_normal(cps[-1])
    out = [log_posterior_mass(formal_posterior(ctx["prior"], x[:n], tol=p["tol"]), ctx["A"]) for n in cps]
    return ReplicateOutput({"": np.array(out)}, [])


def _improper_assess(ctx, p, s, arms, stats):
    final = np.array([t.mass[-1] for t in arms[""]])
    frac = float(np.mean(1 - final > p["neighborhood_mass"]))
    return [
        ctx["kl"],
        Assertion(
            "neighborhood-mass",
            frac,
            f"mass of |theta - theta0| < {p['radius']} above {p['neighborhood_mass']} in >= {p['pass_fraction']:.0%}",
            frac >= p["pass_fraction"],
        ),
    ]


# SeriesRegression ---------------------------------------------------------------


def _series_build(p):
    J = p["J"]
    boxes = coefficient_box_cover(J, box_widths(p["delta"], J), p["bound"])
    centers = np.array([b.center for b in boxes])
    psi0 = np.asarray(p["theta0"], dtype=float)
    order = np.lexsort((np.arange(len(centers)), np.linalg.norm(centers, axis=1)))
    weights = np.empty(len(centers))
    weights[order] = (1.0 + np.arange(len(centers))) ** (-float(p["prior_power"]))
    weights /= weights.sum()
    models = [SeriesRegressionModel(tuple(c)) for c in centers]
    hit = np.flatnonzero(np.all(np.isclose(centers, psi0), axis=1))
    if hit.size != 1:
        raise ScenarioError("params.theta0", "must be the centre of one coefficient box")
    in_A = np.max(np.abs(centers - psi0), axis=1) >= p["separation"]
    A = np.flatnonzero(in_A).tolist()
    cert = series_mixture_certificate([models[i] for i in A], models[hit[0]])
    walker = sqrt_mass_sum(weights)
    return {
        "models": models,
        "weights": weights,
        "A": A,
        "theta0": models[hit[0]],
        "certificate": cert.as_dict(),
        "beta0": cert.beta0,
        "cover": {"boxes": len(boxes), "diameter_bound": boxes[0].diameter_bound, "sqrt_mass_sum": walker.total},
        "kl": Assertion("kl-support", float(weights[hit[0]]), "theta0 carries prior mass", bool(weights[hit[0]] > 0)),
    }


def _series_simulate(ctx, p, cps, rng):
    data = generate_regression_data(ctx["theta0"], cps[-1], rng)
    models, w = ctx["models"], ctx["weights"]
    num = noniid_numerator_trace(models, w, ctx["A"], ctx["theta0"], data.x, data.y, cps)
    den = noniid_numerator_trace(models, w, range(len(models)), ctx["theta0"], data.x, data.y, cps)
    scaled = num + 0.5 * ctx["beta0"] * np.asarray(cps)
    stats = [("scaled-log-numerator", int(n), float(v)) for n, v in zip(cps, scaled)]
    return ReplicateOutput({"": np.minimum(num - den, 0.0)}, stats)


def _series_assess(ctx, p, s, arms, stats):
    med, dec = _median_decreasing(arms[""])
    by_n: dict = {}
    for _, _, n, v in stats:
        by_n.setdefault(n, []).append(v)
    scaled = [float(np.median(by_n[n])) for n in s.checkpoints]
    return [
        ctx["kl"],
        Assertion("median-mass-decreasing", med, "strictly decreasing median log mass", dec),
        Assertion(
            "scaled-numerator-decreasing",
            scaled,
            "median of log J_A + n beta0 / 2 strictly decreasing",
            bool(np.all(np.diff(scaled) < 0)),
        ),
    ]


# KakutaniDiagnostic ---------------------------------------------------------------


def _kakutani_designs(p):
    return {
        "summable": DesignPoints.power_decay(p["horizon"], a=1.0, p=p["decay_power"]),
        "constant": DesignPoints.periodic([1.0], p["horizon"]),
    }


def _kakutani_build(p):
    info = {}
    for label, design in _kakutani_designs(p).items():
        tr = kakutani_product_affinity(design, p["beta_true"], p["beta_alt"])
        info[label] = {
            "classification": tr.classification,
            "limit": tr.limit,
            "affinity_at_horizon": float(tr.affinity[-1]),
            "tail_bound": tr.tail_bound,
            "affinity_at_100": float(tr.affinity[99]),
        }
    return {"affinity": info}


def _kakutani_simulate(ctx, p, cps, rng):
    arms = {}
    for label, design in _kakutani_designs(p).items():
        x = design.points(cps[-1])
        y = p["beta_true"] * x + rng.standard_normal(x.size)
        llr = -0.5 * ((y - p["beta_alt"] * x) ** 2 - (y - p["beta_true"] * x) ** 2)
        cum = np.cumsum(llr)[np.asarray(cps) - 1]
        arms[label] = cum - np.logaddexp(0.0, cum)
    return ReplicateOutput(arms, [])


def _kakutani_assess(ctx, p, s, arms, stats):
    aff = ctx["affinity"]
    sm, co = aff["summable"], aff["constant"]
    final_summable = float(np.median([t.mass[-1] for t in arms["summable"]]))
    _, dec = _median_decreasing(arms["constant"])
    dbeta2 = (p["beta_true"] - p["beta_alt"]) ** 2
    return [
        Assertion("summable-classification", sm["classification"], "equivalent", sm["classification"] == "equivalent"),
        Assertion(
            "summable-limit",
            abs(sm["affinity_at_horizon"] - sm["limit"]),
            "partial product within 1e-6 of the closed-form limit, tail bound below 1e-6",
            abs(sm["affinity_at_horizon"] - sm["limit"]) <= 1e-6 and sm["tail_bound"] <= 1e-6,
        ),
        Assertion("constant-classification", co["classification"], "orthogonal", co["classification"] == "orthogonal"),
        Assertion(
            "constant-affinity-100",
            co["affinity_at_100"],
            "exp(-100 dbeta^2 / 8) to 1e-12",
            abs(co["affinity_at_100"] - math.exp(-100 * dbeta2 / 8)) <= 1e-12,
        ),
        Assertion("summable-mass-persists", final_summable, "median final mass of the wrong slope > 1e-3", final_summable > 1e-3),
        Assertion("constant-mass-decays", dec, "strictly decreasing median log mass", dec),
    ]


# SemiparametricDoob -----------------------------------------------------------------


def _noise(p):
    return SymmetricNoise(p["noise"], p["noise_scale"])


def _doob_build(p):
    noise = _noise(p)
    truth = LinearSemiparametricModel(p["alpha"], p["beta"], noise)
    other = LinearSemiparametricModel(p["mismatch"][0], p["mismatch"][1], noise)
    wit = separation_witness(truth, other, eps0=p["witness_eps0"])
    return {"truth": truth, "other": other, "witness": wit}


def _doob_simulate(ctx, p, cps, rng):
    design = DesignPoints.alternating(cps[-1], a=p["design_a"])
    truth, other, wit = ctx["truth"], ctx["other"], ctx["witness"]
    data = generate_regression_data(truth, cps[-1], rng, design)
    stats = []
    for n in cps:
        x, y = data.x[:n], data.y[:n]
        for t in p["ts"]:
            stats.append(("true", n, "all", float(t), doob_identification_statistic(x, y, truth, t)))
        v = doob_identification_statistic(x, y, other, wit.t, wit.subsequence, p["eps0"])
        stats.append(("mismatch", n, wit.subsequence, wit.t, v))
    llr = np.cumsum(truth.noise.logpdf(data.y - other.mean(data.x)) - truth.noise.logpdf(data.y - truth.mean(data.x)))
    cum = llr[np.asarray(cps) - 1]
    return ReplicateOutput({"": cum - np.logaddexp(0.0, cum)}, stats)


def _doob_assess(ctx, p, s, arms, stats):
    n_final = s.checkpoints[-1]
    noise, wit = ctx["truth"].noise, ctx["witness"]
    out = []
    for t in p["ts"]:
        P = float(noise.sf(t))
        se = math.sqrt(P * (1 - P) / n_final)
        vals = np.array([r[-1] for r in stats if r[1] == "true" and r[2] == n_final and r[4] == t])
        frac = float(np.mean(np.abs(vals - P) <= 3 * se))
        out.append(Assertion(f"lln-t={t:g}", frac, f"within 3 SE of {P:.6f} in >= {p['coverage']:.0%}", frac >= p["coverage"]))
    x = DesignPoints.alternating(n_final, a=p["design_a"]).points()
    m = int(np.sum(x > p["eps0"]) if wit.subsequence == "N1" else np.sum(x < -p["eps0"]) if wit.subsequence == "M1" else x.size)
    se = math.sqrt(0.25 / m)
    vals = np.array([r[-1] for r in stats if r[1] == "mismatch" and r[2] == n_final])
    if wit.mismatch_side == ">=":
        ok = bool(np.all(vals >= 0.5 - 3 * se)) and wit.p_true < 0.5
        req = f"statistic >= 1/2 - 3 SE on {wit.subsequence} in every replicate, P(A_t) < 1/2"
    else:
        ok = bool(np.all(vals <= 0.5 + 3 * se)) and wit.p_true > 0.5
        req = f"statistic <= 1/2 + 3 SE on {wit.subsequence} in every replicate, P(A_t) > 1/2"
    out.append(Assertion("mismatch-identified", {"min": float(vals.min()), "max": float(vals.max()), "t": wit.t, "p_true": wit.p_true}, req, ok))
    med, dec = _median_decreasing(arms[""])
    out.append(Assertion("mismatch-mass-decreasing", med, "strictly decreasing median log mass", dec))
    return out


RECIPES: dict[str, Recipe] = {
    "SchwartzWeak": Recipe(
        {"grid_lo": -3.0, "grid_hi": 3.0, "grid_step": 0.1, "theta0": 0.0, "radius": 1.0,
         "slope_band": 0.3, "pass_fraction": 0.95, "kl_eps": [0.01, 0.1, 0.5]},
        _schwartz_build, _schwartz_simulate, _schwartz_assess,
    ),
    "WalkerL1": Recipe(
        {"grid_lo": -3.0, "grid_hi": 3.0, "grid_step": 0.1, "theta0": 0.0, "l1_radius": 0.5,
         "cover_delta": 0.15, "prior_power": 4.0, "kl_eps": [0.01, 0.1, 0.5]},
        _walker_build, _schwartz_simulate, _walker_assess,
    ),
    "NonExponential": Recipe(
        {"eps": 0.1, "M": 14, "mass_power": 0.5, "atom_weight": 0.5, "compare_n": [500, 4000], "kl_eps": [0.01]},
        _nonexp_build, _nonexp_simulate, _nonexp_assess,
    ),
    "ImproperLocation": Recipe(
        {"grid_lo": -49.995, "grid_hi": 49.995, "grid_step": 0.01, "theta0": 0.0, "radius": 0.2,
         "neighborhood_mass": 0.99, "pass_fraction": 0.95, "tol": 1e-6, "kl_eps": [0.01, 0.1]},
        _improper_build, _improper_simulate, _improper_assess,
    ),
    "SeriesRegression": Recipe(
        {"J": 2, "delta": 0.5, "bound": 1.0, "theta0": [0.375, -0.1875], "separation": 0.3, "prior_power": 4.0},
        _series_build, _series_simulate, _series_assess, ("replicate", "quantity", "n", "value"),
    ),
    "KakutaniDiagnostic": Recipe(
        {"beta_true": 0.0, "beta_alt": 1.0, "decay_power": 1.0, "horizon": 1_000_000},
        _kakutani_build, _kakutani_simulate, _kakutani_assess,
    ),
    "SemiparametricDoob": Recipe(
        {"alpha": 1.0, "beta": 2.0, "noise": "standard-normal", "noise_scale": 1.0, "design_a": 1.0,
         "eps0": 0.5, "witness_eps0": 1.0, "mismatch": [0.5, 1.5], "ts": [-1.0, 0.0, 1.0], "coverage": 0.95},
        _doob_build, _doob_simulate, _doob_assess, ("replicate", "candidate", "n", "subsequence", "t", "value"),
    ),
}


# ------------------------------------------------------------------- runner


@functools.lru_cache(maxsize=8)
def _context(kind: str, params_json: str) -> dict:
    return RECIPES[kind].build(json.loads(params_json))


def _replicate_job(job):
    kind, params_json, cps, seed, r = job
    ctx = _context(kind, params_json)
    return RECIPES[kind].simulate(ctx, json.loads(params_json), cps, replicate_rng(seed, r))


@dataclass
class ScenarioResult:
    scenario: Scenario
    seed: int
    traces: list[DecayTrace]
    stats: list[tuple]
    assertions: list[Assertion]
    summary: dict

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


def _quantiles(a: np.ndarray) -> dict:
    with np.errstate(all="ignore"):
        q = np.nanquantile(a, [0.1, 0.5, 0.9], axis=0) if np.any(np.isfinite(a)) else np.full((3, a.shape[1]), np.nan)
    return {"q10": q[0].tolist(), "median": q[1].tolist(), "q90": q[2].tolist()}


def run_scenario(scenario: Scenario, seed: int | None = None, workers: int = 1) -> ScenarioResult:
    """Run every replicate and evaluate the scenario's assertions.

    ``seed`` overrides the scenario's own; one of them is required.
    """
    seed = scenario.seed if seed is None else seed
    if seed is None:
        raise ScenarioError("seed", "a seed is required")
    recipe = RECIPES[scenario.kind]
    params = scenario.resolved_params()
    params_json = json.dumps(params, sort_keys=True)
    try:
        ctx = _context(scenario.kind, params_json)
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError("params", f"{scenario.kind} construction failed: {exc}") from exc
    jobs = [(scenario.kind, params_json, scenario.checkpoints, seed, r) for r in range(scenario.replicates)]
    if workers <= 1:
        outputs = [_replicate_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outputs = list(ex.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    arms: dict[str, list[DecayTrace]] = {}
    traces, stats = [], []
    for r, out in enumerate(outputs):
        for label, lm in out.arms.items():
            name = scenario.name if not label else f"{scenario.name}/{label}"
            tr = DecayTrace(name, r, scenario.checkpoints, tuple(float(v) for v in lm))
            arms.setdefault(label, []).append(tr)
        stats.extend((r,) + tuple(row) for row in out.stats)
    for label in arms:  # replicate-major within each arm
        traces.extend(arms[label])
    assertions = recipe.assess(ctx, params, scenario, arms, stats)

    summary = {
        "scenario": scenario.to_dict(),
        "seed": seed,
        "checkpoints": list(scenario.checkpoints),
        "arms": {},
        "certificates": {k: ctx[k] for k in ("certificate", "cover", "affinity") if k in ctx},
        "assertions": [a._asdict() for a in assertions],
        "passed": all(a.passed for a in assertions),
    }
    if scenario.kind == "NonExponential":
        summary["note"] = "signature check of declining empirical exponent; not a proof of subexponential decay"
    for label, trs in arms.items():
        lm = np.vstack([t.log_mass for t in trs])
        entry = {
            "log_mass": _quantiles(np.where(np.isfinite(lm), lm, np.nan)),
            "mass": _quantiles(np.vstack([t.mass for t in trs])),
            "beta_hat": _quantiles(np.vstack([t.beta_hat for t in trs])),
            "censored_rows": int(sum(t.censored.sum() for t in trs)),
        }
        fits = []
        for t in trs:
            try:
                fits.append(estimate_decay_rate(t).slope)
            except ValueError:
                pass
        if fits:
            entry["slope"] = {"median": float(np.median(fits)), "q10": float(np.quantile(fits, 0.1)), "q90": float(np.quantile(fits, 0.9))}
        summary["arms"][label or scenario.name] = entry
    return ScenarioResult(scenario, seed, traces, stats, assertions, summary)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_outputs(result: ScenarioResult, out_dir) -> dict:
    """Write ``<name>.csv``, ``<name>_summary.json`` and, if present, ``<name>_stats.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.scenario.name
    paths = {"csv": out / f"{name}.csv", "summary": out / f"{name}_summary.json"}
    with paths["csv"].open("w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for tr in result.traces:
            for sc, r, n, m, b, c in tr.rows():
                fh.write(f"{sc},{r},{n},{m!r},{b!r},{int(c)}\n")
    cols = RECIPES[result.scenario.kind].stats_columns
    if cols and result.stats:
        paths["stats"] = out / f"{name}_stats.csv"
        with paths["stats"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in result.stats:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    paths["summary"].write_text(json.dumps(_jsonable(result.summary), indent=2, sort_keys=True) + "\n")
    return paths
