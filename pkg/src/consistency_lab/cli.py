"""Command-line entry point.

Subcommands::

    run         --scenario FILE --seed N --out DIR [--workers K] [--set key=value ...]
    divergence  --f SPEC --g SPEC --metric {aff,hell2,kl,l1}
    cover       --grid LO:HI:STEP --delta D [--prior uniform|power:P] [--beta B --n N ...]
    check       [--budget small|full]

Density specs: ``normal(mu=0,sigma=1)``, ``spiked(eps=0.2,m=4)``,
``hist(breaks=[0,0.5,1],heights=[1.5,0.5])``, ``noise(kind=laplace,scale=1)``,
``uniform()``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys

import numpy as np

from . import checks
from .densities import (
    DomainError,
    Histogram,
    NormalLocation,
    QuadratureError,
    SpikedUniform,
    SymmetricNoise,
    divergence,
    uniform,
)
from .entropy_sieves import build_cover, w_to_ggr_sieve, walker_condition_check
from .experiments import Scenario, ScenarioError, run_scenario, write_outputs
from .priors import location_grid_prior

SEED_ENV = "CONSISTENCY_LAB_SEED"


class SpecError(ValueError):
    pass


# ------------------------------------------------------------- spec grammar


def _split_args(body: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in body:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur)
    return [p.strip() for p in parts]


def _value(text: str):
    if text.startswith("["):
        try:
            return [float(v) for v in json.loads(text)]
        except (json.JSONDecodeError, TypeError, ValueError):
            raise SpecError(f"bad list {text!r}") from None
    try:
        return float(text)
    except ValueError:
        return text


_BUILDERS = {
    "normal": (NormalLocation, {"mu": float, "sigma": float}),
    "spiked": (SpikedUniform, {"eps": float, "m": int}),
    "hist": (lambda breaks, heights: Histogram(tuple(breaks), tuple(heights)), {"breaks": list, "heights": list}),
    "noise": (SymmetricNoise, {"kind": str, "scale": float}),
    "uniform": (uniform, {}),
}


def parse_density(spec: str):
    """Build a density from the spec mini-grammar."""
    m = re.fullmatch(r"\s*(\w+)\s*\((.*)\)\s*", spec)
    if not m:
        raise SpecError(f"cannot parse density spec {spec!r}")
    name, body = m.group(1), m.group(2)
    if name not in _BUILDERS:
        raise SpecError(f"unknown density family {name!r}; choose from {sorted(_BUILDERS)}")
    ctor, fields = _BUILDERS[name]
    kwargs = {}
    for arg in _split_args(body):
        if "=" not in arg:
            raise SpecError(f"argument {arg!r} must be key=value")
        k, v = (s.strip() for s in arg.split("=", 1))
        if k not in fields:
            raise SpecError(f"{name}() has no argument {k!r}")
        val = _value(v)
        typ = fields[k]
        if typ is int:
            if not isinstance(val, float) or val != int(val):
                raise SpecError(f"{k} must be an integer")
            val = int(val)
        elif typ is float and not isinstance(val, float):
            raise SpecError(f"{k} must be a number")
        elif typ is list and not isinstance(val, list):
            raise SpecError(f"{k} must be a list")
        kwargs[k] = val
    try:
        return ctor(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{spec}: {exc}") from None


# ---------------------------------------------------------------- commands


def _apply_override(d: dict, item: str) -> None:
    if "=" not in item:
        raise ScenarioError(item, "override must be key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    target, parts = d, key.split(".")
    for p in parts[:-1]:
        target = target.setdefault(p, {})
    target[parts[-1]] = val


def cmd_run(args) -> int:
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            print(f"error: {SEED_ENV} is not an integer", file=sys.stderr)
            return 2
    if seed is None:
        print("error: run needs --seed (or the CONSISTENCY_LAB_SEED variable)", file=sys.stderr)
        return 2
    try:
        text = open(args.scenario).read()
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return 2
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"error: {args.scenario}: line {exc.lineno}, column {exc.colno}: {exc.msg}", file=sys.stderr)
        return 2
    try:
        for item in args.set or []:
            _apply_override(raw, item)
        scenario = Scenario.from_dict(raw)
        result = run_scenario(scenario, seed=seed, workers=args.workers)
    except ScenarioError as exc:
        print(f"error: {args.scenario}: field {exc.field}: {exc}", file=sys.stderr)
        return 2
    try:
        paths = write_outputs(result, args.out)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return 2
    for a in result.assertions:
        status = "PASS" if a.passed else "FAIL"
        line = f"{status} experiments.run_scenario[{scenario.name}]: {a.name}"
        if not a.passed:
            line += f" (observed {a.observed}; required {a.required})"
        print(line)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if result.passed else 1


def cmd_divergence(args) -> int:
    try:
        f, g = parse_density(args.f), parse_density(args.g)
        res = divergence(f, g, args.metric)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, TypeError) as exc:
        print(f"error: unsupported pair: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"error: quadrature did not converge: {exc}", file=sys.stderr)
        return 3
    value = "inf" if math.isinf(res.value) else f"{res.value:.12g}"
    print(f"{args.metric} = {value} +/- {res.abserr:.3g} ({res.method})")
    return 0


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise SpecError("grid must be LO:HI:STEP") from None
    if not step > 0 or hi < lo:
        raise SpecError("grid needs step > 0 and HI >= LO")
    k = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(k + 1), 10)


def cmd_cover(args) -> int:
    try:
        thetas = _parse_grid(args.grid)
        if args.prior == "uniform":
            weights = None
        elif args.prior.startswith("power:"):
            weights = (1.0 + np.arange(thetas.size)) ** (-float(args.prior.split(":", 1)[1]))
        else:
            raise SpecError("prior must be 'uniform' or 'power:P'")
    except (SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    prior = location_grid_prior(thetas, weights=weights)
    cover = build_cover(prior, args.delta)
    total, finite = walker_condition_check(cover, prior)
    print(f"blocks = {len(cover)}")
    print(f"max diameter = {max(cover.diameters):.12g}")
    print(f"sum sqrt(block mass) = {total:.12g} ({'finite' if finite else 'divergent'})")
    if args.beta is not None:
        masses = cover.sorted_masses()
        for n in args.n or [0]:
            s = w_to_ggr_sieve(masses, args.beta, n, cover_delta=args.delta)
            print(
                f"n = {n}: k_n = {s.k}, kept blocks = {len(s.block_indices)}, complement mass = {s.complement_mass:.6g}, "
                f"bound 2c^2/k_n = {s.mass_bound:.6g}, log k_n = {s.entropy_bound:.6g}"
            )
    return 0


def cmd_check(args) -> int:
    results = checks.run_checks(args.budget)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status} {r.label} [{r.seconds:.3f} s]"
        if not r.passed:
            line += f" observed={r.observed}"
        print(line)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} invariants hold")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="consistency-lab", description="Posterior consistency laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario field, e.g. params.eps=0.3")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("divergence", help="affinity, Hellinger, KL or L1 between two densities")
    d.add_argument("--f", required=True)
    d.add_argument("--g", required=True)
    d.add_argument("--metric", choices=("aff", "hell2", "kl", "l1"), required=True)
    d.set_defaults(func=cmd_divergence)

    c = sub.add_parser("cover", help="L1 cover of a Gaussian location grid and its sieve bounds")
    c.add_argument("--grid", required=True, help="LO:HI:STEP")
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--prior", default="uniform")
    c.add_argument("--beta", type=float)
    c.add_argument("--n", type=int, action="append")
    c.set_defaults(func=cmd_cover)

    k = sub.add_parser("check", help="run the invariant suite")
    k.add_argument("--budget", choices=sorted(checks.BUDGETS), default="small")
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
