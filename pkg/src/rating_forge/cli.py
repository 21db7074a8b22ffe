"""Command-line entry point: ``rating-forge <subcommand> [options]``.

Every subcommand reads an instance file (``-i``), writes canonical JSON to
stdout or ``--out``, and optionally plot data as CSV (``--plot``). Exit codes:
0 success, 1 selftest failure, 2 invalid input or unmet precondition, 3
internal error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import io as rio
from .construction import construct_rating
from .equilibrium import profits, verify_equilibrium
from .errors import InternalError, PreconditionError, ValidationError
from .foundation import check_cost_assumptions
from .majorization import check_majorization
from .oracle import certify_optimality, two_type_grid_oracle
from .random_quality import (assumption_suite, gain_two_type, outcome_family, outcome_lattice,
                             solve_two_type)
from .solvers import (objective_value, solve_high_quality, solve_low_quality, solve_mid_quality,
                      solve_revenue, solve_total)

log = logging.getLogger("rating_forge")

SOLVE_COLUMNS = ("theta", "f", "lambda", "q", "qbar", "profit")
RANDOM_COLUMNS = ("x", "xbar", "gamma", "h")
TRACE_COLUMNS = ("step", "kind", "k", "l", "lambda")


def _setup_logging():
    level = os.environ.get("RATING_FORGE_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def _instance(args) -> rio.InstanceFile:
    if args.instance is None:
        objective = getattr(args, "objective", None) or "low"
        log.info("no instance given; using the reference instance (%s)", objective)
        return rio.reference_instance(objective)
    return rio.load_instance(args.instance)


def _tol(args, inst, default: float) -> float:
    if args.tol is not None:
        return args.tol
    return float(inst.option("tol", default))


def _emit(args, payload):
    text = rio.dumps(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _solve(inst: rio.InstanceFile, objective: str | None):
    objective = objective or inst.objective
    if objective is None:
        raise ValidationError("no objective: pass --objective or set 'objective' in the instance")
    if objective not in rio.OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}")
    grid = inst.type_grid()
    model = inst.cost_model()
    if objective == "revenue":
        return solve_revenue(model, grid), model
    if objective == "total":
        weights = inst.welfare(grid) if inst.weights is not None else None
        return solve_total(model, grid, weights), model
    if inst.weights is None:
        raise ValidationError(f"objective {objective!r} needs a 'weights' block")
    weights = inst.welfare(grid)
    if objective == "low":
        return solve_low_quality(model, grid, weights), model
    if objective == "high":
        return solve_high_quality(model, grid, weights), model
    return solve_mid_quality(model, grid, weights, stride=inst.option("stride")), model


def _random_block(inst: rio.InstanceFile, family_name: str | None):
    rnd = inst.random or {}
    name = family_name or rnd.get("family")
    if name is None:
        raise ValidationError("no outcome family: pass --family or set 'random.family'")
    theta = rnd.get("theta", [1.0, 2.0])
    f = rnd.get("f", [0.5, 0.5])
    lam = rnd.get("lambda", [1.0, 0.0])
    return outcome_family(name), theta, f, lam


# ------------------------------------------------------------------ subcommands


def cmd_check(args) -> int:
    inst = _instance(args)
    grid = inst.type_grid()
    model = inst.cost_model()
    tol = _tol(args, inst, 1e-12)
    qmax = float(np.max(grid.nodes)) * 2.0
    rep = check_cost_assumptions(model, qmax, theta_range=(float(grid.nodes[0]), float(grid.nodes[-1])),
                                 tol=tol)
    out = {"cost": {"pass": rep.passed, "worst": {k: list(v) for k, v in rep.worst.items()},
                    "derivative_error": rep.derivative_error}}
    if inst.weights is not None:
        w = inst.welfare(grid)
        out["weights"] = {"shape": w.shape, "peak": w.peak}
    if inst.schedules is not None:
        q, qbar = inst.pair()
        out["majorization"] = check_majorization(q, qbar, grid, tol).to_dict()
    if inst.random is not None and "family" in inst.random:
        out["random"] = assumption_suite(outcome_family(inst.random["family"]),
                                         int(inst.option("lattice", 64)))
    _emit(args, out)
    return 0


def cmd_eval(args) -> int:
    inst = _instance(args)
    grid = inst.type_grid()
    model = inst.cost_model()
    q, qbar = inst.pair()
    pi = profits(q, qbar, model, grid)
    out = {"profit": pi, "verify": verify_equilibrium(q, qbar, model, grid,
                                                        _tol(args, inst, 1e-9)).to_dict()}
    if inst.weights is not None:
        out["objective"] = objective_value(pi, inst.welfare(grid), grid)
    _emit(args, out)
    if args.plot:
        lam = inst.welfare(grid).values if inst.weights is not None else np.ones(grid.n)
        rio.write_csv(args.plot, SOLVE_COLUMNS,
                      zip(grid.nodes, grid.weights, lam, q, qbar, pi))
    return 0


def cmd_construct(args) -> int:
    inst = _instance(args)
    grid = inst.type_grid()
    q, qbar = inst.pair()
    rs, trace = construct_rating(q, qbar, grid, _tol(args, inst, 1e-10))
    steps = [{"step": i, "kind": kind, "k": k, "l": l, "lambda": lam} for i, kind, k, l, lam in trace.rows()]
    _emit(args, {"rating": rs.to_dict(), "trace": steps, "garbling": trace.composed.matrix,
                 "residual": trace.residual})
    if args.plot:
        rio.write_csv(args.plot, TRACE_COLUMNS, ([i, kind, k, l, float(lam)]
                                                 for i, kind, k, l, lam in trace.rows()))
    return 0


def cmd_verify(args) -> int:
    inst = _instance(args)
    grid = inst.type_grid()
    q, qbar = inst.pair()
    rep = verify_equilibrium(q, qbar, inst.cost_model(), grid, _tol(args, inst, 1e-9))
    _emit(args, rep.to_dict())
    return 0


def cmd_solve(args) -> int:
    inst = _instance(args)
    sol, model = _solve(inst, args.objective)
    out = sol.to_dict()
    out["verify"] = sol.verify(model).to_dict()
    _emit(args, out)
    if args.plot:
        g = sol.grid
        rio.write_csv(args.plot, SOLVE_COLUMNS,
                      zip(g.nodes, g.weights, sol.weights.values, sol.q, sol.qbar, sol.profit))
    return 0


def cmd_solve_random(args) -> int:
    inst = _instance(args)
    family, theta, f, lam = _random_block(inst, args.family)
    n = int(inst.option("lattice", 256))
    model = inst.cost_model()
    sol = solve_two_type(model, family, theta, f, lam, n=n, stride=int(inst.option("stride", 8)),
                         threads=args.threads)
    out = sol.to_dict()
    out["family"] = family.name
    _emit(args, out)
    if args.plot:
        part = sol.partition
        g1, g2 = sol.multipliers
        gain = gain_two_type(sol.q[0], sol.q[1], g1, g2, f, family, outcome_lattice(n))
        rio.write_csv(args.plot, RANDOM_COLUMNS, zip(part.x, part.xbar(), gain.values, part.h))
    return 0


def cmd_oracle(args) -> int:
    inst = _instance(args)
    seed = args.seed if args.seed is not None else int(inst.option("seed", 0))
    if args.family is not None or inst.random is not None:
        family, theta, f, _ = _random_block(inst, args.family)
        res = two_type_grid_oracle(inst.cost_model(), family, theta, f,
                                   resolution=float(inst.option("resolution", 1.0 / 64)),
                                   n=int(inst.option("lattice", 256)))
        _emit(args, {"family": family.name, "value": res.value, "cells": list(res.cells),
                     "thresholds": list(res.thresholds), "q": list(res.q), "skipped": res.skipped})
        return 0
    sol, model = _solve(inst, args.objective)
    trials = args.trials if args.trials is not None else int(inst.option("trials", 10_000))
    cert = certify_optimality(sol, model, trials=trials, seed=seed, tol=_tol(args, inst, 1e-6))
    _emit(args, {"regime": sol.regime, "objective": sol.objective, "certificate": cert.to_dict()})
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all
    results = run_all(stream=sys.stdout, seed=args.seed if args.seed is not None else 0)
    if args.out:
        _emit(args, [r.to_dict() for r in results])
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "check": (cmd_check, "check cost, weight, schedule and outcome-family assumptions"),
    "eval": (cmd_eval, "profits, objective and equilibrium checks for given schedules"),
    "construct": (cmd_construct, "build a rating system implementing qbar from q"),
    "verify": (cmd_verify, "incentive and majorization checks for given schedules"),
    "solve": (cmd_solve, "optimal schedules for a welfare objective"),
    "solve-random": (cmd_solve_random, "two-type random-quality design"),
    "oracle": (cmd_oracle, "brute-force check of a solution"),
    "selftest": (cmd_selftest, "run the acceptance suite"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rating-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-i", "--instance", help="instance JSON file")
        p.add_argument("--out", help="write JSON here instead of stdout")
        p.add_argument("--plot", help="write plot data CSV here")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for candidate scans")
        p.add_argument("--tol", type=float, help="check tolerance")
        if name in ("solve", "oracle"):
            p.add_argument("--objective", choices=rio.OBJECTIVES)
        if name in ("solve-random", "oracle"):
            p.add_argument("--family", help="outcome family: power-x, power-1mx or exp-x")
        if name == "oracle":
            p.add_argument("--trials", type=int, help="perturbation trials")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return func(args)
    except PreconditionError as exc:
        print(f"rating-forge: precondition failed: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"rating-forge: invalid input: {exc}", file=sys.stderr)
        return 2
    except (InternalError, AssertionError) as exc:
        print(f"rating-forge: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
