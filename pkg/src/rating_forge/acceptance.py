"""Acceptance suite: every numbered criterion at its stated tolerance and budget.

``run_all`` prints one line per criterion and returns the results; the CLI
``selftest`` command and ``tests/test_acceptance.py`` both drive it.
"""
from __future__ import annotations

import subprocess
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .construction import CHECK_TOL, construct_rating
from .equilibrium import check_ic, signaled_from_envelope
from .errors import InternalError, PreconditionError
from .foundation import cost_model, make_type_grid, normalize_weights, weight_profile
from .majorization import check_majorization, first_decrease
from .oracle import certify_optimality, enumerate_partitions, random_garbling, two_type_grid_oracle
from .random_quality import (GainFunction, assumption_suite, outcome_family, solve_auxiliary,
                             solve_two_type)
from .rating import check_separating, double_expectation
from .solvers import (dirac_weights, first_best_quality, solve_high_quality, solve_low_quality,
                      solve_mid_quality, solve_revenue)

REFERENCE_SOURCE = {"dist": "uniform", "low": 1.0, "high": 2.0}
SELFTEST_BUDGET = 360.0


@dataclass(frozen=True)
class CriterionResult:
    key: str
    title: str
    passed: bool
    detail: str
    seconds: float
    budget: float | None = None
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:.0f}s" if self.budget else ""
        return f"[{status}] {self.key:>3} {self.title}: {self.detail} ({self.seconds:.2f}s{budget})"

    def to_dict(self) -> dict:
        return {"key": self.key, "title": self.title, "pass": self.passed, "detail": self.detail,
                "seconds": self.seconds, "budget": self.budget, "metrics": self.metrics}


def reference_grid(n: int = 400):
    return make_type_grid(source=REFERENCE_SOURCE, n=n)


def reference_weights(kind: str, grid):
    raw = {
        "low": lambda: weight_profile("linear", grid, a=4.0, b=-2.0),
        "high": lambda: weight_profile("linear", grid, a=0.0, b=1.0),
        "mid": lambda: weight_profile("tent", grid, peak=1.6),
        "constant": lambda: weight_profile("constant", grid),
    }[kind]()
    return normalize_weights(raw, grid)


# ----------------------------------------------------------------- instances


def random_pair(rng):
    """Random monotone (q, qbar) on a random grid with N in 2..6.

    Half the pairs garble q (majorized by construction); the rest perturb a
    garbled pair, sometimes restoring the mean so only partial sums decide.
    """
    n = int(rng.integers(2, 7))
    f = rng.dirichlet(np.ones(n))
    grid = make_type_grid(np.arange(1.0, n + 1.0), f)
    q = np.sort(rng.uniform(0.0, 2.0, n))
    if n > 2 and rng.random() < 0.2:
        k = int(rng.integers(0, n - 1))
        q[k + 1] = q[k]
    while True:
        # two-point pooling can break monotonicity; redraw until it holds
        qbar = random_garbling(grid, seed=rng.integers(2**32)).matrix @ q
        if first_decrease(qbar) is None:
            break
    garbled = rng.random() < 0.5
    if not garbled:
        qbar = np.sort(qbar + rng.normal(0.0, 0.1, n))
        if rng.random() < 0.5:
            qbar += f @ (q - qbar)
    return grid, q, qbar, garbled


def construction_cases(seed: int = 0, count: int = 500):
    """Build every criterion-1 instance once; criteria 2 and 3 reuse the records."""
    rng = np.random.default_rng([seed, 1])
    cases = []
    for _ in range(count):
        grid, q, qbar, garbled = random_pair(rng)
        rep = check_majorization(q, qbar, grid, CHECK_TOL)
        rec = {"grid": grid, "q": q, "qbar": qbar, "garbled": garbled, "report": rep,
               "rating": None, "trace": None, "error": None}
        try:
            rec["rating"], rec["trace"] = construct_rating(q, qbar, grid)
        except PreconditionError as exc:
            rec["error"] = exc
        cases.append(rec)
    return cases


# ----------------------------------------------------------------- criteria


def criterion_1(ctx):
    t0 = time.perf_counter()
    cases = construction_cases(ctx["seed"])
    elapsed = time.perf_counter() - t0
    ctx["cases"] = cases
    mismatched, worst = 0, 0.0
    for rec in cases:
        built = rec["rating"] is not None
        if built != rec["report"].holds:
            mismatched += 1
        if built:
            err = np.max(np.abs(double_expectation(rec["rating"], rec["q"], rec["grid"]) - rec["qbar"]))
            worst = max(worst, float(err))
    feasible = sum(rec["rating"] is not None for rec in cases)
    ok = mismatched == 0 and worst <= 1e-9 and elapsed < 10.0
    return ok, (f"{len(cases)} instances, {feasible} majorized, iff-mismatches {mismatched}, "
                f"max |Aq-qbar| {worst:.2e}"), {"mismatched": mismatched, "roundtrip": worst,
                                                 "feasible": feasible, "build_seconds": elapsed}


def criterion_2(ctx):
    cases = ctx.get("cases") or construction_cases(ctx["seed"])
    too_long = non_decreasing = 0
    longest = 0
    for rec in cases:
        trace = rec["trace"]
        if trace is None:
            continue
        longest = max(longest, len(trace))
        if len(trace) > rec["grid"].n:
            too_long += 1
        if any(s.mismatch_after >= s.mismatch_before for s in trace.steps):
            non_decreasing += 1
    ok = too_long == 0 and non_decreasing == 0
    return ok, f"length > N: {too_long}, mismatch not decreasing: {non_decreasing}, longest {longest}", {
        "too_long": too_long, "non_decreasing": non_decreasing}


def criterion_3(ctx):
    cases = ctx.get("cases") or construction_cases(ctx["seed"])
    checked = disagree = 0
    for rec in cases:
        rs = rec["rating"]
        if rs is None:
            continue
        q = rec["q"]
        binding = set(rec["report"].binding)
        for k in range(q.size - 1):
            if q[k + 1] <= q[k]:
                continue  # tied types cannot be separated by any system
            checked += 1
            if check_separating(rs, k) != (k in binding):
                disagree += 1
    return disagree == 0, f"{checked} cutoffs checked, disagreements {disagree}", {
        "checked": checked, "disagree": disagree}


def criterion_4(ctx):
    grid = reference_grid()
    model = cost_model("quadratic")
    t0 = time.perf_counter()
    sol = solve_low_quality(model, grid, reference_weights("low", grid))
    elapsed = time.perf_counter() - t0
    residual = float(sol.meta["residual"])
    q15 = float(np.interp(1.5, grid.nodes, sol.q))
    exact = 1.5**2 / (1.5 + 0.5 * 0.5)
    gaps = check_majorization(sol.q, sol.qbar, grid).gaps
    min_gap = float(np.min(gaps[:-1]))
    ok = residual <= 1e-6 and abs(q15 - exact) <= 1e-3 and min_gap > 0 and elapsed < 5.0
    return ok, (f"residual {residual:.2e}, q(1.5) {q15:.6f} vs {exact:.6f}, "
                f"min interior slack {min_gap:.2e}"), {"residual": residual, "q15": q15,
                                                       "min_gap": min_gap, "solve_seconds": elapsed}


def criterion_5(ctx):
    grid = reference_grid()
    model = cost_model("quadratic")
    sol = solve_high_quality(model, grid, reference_weights("high", grid))
    fb = first_best_quality(model, grid)
    dev = float(np.max(np.abs(sol.q - fb)))
    cert = certify_optimality(sol, model, trials=10_000, seed=ctx["seed"])
    ok = dev <= 1e-8 and cert.best_improvement <= 1e-6
    return ok, f"|q - q_FB| {dev:.2e}, best improvement {cert.best_improvement:.2e} over 1e4 trials", {
        "deviation": dev, "improvement": cert.best_improvement}


def criterion_6(ctx):
    grid = reference_grid()
    model = cost_model("quadratic")
    weights = reference_weights("mid", grid)
    sol = solve_mid_quality(model, grid, weights)
    m = sol.meta
    ih, it, peak = m["i_hat"], m["i_tilde"], int(weights.peak)
    fb = first_best_quality(model, grid)
    below = float(np.max(np.abs(sol.q[:ih] - fb[:ih]))) if ih > 0 else 0.0
    flat = float(np.ptp(sol.q[ih:it])) if it > ih else 0.0
    cert = certify_optimality(sol, model, trials=10_000, seed=ctx["seed"])
    ok = (ih <= it < peak and below <= 1e-8 and flat <= 1e-12 and m["jump"] > 0
          and m["continuity_gap"] <= 1e-6 and cert.best_improvement <= 1e-5)
    return ok, (f"i_hat {ih} <= i_tilde {it} < peak {peak}, FB gap {below:.1e}, flat {flat:.1e}, "
                f"jump {m['jump']:.4f}, continuity {m['continuity_gap']:.1e}, "
                f"best improvement {cert.best_improvement:.2e}"), {
        "i_hat": ih, "i_tilde": it, "jump": m["jump"], "improvement": cert.best_improvement}


def criterion_7(ctx):
    grid = reference_grid()
    model = cost_model("quadratic")
    fb = first_best_quality(model, grid)
    flat = solve_low_quality(model, grid, reference_weights("constant", grid))
    dev_flat = float(np.max(np.abs(flat.q - fb)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo_w = normalize_weights(weight_profile("tent", grid, peak=float(grid.nodes[0])), grid)
        hi_w = normalize_weights(weight_profile("tent", grid, peak=float(grid.nodes[-1])), grid)
        lo_sol = solve_mid_quality(model, grid, lo_w)
        hi_sol = solve_mid_quality(model, grid, hi_w)
    dev_lo = float(np.max(np.abs(lo_sol.q - solve_low_quality(model, grid, lo_w).q)))
    dev_hi = float(np.max(np.abs(hi_sol.q - solve_high_quality(model, grid, hi_w).q)))
    ok = (dev_flat <= 1e-8 and lo_sol.regime == "low" and hi_sol.regime == "high"
          and dev_lo <= 1e-8 and dev_hi <= 1e-8)
    return ok, (f"lambda=1 vs FB {dev_flat:.1e}; low-end peak -> {lo_sol.regime} ({dev_lo:.1e}); "
                f"high-end peak -> {hi_sol.regime} ({dev_hi:.1e})"), {
        "flat": dev_flat, "low_end": dev_lo, "high_end": dev_hi}


def _random_gain(rng, n=None):
    n = n or int(rng.integers(1, 13))
    x = np.sort(rng.uniform(0.0, 1.0, n))
    h = rng.uniform(0.1, 1.0, n)
    h /= h.sum()
    g = rng.normal(0.0, 1.0, n)
    return g, h, x


def _slope_changes(g) -> int:
    d = np.sign(np.diff(g))
    d = d[d != 0]
    return int(np.sum(d[1:] != d[:-1]))


def criterion_8(ctx):
    rng = np.random.default_rng([ctx["seed"], 8])
    t0 = time.perf_counter()
    worst, adjacent, over = 0.0, 0, 0
    for _ in range(200):
        g, h, x = _random_gain(rng)
        part = solve_auxiliary(g, h, x)
        ref, _ = enumerate_partitions(g, h, x)
        worst = max(worst, abs(part.value - ref))
        if part.adjacent_pools():
            adjacent += 1
        if len(part.blocks) > _slope_changes(g) + 1:
            over += 1
    elapsed = time.perf_counter() - t0
    ctx["alternation"] = {"adjacent": adjacent, "over": over}
    ok = worst <= 1e-12 and elapsed < 10.0
    return ok, f"max |DP - enumeration| {worst:.1e} over 200 cases", {
        "worst": worst, "adjacent_pools": adjacent, "seconds": elapsed}


def criterion_8b(ctx):
    """Alternation of the normalized output (no two adjacent pooled blocks)."""
    if "alternation" not in ctx:
        criterion_8(ctx)
    adj = ctx["alternation"]["adjacent"]
    over = ctx["alternation"]["over"]
    g = np.array([2.0, 1.0, 3.0, 2.0])
    x = np.array([0.2, 0.4, 0.6, 0.8])
    h = np.full(4, 0.25)
    part = solve_auxiliary(g, h, x)
    return adj == 0 and over == 0, (f"{adj}/200 random optima need adjacent pools, {over} exceed the "
                                    f"block-count bound; gain (2,1,3,2) optimum pools {part.pooled()} "
                                    f"value {part.value:.4f}"), {"adjacent": adj, "over": over}


def criterion_9(ctx):
    rng = np.random.default_rng([ctx["seed"], 9])
    worst, changed = 0.0, 0
    for _ in range(100):
        g, h, x = _random_gain(rng, int(rng.integers(2, 65)))
        c = float(rng.normal(0.0, 5.0))
        base = solve_auxiliary(GainFunction(x, g, h))
        moved = solve_auxiliary(GainFunction(x, g, h).shifted(c))
        worst = max(worst, abs(moved.value - base.value - c * float(np.dot(h, x))))
        if [b[:3] for b in base.blocks] != [b[:3] for b in moved.blocks]:
            changed += 1
    ok = worst <= 1e-12 and changed == 0
    return ok, f"max value error {worst:.1e}, partitions changed {changed}/100", {
        "worst": worst, "changed": changed}


def criterion_10(ctx):
    t0 = time.perf_counter()
    reports = [assumption_suite(outcome_family(name), 64)
               for name in ("power-x", "power-1mx", "exponential-x")]
    elapsed = time.perf_counter() - t0
    failed = [r["family"] for r in reports if not r["pass"]]
    worst_mean = max(r["outcome"]["mean"]["worst"][0] for r in reports)
    ok = not failed and elapsed < 5.0
    return ok, f"failed families {failed or 'none'}, worst mean error {worst_mean:.1e}", {
        "failed": failed, "seconds": elapsed}


def criterion_11(ctx):
    model = cost_model("quadratic")
    family = outcome_family("power-x")
    t0 = time.perf_counter()
    sol = solve_two_type(model, family, (1.0, 2.0), (0.5, 0.5))
    grid_res = two_type_grid_oracle(model, family, (1.0, 2.0), (0.5, 0.5), resolution=1 / 64)
    elapsed = time.perf_counter() - t0
    kinds = [b[2] for b in sol.partition.blocks]
    x1, x2 = sol.thresholds
    gap = abs(sol.objective - grid_res.value)
    ok = (kinds == ["reveal", "pool", "reveal"] and 0.0 < x1 < x2 < 1.0 and sol.q[1] >= sol.q[0]
          and gap <= 1e-3 and sol.foa_valid and elapsed < 120.0)
    return ok, (f"blocks {'-'.join(kinds)}, x1 {x1:.4f} < x2 {x2:.4f}, q {sol.q[0]:.4f} <= {sol.q[1]:.4f}, "
                f"oracle gap {gap:.1e}, FOA {'valid' if sol.foa_valid else 'invalid'}"), {
        "gap": gap, "objective": sol.objective, "oracle": grid_res.value}


def criterion_12(ctx):
    grid = reference_grid()
    model = cost_model("quadratic")
    sol = solve_revenue(model, grid)
    c = sol.meta["cutoff"]
    mass = grid.weights[::-1].cumsum()[::-1]
    scan = np.empty(grid.n)
    for k in range(grid.n):
        sub = grid.restrict(k)
        scan[k] = solve_low_quality(model, sub, dirac_weights(sub)).profit[0] * mass[k]
    best = int(np.argmax(scan))
    sub = grid.restrict(c)
    ref = solve_low_quality(model, sub, dirac_weights(sub))
    dev = float(max(np.max(np.abs(sol.q - ref.q)), np.max(np.abs(sol.qbar - ref.qbar))))
    ok = best == c and scan[best] == sol.meta["revenue"] and dev <= 1e-8
    return ok, f"cutoff {c} (re-scan argmax {best}), revenue {sol.meta['revenue']:.6f}, schedule gap {dev:.1e}", {
        "cutoff": c, "rescan": best, "deviation": dev}


def criterion_13(ctx):
    rng = np.random.default_rng([ctx["seed"], 13])
    families = [cost_model("quadratic"), cost_model("cubic"), cost_model("quadratic", scale=2.0)]
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        nodes = np.sort(rng.uniform(1.0, 2.0, n))
        nodes = np.unique(nodes)
        n = nodes.size
        grid = make_type_grid(nodes, rng.dirichlet(np.ones(n)))
        q = np.sort(rng.uniform(0.0, 2.0, n))
        model = families[int(rng.integers(len(families)))]
        qbar, _ = signaled_from_envelope(q, model, grid, float(rng.uniform(0.0, 1.0)), check=False)
        worst = max(worst, check_ic(q, qbar, model, grid).worst[2])
    return worst <= 1e-9, f"max pairwise IC gain {worst:.1e} over 200 schedules", {"worst": worst}


def _cli(args, timeout=600):
    proc = subprocess.run([sys.executable, "-m", "rating_forge.cli", *args], capture_output=True,
                          timeout=timeout, check=False)
    return proc.returncode, proc.stdout


def criterion_14(ctx):
    runs = [["solve", "--objective", "mid"],
            ["solve-random", "--family", "power-x"],
            ["oracle", "--objective", "high", "--trials", "500", "--seed", "7"]]
    ok_runs = 0
    for args in runs:
        a = _cli(args)
        b = _cli(args)
        if a[0] == 0 and a == b:
            ok_runs += 1
    expected = len(runs)
    total = ctx.get("elapsed", 0.0)
    ok = ok_runs == expected and total < SELFTEST_BUDGET
    return ok, f"{ok_runs}/{expected} repeated invocations byte-identical, criteria 1-13 took {total:.1f}s", {
        "identical": ok_runs, "suite_seconds": total}


CRITERIA = [
    ("1", "characterization equivalence", criterion_1, 10.0),
    ("2", "construction trace bound", criterion_2, None),
    ("3", "separation at binding points", criterion_3, None),
    ("4", "low-quality solver", criterion_4, 5.0),
    ("5", "high-quality solver", criterion_5, 30.0),
    ("6", "mid-quality solver", criterion_6, 120.0),
    ("7", "degenerate-weight reductions", criterion_7, None),
    ("8", "auxiliary DP exactness", criterion_8, 10.0),
    ("8b", "auxiliary output alternation", criterion_8b, None),
    ("9", "gain-shift invariance", criterion_9, None),
    ("10", "outcome-family assumption suites", criterion_10, 5.0),
    ("11", "two-type random-quality solver", criterion_11, 120.0),
    ("12", "revenue solver", criterion_12, None),
    ("13", "envelope IC consistency", criterion_13, None),
    ("14", "CLI determinism and suite runtime", criterion_14, None),
]


def run_criterion(key: str, ctx: dict) -> CriterionResult:
    for k, title, fn, budget in CRITERIA:
        if k == key:
            break
    else:
        raise KeyError(key)
    t0 = time.perf_counter()
    try:
        ok, detail, metrics = fn(ctx)
    except (PreconditionError, InternalError, AssertionError) as exc:
        ok, detail, metrics = False, f"raised {type(exc).__name__}: {exc}", {}
    seconds = time.perf_counter() - t0
    if k != "14":
        ctx["elapsed"] = ctx.get("elapsed", 0.0) + seconds
    # runtime budgets are enforced inside the criteria that state them
    return CriterionResult(k, title, bool(ok), detail, seconds, budget, metrics)


def run_all(stream=None, seed: int = 0, keys=None) -> list:
    ctx = {"seed": seed}
    results = []
    for k, *_ in CRITERIA:
        if keys is not None and k not in keys:
            continue
        res = run_criterion(k, ctx)
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    if stream is not None:
        passed = sum(r.passed for r in results)
        print(f"{passed}/{len(results)} criteria passed", file=stream, flush=True)
    return results
