import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import all_partition_values, best_partition
from rating_forge.acceptance import reference_weights
from rating_forge.construction import construct_rating
from rating_forge.equilibrium import signaled_from_envelope
from rating_forge.errors import PreconditionError, ValidationError
from rating_forge.foundation import cost_model, make_type_grid
from rating_forge.majorization import check_majorization
from rating_forge.oracle import (certify_optimality, enumerate_partitions, implementability_boundary,
                                 partition_value, random_garbling, two_type_grid_oracle)
from rating_forge.random_quality import outcome_family, solve_auxiliary, solve_two_type
from rating_forge.solvers import SolverSolution, objective_value, solve_high_quality

QUAD = cost_model("quadratic")
HALF = make_type_grid([1.0, 2.0], [0.5, 0.5])


# ------------------------------------------------------------------ garblings


def test_garbling_identity():
    g = make_type_grid([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
    a = random_garbling(g, seed=0, components=0)
    np.testing.assert_array_equal(a.matrix, np.eye(3))


def test_garbling_full_pool():
    g = make_type_grid([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
    a = random_garbling(g, generators=[("interval", 0, 2)], probs=[1.0])
    np.testing.assert_allclose(a.matrix, np.outer(np.ones(3), g.weights))


def test_garbling_bad_probs():
    with pytest.raises(ValidationError):
        random_garbling(HALF, generators=[("interval", 0, 1)], probs=[0.7, 0.7])


@given(st.integers(1, 15), st.integers(0, 10_000))
def test_random_garbling_is_f_stochastic(n, seed):
    rng = np.random.default_rng(seed)
    g = make_type_grid(np.arange(1.0, n + 1), rng.dirichlet(np.ones(n)))
    a = random_garbling(g, seed=seed)
    assert a.is_f_stochastic()
    # A q is majorized by q for any increasing q
    q = np.sort(rng.uniform(0, 3, n))
    qbar = a.matrix @ q
    if np.all(np.diff(qbar) >= -1e-12):
        assert check_majorization(q, qbar, g, 1e-9).holds


def test_random_garbling_deterministic():
    g = make_type_grid(np.arange(1.0, 7.0), np.full(6, 1 / 6))
    np.testing.assert_array_equal(random_garbling(g, seed=3).matrix, random_garbling(g, seed=3).matrix)


# ----------------------------------------------------------------- certificate


def test_certificate_accepts_optimum(ref_grid):
    sol = solve_high_quality(QUAD, ref_grid, reference_weights("high", ref_grid))
    cert = certify_optimality(sol, QUAD, trials=300, seed=1)
    assert cert.passed
    assert cert.best_improvement <= 1e-6
    assert set(cert.log) >= {"compensated", "transfer", "band", "noise", "reveal", "rejected"}


@pytest.fixture(scope="module")
def distorted(ref_grid):
    w = reference_weights("high", ref_grid)
    q = ref_grid.nodes.copy()
    q[150:250] *= 0.95
    q = np.maximum.accumulate(q)
    qbar, _ = signaled_from_envelope(q, QUAD, ref_grid, 0.0)
    qbar = qbar + float(ref_grid.weights @ (q - qbar))
    pi = qbar - QUAD.C(q, ref_grid.nodes)
    return SolverSolution(q, qbar, pi, objective_value(pi, w, ref_grid), "high", ref_grid, w)


def test_certificate_rejects_distorted(distorted):
    assert distorted.verify(QUAD).passed
    cert = certify_optimality(distorted, QUAD, trials=200, seed=0)
    assert not cert.passed
    assert cert.best_improvement > 1e-5


def test_certificate_monotone_in_trials(distorted):
    small = certify_optimality(distorted, QUAD, trials=50, seed=4)
    large = certify_optimality(distorted, QUAD, trials=100, seed=4)
    assert large.best_improvement >= small.best_improvement
    assert large.digest == small.digest


def test_certificate_needs_feasible_start(ref_grid):
    w = reference_weights("high", ref_grid)
    q = ref_grid.nodes
    qbar = q + 0.1
    pi = qbar - QUAD.C(q, ref_grid.nodes)
    bad = SolverSolution(q, qbar, pi, objective_value(pi, w, ref_grid), "high", ref_grid, w)
    with pytest.raises(PreconditionError):
        certify_optimality(bad, QUAD, trials=5)


# ---------------------------------------------------------------- enumeration


def test_enumeration_alternation_counterexample():
    g = np.array([2.0, 1.0, 3.0, 2.0])
    x = np.array([0.2, 0.4, 0.6, 0.8])
    h = np.full(4, 0.25)
    val, part = enumerate_partitions(g, h, x)
    top = max(all_partition_values(g.tolist(), h.tolist(), x.tolist()))
    assert val == pytest.approx(top[0], abs=1e-12)
    assert val == pytest.approx(1.1, abs=1e-12)
    # the optimum needs two adjacent pools
    assert part.pooled() == [(0, 2), (2, 4)]
    assert part.adjacent_pools() == 1


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=8), st.integers(0, 1000))
def test_enumeration_matches_dp(gvals, seed):
    rng = np.random.default_rng(seed)
    n = len(gvals)
    g = np.array(gvals, float)
    h = rng.integers(1, 4, n) / 8.0
    x = np.cumsum(rng.integers(1, 3, n)) / 20.0
    val, part = enumerate_partitions(g, h, x)
    assert val == pytest.approx(float(best_partition(g.tolist(), h.tolist(), x.tolist())), abs=1e-12)
    assert val == pytest.approx(solve_auxiliary(g, h, x).value, abs=1e-12)
    assert partition_value(part, g) == pytest.approx(val, abs=1e-12)


def test_enumeration_limit():
    with pytest.raises(ValidationError):
        enumerate_partitions(np.ones(13), np.ones(13), np.arange(13.0))


# ------------------------------------------------------------------- boundary


def test_boundary_two_types():
    probe = implementability_boundary([1.0, 2.0], HALF, [-1.0, 1.0])
    assert probe.t == pytest.approx(0.5, abs=1e-6)
    assert probe.consistent
    assert probe.residual == pytest.approx(0.0, abs=1e-12)


def test_boundary_random_rays():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 8))
        g = make_type_grid(np.arange(1.0, n + 1), rng.dirichlet(np.ones(n)))
        q = np.sort(rng.uniform(0, 2, n))
        d = np.sort(rng.normal(size=n))
        d -= g.weights @ d
        if np.ptp(d) < 1e-3:
            continue
        probe = implementability_boundary(q, g, d)
        assert probe.majorized_at_t and probe.constructed_at_t
        # boundary points bind within the partial-sum tolerance, which allows
        # an entry-wise miss of order tol / f_j
        assert probe.residual <= 2e-9 * max(1.0, np.max(np.abs(q))) / g.weights.min()
        assert not probe.majorized_beyond


def test_boundary_infeasible_base():
    with pytest.raises(PreconditionError):
        implementability_boundary([1.0, 2.0], HALF, [1.0, -1.0], base=np.array([1.8, 1.8]))


def test_boundary_point_constructs():
    q = np.array([0.0, 1.0, 2.0])
    g = make_type_grid([1.0, 2.0, 3.0], [1 / 3] * 3)
    probe = implementability_boundary(q, g, np.array([-1.0, 0.0, 1.0]))
    assert probe.t == pytest.approx(1.0, abs=1e-6)
    rs, _ = construct_rating(q, np.full(3, 1.0) + probe.t * np.array([-1.0, 0.0, 1.0]), g, 1e-5)
    assert rs is not None


# ------------------------------------------------------------------ grid oracle


def test_grid_oracle_agrees_with_solver():
    fam = outcome_family("power-x")
    res = two_type_grid_oracle(QUAD, fam, (1.0, 2.0), (0.5, 0.5), resolution=1 / 8, n=32)
    sol = solve_two_type(QUAD, fam, (1.0, 2.0), (0.5, 0.5), n=32)
    assert abs(res.value - sol.objective) <= 1e-3
    # the oracle never uses first-order conditions, so it cannot beat a certified optimum
    assert res.value <= sol.objective + 1e-8
    assert res.cells == tuple(sol.meta["cells"])
    assert res.skipped >= 0
