import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rating_forge.errors import ValidationError
from rating_forge.foundation import (check_cost_assumptions, cost_model, derivative_error, grid_from_dict,
                                     infer_shape, make_type_grid, normalize_weights, solve_marginal,
                                     weight_profile, weights_from_dict)


def test_explicit_grid():
    g = make_type_grid([1.0, 2.0], [0.5, 0.5])
    assert g.n == 2 and g.origin == "discrete"
    assert g.mean == 1.5


def test_uniform_discretization():
    g = make_type_grid(source={"dist": "uniform", "low": 1.0, "high": 2.0}, n=4)
    np.testing.assert_allclose(g.nodes, [1.125, 1.375, 1.625, 1.875])
    np.testing.assert_allclose(g.weights, [0.25] * 4)
    assert g.origin == "discretized"
    np.testing.assert_allclose(g.edges, [1.0, 1.25, 1.5, 1.75, 2.0])


def test_weights_must_sum_to_one():
    with pytest.raises(ValidationError, match="weights sum 1.1"):
        make_type_grid([1.0, 2.0], [0.6, 0.5])


@pytest.mark.parametrize("nodes, weights, msg", [
    ([2.0, 1.0], [0.5, 0.5], "strictly increasing"),
    ([1.0, 2.0], [1.5, -0.5], "negative weight"),
    ([1.0, np.nan], [0.5, 0.5], "finite"),
    ([], [], "at least one"),
])
def test_grid_validation(nodes, weights, msg):
    with pytest.raises(ValidationError, match=msg):
        make_type_grid(nodes, weights)


def test_grid_sources():
    for src in ({"dist": "beta", "a": 2, "b": 3, "low": 1, "high": 2},
                {"dist": "truncnorm", "mean": 1.5, "sd": 0.3, "low": 1, "high": 2},
                {"dist": "triangular", "low": 1, "mode": 1.2, "high": 2}):
        g = make_type_grid(source=src, n=50)
        assert abs(g.weights.sum() - 1) < 1e-12
        assert g.nodes[0] > 1 and g.nodes[-1] < 2
    with pytest.raises(ValidationError):
        make_type_grid(source={"dist": "cauchy"}, n=5)


def test_grid_round_trip_and_restrict():
    g = make_type_grid(source={"dist": "uniform", "low": 1.0, "high": 2.0}, n=10)
    assert grid_from_dict(g.to_dict()).nodes.tolist() == g.nodes.tolist()
    sub = g.restrict(4)
    assert sub.n == 6 and abs(sub.weights.sum() - 1) < 1e-15
    np.testing.assert_allclose(g.upper_tail()[:3], [0.9, 0.8, 0.7])


def test_grid_mean_converges_with_refinement():
    src = {"dist": "beta", "a": 2.0, "b": 5.0, "low": 1.0, "high": 2.0}
    exact = 1.0 + 2.0 / 7.0
    errs = [abs(make_type_grid(source=src, n=n).mean - exact) for n in (25, 50, 100, 200)]
    for n, e in zip((25, 50, 100, 200), errs):
        assert e <= 1.0 / n
    assert errs[-1] < errs[0]


def test_quadratic_cost_passes():
    rep = check_cost_assumptions(cost_model("quadratic"), qmax=3.0)
    assert rep.passed
    assert rep.derivative_error < 1e-6


def test_theta_increasing_cost_fails():
    rep = check_cost_assumptions(cost_model("quadratic_theta"), qmax=3.0)
    assert not rep.passed
    assert rep.worst["C_theta<=0"][0] > 0


def test_cubic_cost_passes_with_zero_marginal_at_origin():
    m = cost_model("cubic")
    rep = check_cost_assumptions(m, qmax=3.0)
    assert rep.passed
    assert rep.worst["C_q(0,theta)=0"][0] == 0.0
    # central differences agree with the analytic partials
    assert derivative_error(m, np.linspace(0.1, 3, 30), np.linspace(1, 2, 30)) < 1e-6


@given(st.floats(0.05, 5.0), st.floats(0.5, 3.0), st.sampled_from(["quadratic", "cubic"]))
def test_cost_partials_match_differences(q, t, fam):
    assert derivative_error(cost_model(fam), np.array([q]), np.array([t])) < 1e-5


def test_unknown_cost_family():
    with pytest.raises(ValidationError):
        cost_model("linear")
    with pytest.raises(ValidationError):
        cost_model("power", exponent=1.0)


def test_solve_marginal_first_best():
    t = np.array([1.0, 1.5, 2.0])
    np.testing.assert_allclose(solve_marginal(cost_model("quadratic"), [(1.0, t)]), t)
    np.testing.assert_allclose(solve_marginal(cost_model("cubic"), [(1.0, t)]), np.sqrt(t))


def test_normalize_constant():
    g = make_type_grid([1.0, 2.0], [0.5, 0.5])
    w = normalize_weights([1.0, 1.0], g)
    assert w.values.tolist() == [1.0, 1.0] and w.shape == "constant"


def test_normalize_mass():
    g = make_type_grid([1.0, 2.0], [0.5, 0.5])
    w = normalize_weights([1.0, 0.0], g)
    assert w.values.tolist() == [2.0, 0.0] and w.shape == "decreasing"


def test_linear_weights_scale_by_two(ref_grid):
    w = normalize_weights(2.0 - ref_grid.nodes, ref_grid)
    np.testing.assert_allclose(w.values, 2.0 * (2.0 - ref_grid.nodes), rtol=0, atol=1e-12)
    assert w.shape == "decreasing"


def test_weight_shapes(ref_grid):
    assert normalize_weights(weight_profile("tent", ref_grid, peak=1.6), ref_grid).shape == "hump"
    assert normalize_weights(weight_profile("linear", ref_grid, a=0, b=1), ref_grid).shape == "increasing"
    assert infer_shape([1, 3, 2, 4]) == ("other", None)
    with pytest.raises(ValidationError):
        normalize_weights(np.zeros(ref_grid.n), ref_grid)
    with pytest.raises(ValidationError):
        weights_from_dict({"family": "tent", "bogus": 1}, ref_grid)


@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=8).filter(lambda v: sum(v) > 0.1))
def test_normalize_idempotent(raw):
    n = len(raw)
    g = make_type_grid(np.arange(n, dtype=float), np.full(n, 1.0 / n))
    once = normalize_weights(raw, g)
    twice = normalize_weights(once.values, g)
    assert np.array_equal(once.values, twice.values)
