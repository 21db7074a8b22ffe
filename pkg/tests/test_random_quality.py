import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import best_partition, power_x_mean
from rating_forge.errors import ValidationError
from rating_forge.foundation import cost_model
from rating_forge.io import dumps
from rating_forge.random_quality import (GainFunction, check_assumption3, check_outcome_assumptions,
                                         custom_family, gain_two_type, mixture_density,
                                         mixture_masses, outcome_family, outcome_lattice,
                                         outcome_mean, solve_auxiliary, solve_two_type)

POWER_X = outcome_family("power-x")
FAMILIES = ("power-x", "power-1mx", "exponential-x")


@pytest.mark.parametrize("q", [0.1, 0.3, 0.5, 0.9])
def test_power_x_mean_equals_quality(q):
    assert outcome_mean(POWER_X, q) == pytest.approx(q, abs=1e-10)
    assert power_x_mean(q) == pytest.approx(q, abs=1e-6)


def test_power_x_cdf_exponent():
    # q = 5/11 gives G(x) = x^(5/6)
    x = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(POWER_X.G(x, 5 / 11), x ** (5 / 6), rtol=1e-13)


@pytest.mark.parametrize("name", FAMILIES)
def test_families_pass_outcome_checks(name):
    rep = check_outcome_assumptions(outcome_family(name))
    assert rep.passed, rep.to_dict()


@pytest.mark.parametrize("name", FAMILIES)
def test_families_pass_shape_checks(name):
    fam = outcome_family(name)
    for q1, q2 in [(0.2, 0.3), (0.1, 0.9), (0.45, 0.55)]:
        rep = check_assumption3(fam, q1, q2)
        assert rep.passed, rep.to_dict()


def test_score_matches_finite_difference():
    x = np.linspace(0.05, 0.95, 7)
    for name in FAMILIES:
        fam = outcome_family(name)
        q, h = 0.4, 1e-6
        fd = (fam.log_g(x, q + h) - fam.log_g(x, q - h)) / (2 * h)
        np.testing.assert_allclose(fam.score(x, q), fd, rtol=1e-5, atol=1e-6)


def test_uniform_family_fails_mean_check():
    uniform = custom_family(lambda x, q: np.ones(np.broadcast(x, q).shape),
                            lambda x, q: x + 0 * q, lambda x, q: 0 * x * q)
    rep = check_outcome_assumptions(uniform)
    assert not rep.mean_ok and not rep.passed
    assert rep.support_ok
    # mean is 1/2 whatever q is
    assert rep.worst_mean[0] == pytest.approx(0.5 - 0.5 / 64)


def test_unknown_family():
    with pytest.raises(ValidationError):
        outcome_family("beta")


def test_mixture_single_type():
    x = np.array([0.25, 0.5, 0.75])
    np.testing.assert_allclose(mixture_density([0.3], [1.0], POWER_X, x), POWER_X.g(x, 0.3))


def test_mixture_equal_qualities():
    x = np.array([0.25, 0.5])
    np.testing.assert_allclose(mixture_density([0.6, 0.6], [0.3, 0.7], POWER_X, x), POWER_X.g(x, 0.6))


def test_mixture_is_average():
    got = mixture_density([0.3, 0.7], [0.5, 0.5], POWER_X, np.array([0.5]))
    assert got[0] == pytest.approx(0.5 * (POWER_X.g(0.5, 0.3) + POWER_X.g(0.5, 0.7)))
    masses = mixture_masses([0.3, 0.7], [0.5, 0.5], POWER_X, outcome_lattice(32))
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_gain_shape_in_multipliers():
    lat = outcome_lattice(256)
    plain = gain_two_type(0.4, 0.6, 0.0, 0.0, [0.5, 0.5], POWER_X, lat)
    assert np.all(np.diff(plain.values) < 0)
    tilted = gain_two_type(0.4, 0.6, 1e3, 0.0, [0.5, 0.5], POWER_X, lat)
    assert np.all(np.diff(tilted.values) > 0)
    # decreasing gain pools everything, increasing gain reveals everything
    assert [b[2] for b in solve_auxiliary(plain).blocks] == ["pool"]
    assert [b[2] for b in solve_auxiliary(tilted).blocks] == ["reveal"]


def test_gain_equal_qualities_is_constant():
    g = gain_two_type(0.5, 0.5, 0.0, 0.0, [0.5, 0.5], POWER_X, outcome_lattice(64))
    np.testing.assert_allclose(g.values, 1.0, rtol=1e-12)
    assert g.sign_changes == 0


def test_gain_rejects_bad_order():
    with pytest.raises(ValidationError):
        gain_two_type(0.6, 0.4, 0.0, 0.0, [0.5, 0.5], POWER_X)


def test_dp_three_cells():
    part = solve_auxiliary([2.0, 1.0, 3.0], [1 / 3] * 3, [0.25, 0.5, 0.75])
    assert part.value == pytest.approx(1.125, abs=1e-12)
    assert [b[:3] for b in part.blocks] == [(0, 2, "pool"), (2, 3, "reveal")]
    np.testing.assert_allclose(part.xbar(), [0.375, 0.375, 0.75])


def test_dp_rejects_bad_weights():
    with pytest.raises(ValidationError):
        solve_auxiliary([1.0, 2.0], [0.5, 0.0], [0.2, 0.4])


@st.composite
def gain_case(draw):
    n = draw(st.integers(1, 9))
    g = draw(st.lists(st.integers(-6, 6), min_size=n, max_size=n))
    h = draw(st.lists(st.integers(1, 5), min_size=n, max_size=n))
    x = np.cumsum(draw(st.lists(st.integers(1, 4), min_size=n, max_size=n)))
    return np.array(g, float), np.array(h, float) / sum(h), x / (x[-1] + 1.0)


@given(gain_case())
def test_dp_matches_exact_recursion(case):
    g, h, x = case
    part = solve_auxiliary(g, h, x)
    exact = best_partition(g.tolist(), h.tolist(), x.tolist())
    assert part.value == pytest.approx(float(exact), abs=1e-12)


@given(gain_case())
def test_dp_partition_properties(case):
    g, h, x = case
    part = solve_auxiliary(g, h, x)
    xb = part.xbar()
    assert abs(part.mean_gap()) <= 1e-12
    assert np.all(np.diff(xb) >= -1e-12)
    assert float(np.dot(g * xb, h)) == pytest.approx(part.value, abs=1e-12)


@given(gain_case(), st.floats(-5, 5))
def test_dp_gain_shift(case, c):
    g, h, x = case
    base = solve_auxiliary(GainFunction(x, g, h))
    moved = solve_auxiliary(GainFunction(x, g, h).shifted(c))
    assert moved.value - base.value == pytest.approx(c * float(np.dot(h, x)), abs=1e-11)


@pytest.fixture(scope="module")
def two_type_small():
    return solve_two_type(cost_model("quadratic"), POWER_X, (1.0, 2.0), (0.5, 0.5), n=64)


def test_two_type_structure(two_type_small):
    sol = two_type_small
    assert sol.q[0] <= sol.q[1]
    kinds = [b[2] for b in sol.partition.blocks]
    assert "pool" in kinds
    assert all(k0 != k1 for k0, k1 in zip(kinds, kinds[1:]))
    x1, x2 = sol.thresholds
    assert 0.0 < x1 < x2 <= 1.0
    assert sol.foa_valid
    assert sol.objective == pytest.approx(sol.profits[0])
    assert abs(sol.partition.mean_gap()) < 1e-12


def test_two_type_needs_ordered_types():
    with pytest.raises(ValidationError):
        solve_two_type(cost_model("quadratic"), POWER_X, (1.5, 1.5), (0.5, 0.5), n=32)


def test_two_type_zero_cost_reveals_everything():
    # as cost vanishes both qualities approach 1 and pooling has nothing to buy
    sol = solve_two_type(cost_model("quadratic", scale=1e-3), POWER_X, (1.0, 2.0), (0.5, 0.5), n=64)
    assert [b[2] for b in sol.partition.blocks] == ["reveal"]
    assert sol.multipliers == (0.0, 0.0)
    assert min(sol.q) > 0.99


def test_two_type_rejects_other_weights():
    with pytest.raises(ValidationError):
        solve_two_type(cost_model("quadratic"), POWER_X, (1.0, 2.0), (0.5, 0.5), lam=(0.5, 0.5), n=32)


def test_two_type_threads_deterministic():
    args = (cost_model("quadratic"), POWER_X, (1.0, 2.0), (0.5, 0.5))
    a = solve_two_type(*args, n=32, threads=1)
    b = solve_two_type(*args, n=32, threads=3)
    assert dumps(a.to_dict()) == dumps(b.to_dict())
