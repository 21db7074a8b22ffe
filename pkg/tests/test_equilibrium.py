import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ic_gain
from rating_forge.equilibrium import (adjacent_ic_gap, check_ic, ic_band, profits,
                                      signaled_from_envelope, verify_equilibrium)
from rating_forge.errors import MonotonicityError, ValidationError
from rating_forge.foundation import cost_model, make_type_grid

QUAD = cost_model("quadratic")
HALF = make_type_grid([1.0, 2.0], [0.5, 0.5])


def _cost(q, t):
    return q * q / (2 * t)


def test_ic_witness_two_types():
    rep = check_ic([1.0, 2.0], [1.0, 1.2], QUAD, HALF)
    assert not rep.passed
    i, j, gain = rep.worst
    assert (i, j) == (1, 0)
    assert gain == pytest.approx(0.55, abs=1e-12)
    assert gain == pytest.approx(ic_gain([1, 2], [1, 1.2], _cost, [1, 2]), abs=1e-12)


def test_first_best_is_ic():
    rep = check_ic([1.0, 2.0], [1.0, 2.0], QUAD, HALF)
    assert rep.passed and rep.participation and rep.monotone
    np.testing.assert_allclose(profits([1.0, 2.0], [1.0, 2.0], QUAD, HALF), [0.5, 1.0])


def test_participation_failure():
    rep = check_ic([1.0, 2.0], [0.2, 1.5], QUAD, HALF)
    assert not rep.participation and not rep.passed
    assert rep.min_profit == pytest.approx(-0.3)


def test_ic_band_two_types():
    lo, hi = ic_band([1.0, 2.0], QUAD, HALF)
    # C(1,1) - C(1,2) = 1/4 ; C(2,1) - C(2,2) = 1
    np.testing.assert_allclose(lo, [0.25])
    np.testing.assert_allclose(hi, [1.0])


def test_single_type_envelope():
    g = make_type_grid([1.5], [1.0])
    qbar, pi = signaled_from_envelope([0.7], QUAD, g, pi0=0.2)
    assert pi[0] == 0.2
    assert qbar[0] == pytest.approx(0.2 + 0.49 / 3.0)
    assert adjacent_ic_gap([0.7], qbar, QUAD, g) == 0.0


def test_envelope_constant_quality_closed_form(ref_grid):
    q = np.full(ref_grid.n, 0.7)
    qbar, pi = signaled_from_envelope(q, QUAD, ref_grid, pi0=0.1)
    t = ref_grid.nodes
    # Pi(t) = Pi(t0) + (q^2/2)(1/t0 - 1/t): trapezoid is exact up to the band clip
    expected = 0.1 + 0.245 * (1 / t[0] - 1 / t)
    np.testing.assert_allclose(pi, expected, atol=1e-6)
    np.testing.assert_allclose(qbar, expected + 0.245 / t, atol=1e-6)
    assert check_ic(q, qbar, QUAD, ref_grid).passed


def test_envelope_first_best_recovers_qbar(ref_grid):
    t = ref_grid.nodes
    qbar, pi = signaled_from_envelope(t, QUAD, ref_grid, pi0=t[0] / 2)
    # trapezoid error on a 400-node grid
    assert np.max(np.abs(qbar - t)) < 1e-5
    assert np.max(np.abs(pi - t / 2)) < 1e-5


def test_envelope_rejects_decreasing():
    with pytest.raises(MonotonicityError):
        signaled_from_envelope([2.0, 1.0], QUAD, HALF, 0.0)


def test_alignment_checked():
    with pytest.raises(ValidationError):
        check_ic([1.0], [1.0, 2.0], QUAD, HALF)


@st.composite
def monotone_schedule(draw):
    n = draw(st.integers(1, 200))
    steps = draw(st.lists(st.floats(0.0, 0.05), min_size=n, max_size=n))
    nodes = 1.0 + np.cumsum(draw(st.lists(st.floats(0.001, 0.05), min_size=n, max_size=n)))
    return nodes, np.cumsum(steps) + 0.1


@given(monotone_schedule(), st.floats(0.0, 1.0),
       st.sampled_from([("quadratic", {}), ("cubic", {}), ("power", {"exponent": 2.5})]))
def test_envelope_is_ic(sched, pi0, family):
    nodes, q = sched
    g = make_type_grid(nodes, np.full(nodes.size, 1.0 / nodes.size))
    model = cost_model(family[0], **family[1])
    qbar, pi = signaled_from_envelope(q, model, g, pi0, check=False)
    assert check_ic(q, qbar, model, g).worst[2] <= 1e-9
    # profit increasing in type
    assert np.all(np.diff(pi) >= -1e-12)


@given(st.integers(2, 12), st.integers(0, 10_000))
def test_adjacent_ic_bounds_pairwise(n, seed):
    rng = np.random.default_rng(seed)
    nodes = np.sort(rng.uniform(1, 3, n)) + np.arange(n) * 1e-3
    g = make_type_grid(nodes, np.full(n, 1.0 / n))
    q = np.sort(rng.uniform(0, 2, n))
    qbar = q + rng.normal(0, 0.05, n)
    adj = adjacent_ic_gap(q, qbar, QUAD, g)
    full = check_ic(q, qbar, QUAD, g).worst[2]
    brute = ic_gain(q, qbar, _cost, nodes)
    assert full == pytest.approx(brute, abs=1e-12)
    if adj <= 0:
        assert full <= 1e-12


def test_verify_first_best_passes(ref_grid):
    t = ref_grid.nodes
    rep = verify_equilibrium(t, t, QUAD, ref_grid)
    assert rep.passed and rep.monotone and rep.majorization.holds
    assert rep.continuity_flags == ()


def test_verify_overstated_total_fails(ref_grid):
    t = ref_grid.nodes
    rep = verify_equilibrium(t, t + 0.1 * t, QUAD, ref_grid)
    assert not rep.passed
    assert not rep.majorization.holds
    assert rep.majorization.first_failure == ref_grid.n - 1
    assert "partial sum" in rep.message


def test_full_mixing_pair_majorized_but_not_ic(ref_grid):
    # pooled toward the mean with interior slack: majorization holds,
    # but quadratic cost needs profit slope q^2/(2 theta^2) and this one is flat
    t = ref_grid.nodes
    rep = verify_equilibrium(t, 0.5 * t + 0.75, QUAD, ref_grid)
    assert rep.majorization.holds
    assert ref_grid.n - 1 in rep.majorization.binding
    assert len(rep.majorization.binding) == 1
    assert not rep.ic.passed
    i, j, gain = rep.ic.worst
    assert (i, j) == (ref_grid.n - 1, 0)
    assert gain == pytest.approx(0.2498, abs=1e-3)


def test_verify_decreasing_q_reports_monotonicity():
    rep = verify_equilibrium([2.0, 1.0], [1.5, 1.5], QUAD, HALF)
    assert not rep.passed and not rep.monotone
    assert "decrease" in rep.message or rep.majorization is None
