import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnnpoly.bounds import (LOWER, UPPER, BoundReport, bound_deriv_B_lower, bound_deriv_Bplus1,
                            bound_H_lower, bound_hessian_offdiag, bound_p_derivative, bound_R3,
                            bound_u_b_lower, bound_wnn_output, hidden_u, tail_bound_check,
                            witness_direction_theoremB, witness_vector_theorem1)
from bnnpoly.deriv import SubstitutionOperator, cross_hessian_norm
from bnnpoly.network import NetworkSpec, UnsupportedSpecError, bottleneck_spec, init_weights
from bnnpoly.tensor import spectral_norm_power

pos = st.floats(0.1, 50)
widths = st.integers(1, 10**6)


# -- formulas ---------------------------------------------------------------------------


def test_R3_values():
    assert bound_R3(10**4, 1, 1, 1, 1) == pytest.approx(0.0808, rel=1e-12)
    assert bound_R3(100, 1, 1, 1, 0) == 0.0
    assert bound_R3(100, 1, 1, 0, 1) == 0.0


def test_hessian_offdiag_values():
    assert bound_hessian_offdiag(100, 1, 0) == 0.0
    # m = e^2 gives log m = 2
    assert bound_hessian_offdiag(math.e**2, 1, 1) == pytest.approx(
        2 * (math.sqrt(6) + 1) * 2 / math.e, rel=1e-12)
    assert bound_hessian_offdiag(10**4, 6, 1) == pytest.approx(0.368, abs=5e-4)


def test_H_lower_values():
    assert bound_H_lower(1, 1, 1) == pytest.approx(1 / 24)
    assert bound_H_lower(1, 1, 0) == 0.0
    assert bound_H_lower(4, 9, 6) == pytest.approx(1 / 24)


def test_deriv_Bplus1_values():
    m = 400
    assert bound_deriv_Bplus1(m, 1, 1, [], 1) == pytest.approx((3 + 1 / 20) / 20)
    assert bound_deriv_Bplus1(m, 1, 2, [1], 0) == 0.0
    assert bound_deriv_Bplus1(10**4, 1, 2, [1], 1) == pytest.approx(0.0906, abs=1e-4)
    with pytest.raises(ValueError):
        bound_deriv_Bplus1(m, 1, 3, [1], 1)


def test_deriv_B_lower_values():
    assert bound_deriv_B_lower(2, (2, 2), (1, 1), 0) == 0.0
    assert bound_deriv_B_lower(2, (2, 2), (1, 1), 1) == pytest.approx(0.5)
    assert bound_deriv_B_lower(1, (2,), (4,), 1) == pytest.approx(0.5)


def test_wnn_output_values():
    assert bound_wnn_output(2, 100, 1, 1, 1, 0) == 0.0
    assert bound_wnn_output(1, math.e, 0, 1, 1, 1) == pytest.approx(math.sqrt(6) / 2)
    assert bound_wnn_output(2, 10**4, 1, 1, 2, 1) == pytest.approx(9.93, abs=5e-3)


def test_p_derivative_values():
    assert bound_p_derivative(3, 3, 100, 1, 4, 1) == pytest.approx(1 / (100 * 2))
    assert bound_p_derivative(2, 1, 100, 1, 1, 0) == 0.0
    assert bound_p_derivative(2, 1, 100, 1, 1, 1) == pytest.approx(3.1)
    with pytest.raises(ValueError):
        bound_p_derivative(2, 3, 100, 1, 1, 1)


def test_u_b_lower_values():
    assert bound_u_b_lower(4, 2, 1) == pytest.approx(1.0)
    assert bound_u_b_lower(16, 2, 1) == pytest.approx(2 * bound_u_b_lower(4, 2, 1))
    with pytest.warns(UserWarning):
        assert bound_u_b_lower(9, 0, 4) == pytest.approx(1.5)


@pytest.mark.parametrize("fn,args", [(bound_R3, (0, 1, 1, 1, 1)), (bound_H_lower, (1, 0, 1)),
                                     (bound_hessian_offdiag, (10, -1, 1))])
def test_nonpositive_dims_rejected(fn, args):
    with pytest.raises(ValueError):
        fn(*args)


@settings(max_examples=100)
@given(widths, st.integers(1, 8), st.integers(1, 8), pos, pos, pos)
def test_R3_monotone(m, r, d, R, dR, x):
    assert bound_R3(m, r, d, R + dR, x) > bound_R3(m, r, d, R, x)
    assert bound_R3(m, r, d, R, x + dR) > bound_R3(m, r, d, R, x)
    # (8 sqrt m + c) / m decreases for every m > 0
    assert bound_R3(4 * m, r, d, R, x) < bound_R3(m, r, d, R, x)


@settings(max_examples=100)
@given(st.integers(1, 4), pos, st.integers(2, 10**6), st.integers(1, 6))
def test_monotone_in_radius(L, R, m, d):
    assert bound_wnn_output(L, m, R + 1, 1, d, 1) > bound_wnn_output(L, m, R, 1, d, 1)
    assert bound_deriv_Bplus1(m, R + 1, 2, [d], 1) > bound_deriv_Bplus1(m, R, 2, [d], 1)
    if L > 1:
        assert bound_p_derivative(L, 1, m, R + 1, d, 1) > bound_p_derivative(L, 1, m, R, d, 1)


@settings(max_examples=100)
@given(st.integers(3, 10**6), st.integers(1, 6), st.integers(1, 6), pos, st.integers(1, 4))
def test_bounds_linear_in_x(m, d, r, x, L):
    pairs = [
        lambda s: bound_R3(m, r, d, 1.0, s), lambda s: bound_hessian_offdiag(m, d, s),
        lambda s: bound_H_lower(r, d, s), lambda s: bound_deriv_Bplus1(m, 1.0, 2, [r], s),
        lambda s: bound_deriv_B_lower(2, (L, 2), (d, r), s),
        lambda s: bound_wnn_output(L, m, 1.0, 1, d, s),
        lambda s: bound_p_derivative(L, 1, m, 1.0, d, s)]
    for f in pairs:
        assert f(2 * x) == 2 * f(x)


# -- reports ------------------------------------------------------------------------------


def test_bound_report_direction():
    assert BoundReport("a", {}, 1.0, 0.5, 0, UPPER).satisfied
    assert not BoundReport("a", {}, 1.0, 0.5, 0, LOWER).satisfied
    assert BoundReport("a", {}, 1.0, 1.0, 0, LOWER).satisfied
    with pytest.raises(ValueError):
        BoundReport("a", {}, 1.0, 1.0, 0, "sideways")


def test_bound_report_json():
    rep = BoundReport("remainder_R3", {"m": 64}, np.float64(0.2), np.float64(0.1), 3)
    d = json.loads(json.dumps(rep.to_json()))
    assert d == {"bound_name": "remainder_R3", "params": {"m": 64}, "theoretical": 0.2,
                 "empirical": 0.1, "satisfied": True, "seed": 3, "kind": "upper"}


# -- witnesses ------------------------------------------------------------------------------


def test_bilinear_witness_two_ways():
    w = init_weights(bottleneck_spec(256), 0)
    wit = witness_vector_theorem1(w, [2.0])
    assert wit.aligned
    assert wit.value == pytest.approx(wit.closed_form, rel=1e-9)
    norm2 = sum(np.sum(a * a) for a in wit.u1 + wit.v2)
    assert norm2 == pytest.approx(1.0)


def test_bilinear_witness_zero_input():
    w = init_weights(bottleneck_spec(64, d=2), 0)
    assert witness_vector_theorem1(w, [0.0, 0.0]).value == 0.0


def test_bilinear_witness_is_a_certificate():
    w = init_weights(bottleneck_spec(64, d=3), 1)
    x = np.array([0.3, -1.0, 0.4])
    wit = witness_vector_theorem1(w, x)
    assert not wit.aligned
    assert cross_hessian_norm(w, x, restarts=4).value >= abs(wit.value) - 1e-9


def test_bilinear_witness_rate():
    ok = [witness_vector_theorem1(init_weights(bottleneck_spec(256), s), [1.0]).value
          >= bound_H_lower(1, 1, 1) for s in range(200)]
    assert np.mean(ok) >= 0.95


def test_bilinear_witness_needs_bottleneck_spec():
    with pytest.raises(UnsupportedSpecError):
        witness_vector_theorem1(init_weights(NetworkSpec((2, 3), (1, 1, 1), 8), 0), [1.0])


@pytest.mark.parametrize("depths", [(2, 2), (3, 2), (2, 2, 2)])
def test_derivative_witness_two_ways(depths):
    spec = NetworkSpec(depths, (2,) + (1,) * len(depths), 64)
    w = init_weights(spec, 0)
    wit = witness_direction_theoremB(w, [1.5, 0.0])
    assert wit.aligned
    assert wit.value == pytest.approx(wit.closed_form, rel=1e-9)
    for d in wit.directions:
        assert d.total_norm() == pytest.approx(1.0)


def test_derivative_witness_zero_input_and_shallow_block():
    spec = NetworkSpec((2, 2), (2, 1, 1), 32)
    assert witness_direction_theoremB(init_weights(spec, 0), [0.0, 0.0]).value == 0.0
    with pytest.raises(UnsupportedSpecError):
        witness_direction_theoremB(init_weights(NetworkSpec((1, 2), (1, 1, 1), 8), 0), [1.0])


def test_derivative_witness_certificate_against_estimator():
    spec = NetworkSpec((2, 2), (1, 1, 1), 48)
    w = init_weights(spec, 2)
    wit = witness_direction_theoremB(w, [1.0])
    op = SubstitutionOperator(w, [1.0], [(0, 1), (1, 1)])
    assert spectral_norm_power(op, restarts=4).value >= abs(wit.value) - 1e-9


def test_derivative_witness_rate():
    spec = NetworkSpec((2, 2), (1, 1, 1), 256)
    ok = [witness_direction_theoremB(init_weights(spec, s), [1.0]).value
          >= bound_deriv_B_lower(2, (2, 2), (1, 1), 1.0) for s in range(200)]
    assert np.mean(ok) >= 0.95


def test_hidden_u_scaling():
    spec = NetworkSpec((3,), (4, 1), 16)
    w = init_weights(spec, 0)
    A, Bm = w[(0, 0)], w[(0, 1)]
    np.testing.assert_allclose(hidden_u(w, 0), Bm @ A[:, 0] / (4.0 * 2.0), rtol=1e-12)


# -- tails ---------------------------------------------------------------------------------


def test_tail_gaussian_vacuous():
    tc = tail_bound_check("gaussian", {"sigma": 1.0, "t": 0.0}, 1000)
    assert tc.empirical == 1.0 and tc.bound == 2.0 and tc.satisfied


def test_tail_chi2():
    tc = tail_bound_check("chi2", {"m": 64, "t": 0.5}, 10000, seed=1)
    assert tc.bound == pytest.approx(2 * math.exp(-2))
    assert tc.satisfied


def test_tail_matrix():
    tc = tail_bound_check("matrix", {"N": 256, "n": 64, "t": 16.0}, 500, seed=2)
    assert tc.empirical == 0.0 and tc.satisfied


def test_tail_rejects_unknown():
    with pytest.raises(ValueError):
        tail_bound_check("cauchy", {}, 10)
    with pytest.raises(ValueError):
        tail_bound_check("gaussian", {"sigma": 1.0, "t": 1.0}, 0)


def test_tail_deterministic():
    a = tail_bound_check("gaussian", {"sigma": 2.0, "t": 3.0}, 5000, seed=9)
    b = tail_bound_check("gaussian", {"sigma": 2.0, "t": 3.0}, 5000, seed=9)
    assert a == b
