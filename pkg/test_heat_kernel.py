import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exceptions import ParameterError
from heat_kernel import (
    C_lambda,
    C_n,
    W,
    ball_constant,
    cylinder_bound,
    kernel_portrait,
    normalization_check,
    numeric_C_n,
    numeric_phi_argmax_t,
    phi,
    phi_argmax_t,
    phi_max,
)


def test_W_vanishes_for_nonpositive_time():
    assert W([0.3, -0.2], -1.0) == 0.0
    assert W([0.0], 0.0) == 0.0


def test_W_at_origin():
    assert W([0.0], 1 / (4 * math.pi)) == pytest.approx(1.0)


def test_W_on_the_exponent_one_shell():
    t = 0.7
    X = [math.sqrt(4 * t), 0.0]
    assert W(X, t) == pytest.approx((4 * math.pi * t) ** -1 * math.exp(-1))


def test_W_extreme_ratio_underflows_to_zero():
    assert W([1e3], 1e-6) == 0.0
    assert np.all(np.isfinite(W(np.zeros((4, 2)), np.array([1e-300, 1e-10, 1.0, 1e300]))))


def test_phi_at_zero_and_decay():
    assert phi(0.0, 2.0, 3) == pytest.approx((8 * math.pi) ** -1.5)
    assert phi(0.5, 2.0, 3) < phi(0.0, 2.0, 3)
    with pytest.raises(ParameterError):
        phi(1.0, 0.0, 1)


@given(st.floats(0.1, 10), st.floats(0.01, 5), st.floats(0.01, 5), st.integers(1, 8))
@settings(max_examples=200, deadline=None)
def test_parabolic_dilation(lam, r, t, n):
    assert phi(lam * r, lam * lam * t, n) == pytest.approx(lam ** (-n) * phi(r, t, n), rel=1e-10)


@pytest.mark.parametrize("n", range(1, 9))
@pytest.mark.parametrize("r", [0.1, 1.0, 10.0])
def test_numeric_argmax_matches_closed_form(n, r):
    assert numeric_phi_argmax_t(r, n) == pytest.approx(phi_argmax_t(r, n), rel=1e-9)
    assert phi(r, phi_argmax_t(r, n), n) == pytest.approx(phi_max(r, n), rel=1e-12)


@pytest.mark.parametrize("n", range(1, 9))
def test_numeric_C_n(n):
    assert numeric_C_n(n) == pytest.approx(C_n(n), rel=1e-9)


def test_C_n_ordering():
    values = [C_n(n) for n in range(1, 9)]
    assert 0.25 > values[0]
    assert all(a > b for a, b in zip(values[:6], values[1:6]))
    assert values[5] > 0.04
    assert values[5] < values[6] < values[7]


def test_argmax_errors():
    with pytest.raises(ParameterError):
        phi_argmax_t(0.0, 1)
    with pytest.raises(ParameterError):
        phi_max(-1.0, 1)
    with pytest.raises(ParameterError):
        C_n(0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_C_lambda(n):
    assert C_lambda(1 / (2 * n), n) == pytest.approx(C_n(n))
    grid = np.linspace(0.01, 3.0, 300)
    values = np.array([C_lambda(lam, n) for lam in grid])
    rising = grid <= 1 / (2 * n)
    assert np.all(np.diff(values[rising]) > 0)
    assert np.all(np.diff(values[~rising]) < 0)
    for r, lam in [(0.3, 0.2), (2.0, 1.5)]:
        assert C_lambda(lam, n) * r ** (-n) == pytest.approx(phi(r, lam * r * r, n))
    with pytest.raises(ParameterError):
        C_lambda(0.0, n)


@pytest.mark.parametrize("n, t", [(1, 1.0), (2, 0.3), (3, 0.01)])
def test_normalization(n, t):
    assert normalization_check(n, t) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_radial_normalization(n):
    assert normalization_check(n, 1.0, method="radial") == pytest.approx(1.0, abs=1e-6)


def test_normalization_edge_cases():
    assert normalization_check(2, -1.0) == 0.0
    with pytest.raises(ParameterError):
        normalization_check(1, 1.0, method="simpson")


def test_traces():
    for n in (1, 4):
        r_grid = np.linspace(0.0, 3.0, 50)
        assert np.all(np.diff(phi(r_grid, 0.5, n)) < 0)
        r = 1.3
        peak = phi_argmax_t(r, n)
        t_grid = np.geomspace(peak / 10, peak * 10, 301)
        values = phi(r, t_grid, n)
        turn = np.argmax(values)
        assert np.all(np.diff(values[: turn + 1]) > 0)
        assert np.all(np.diff(values[turn:]) < 0)
        assert phi(r, peak * 1e-3, n) < 1e-100
        assert phi(r, peak * 1e12, n) < phi_max(r, n) * 1e-3


def test_cylinder_bound_and_ball_constant():
    assert ball_constant(1) > 0
    assert cylinder_bound([0.0], -10.0, 1.0, 1.0) == 0.0
    assert cylinder_bound([2.0], 1.0, 0.5, 0.25) > 0


def test_kernel_portrait_tables():
    portrait = kernel_portrait((1, 2), (1.0,), samples=11)
    assert [row["n"] for row in portrait["constants"]] == [1, 2]
    assert all(row["rel_diff"] < 1e-9 for row in portrait["constants"])
    assert len(portrait["vertical"]) == 2 * 11
    assert len(portrait["horizontal"]) == 2 * 3 * 11
