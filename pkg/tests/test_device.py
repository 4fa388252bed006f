import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bisect_cell_current, lambert_bisect

from xbarsim.device import (V_EPS, cell_chord_conductance, cell_current, cell_differential_conductance,
                            lambert_w0, lambert_w0_of_exp, operating_point, zero_bias_current)
from xbarsim.model import DiodeModel, SelectorParams

SEL = SelectorParams(eta=1.8, i_s=1e-12, temperature=300.0)
EXACT = DiodeModel.EXACT_BANWELL


def test_lambert_fixed_points():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(np.e) == pytest.approx(1.0, rel=1e-15)
    assert lambert_w0(-np.exp(-1.0)) == -1.0


def test_lambert_at_one_matches_bisection():
    # 0.567143290409783873 from bisection at 40 digits.
    assert lambert_w0(1.0) == pytest.approx(0.567143290409783873, rel=1e-15)
    assert lambert_w0(1.0) == pytest.approx(lambert_bisect(1.0), rel=1e-14)


@pytest.mark.parametrize("x", [1e-300, 1e-20, 1e-5, 0.1, 2.0, 10.0, 1e5, 1e100, 1e300])
def test_lambert_against_bisection(x):
    assert lambert_w0(x) == pytest.approx(lambert_bisect(x), rel=1e-13)


def test_lambert_near_branch_point():
    x = -np.exp(-1.0) + 1e-10
    w = lambert_w0(x)
    assert w * np.exp(w) == pytest.approx(x, rel=1e-9)
    assert -1.0 < w < -0.99


def test_lambert_domain_errors():
    with pytest.raises(ValueError):
        lambert_w0(-0.5)
    with pytest.raises(ValueError):
        lambert_w0(np.nan)
    with pytest.raises(ValueError):
        lambert_w0_of_exp(np.inf)


def test_lambert_of_exp_examples():
    assert lambert_w0_of_exp(1.0) == pytest.approx(1.0, rel=1e-15)
    assert lambert_w0_of_exp(1.0) == pytest.approx(lambert_w0(np.e), rel=1e-15)
    # Bisection on w + ln w = 100 at 40 digits.
    assert lambert_w0_of_exp(100.0) == pytest.approx(95.44148664557583184, rel=1e-15)


def test_lambert_of_exp_huge_arguments_do_not_overflow():
    t = np.array([700.0, 1e4, 1e8, 1e300])
    w = lambert_w0_of_exp(t)
    assert np.all(np.isfinite(w))
    np.testing.assert_allclose(w + np.log(w), t, rtol=1e-15)


def test_lambert_vectorized_matches_scalar():
    xs = np.array([0.0, 0.3, 3.0, 3e3])
    np.testing.assert_array_equal(lambert_w0(xs), [lambert_w0(float(x)) for x in xs])


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-690.0, max_value=690.0))
def test_lambert_round_trip_property(t):
    w = lambert_w0_of_exp(t)
    # w e^w = e^t, compared in the log domain: ln w + w = t.
    assert np.log(w) + w == pytest.approx(t, abs=1e-12 * max(1.0, abs(t)))


# Frozen from the implicit diode equation solved by bisection at 40 digits.
@pytest.mark.parametrize("v_c,expected", [
    (0.0, 9.999997851015855396e-13),
    (0.3, 6.3069285002514361741e-10),
    (0.5, 4.5938192865518239865e-8),
    (1.0, 2.1446331841065134894e-5),
    (-0.5, 2.1554537933437442404e-17),
])
def test_cell_current_frozen(v_c, expected):
    assert cell_current(v_c, 1e4, SEL) == pytest.approx(expected, rel=1e-12)


def test_cell_current_zero_bias_near_is():
    assert cell_current(0.0, 1e4, SEL) == pytest.approx(1.0e-12, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(-1.0, 2.0), log_r=st.floats(3.0, 7.0), eta=st.floats(1.0, 2.5), log_is=st.floats(-15.0, -9.0))
def test_cell_current_matches_bisection(v, log_r, eta, log_is):
    sel = SelectorParams(eta=eta, i_s=10.0 ** log_is)
    r = 10.0 ** log_r
    for model, exact in ((DiodeModel.PAPER_EQ2, False), (EXACT, True)):
        want = bisect_cell_current(v, r, eta, sel.i_s, exact=exact)
        got = cell_current(v, r, sel, model)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12 * sel.i_s)


def test_exact_model_zero_at_zero_bias():
    assert cell_current(0.0, 1e4, SEL, EXACT) == pytest.approx(0.0, abs=1e-25)
    assert zero_bias_current(1e4, SEL, EXACT) == 0.0
    assert cell_current(-1.0, 1e4, SEL, EXACT) == pytest.approx(-SEL.i_s, rel=1e-9)


def test_models_agree_in_forward_bias():
    v = np.arange(0.3, 1.5001, 0.05)
    for r in (1e4, 1e6):
        diff = np.abs(cell_current(v, r, SEL) - cell_current(v, r, SEL, EXACT))
        assert np.all(diff <= SEL.i_s)


def test_monotone_in_every_parameter():
    v = np.linspace(-1, 1.5, 251)
    i = cell_current(v, 1e4, SEL)
    assert np.all(np.diff(i) > 0)
    at = 0.6
    assert cell_current(at, 2e4, SEL) < cell_current(at, 1e4, SEL)
    assert cell_current(at, 1e4, SelectorParams(i_s=2e-12)) > cell_current(at, 1e4, SEL)
    assert cell_current(at, 1e4, SelectorParams(eta=2.0)) < cell_current(at, 1e4, SEL)
    assert cell_current(1.0, 2e4, SEL) < cell_current(1.0, 1e4, SEL)


def test_differential_zero_bias_limit():
    n_vt = SEL.n_vt
    expected = SEL.i_s / n_vt / (1 + SEL.i_s * 1e4 / n_vt)
    assert cell_differential_conductance(0.0, 1e4, SEL) == pytest.approx(expected, rel=1e-12)
    assert cell_differential_conductance(0.0, 1e4, SEL) == pytest.approx(2.1489843755106055e-11, rel=1e-10)


def test_differential_approaches_series_resistor():
    assert cell_differential_conductance(20.0, 1e4, SEL) == pytest.approx(1e-4, rel=1e-2)
    assert cell_differential_conductance(20.0, 1e4, SEL) < 1e-4


@pytest.mark.parametrize("model", list(DiodeModel))
def test_differential_matches_finite_difference(model):
    v = np.round(np.arange(-1.0, 1.0001, 0.05), 10)
    h = 1e-6
    for r in (1e4, 1e6):
        fd = (cell_current(v + h, r, SEL, model) - cell_current(v - h, r, SEL, model)) / (2 * h)
        # In reverse bias the exact model's current sits on -i_s, so the difference
        # quotient loses ~13 digits to cancellation; allow that rounding floor.
        atol = 1e-21 if model is EXACT else 0.0
        np.testing.assert_allclose(cell_differential_conductance(v, r, SEL, model), fd, rtol=1e-6, atol=atol)


def test_chord_forward_example():
    assert cell_chord_conductance(1.0, 1e4, SEL) == pytest.approx(2.1446331841065134894e-5 - 9.999997851015855e-13,
                                                                  rel=1e-12)


def test_chord_epsilon_branch_uses_zero_limit():
    assert cell_chord_conductance(1e-12, 1e4, SEL) == cell_differential_conductance(0.0, 1e4, SEL)
    # Just outside the epsilon band the secant agrees with the limit to O(v/n_vt).
    outside = cell_chord_conductance(2 * V_EPS, 1e4, SEL)
    assert outside == pytest.approx(cell_differential_conductance(0.0, 1e4, SEL), rel=1e-6)


@pytest.mark.parametrize("model", list(DiodeModel))
def test_chord_reconstructs_current(model):
    v = np.linspace(-1.5, 1.5, 301)
    r = np.where(np.arange(v.size) % 2, 1e4, 1e6)
    g = cell_chord_conductance(v, r, SEL, model)
    assert np.all(g > 0)
    assert np.all(g[v > 0] <= 1.0 / r[v > 0])
    rebuilt = g * v + zero_bias_current(r, SEL, model)
    np.testing.assert_allclose(rebuilt, cell_current(v, r, SEL, model), rtol=1e-12, atol=1e-24)


def test_operating_point_bundle():
    op = operating_point(0.8, 1e4, SEL)
    assert op.current == cell_current(0.8, 1e4, SEL)
    assert op.chord_conductance == cell_chord_conductance(0.8, 1e4, SEL)
    assert op.differential_conductance == cell_differential_conductance(0.8, 1e4, SEL)


def test_extreme_parameters_stay_finite():
    sel = SelectorParams(eta=0.05, i_s=1e-20, temperature=10.0)
    i = cell_current(np.array([-5.0, 0.0, 5.0, 50.0]), 1e4, sel)
    assert np.all(np.isfinite(i))
    assert i[-1] == pytest.approx(50.0 / 1e4, rel=1e-2)
