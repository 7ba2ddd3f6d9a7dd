import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenerate_neumann import oracles
from degenerate_neumann.coefficients import OutOfTheoryError, power_law
from degenerate_neumann.weights import (CarlemanWeights, NonDivWeights, build_cutoff,
                                        c1_lower_bound_observability, check_admissible,
                                        check_companion_monotonicity, default_weights, log_theta,
                                        min_c2, min_d2, primitive, primitive_series, psi, reflect,
                                        reflect_field, theta)


def test_theta_values():
    assert theta(0.5, 1.0) == 256.0
    assert theta(1.0, 2.0) == 1.0
    assert math.isclose(theta(0.01, 1.0), 1.0 / 0.0099 ** 4, rel_tol=1e-14)
    assert math.isclose(theta(0.01, 1.0), 1.04102e8, rel_tol=1e-5)


def test_theta_blows_up_at_ends():
    with pytest.raises(ValueError):
        theta(0.0, 1.0)
    with pytest.raises(ValueError):
        theta(1.0, 1.0)
    assert np.isinf(log_theta(np.array([0.0, 1.0]), 1.0)).all()
    t = np.linspace(0.01, 0.99, 50)
    np.testing.assert_allclose(np.exp(log_theta(t, 1.0)), theta(t, 1.0), rtol=1e-12)


def test_min_c2_symmetric_weak():
    # 0.25 / (0.5**0.5 * 1.5) = sqrt(2)/6
    assert math.isclose(min_c2(power_law(0.5, 0.5)), math.sqrt(2) / 6, rel_tol=1e-14)
    assert math.isclose(min_c2(power_law(0.5, 0.5)), 0.2357022, rel_tol=1e-6)


def test_min_d2_closed_form():
    m = power_law(0.5, 0.5, "nondivergence")
    expected = 0.25 * math.exp(0.25) / (1.5 * 2 ** -0.5)
    assert math.isclose(min_d2(m, 1.0), expected, rel_tol=1e-14)
    assert math.isclose(min_d2(m, 1.0), 0.3026477, rel_tol=1e-6)


def test_psi_at_boundary():
    m = power_law(0.5, 0.5)
    assert math.isclose(psi(np.array([1.0]), m, 1.0, 0.3)[0], math.sqrt(2) / 6 - 0.3, rel_tol=1e-13)
    assert math.isclose(psi(np.array([1.0]), m, 1.0, 0.3)[0], -0.0642977, rel_tol=1e-5)


def test_psi_matches_oracle():
    m = power_law(0.37, 1.3)
    x = np.linspace(0, 1, 101)
    w = CarlemanWeights(m, 2.0, 1.5 * min_c2(m))
    np.testing.assert_allclose(w.spatial(x), oracles.psi_power(x, 0.37, 1.3, 2.0, w.c2), rtol=1e-13)


@pytest.mark.parametrize("K", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("R", [0.5, 1.0, 3.0])
def test_primitive_quadrature_matches_series(K, R):
    m = power_law(0.4, K, "nondivergence")
    x = np.linspace(0, 1, 41)
    np.testing.assert_allclose(primitive(m, x, R), primitive_series(m, x, R), rtol=1e-13, atol=1e-15)


def test_primitive_R_to_zero_limit():
    m = power_law(0.5, 0.8, "nondivergence")
    x = np.linspace(0, 1, 21)
    np.testing.assert_allclose(primitive(m, x, 1e-10), primitive(m, x, 0.0), rtol=1e-9, atol=1e-15)


def test_min_d2_R_to_zero_limit():
    m = power_law(0.5, 0.8, "nondivergence")
    assert math.isclose(min_d2(m, 1e-12), min_c2(m), rel_tol=1e-10)


@settings(max_examples=15, deadline=None)
@given(x0=st.floats(0.15, 0.85), K=st.floats(0.1, 1.9), factor=st.floats(1.01, 5.0))
def test_admissible_above_floor(x0, K, factor):
    m = power_law(x0, K)
    ok, lo, hi = check_admissible(CarlemanWeights(m, 1.0, factor * min_c2(m)))
    assert ok and hi < 0
    mn = power_law(x0, K, "nondivergence")
    ok, lo, hi = check_admissible(NonDivWeights(mn, 1.0, factor * min_d2(mn, 1.0), 1.0))
    assert ok and hi < 0


def test_weight_below_floor_rejected():
    m = power_law(0.5, 0.5)
    with pytest.raises(ValueError):
        CarlemanWeights(m, 1.0, 0.9 * min_c2(m))
    mn = m.with_form("nondivergence")
    with pytest.raises(ValueError):
        NonDivWeights(mn, 1.0, min_d2(mn, 1.0), 1.0)


def test_K_at_least_two_refused():
    with pytest.raises(OutOfTheoryError):
        min_c2(power_law(0.5, 2.0))
    with pytest.raises(OutOfTheoryError):
        min_d2(power_law(0.5, 2.4), 1.0)


def test_companion_monotonicity_power_law():
    for K in (0.5, 1.0, 1.5):
        assert check_companion_monotonicity(power_law(0.5, K))


def test_c1_bound_strong_case():
    # strong: (c - 1) / (c2 - (1-x0)^2/(a(1)(2-K))); symmetric x0 and c2 = 2 min_c2 give 1/min_c2
    m = power_law(0.5, 1.5)
    c2 = 2 * min_c2(m)
    assert math.isclose(c1_lower_bound_observability(m, c2, frak_c=2.0), 1.0 / min_c2(m), rel_tol=1e-13)
    assert c1_lower_bound_observability(m, c2, frak_c=1.0) == 0.0


def test_c1_bound_weak_case_closed_form():
    # g = 1, h0 = 1: int_{l2}^1 (2 - t) |t - x0|^{-K/2} dt
    m = power_law(0.5, 0.5)
    c2 = 1.5 * min_c2(m)
    l2 = 0.75
    from scipy import integrate
    val = integrate.quad(lambda t: (2 - t) / (t - 0.5) ** 0.25, l2, 1.0, epsabs=1e-14)[0]
    denom = c2 - min_c2(m)
    expected = (val + 2.0) / denom
    assert math.isclose(c1_lower_bound_observability(m, c2, lambda2=l2), expected, rel_tol=1e-10)


def test_default_weights_form():
    assert isinstance(default_weights(power_law(0.5, 0.5)), CarlemanWeights)
    w = default_weights(power_law(0.5, 1.5, "nondivergence"))
    assert isinstance(w, NonDivWeights)
    assert w.d2 == pytest.approx(1.5 * min_d2(w.model, 1.0))


def test_log_weight_endpoints():
    w = default_weights(power_law(0.5, 0.5))
    t = np.linspace(0, 1, 11)
    lw = w.log_weight(t, np.linspace(0, 1, 5), 2.0)
    assert np.all(np.isneginf(lw[0])) and np.all(np.isneginf(lw[-1]))
    assert np.all(np.isfinite(lw[1:-1]))


@pytest.mark.parametrize("form", ["divergence", "nondivergence"])
def test_reflected_weight_matches_direct_integral(form):
    m = power_law(0.4, 0.7, form)
    w = default_weights(m)
    ext = reflect(w)
    x = np.array([-0.9, -0.5, -0.1, 0.3, 0.8, 1.2, 1.6, 1.95])
    np.testing.assert_allclose(ext.spatial_tilde(x), ext.spatial_tilde_direct(x), rtol=1e-9)
    np.testing.assert_allclose(ext.a_tilde(-x[:3]), ext.a_tilde(x[:3]))


def test_reflect_field_is_even_and_triples_mass():
    x = np.linspace(0, 1, 21)
    v = np.cos(2 * x) + x
    x_ext, W, cells = reflect_field(x, v)
    assert x_ext[0] == -1.0 and x_ext[-1] == 2.0
    assert np.all(np.diff(x_ext) > 0)
    np.testing.assert_allclose(np.interp(-x, x_ext, W), v)
    np.testing.assert_allclose(np.interp(2 - x, x_ext, W), v)
    ell = np.diff(np.concatenate([[0.0], 0.5 * (x[:-1] + x[1:]), [1.0]]))
    assert math.isclose(np.sum(cells * W ** 2), 3 * np.sum(ell * v ** 2), rel_tol=1e-13)


def test_cutoff_plateau_support_and_smoothness():
    c = build_cutoff((0.3, 0.6), (0.2, 0.8))
    x = np.linspace(0, 1, 2001)
    y = c(x)
    assert np.all(y[(x >= 0.3) & (x <= 0.6)] == 1.0)
    assert np.all(y[(x <= 0.2) | (x >= 0.8)] == 0.0)
    assert np.all((y >= 0) & (y <= 1))
    h = 1e-6
    xi = np.array([0.23, 0.27, 0.65, 0.75])
    np.testing.assert_allclose(c.d1(xi), (c(xi + h) - c(xi - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(c.d2(xi), (c.d1(xi + h) - c.d1(xi - h)) / (2 * h), rtol=1e-5)
    # C^2 across the band edges
    for e in (0.2, 0.3, 0.6, 0.8):
        assert abs(c.d1(np.array([e]))[0]) < 1e-12 and abs(c.d2(np.array([e]))[0]) < 1e-12


def test_cutoff_requires_bands():
    with pytest.raises(ValueError):
        build_cutoff((0.2, 0.6), (0.2, 0.8))
