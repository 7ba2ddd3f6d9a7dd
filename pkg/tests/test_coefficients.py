import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenerate_neumann.coefficients import (OutOfTheoryError, check_carleman_hypotheses,
                                             check_degeneracy_bound, check_observability_hypotheses,
                                             classify, custom, effective_K, estimate_theta,
                                             identity_residual, power_law, probe_pairs, prototype_h)


@pytest.mark.parametrize("K, kind", [(0.5, "weak"), (0.99, "weak"), (1.0, "strong"), (1.5, "strong"),
                                     (1.9, "strong")])
def test_classify_power_law(K, kind):
    assert classify(power_law(0.5, K)) == kind


@pytest.mark.parametrize("K", [2.0, 2.5, 3.0])
def test_classify_refuses_outside_theory(K):
    with pytest.raises(OutOfTheoryError):
        classify(power_law(0.5, K))


def test_invalid_models():
    with pytest.raises(ValueError):
        power_law(0.0, 0.5)
    with pytest.raises(ValueError):
        power_law(0.5, -1.0)
    with pytest.raises(ValueError):
        power_law(0.5, 0.5, "mixed")


def test_theta_equals_K_for_prototype():
    m = power_law(0.3, 0.5)
    assert m.theta == 0.5
    assert estimate_theta(m) == 0.5
    rep = check_carleman_hypotheses(m)
    assert rep.constants["theta"] == 0.5
    assert rep.constants["class"] == "weak"


def test_custom_coefficient_effective_K():
    # a = |x-x0|^0.7 (1 + (x-x0)^2): (x-x0)a'/a = 0.7 + 2d^2/(1+d^2) <= 0.7 + 0.4
    x0 = 0.5
    a = lambda x: np.abs(x - x0) ** 0.7 * (1 + (x - x0) ** 2)  # noqa: E731
    ap = lambda x: (0.7 * np.sign(x - x0) * np.abs(x - x0) ** -0.3 * (1 + (x - x0) ** 2)  # noqa: E731
                    + 2 * (x - x0) * np.abs(x - x0) ** 0.7)
    m = custom(x0, a, ap, K_bound=1.5)
    K = effective_K(m)
    assert 0.7 < K <= 0.7 + 2 * 0.25 / 1.25 + 1e-12
    assert classify(m) == "strong"


def test_degeneracy_bound_flags_violation_with_witness():
    x0 = 0.5
    m = custom(x0, lambda x: np.abs(x - x0) ** 1.5, lambda x: 1.5 * np.sign(x - x0) * np.abs(x - x0) ** 0.5,
               K_bound=1.0)
    rep = check_degeneracy_bound(m)
    clause = rep["degeneracy_bound"]
    assert clause.verdict is False
    assert clause.witnesses


def test_custom_without_derivative_is_unable_to_verify():
    m = custom(0.5, lambda x: np.abs(x - 0.5) ** 0.5, None, K_bound=0.5)
    rep = check_carleman_hypotheses(m)
    assert rep["derivative_supplied"].verdict is None
    assert rep.passed and not rep.verified


def test_strong_divergence_hypotheses_for_large_K():
    rep = check_carleman_hypotheses(power_law(0.5, 1.8))
    assert rep["monotone_a_over_power"].verdict is True
    assert rep["bounded_below"].verdict is True
    assert rep["sigma_bound"].verdict is True


@pytest.mark.parametrize("form", ["divergence", "nondivergence"])
def test_identity_residual_on_probe_pairs(form):
    m = power_law(0.5, 0.5, form)
    x, B = probe_pairs(m.x0, 200)
    res, scale = identity_residual(m, x, B)
    assert np.max(np.abs(res) / np.maximum(scale, 1.0)) <= 1e-10
    rep = check_observability_hypotheses(m, x, B)
    assert rep["observability_identity"].verdict is True


def test_probe_pairs_are_ordered_and_one_sided():
    x, B = probe_pairs(0.4, 200, seed=3)
    assert x.size == B.size == 200
    assert np.all(x < B)
    assert np.all((B < 0.4) | (x > 0.4))


def test_identity_detects_wrong_h():
    m = power_law(0.5, 0.5)
    x, B = probe_pairs(0.5, 50)
    res, scale = identity_residual(m, x, B, h=lambda xx, bb: 1.01 * prototype_h(m, xx, bb))
    assert np.max(np.abs(res) / np.maximum(scale, 1.0)) > 1e-4


@settings(max_examples=30, deadline=None)
@given(x0=st.floats(0.1, 0.9), K=st.floats(0.05, 0.95))
def test_weak_identity_holds_for_any_weak_power(x0, K):
    m = power_law(x0, K)
    x, B = probe_pairs(x0, 20)
    res, scale = identity_residual(m, x, B)
    assert np.max(np.abs(res) / np.maximum(scale, 1.0)) <= 1e-10


def test_report_lines_are_readable():
    lines = check_carleman_hypotheses(power_law(0.5, 0.5)).lines()
    assert any("weak" in ln for ln in lines)
    assert "theta = 0.5" in lines
