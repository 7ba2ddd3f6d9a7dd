import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenerate_neumann.coefficients import power_law
from degenerate_neumann.evolution import (banded_step_solve, energy_report, make_problem, propagate,
                                          solve_adjoint, solve_forward)

FORMS = ["divergence", "nondivergence"]


def test_constant_state_is_stationary():
    for form in FORMS:
        prob = make_problem(power_law(0.5, 1.2, form), n=41, nt=20)
        traj = solve_forward(prob, np.ones(prob.grid.n))
        np.testing.assert_allclose(traj.final, 1.0, atol=1e-12)


def test_divergence_form_conserves_mass():
    prob = make_problem(power_law(0.5, 0.5), n=81, nt=50)
    u0 = np.cos(np.pi * prob.grid.nodes) + 0.3
    traj = solve_forward(prob, u0)
    mass = traj.fields @ prob.grid.cell_widths
    assert np.max(np.abs(mass - mass[0])) < 1e-13


def test_uniform_heat_mode_decay():
    # for K -> 0 the operator approaches the Laplacian; compare IE with the discrete symbol
    prob = make_problem(power_law(0.5, 1e-9), n=101, nt=100)
    x = prob.grid.nodes
    u0 = np.cos(np.pi * x)
    lam = (2 - 2 * np.cos(np.pi / 100)) * 100 ** 2
    traj = solve_forward(prob, u0)
    expected = (1.0 / (1.0 + prob.dt * lam)) ** prob.nt
    np.testing.assert_allclose(traj.final, expected * u0, atol=2e-7)


def test_adjoint_pairing_identity():
    # <u(T), vT> = <u0, v(0)> + dt sum_j <h^j, v^{j-1}> for implicit Euler
    rng = np.random.default_rng(0)
    for form in FORMS:
        prob = make_problem(power_law(0.5, 0.7, form), n=41, nt=30)
        n = prob.grid.n
        u0, vT = rng.standard_normal((2, n))
        H = rng.standard_normal((prob.nt + 1, n))
        u = solve_forward(prob, u0, H)
        v = solve_adjoint(prob, vT)
        ip = prob.ip
        lhs = ip.inner(u.final, vT)
        rhs = ip.inner(u0, v.initial) + prob.dt * sum(ip.inner(H[j], v.fields[j - 1]) for j in range(1, prob.nt + 1))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_propagate_matches_trajectory():
    prob = make_problem(power_law(0.5, 0.5), n=51, nt=40, scheme="crank_nicolson")
    u0 = np.sin(3 * prob.grid.nodes)
    np.testing.assert_allclose(propagate(prob, u0), solve_forward(prob, u0).final, rtol=1e-13)


def test_banded_solver_agrees_with_factor():
    prob = make_problem(power_law(0.5, 1.5, "nondivergence"), n=51, nt=10)
    op, dt = prob.op, prob.dt
    b = np.linspace(-1, 1, prob.grid.n)
    x1 = banded_step_solve(-dt * op.sub, 1 - dt * op.diag, -dt * op.sup, b)
    x2 = prob.step_factor().solve(b)
    np.testing.assert_allclose(x1, x2, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(form=st.sampled_from(FORMS), K=st.floats(0.2, 1.8), scheme=st.sampled_from(["implicit_euler", "crank_nicolson"]),
       seed=st.integers(0, 2 ** 32 - 1))
def test_energy_bound_random(form, K, scheme, seed):
    rng = np.random.default_rng(seed)
    prob = make_problem(power_law(0.5, K, form), n=41, nt=40, scheme=scheme)
    n = prob.grid.n
    u0 = rng.standard_normal(n)
    H = rng.standard_normal((prob.nt + 1, n))
    traj = solve_forward(prob, u0, H, omega=(0.2, 0.6))
    assert energy_report(traj, u0, H, omega=(0.2, 0.6)).passed


def test_free_decay_is_monotone():
    for form in FORMS:
        prob = make_problem(power_law(0.5, 1.5, form), n=61, nt=60)
        u0 = np.random.default_rng(4).standard_normal(prob.grid.n)
        assert energy_report(solve_forward(prob, u0), u0).step_monotone


def test_callable_source_is_sampled():
    prob = make_problem(power_law(0.5, 0.5), n=31, nt=10)
    x = prob.grid.nodes
    a = solve_forward(prob, np.zeros_like(x), lambda t, xx: t * np.ones_like(xx))
    H = np.outer(prob.times, np.ones_like(x))
    b = solve_forward(prob, np.zeros_like(x), H)
    np.testing.assert_allclose(a.fields, b.fields)


def test_wrong_sizes_rejected():
    prob = make_problem(power_law(0.5, 0.5), n=31, nt=10)
    with pytest.raises(ValueError):
        solve_forward(prob, np.zeros(5))
    with pytest.raises(ValueError):
        solve_forward(prob, np.zeros(31), np.zeros((3, 31)))


def test_trajectory_csv(tmp_path):
    prob = make_problem(power_law(0.5, 0.5), n=21, nt=4)
    traj = solve_forward(prob, np.cos(np.pi * prob.grid.nodes))
    p = tmp_path / "u.csv"
    traj.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x,u"
    assert len(lines) == 1 + 5 * 21
