import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenerate_neumann import oracles
from degenerate_neumann.coefficients import power_law
from degenerate_neumann.mesh import assemble_operator, build_grid, green_residual, symmetry_defect

FORMS = ["divergence", "nondivergence"]


@pytest.mark.parametrize("x0", [0.3, 0.5, 0.7, 0.4137])
@pytest.mark.parametrize("grading", [1.0, 1.5])
def test_divergence_grid_puts_x0_on_a_node(x0, grading):
    g = build_grid(101, power_law(x0, 0.5), grading=grading)
    assert g.placement == "node"
    assert g.nodes[g.x0_index] == x0
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.all(np.diff(g.nodes) > 0)


@pytest.mark.parametrize("x0", [0.3, 0.5, 0.7, 0.4137])
@pytest.mark.parametrize("grading", [1.0, 1.5])
def test_nondivergence_grid_puts_x0_on_a_face(x0, grading):
    m = power_law(x0, 1.5, "nondivergence")
    g = build_grid(101, m, grading=grading)
    assert g.placement == "face"
    assert g.faces[g.x0_index + 1] == x0
    assert np.all(m.a(g.nodes) > 0)
    assert np.all(np.diff(g.nodes) > 0)


def test_cell_widths_partition_the_interval():
    for form in FORMS:
        g = build_grid(64, power_law(0.42, 1.2, form), grading=2.0)
        assert abs(g.cell_widths.sum() - 1.0) < 1e-14
        assert np.all(g.cell_widths > 0)


def test_grading_refines_near_x0():
    m = power_law(0.5, 0.5)
    uni = build_grid(101, m)
    gr = build_grid(101, m, grading=2.0)
    i = gr.x0_index
    assert gr.spacing[i] < 0.2 * uni.spacing[uni.x0_index]


def test_too_few_nodes():
    with pytest.raises(ValueError):
        build_grid(5, power_law(0.5, 0.5))


def test_operator_annihilates_constants():
    for form in FORMS:
        m = power_law(0.5, 1.5, form)
        g = build_grid(51, m)
        op = assemble_operator(m, g)
        assert np.max(np.abs(op.apply(np.ones(g.n)))) < 1e-10 * op.norm_estimate()


def test_apply_matches_dense_matrix():
    rng = np.random.default_rng(1)
    for form in FORMS:
        m = power_law(0.3, 0.8, form)
        g = build_grid(40, m, grading=1.3)
        op = assemble_operator(m, g)
        u = rng.standard_normal(g.n)
        np.testing.assert_allclose(op.apply(u), op.to_dense() @ u, rtol=1e-12, atol=1e-9)


def test_green_pair_matches_scalar_loop():
    rng = np.random.default_rng(2)
    m = power_law(0.5, 0.5)
    g = build_grid(51, m)
    op = assemble_operator(m, g)
    u, v = rng.standard_normal((2, g.n))
    mid = 0.5 * (g.nodes[:-1] + g.nodes[1:])
    ref = oracles.green_pair(list(g.nodes), list(m.a(mid)), list(u), list(v))
    assert abs(op.dirichlet_form(u, v) - ref) <= 1e-12 * abs(ref)
    assert abs(op.ip.inner(op.apply(u), v) + ref) <= 1e-12 * np.sum(np.abs(op.conductance * np.diff(u) * np.diff(v)))


@settings(max_examples=40, deadline=None)
@given(form=st.sampled_from(FORMS), K=st.floats(0.1, 1.9), x0=st.floats(0.2, 0.8),
       n=st.integers(20, 120), seed=st.integers(0, 2 ** 32 - 1))
def test_green_and_symmetry_random(form, K, x0, n, seed):
    rng = np.random.default_rng(seed)
    m = power_law(x0, K, form)
    g = build_grid(n, m)
    op = assemble_operator(m, g)
    u, v = rng.standard_normal((2, g.n))
    assert green_residual(op, g, u, v, relative=True) <= 1e-12
    assert symmetry_defect(op, u, v) <= 1e-12
    assert op.ip.inner(op.apply(u), u) <= 1e-12 * op.ip.norm_sq(u)


def test_nondivergence_inner_product_uses_inv_a():
    m = power_law(0.5, 1.5, "nondivergence")
    g = build_grid(51, m)
    op = assemble_operator(m, g)
    np.testing.assert_allclose(op.ip.weights, g.cell_widths / m.a(g.nodes))


def test_mismatched_placement_is_rejected():
    m = power_law(0.5, 1.5, "nondivergence")
    g = build_grid(51, m.with_form("divergence"))
    with pytest.raises(ValueError):
        assemble_operator(m, g)


def test_grid_csv(tmp_path):
    m = power_law(0.5, 0.5)
    g = build_grid(21, m)
    p = tmp_path / "grid.csv"
    g.to_csv(p, m)
    rows = p.read_text().splitlines()
    assert rows[0] == "node,a,weight"
    assert len(rows) == 22
