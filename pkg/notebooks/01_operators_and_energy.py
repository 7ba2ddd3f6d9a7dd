# %% [markdown]
# # Degenerate operators and the energy bound
#
# Two model operators on (0, 1) with a coefficient that vanishes at an
# interior point x0, both with homogeneous Neumann data:
#
# * divergence form `(a u')'`, posed in L2(0, 1);
# * non-divergence form `a u''`, posed in the weighted space L2 with weight 1/a.
#
# We use the power law `a(x) = |x - x0|^K`, which is weakly degenerate for
# K < 1 and strongly degenerate for 1 <= K < 2.

# %%
import numpy as np

from degenerate_neumann.coefficients import classify, power_law
from degenerate_neumann.evolution import energy_report, make_problem, solve_forward

for K in (0.5, 1.0, 1.5, 1.99):
    print(f"K = {K:<5} -> {classify(power_law(0.5, K))}")

# %% [markdown]
# The finite-volume grid puts a node on x0 in divergence form and a face on
# x0 in non-divergence form, so `1/a` is never evaluated at the degeneracy.

# %%
for form in ("divergence", "nondivergence"):
    prob = make_problem(power_law(0.5, 1.5, form), n=21, nt=10)
    x = prob.grid.nodes
    print(form, "closest node to x0:", np.min(np.abs(x - 0.5)))

# %% [markdown]
# Constants are stationary, divergence form conserves mass, and the free
# energy decays step by step.

# %%
prob = make_problem(power_law(0.5, 0.5), n=201, nt=200)
x = prob.grid.nodes
u0 = np.cos(np.pi * x) + 0.3
traj = solve_forward(prob, u0)
mass = traj.fields @ prob.grid.cell_widths
print("mass drift:", np.max(np.abs(mass - mass[0])))
print("norm^2 at t = 0, T/2, T:", traj.norms_sq()[[0, prob.nt // 2, -1]])

# %% [markdown]
# With a source supported in a subinterval the discrete solution obeys
# `sup_t |u|^2 <= e^T (|u0|^2 + |h|^2)`.

# %%
rng = np.random.default_rng(0)
for form in ("divergence", "nondivergence"):
    for scheme in ("implicit_euler", "crank_nicolson"):
        p = make_problem(power_law(0.5, 1.5, form), n=101, nt=100, scheme=scheme)
        v0 = rng.standard_normal(p.grid.n)
        H = rng.standard_normal((p.nt + 1, p.grid.n))
        rep = energy_report(solve_forward(p, v0, H, omega=(0.2, 0.6)), v0, H, omega=(0.2, 0.6))
        print(f"{form:14s} {scheme:15s}", *rep.lines(), sep="\n  ")
