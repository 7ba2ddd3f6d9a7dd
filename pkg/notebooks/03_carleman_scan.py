# %% [markdown]
# # Scanning the Carleman ratio in s
#
# For adjoint solutions v we compare
#
# * LHS = sum of `s Theta a (v_x)^2 e^{2 s Theta psi}` and `s^3 Theta^3 (x - x0)^2 / a v^2 e^{2 s Theta psi}`;
# * RHS = the weighted source term plus the boundary term.
#
# We then look for a plateau in `max LHS / RHS`. All sums are kept as
# (mantissa, log scale) pairs since `e^{2 s Theta psi}` underflows quickly.

# %%
import numpy as np

from degenerate_neumann import carleman
from degenerate_neumann.coefficients import power_law
from degenerate_neumann.evolution import make_problem
from degenerate_neumann.weights import default_weights

prob = make_problem(power_law(0.5, 0.5), n=201, nt=200)
w = default_weights(prob.model)
s_grid = np.logspace(0, 4, 9)
rep = carleman.s_scan(prob, carleman.EnsembleSpec(count=6, seed=0), s_grid, w, threads=2)
for s, r in zip(rep.s, rep.max_ratio):
    print(f"s = {s:9.3g}   max ratio = {r:.4e}   asymptote = {carleman.asymptotic_ratio(prob, w, s):.4e}")
print("plateau found:", rep.plateau_found)

# %% [markdown]
# The ratio does not level off. For large s both sides concentrate at
# t = T/2 and at the boundary node where psi peaks (see the weight table in
# the previous notebook). There the RHS density carries
# no power of s, while the LHS keeps `s^3 Theta^3 (x - x0)^2 / a`. The
# maximum therefore grows like `s^3` and follows `asymptotic_ratio`. The growth
# does not depend on the mesh, so refining does not help:

# %%
for n in (101, 201, 401):
    p = make_problem(power_law(0.5, 0.5), n=n, nt=100)
    r = carleman.s_scan(p, carleman.EnsembleSpec(count=3), [1e2, 1e4], default_weights(p.model))
    print(n, "growth over two decades of s:", r.max_ratio[1] / r.max_ratio[0])
