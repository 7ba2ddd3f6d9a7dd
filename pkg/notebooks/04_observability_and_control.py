# %% [markdown]
# # Observability constant and penalised null control
#
# For the implicit Euler adjoint the best constant in
# `|v(0)|^2 <= C_T int_0^T int_omega v^2` is the top eigenvalue of a
# generalised pencil. The default estimator factors the observation Gramian
# in the eigenbasis of the discrete operator and discards modes below a
# relative threshold, which gives a lower bound. `dense_CT` solves the same
# pencil in extended precision for small grids.

# %%
import numpy as np

from degenerate_neumann import control
from degenerate_neumann.coefficients import power_law
from degenerate_neumann.evolution import make_problem

omega = control.ObservabilityConfig((0.4, 0.6), 1.0)
small = make_problem(power_law(0.5, 0.5), n=21, nt=40)
print("exact  :", control.dense_CT(small, omega, dps=40))
print("spectral:", control.estimate_CT(small, omega).C_T)
print("sweeps  :", control.estimate_CT(small, omega, method="sweeps").C_T)

# %% [markdown]
# Mesh behaviour of the spectral estimate:

# %%
for n in (51, 101, 201):
    rep = control.estimate_CT(make_problem(power_law(0.5, 0.5), n=n), omega, samples=10, seed=1)
    print(n, rep.C_T, "max sample quotient:", max(rep.quotients))

# %% [markdown]
# HUM with penalty eps minimises `1/2 int_omega v^2 + eps/2 |vT|^2 + <u0, v(0)>`
# by conjugate gradients in the state inner product. The control is
# `h = chi_omega v` and the final state equals `-eps vT`.

# %%
prob = make_problem(power_law(0.5, 0.5), n=101, nt=100)
u0 = np.cos(np.pi * prob.grid.nodes)
for eps in (1e-4, 1e-6, 1e-8):
    res = control.hum_control(prob, u0, omega, eps)
    ver = control.verify_null_control(prob, u0, res)
    print(f"eps = {eps:.0e}  |u(T)|/|u0| = {ver.relative_final_norm:.3e}  "
          f"cost/|u0|^2 = {ver.cost_ratio:.3f}  CG iterations = {res.iterations}")
