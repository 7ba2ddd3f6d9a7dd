# %% [markdown]
# # Carleman weights
#
# The time weight `Theta(t) = 1 / (t (T - t))^4` blows up at both ends of
# (0, T). The spatial weights are built from primitives of `(x - x0)/a`:
#
# * `psi = c1 (prim - c2)` for divergence form;
# * `mu` for non-divergence form, which also carries an exponential factor with rate R.
#
# Both must be negative on [0, 1]; that fixes the floors `min_c2` and `min_d2`.

# %%
import math

import numpy as np

from degenerate_neumann.coefficients import power_law
from degenerate_neumann.weights import (CarlemanWeights, NonDivWeights, check_admissible,
                                        c1_lower_bound_observability, min_c2, min_d2, theta)

print("Theta(T/2) =", theta(0.5, 1.0))
print("Theta(0.01) =", theta(0.01, 1.0), " vs 1/0.0099^4 =", 1 / 0.0099 ** 4)

# %%
m = power_law(0.5, 0.5)
mn = m.with_form("nondivergence")
print("min_c2 =", min_c2(m), " sqrt(2)/6 =", math.sqrt(2) / 6)
print("min_d2 =", min_d2(mn, 1.0), " closed form =", 0.25 * math.exp(0.25) / (1.5 * 2 ** -0.5))

# %% [markdown]
# Above the floor the weights are admissible; at or below it they are refused.

# %%
for factor in (0.9, 1.0, 1.01, 1.5):
    try:
        ok, lo, hi = check_admissible(CarlemanWeights(m, 1.0, factor * min_c2(m)))
        print(f"c2 = {factor} min_c2: max psi = {hi:.4g}")
    except ValueError as exc:
        print(f"c2 = {factor} min_c2: refused ({exc})")

# %% [markdown]
# The observability argument needs c1 above a floor that depends on c2 and
# on a few auxiliary choices (r, frak_c, lambda2). The defaults the CLI uses
# are r = 1, frak_c = 2 and lambda2 at the midpoint of (x0, 1).

# %%
c2 = 1.5 * min_c2(m)
print("c1 floor =", c1_lower_bound_observability(m, c2))
w = NonDivWeights(mn, 1.0, 1.5 * min_d2(mn, 1.0), 1.0)
x = np.linspace(0, 1, 11)
print(np.column_stack([x, CarlemanWeights(m, 1.0, c2).spatial(x), w.spatial(x)]))
