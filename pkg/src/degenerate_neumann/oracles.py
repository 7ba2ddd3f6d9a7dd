"""Deliberately naive reference implementations.

These loop over every space-time node in plain Python and re-derive each
ingredient (time factor, closed-form power-law weight, derivative
stencil, quadrature weights) from scratch, so that they share no code
with the vectorised functionals they check.  Only power-law models are
supported.
"""

from __future__ import annotations

import math

import numpy as np


def _dual_widths(x):
    n = len(x)
    out = []
    for i in range(n):
        left = x[i] if i == 0 else 0.5 * (x[i - 1] + x[i])
        right = x[i] if i == n - 1 else 0.5 * (x[i] + x[i + 1])
        out.append(right - left)
    return out


def _dvdx(x, row, i):
    n = len(x)
    if i == 0:
        return (row[1] - row[0]) / (x[1] - x[0])
    if i == n - 1:
        return (row[n - 1] - row[n - 2]) / (x[n - 1] - x[n - 2])
    return (row[i + 1] - row[i - 1]) / (x[i + 1] - x[i - 1])


def _psi_power(xi, x0, K, c1, c2):
    return c1 * (abs(xi - x0) ** (2 - K) / (2 - K) - c2)


def carleman_sums(fields, times, nodes, x0, K, form, s, spatial, cells=None, omega_mask=None, h=None):
    """Return ``(lhs, rhs)`` of the Carleman functionals by double summation.

    ``spatial`` is a list of nodal weight values (psi or mu) so that the
    same routine serves both forms; ``cells`` defaults to dual widths
    recomputed from the nodes (pass the grid's own widths when x0 sits on
    a face).
    """
    x = [float(v) for v in nodes]
    T = float(times[-1])
    dt = float(times[1] - times[0])
    cells = _dual_widths(x) if cells is None else [float(c) for c in cells]
    lhs = 0.0
    rhs = 0.0
    for k in range(1, len(times) - 1):
        t = float(times[k])
        th = 1.0 / (t * (T - t)) ** 4
        row = [float(v) for v in fields[k]]
        for i, xi in enumerate(x):
            e = math.exp(2.0 * s * th * spatial[i])
            d = abs(xi - x0)
            a = d ** K
            vx = _dvdx(x, row, i)
            if form == "divergence":
                zero = d ** (2 - K)
                ldens = s * th * a * vx * vx + s ** 3 * th ** 3 * zero * row[i] ** 2
            else:
                ldens = s * th * vx * vx + s ** 3 * th ** 3 * (d / a) ** 2 * row[i] ** 2
            lhs += dt * cells[i] * ldens * e
            inside = 1.0 if omega_mask is None else float(omega_mask[i])
            rdens = inside * row[i] ** 2
            if h is not None:
                hv = float(h[k][i])
                rdens += hv * hv if form == "divergence" else hv * hv / a
            rhs += dt * cells[i] * rdens * e
    return lhs, rhs


def observation_energy_naive(fields, dt, weights, mask):
    total = 0.0
    for j in range(len(fields) - 1):
        for i in range(len(weights)):
            if mask[i]:
                total += dt * weights[i] * float(fields[j][i]) ** 2
    return total


def green_pair(x, a_mid, u, v):
    """``sum_i a_{i+1/2} (u_{i+1}-u_i)(v_{i+1}-v_i)/h_i`` in a scalar loop."""
    total = 0.0
    for i in range(len(x) - 1):
        total += a_mid[i] * (u[i + 1] - u[i]) * (v[i + 1] - v[i]) / (x[i + 1] - x[i])
    return total


def psi_power(x, x0, K, c1, c2):
    return np.array([_psi_power(float(xi), x0, K, c1, c2) for xi in np.atleast_1d(x)])
