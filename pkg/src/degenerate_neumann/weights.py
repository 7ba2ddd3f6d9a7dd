"""Carleman weight functions, their admissibility constants and reflections.

The time factor is ``Theta(t) = 1 / (t (T - t))**4``.  The spatial factor is
``psi(x) = c1 (int_{x0}^x (y - x0)/a(y) dy - c2)`` for the divergence form
and ``mu(x) = d1 (int_{x0}^x (y - x0)/a(y) exp(R (y - x0)**2) dy - d2)`` for
the non-divergence form.  Both are negative on [0, 1] once ``c2`` (resp.
``d2``) exceeds its floor.

Exponentials of the weights are never formed directly: callers receive
``2 s Theta psi``, which is ``-inf`` at ``t = 0`` and ``t = T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .coefficients import DegeneracyModel, OutOfTheoryError, classify, prototype_g

Array = np.ndarray

QUAD_TOL = 1e-12
DEFAULT_C2_FACTOR = 1.5
DEFAULT_R = 1.0


def theta(t, T):
    """``1 / (t (T - t))**4``; raises outside the open interval (0, T)."""
    t = np.asarray(t, float)
    if np.any((t <= 0) | (t >= T)):
        raise ValueError("Theta is defined only for 0 < t < T")
    out = 1.0 / (t * (T - t)) ** 4
    return float(out) if out.ndim == 0 else out


def log_theta(t, T):
    """``log Theta``; ``+inf`` at the endpoints."""
    t = np.asarray(t, float)
    with np.errstate(divide="ignore"):
        return -4.0 * (np.log(t) + np.log(T - t))


def _check_K(K):
    if K >= 2:
        raise OutOfTheoryError(f"weight constants need K < 2 (got K={K:g}); 2 - K <= 0")


def min_c2(model: DegeneracyModel) -> float:
    """Floor that ``c2`` must strictly exceed for ``psi < 0`` on [0, 1]."""
    K = model.K_bound
    _check_K(K)
    x0 = model.x0
    return max((1 - x0) ** 2 / (model.a(1.0) * (2 - K)), x0 ** 2 / (model.a(0.0) * (2 - K)))


def min_d2(model: DegeneracyModel, R: float = DEFAULT_R) -> float:
    K = model.K_bound
    _check_K(K)
    x0 = model.x0
    return max((1 - x0) ** 2 * math.exp(R * (1 - x0) ** 2) / ((2 - K) * model.a(1.0)),
               x0 ** 2 * math.exp(R * x0 ** 2) / ((2 - K) * model.a(0.0)))


# --- spatial primitives -------------------------------------------------------


def _cumulative_quad(f, d_sorted):
    """``int_0^{d_j} f`` for ascending ``d_j`` by summing quad over consecutive pieces."""
    out = np.empty_like(d_sorted)
    acc = 0.0
    prev = 0.0
    for j, d in enumerate(d_sorted):
        if d > prev:
            acc += integrate.quad(f, prev, d, epsabs=QUAD_TOL, epsrel=1e-13, limit=200)[0]
            prev = d
        out[j] = acc
    return out


def _power_primitive(dist, K, R):
    """``int_0^d y**(1-K) exp(R y**2) dy`` via ``y = d u**(1/(2-K))``.

    The substitution gives ``d**(2-K)/(2-K) int_0^1 exp(R d**2 u**(2/(2-K))) du``
    with a bounded integrand; quad runs once per distinct point.
    """
    p = 2.0 / (2.0 - K)
    out = np.empty_like(dist)
    for j, d in enumerate(dist):
        if d == 0:
            out[j] = 0.0
            continue
        c = R * d * d
        val = integrate.quad(lambda u: math.exp(c * u ** p), 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)[0]
        out[j] = d ** (2 - K) / (2 - K) * val
    return out


def primitive(model: DegeneracyModel, x, R: float = 0.0) -> Array:
    """``int_{x0}^x (y - x0)/a(y) exp(R (y - x0)**2) dy`` (always >= 0).

    Closed form for the power law with ``R = 0``; adaptive quadrature
    otherwise.
    """
    x = np.atleast_1d(np.asarray(x, float))
    x0 = model.x0
    d = x - x0
    if model.K is not None and R == 0.0:
        return np.abs(d) ** (2 - model.K) / (2 - model.K)
    out = np.empty_like(x)
    for side in (-1.0, 1.0):
        sel = np.sign(d) == side
        if not sel.any():
            continue
        dist = np.abs(d[sel])
        order = np.argsort(dist)
        if model.K is not None:
            vals = _power_primitive(dist[order], model.K, R)
        else:
            f = lambda y: y / float(model.a(x0 + side * y)) * math.exp(R * y * y)  # noqa: E731
            vals = _cumulative_quad(f, dist[order])
        res = np.empty_like(dist)
        res[order] = vals
        out[sel] = res
    out[d == 0] = 0.0
    return out


def primitive_series(model: DegeneracyModel, x, R: float, terms: int = 60) -> Array:
    """Power-law ``primitive`` by term-wise integration of the exponential series."""
    K = model.K
    d = np.abs(np.asarray(x, float) - model.x0)
    out = np.zeros_like(d)
    coef = 1.0
    for m in range(terms):
        if m:
            coef *= R / m
        out += coef * d ** (2 * m + 2 - K) / (2 * m + 2 - K)
    return out


# --- weight objects -----------------------------------------------------------


@dataclass(frozen=True)
class CarlemanWeights:
    """Divergence-form weight ``phi = Theta psi``."""

    model: DegeneracyModel
    c1: float
    c2: float
    T: float = 1.0

    def __post_init__(self):
        floor = min_c2(self.model)
        if not self.c2 > floor:
            raise ValueError(f"c2={self.c2} must exceed min_c2={floor}")
        if self.c1 <= 0:
            raise ValueError("c1 must be positive")

    name = "psi"

    def spatial(self, x) -> Array:
        return self.c1 * (primitive(self.model, x) - self.c2)

    def spatial_prime(self, x) -> Array:
        x = np.asarray(x, float)
        a = self.model.a(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, self.c1 * (x - self.model.x0) / a, 0.0)

    psi = spatial

    def bounds(self):
        return -self.c1 * self.c2, 0.0

    def log_weight(self, t, x, s) -> Array:
        """``2 s Theta(t) psi(x)`` on the (t, x) outer grid; ``-inf`` at t in {0, T}."""
        return 2.0 * s * np.exp(log_theta(t, self.T))[:, None] * self.spatial(x)[None, :]

    def resolved(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "T": self.T}


@dataclass(frozen=True)
class NonDivWeights:
    """Non-divergence weight ``gamma = Theta mu``."""

    model: DegeneracyModel
    d1: float
    d2: float
    R: float = DEFAULT_R
    T: float = 1.0

    def __post_init__(self):
        floor = min_d2(self.model, self.R)
        if not self.d2 > floor:
            raise ValueError(f"d2={self.d2} must exceed min_d2={floor}")
        if self.d1 <= 0 or self.R <= 0:
            raise ValueError("d1 and R must be positive")

    name = "mu"

    def spatial(self, x) -> Array:
        return self.d1 * (primitive(self.model, x, R=self.R) - self.d2)

    def spatial_prime(self, x) -> Array:
        x = np.asarray(x, float)
        d = x - self.model.x0
        a = self.model.a(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, self.d1 * d * np.exp(self.R * d * d) / a, 0.0)

    mu = spatial

    def bounds(self):
        return -self.d1 * self.d2, 0.0

    def log_weight(self, t, x, s) -> Array:
        return 2.0 * s * np.exp(log_theta(t, self.T))[:, None] * self.spatial(x)[None, :]

    def resolved(self) -> dict:
        return {"d1": self.d1, "d2": self.d2, "R": self.R, "T": self.T}


def psi(x, model, c1, c2):
    return CarlemanWeights(model, c1, c2).spatial(x)


def mu(x, model, d1, d2, R=DEFAULT_R):
    return NonDivWeights(model, d1, d2, R).spatial(x)


def check_admissible(weights, npts: int = 10001):
    """Scan ``-c1 c2 <= psi < 0`` (or the mu analogue) on ``npts`` points of [0, 1]."""
    x = np.linspace(0.0, 1.0, npts)
    vals = weights.spatial(x)
    lo, _ = weights.bounds()
    ok = bool(np.all(vals < 0) and np.all(vals >= lo * (1 + 1e-14)))
    return ok, float(vals.min()), float(vals.max())


def check_companion_monotonicity(model: DegeneracyModel, npts: int = 10001) -> bool:
    """``a/(x-x0)**2`` nondecreasing on [0, x0) and nonincreasing on (x0, 1]."""
    x = np.linspace(0.0, 1.0, npts)
    x = x[np.abs(x - model.x0) > 1e-6]
    q = model.a(x) / (x - model.x0) ** 2
    left = x < model.x0
    ql, qr = q[left], q[~left]
    tol = 1e-12
    return bool(np.all(np.diff(ql) >= -tol * ql[:-1]) and np.all(np.diff(qr) <= tol * qr[:-1]))


# --- c1 floor for the observability runs ---------------------------------------


def c1_lower_bound_observability(model: DegeneracyModel, c2: float, r: float = 1.0,
                                 frak_c: float = 2.0, lambda2: Optional[float] = None,
                                 g: Callable = prototype_g, h0: float = 1.0) -> float:
    """Lower bound for ``c1`` used by the observability argument.

    Weak degeneracy: ``Pi = (r [int_{l2}^1 a^{-1/2}(t) int_t^1 g + int_{l2}^1 h0 a^{-1/2}] + c)
    / (c2 - (1-x0)**2/(a(1)(2-K)))``.  Strong degeneracy:
    ``(c - 1) / (same denominator)``, clipped at 0.
    """
    x0 = model.x0
    K = model.K_bound
    _check_K(K)
    denom = c2 - (1 - x0) ** 2 / (model.a(1.0) * (2 - K))
    if denom <= 0 or not c2 > min_c2(model):
        raise ValueError(f"inadmissible c2={c2}")
    kind = classify(model)
    if kind == "strong":
        return max(frak_c - 1.0, 0.0) / denom
    if lambda2 is None:
        lambda2 = 0.5 * (x0 + 1.0)
    if not x0 < lambda2 < 1:
        raise ValueError("lambda2 must lie in (x0, 1)")

    if g is prototype_g:
        def inner(t):
            return 1.0 - t
    else:
        def inner(t):
            return integrate.quad(g, t, 1.0, epsabs=QUAD_TOL)[0]

    def f(t):
        return (inner(t) + h0) / math.sqrt(float(model.a(t)))

    val, _ = integrate.quad(f, lambda2, 1.0, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
    return (r * val + frak_c) / denom


def default_divergence_weights(model: DegeneracyModel, T: float = 1.0, c1: Optional[float] = None,
                               c2: Optional[float] = None, **bound_kw) -> CarlemanWeights:
    """``c2 = 1.5 min_c2`` and ``c1 = max(1, c1 floor)`` unless given."""
    if c2 is None:
        c2 = DEFAULT_C2_FACTOR * min_c2(model)
    if c1 is None:
        try:
            c1 = max(1.0, c1_lower_bound_observability(model, c2, **bound_kw))
        except (ValueError, OutOfTheoryError):
            c1 = 1.0
    return CarlemanWeights(model.with_form("divergence") if model.form != "divergence" else model, c1, c2, T)


def default_nondiv_weights(model: DegeneracyModel, T: float = 1.0, d1: float = 1.0,
                           d2: Optional[float] = None, R: float = DEFAULT_R) -> NonDivWeights:
    if d2 is None:
        d2 = DEFAULT_C2_FACTOR * min_d2(model, R)
    return NonDivWeights(model, d1, d2, R, T)


def default_weights(model: DegeneracyModel, T: float = 1.0):
    if model.form == "divergence":
        return default_divergence_weights(model, T)
    return default_nondiv_weights(model, T)


# --- reflection -----------------------------------------------------------------


def _fold(x):
    """Map [-1, 2] onto [0, 1] by the even reflections about 0 and 1."""
    x = np.asarray(x, float)
    return np.where(x < 0, -x, np.where(x > 1, 2 - x, x))


@dataclass(frozen=True)
class ExtendedWeights:
    model: DegeneracyModel
    weights: object

    def a_tilde(self, x):
        return self.model.a(_fold(x))

    def spatial_tilde(self, x):
        return self.weights.spatial(_fold(x))

    def spatial_tilde_direct(self, x):
        """Reflected weight from its own integral on the mirrored branch.

        On [-1, 0] the branch integrates ``(t + x0)/a~(t)`` from ``-x0``; on
        [1, 2] it integrates ``(t - 2 + x0)/a~(t)`` from ``2 - x0``.
        """
        w = self.weights
        R = getattr(w, "R", 0.0)
        scale = getattr(w, "c1", None) or w.d1
        shift = getattr(w, "c2", None) or w.d2
        x = np.atleast_1d(np.asarray(x, float))
        out = np.empty_like(x)
        x0 = self.model.x0
        for i, xi in enumerate(x):
            if 0 <= xi <= 1:
                out[i] = w.spatial(np.array([xi]))[0]
                continue
            centre = -x0 if xi < 0 else 2 - x0

            def f(t, c=centre):
                d = t - c
                return d / float(self.a_tilde(t)) * math.exp(R * d * d)

            val, _ = integrate.quad(f, centre, xi, epsabs=QUAD_TOL, epsrel=1e-13, limit=200)
            out[i] = scale * (val - shift)
        return out


def reflect(weights) -> ExtendedWeights:
    return ExtendedWeights(weights.model, weights)


def reflect_field(nodes: Array, v: Array):
    """Even extension of nodal values to [-1, 2].

    Returns ``(x_ext, W, cell_ext)``; ``cell_ext`` are the control volumes
    of the extended grid, so ``sum(cell_ext W**2) = 3 sum(cell v**2)``.
    """
    x = np.asarray(nodes, float)
    v = np.asarray(v, float)
    x_ext = np.concatenate([-x[:0:-1], x, 2 - x[-2::-1]])
    W = np.concatenate([v[:0:-1], v, v[-2::-1]])
    faces = np.empty(x_ext.size + 1)
    faces[0], faces[-1] = -1.0, 2.0
    faces[1:-1] = 0.5 * (x_ext[:-1] + x_ext[1:])
    return x_ext, W, np.diff(faces)


# --- cut-off functions ----------------------------------------------------------


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z ** 3 * (10 - 15 * z + 6 * z * z)


def _smoothstep_d1(z):
    inside = (z > 0) & (z < 1)
    return np.where(inside, 30 * z * z * (1 - z) ** 2, 0.0)


def _smoothstep_d2(z):
    inside = (z > 0) & (z < 1)
    return np.where(inside, 60 * z * (1 - z) * (1 - 2 * z), 0.0)


@dataclass(frozen=True)
class Cutoff:
    """C^2 cut-off: 1 on ``plateau``, 0 outside ``support``, quintic bands between."""

    plateau: tuple
    support: tuple

    def _bands(self, x):
        (p0, p1), (s0, s1) = self.plateau, self.support
        x = np.asarray(x, float)
        zl = (x - s0) / (p0 - s0)
        zr = (s1 - x) / (s1 - p1)
        return x, zl, zr, p0 - s0, s1 - p1

    def __call__(self, x):
        x, zl, zr, _, _ = self._bands(x)
        return np.minimum(_smoothstep(zl), _smoothstep(zr))

    def d1(self, x):
        x, zl, zr, wl, wr = self._bands(x)
        return _smoothstep_d1(zl) / wl - _smoothstep_d1(zr) / wr

    def d2(self, x):
        x, zl, zr, wl, wr = self._bands(x)
        return _smoothstep_d2(zl) / wl ** 2 + _smoothstep_d2(zr) / wr ** 2


def build_cutoff(plateau, support) -> Cutoff:
    (p0, p1), (s0, s1) = plateau, support
    if not (s0 < p0 <= p1 < s1):
        raise ValueError("plateau must lie strictly inside the support with bands of positive width")
    return Cutoff((float(p0), float(p1)), (float(s0), float(s1)))
