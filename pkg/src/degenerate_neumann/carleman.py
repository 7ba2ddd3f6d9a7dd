"""Weighted space-time functionals on adjoint trajectories and s-scans.

Every functional is a sum over the open time grid ``t_1 .. t_{nt-1}``
(weight ``dt``; the endpoint contributions vanish with ``e^{2 s phi}``) and
over the control volumes in space.  Because ``e^{2 s phi}`` underflows long
before ``s`` reaches the top of a typical scan, sums are accumulated as
``mantissa * exp(log_scale)`` with ``log_scale`` the largest exponent.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .evolution import EvolutionProblem, Trajectory, solve_adjoint
from .weights import default_weights, log_theta

Array = np.ndarray

PLATEAU_TOL = 0.05
# a plateau must cover at least a doubling of s
PLATEAU_SPAN = 2.0
GENERATOR = "numpy.random.PCG64"


@dataclass(frozen=True)
class Scaled:
    """Nonnegative number stored as ``mantissa * exp(log_scale)``."""

    mantissa: float
    log_scale: float

    @property
    def value(self) -> float:
        if self.mantissa == 0.0:
            return 0.0
        return self.mantissa * math.exp(self.log_scale)

    @property
    def log(self) -> float:
        return math.log(self.mantissa) + self.log_scale if self.mantissa > 0 else -math.inf

    def __add__(self, other: "Scaled") -> "Scaled":
        if self.mantissa == 0.0:
            return other
        if other.mantissa == 0.0:
            return self
        m = max(self.log_scale, other.log_scale)
        return Scaled(self.mantissa * math.exp(self.log_scale - m) + other.mantissa * math.exp(other.log_scale - m), m)

    def __truediv__(self, other: "Scaled") -> float:
        if other.mantissa == 0.0:
            return math.inf if self.mantissa > 0 else math.nan
        return self.mantissa / other.mantissa * math.exp(self.log_scale - other.log_scale)


def spatial_derivative(x: Array, v: Array) -> Array:
    """Centred differences inside, one-sided at the two boundary nodes (last axis)."""
    v = np.asarray(v, float)
    d = np.empty_like(v)
    d[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (x[2:] - x[:-2])
    d[..., 0] = (v[..., 1] - v[..., 0]) / (x[1] - x[0])
    d[..., -1] = (v[..., -1] - v[..., -2]) / (x[-1] - x[-2])
    return d


@dataclass
class _Context:
    """Quantities shared by every functional of one trajectory."""

    x: Array
    cells: Array
    dt: float
    log_th: Array  # log Theta on interior times
    spatial: Array  # psi or mu at nodes
    v: Array  # interior time levels
    vx: Array
    a: Array
    form: str
    model: object


def _context(traj: Trajectory, weights) -> _Context:
    prob = traj.problem
    if weights.model.form != prob.model.form:
        raise ValueError("weights and trajectory use different forms")
    if not np.isclose(weights.T, prob.T):
        raise ValueError("weights and trajectory use different horizons")
    x = prob.grid.nodes
    v = traj.fields[1:-1]
    return _Context(x=x, cells=prob.grid.cell_widths, dt=prob.dt,
                    log_th=log_theta(traj.times[1:-1], prob.T), spatial=weights.spatial(x),
                    v=v, vx=spatial_derivative(x, v), a=prob.model.a(x), form=prob.model.form,
                    model=prob.model)


def _weighted(ctx: _Context, s: float, log_density: Optional[Array], density: Array,
              mask: Optional[Array] = None) -> Scaled:
    """``sum_k sum_i dt cell_i density_ki exp(2 s Theta_k psi_i)``.

    ``log_density`` (shape (nt-1,)) holds powers of ``s Theta`` kept in log
    form; ``density`` is the remaining nonnegative nodal factor.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    L = 2.0 * s * np.exp(ctx.log_th)[:, None] * ctx.spatial[None, :]
    if np.any(L > 0):
        raise AssertionError("positive weight exponent; psi must be negative")
    if log_density is not None:
        L = L + log_density[:, None]
    dens = density * ctx.cells
    if mask is not None:
        dens = dens * mask
    live = dens > 0
    if not live.any():
        return Scaled(0.0, 0.0)
    M = float(L[live].max())
    m = float(ctx.dt * np.sum(np.where(live, dens, 0.0) * np.exp(np.where(live, L - M, -np.inf))))
    return Scaled(m, M) if m > 0 else Scaled(0.0, 0.0)


def _s_theta_log(ctx, s, power):
    return power * (math.log(s) + ctx.log_th)


def _source_interior(traj: Trajectory, h) -> Optional[Array]:
    if h is None:
        return None
    H = np.asarray(h, float)
    if H.ndim == 1:
        H = np.broadcast_to(H, traj.fields.shape)
    if H.shape != traj.fields.shape:
        raise ValueError("h must match the trajectory shape")
    return H[1:-1]


def _check_omega_contains_x0(grid, omega):
    lo, hi = omega
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError("omega must be a subinterval of (0, 1)")
    if lo <= 0.0 and hi >= 1.0:
        raise ValueError("omega must be a strict subset of (0, 1)")
    if not (lo < grid.x0 < hi):
        raise ValueError("the localized estimate requires x0 in omega")
    return grid.mask(omega).astype(float)


# --- divergence form ------------------------------------------------------------


def lhs_div_scaled(traj, weights, s) -> Scaled:
    ctx = _context(traj, weights)
    if ctx.form != "divergence":
        raise ValueError("lhs_div expects a divergence-form trajectory")
    grad = _weighted(ctx, s, _s_theta_log(ctx, s, 1), ctx.a[None, :] * ctx.vx ** 2)
    dist = ctx.model.dist_sq_over_a(ctx.x)
    zero = _weighted(ctx, s, _s_theta_log(ctx, s, 3), dist[None, :] * ctx.v ** 2)
    return grad + zero


def rhs_div_global_scaled(traj, h, weights, s) -> Scaled:
    ctx = _context(traj, weights)
    out = _weighted(ctx, s, None, ctx.v ** 2)
    H = _source_interior(traj, h)
    if H is not None:
        out = out + _weighted(ctx, s, None, H ** 2)
    return out


def rhs_div_localized_scaled(traj, h, weights, s, omega) -> Scaled:
    ctx = _context(traj, weights)
    mask = _check_omega_contains_x0(traj.problem.grid, omega)
    out = _weighted(ctx, s, None, ctx.v ** 2, mask=mask[None, :])
    H = _source_interior(traj, h)
    if H is not None:
        out = out + _weighted(ctx, s, None, H ** 2)
    return out


def lhs_div(traj, weights, s) -> float:
    return lhs_div_scaled(traj, weights, s).value


def rhs_div_global(traj, h, weights, s) -> float:
    return rhs_div_global_scaled(traj, h, weights, s).value


def rhs_div_localized(traj, h, weights, s, omega) -> float:
    return rhs_div_localized_scaled(traj, h, weights, s, omega).value


# --- non-divergence form -----------------------------------------------------------


def lhs_nondiv_scaled(traj, weights, s) -> Scaled:
    ctx = _context(traj, weights)
    if ctx.form != "nondivergence":
        raise ValueError("lhs_nondiv expects a non-divergence trajectory")
    grad = _weighted(ctx, s, _s_theta_log(ctx, s, 1), ctx.vx ** 2)
    q = ctx.model.dist_sq_over_a(ctx.x) / ctx.a
    zero = _weighted(ctx, s, _s_theta_log(ctx, s, 3), q[None, :] * ctx.v ** 2)
    return grad + zero


def rhs_nondiv_scaled(traj, h, weights, s, omega=None) -> Scaled:
    ctx = _context(traj, weights)
    mask = None if omega is None else _check_omega_contains_x0(traj.problem.grid, omega)[None, :]
    out = _weighted(ctx, s, None, ctx.v ** 2, mask=mask)
    H = _source_interior(traj, h)
    if H is not None:
        out = out + _weighted(ctx, s, None, H ** 2 / ctx.a[None, :])
    return out


def lhs_nondiv(traj, weights, s) -> float:
    return lhs_nondiv_scaled(traj, weights, s).value


def rhs_nondiv(traj, h, weights, s, omega=None) -> float:
    return rhs_nondiv_scaled(traj, h, weights, s, omega).value


def lhs_scaled(traj, weights, s) -> Scaled:
    if traj.problem.model.form == "divergence":
        return lhs_div_scaled(traj, weights, s)
    return lhs_nondiv_scaled(traj, weights, s)


def rhs_scaled(traj, h, weights, s, omega=None) -> Scaled:
    if traj.problem.model.form == "divergence":
        if omega is None:
            return rhs_div_global_scaled(traj, h, weights, s)
        return rhs_div_localized_scaled(traj, h, weights, s, omega)
    return rhs_nondiv_scaled(traj, h, weights, s, omega)


# --- ensembles and the s-scan ---------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Random final data ``vT = sum_k c_k cos(k pi x)``, ``c_k ~ N(0,1) / (1+k)**2``.

    With ``smooth=False`` the members are nodal white noise instead.
    """

    count: int = 20
    seed: int = 0
    modes: int = 5
    smooth: bool = True

    def members(self, x: Array) -> Array:
        rng = np.random.default_rng(self.seed)
        if not self.smooth:
            return rng.standard_normal((self.count, x.size))
        k = np.arange(self.modes)
        c = rng.standard_normal((self.count, self.modes)) / (1.0 + k) ** 2
        return c @ np.cos(np.pi * np.outer(k, x))


def find_plateau(s: Array, max_ratio: Array, tol: float = PLATEAU_TOL, span: float = PLATEAU_SPAN):
    """Smallest index whose tail varies by less than ``tol`` (relative to its max).

    The tail must reach at least ``span`` times its first s value.  Returns
    ``(index, C)`` or ``(None, nan)``.
    """
    s = np.asarray(s, float)
    r = np.asarray(max_ratio, float)
    for i in range(s.size):
        if s[-1] < span * s[i]:
            break
        tail = r[i:]
        if not np.all(np.isfinite(tail)):
            continue
        top = tail.max()
        if top > 0 and (top - tail.min()) / top < tol:
            return i, float(top)
    return None, math.nan


@dataclass
class CarlemanReport:
    s: Array
    lhs_log: Array  # (members, s)
    rhs_log: Array
    ratio: Array
    form: str
    omega: Optional[tuple]
    weights: dict
    ensemble: EnsembleSpec
    n: int
    skipped: list = field(default_factory=list)
    s0: Optional[float] = None
    C: float = math.nan

    @property
    def localized(self) -> bool:
        return self.omega is not None

    @property
    def max_ratio(self) -> Array:
        return np.nanmax(self.ratio, axis=0)

    @property
    def plateau_found(self) -> bool:
        return self.s0 is not None

    def summary(self) -> dict:
        return {"form": self.form, "n": self.n, "localized": self.localized,
                "omega": list(self.omega) if self.omega else None,
                "s0": self.s0, "C": self.C, "plateau_found": self.plateau_found,
                "plateau_rule": f"max ratio varies < {PLATEAU_TOL:.0%} over a tail spanning >= {PLATEAU_SPAN:g}x in s",
                "max_ratio": [float(r) for r in self.max_ratio],
                "skipped_members": self.skipped, "weights": self.weights,
                "ensemble": {"count": self.ensemble.count, "seed": self.ensemble.seed,
                             "modes": self.ensemble.modes, "smooth": self.ensemble.smooth,
                             "generator": GENERATOR}}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "member", "lhs", "rhs", "ratio", "log_lhs", "log_rhs"])
            for m in range(self.ratio.shape[0]):
                if m in self.skipped:
                    continue
                for j, sj in enumerate(self.s):
                    wr.writerow([repr(float(sj)), m, repr(float(np.exp(self.lhs_log[m, j]))),
                                 repr(float(np.exp(self.rhs_log[m, j]))), repr(float(self.ratio[m, j])),
                                 repr(float(self.lhs_log[m, j])), repr(float(self.rhs_log[m, j]))])
            wr.writerow(["" if self.s0 is None else repr(float(self.s0)), "summary", "", "",
                         repr(float(self.C)), "", ""])


def _scan_member(problem, weights, vT, s_grid, omega):
    traj = solve_adjoint(problem, vT)
    out = np.empty((3, len(s_grid)))
    for j, s in enumerate(s_grid):
        L = lhs_scaled(traj, weights, s)
        R = rhs_scaled(traj, None, weights, s, omega)
        out[0, j], out[1, j] = L.log, R.log
        out[2, j] = L / R if R.mantissa > 0 else math.nan
    return out


def s_scan(problem: EvolutionProblem, ensemble: EnsembleSpec = EnsembleSpec(),
           s_grid=None, weights=None, omega=None, threads: int = 1) -> CarlemanReport:
    """Evaluate lhs / rhs for every ensemble member and every s."""
    if s_grid is None:
        s_grid = np.logspace(1, 3, 20)
    s_grid = np.asarray(s_grid, float)
    if weights is None:
        weights = default_weights(problem.model, problem.T)
    V = ensemble.members(problem.grid.nodes)
    jobs = [(problem, weights, vT, s_grid, omega) for vT in V]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda a: _scan_member(*a), jobs))
    else:
        results = [_scan_member(*a) for a in jobs]
    R = np.array(results)
    skipped = [m for m in range(len(V)) if not np.any(np.isfinite(R[m, 2]))]
    ratio = R[:, 2].copy()
    ratio[skipped] = np.nan
    rep = CarlemanReport(s=s_grid, lhs_log=R[:, 0], rhs_log=R[:, 1], ratio=ratio,
                         form=problem.model.form, omega=tuple(omega) if omega else None,
                         weights=weights.resolved(), ensemble=ensemble, n=problem.grid.n,
                         skipped=skipped)
    idx, C = find_plateau(s_grid, rep.max_ratio)
    rep.s0 = None if idx is None else float(s_grid[idx])
    rep.C = C
    return rep


def asymptotic_ratio(problem: EvolutionProblem, weights, s) -> float:
    """Large-s limit of lhs/rhs for data nonzero where the weight peaks.

    Both sides concentrate at ``t = T/2`` (the open-grid level closest to
    it) and at the node maximising the spatial weight, so the ratio tends
    to the zero-order density there: ``s^3 Theta^3 (x-x0)^2/a`` (divided by
    ``a`` once more in non-divergence form).
    """
    x = problem.grid.nodes
    t = problem.times[1:-1]
    th = np.exp(log_theta(t, problem.T))
    sp = weights.spatial(x)
    k = int(np.argmin(th))
    i = int(np.argmax(sp))
    q = problem.model.dist_sq_over_a(x[i])
    if problem.model.form == "nondivergence":
        q = q / problem.model.a(x[i])
    return float(s ** 3 * th[k] ** 3 * q)


# --- Caccioppoli and Hardy-Poincare ---------------------------------------------------


@dataclass
class InequalityReport:
    numerator: float
    denominator: float
    quotient: float
    detail: dict = field(default_factory=dict)


def _interval_mask(grid, interval):
    return grid.mask(interval).astype(float)


def caccioppoli_check(traj: Trajectory, inner, outer, weights, s) -> InequalityReport:
    """``int int_{I'} v_x^2 e^{2 s phi}`` against ``int int_I v^2`` (``/a`` in non-divergence form)."""
    grid = traj.problem.grid
    (p, q), (P, Q) = inner, outer
    if not (0 < P < p < q < Q < 1):
        raise ValueError("need closure(I') inside I inside (0, 1)")
    if P <= grid.x0 <= Q:
        raise ValueError("x0 must lie outside the closure of I")
    ctx = _context(traj, weights)
    num = _weighted(ctx, s, None, ctx.vx ** 2, mask=_interval_mask(grid, inner)[None, :])
    dens = ctx.v ** 2
    if ctx.form == "nondivergence":
        dens = dens / ctx.a[None, :]
    den = float(ctx.dt * np.sum(dens * (ctx.cells * _interval_mask(grid, outer))[None, :]))
    # the weighted side underflows for moderate s, so the quotient comes from log form
    quot = num / Scaled(den, 0.0) if den > 0 else math.nan
    return InequalityReport(num.value, den, quot, {"inner": tuple(inner), "outer": tuple(outer), "s": s,
                                                   "log_numerator": num.log,
                                                   "log_quotient": num.log - math.log(den) if den > 0 else math.nan})


def weight_derivative_bound(weights, npts: int = 10001) -> float:
    """Smallest ``c`` with ``|w'(x)| <= c / sqrt(a(x))`` on a scan avoiding x0."""
    x = np.linspace(0.0, 1.0, npts)
    x = x[np.abs(x - weights.model.x0) > 1e-9]
    return float(np.max(np.abs(weights.spatial_prime(x)) * np.sqrt(weights.model.a(x))))


def hardy_weight(model, x):
    """``p = (a |x - x0|^4)^{1/3}``."""
    return (model.a(x) * np.abs(np.asarray(x, float) - model.x0) ** 4) ** (1.0 / 3.0)


def hardy_poincare_check(u, model, grid) -> InequalityReport:
    """``int p/(x-x0)^2 u^2`` over ``int p (u')^2`` on ``grid``.

    ``u`` is a callable; it is evaluated at the nodes and must vanish at the
    node nearest to x0 (face placement: the two adjacent nodes are
    rescaled linearly so that the interpolant vanishes at x0).
    """
    x = grid.nodes
    uv = np.asarray(u(x), float)
    d = x - model.x0
    near = int(np.argmin(np.abs(d)))
    if grid.placement == "node" and abs(uv[near]) > 1e-12 * max(1.0, np.abs(uv).max()):
        raise ValueError("u must vanish at x0")
    p = hardy_weight(model, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        zero = np.where(d != 0, p / d ** 2 * uv ** 2, 0.0)
    num = float(np.sum(grid.cell_widths * zero))
    mid = 0.5 * (x[:-1] + x[1:])
    du = np.diff(uv) / grid.spacing
    den = float(np.sum(grid.spacing * hardy_weight(model, mid) * du ** 2))
    if den == 0:
        return InequalityReport(num, den, math.nan, {"note": "zero field"})
    return InequalityReport(num, den, num / den)
