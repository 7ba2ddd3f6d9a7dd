"""Forward and adjoint time integration with energy-estimate checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import lapack, solve_banded

from .coefficients import DegeneracyModel
from .mesh import DiscreteOperator, Grid, assemble_operator, build_grid

Array = np.ndarray
Source = Union[None, Callable, Array]

SCHEMES = ("implicit_euler", "crank_nicolson")
DEFAULT_NT = 400


class SolverError(RuntimeError):
    """A step matrix turned out singular or produced non-finite values."""


class TridiagonalFactor:
    """LU factorisation of a tridiagonal matrix, reused for every time step."""

    def __init__(self, sub, diag, sup):
        dl, d, du, du2, ipiv, info = lapack.dgttrf(sub[1:].copy(), diag.copy(), sup[:-1].copy())
        if info != 0:
            raise SolverError(f"singular step matrix (dgttrf info={info})")
        self._lu = (dl, d, du, du2, ipiv)

    def solve(self, b):
        x, info = lapack.dgttrs(*self._lu, b)
        if info != 0:
            raise SolverError(f"dgttrs failed (info={info})")
        return x


def banded_step_solve(sub, diag, sup, b):
    """Independent tridiagonal solve through the general banded LAPACK driver."""
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = sup[:-1]
    ab[1] = diag
    ab[2, :-1] = sub[1:]
    return solve_banded((1, 1), ab, b)


@dataclass(frozen=True)
class EvolutionProblem:
    model: DegeneracyModel
    grid: Grid
    op: DiscreteOperator
    T: float = 1.0
    nt: int = DEFAULT_NT
    scheme: str = "implicit_euler"

    def __post_init__(self):
        if self.T <= 0 or self.nt <= 0:
            raise ValueError("T and nt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        expected = "plain" if self.model.form == "divergence" else "inv_a"
        if self.op.ip.kind != expected:
            raise ValueError("operator inner product does not match the model form")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def ip(self):
        return self.op.ip

    def step_factor(self) -> TridiagonalFactor:
        th = 1.0 if self.scheme == "implicit_euler" else 0.5
        c = th * self.dt
        return TridiagonalFactor(-c * self.op.sub, 1.0 - c * self.op.diag, -c * self.op.sup)

    def with_operator(self, op: DiscreteOperator) -> "EvolutionProblem":
        return EvolutionProblem(self.model, self.grid, op, self.T, self.nt, self.scheme)


def make_problem(model: DegeneracyModel, n: int = 201, T: float = 1.0, nt: int = DEFAULT_NT,
                 scheme: str = "implicit_euler", grading: float = 1.0) -> EvolutionProblem:
    grid = build_grid(n, model, grading=grading)
    return EvolutionProblem(model, grid, assemble_operator(model, grid), T, nt, scheme)


@dataclass(frozen=True)
class Trajectory:
    times: Array
    fields: Array  # shape (len(times), n)
    direction: str
    problem: EvolutionProblem

    def __post_init__(self):
        self.fields.setflags(write=False)

    @property
    def final(self) -> Array:
        return self.fields[-1]

    @property
    def initial(self) -> Array:
        return self.fields[0]

    def norms_sq(self) -> Array:
        w = self.problem.ip.weights
        return np.einsum("ki,i,ki->k", self.fields, w, self.fields)

    def to_csv(self, path, name="u"):
        x = self.problem.grid.nodes
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", name])
            for t, row in zip(self.times, self.fields):
                for xi, ui in zip(x, row):
                    wr.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])


def sample_source(problem: EvolutionProblem, h: Source, omega=None) -> Optional[Array]:
    """Sample ``h`` on every time level and apply the omega mask; ``None`` means zero."""
    if h is None:
        return None
    x = problem.grid.nodes
    t = problem.times
    if callable(h):
        H = np.array([np.broadcast_to(np.asarray(h(tk, x), float), x.shape) for tk in t])
    else:
        H = np.asarray(h, float)
        if H.ndim == 1:
            H = np.broadcast_to(H, (t.size, x.size)).copy()
        if H.shape != (t.size, x.size):
            raise ValueError(f"source has shape {H.shape}, expected {(t.size, x.size)}")
    if omega is not None:
        H = H * problem.grid.mask(omega)
    return H


def _check_finite(u, k):
    if not np.all(np.isfinite(u)):
        raise SolverError(f"non-finite values at time level {k}")


def solve_forward(problem: EvolutionProblem, u0, h: Source = None, omega=None) -> Trajectory:
    """Integrate ``u' = A u + h chi_omega`` from ``u(0) = u0``.

    Implicit Euler samples ``h`` at the new time level; Crank-Nicolson
    averages the two levels.
    """
    u = np.array(u0, dtype=float)
    if u.shape != (problem.grid.n,):
        raise ValueError("u0 has the wrong size")
    _check_finite(u, 0)
    H = sample_source(problem, h, omega)
    dt = problem.dt
    lu = problem.step_factor()
    out = np.empty((problem.nt + 1, u.size))
    out[0] = u
    cn = problem.scheme == "crank_nicolson"
    for k in range(problem.nt):
        if cn:
            rhs = u + 0.5 * dt * problem.op.apply(u)
            if H is not None:
                rhs += 0.5 * dt * (H[k] + H[k + 1])
        else:
            rhs = u if H is None else u + dt * H[k + 1]
        u = lu.solve(rhs)
        _check_finite(u, k + 1)
        out[k + 1] = u
    return Trajectory(problem.times, out, "forward", problem)


def solve_adjoint(problem: EvolutionProblem, vT) -> Trajectory:
    """Integrate ``v_t + A v = 0`` backward from ``v(T) = vT``."""
    v = np.array(vT, dtype=float)
    if v.shape != (problem.grid.n,):
        raise ValueError("vT has the wrong size")
    _check_finite(v, problem.nt)
    lu = problem.step_factor()
    dt = problem.dt
    out = np.empty((problem.nt + 1, v.size))
    out[-1] = v
    cn = problem.scheme == "crank_nicolson"
    for k in range(problem.nt - 1, -1, -1):
        rhs = v + 0.5 * dt * problem.op.apply(v) if cn else v
        v = lu.solve(rhs)
        _check_finite(v, k)
        out[k] = v
    return Trajectory(problem.times, out, "backward", problem)


def propagate(problem: EvolutionProblem, u0) -> Array:
    """Final state of the homogeneous forward problem (no trajectory storage)."""
    lu = problem.step_factor()
    u = np.array(u0, dtype=float)
    cn = problem.scheme == "crank_nicolson"
    for _ in range(problem.nt):
        rhs = u + 0.5 * problem.dt * problem.op.apply(u) if cn else u
        u = lu.solve(rhs)
    return u


@dataclass
class EnergyReport:
    sup_norm_sq: float
    dirichlet_integral: float
    rhs_bound: float
    passed: bool
    step_monotone: bool
    max_mass_drift: float

    def lines(self):
        return [
            f"sup_t |u|^2 = {self.sup_norm_sq:.12g}",
            f"dirichlet integral = {self.dirichlet_integral:.12g}",
            f"e^T(|u0|^2 + |h|^2) = {self.rhs_bound:.12g}",
            f"bound {'pass' if self.passed else 'FAIL'}",
        ]


def source_norm_sq(problem: EvolutionProblem, h: Source, omega=None) -> float:
    """Discrete ``|h|^2_{L2(0,T;X)}`` over the levels the scheme samples."""
    H = sample_source(problem, h, omega)
    if H is None:
        return 0.0
    w = problem.ip.weights
    sq = np.einsum("ki,i,ki->k", H, w, H)
    if problem.scheme == "implicit_euler":
        return float(problem.dt * sq[1:].sum())
    return float(problem.dt * 0.5 * (sq[:-1] + sq[1:]).sum())


def energy_report(traj: Trajectory, u0, h: Source = None, omega=None, slack: float = 1e-8) -> EnergyReport:
    """Check ``sup_t |u(t)|^2 <= e^T (|u0|^2 + |h|^2)`` on a forward trajectory."""
    if traj.direction != "forward":
        raise ValueError("energy report needs a forward trajectory")
    prob = traj.problem
    ip = prob.ip
    norms = traj.norms_sq()
    sup = float(norms.max())
    dirichlet = np.array([prob.op.dirichlet_form(u, u) for u in traj.fields])
    if prob.model.form == "nondivergence":
        dirichlet = dirichlet + norms
    dint = float(prob.dt * dirichlet[1:].sum())
    rhs = float(np.exp(prob.T) * (ip.norm_sq(np.asarray(u0, float)) + source_norm_sq(prob, h, omega)))
    mono = bool(np.all(np.diff(norms) <= 1e-12 * np.maximum(norms[:-1], 1e-300)))
    mass = traj.fields @ prob.grid.cell_widths
    drift = float(np.max(np.abs(np.diff(mass)))) if mass.size > 1 else 0.0
    return EnergyReport(sup, dint, rhs, sup <= rhs * (1 + slack), mono, drift)
