"""x0-aware 1-D grids and the discrete degenerate operators.

Divergence form places ``x0`` on a node and differences fluxes
``a(face) (u_{i+1} - u_i) / h_i`` across faces; the scheme never divides by
``a``.  Non-divergence form places ``x0`` on a face so that ``a`` is
positive at every node, which keeps the ``1/a`` weights finite.

Both schemes use vertex-centred control volumes with half cells at the
boundary nodes.  Zero boundary flux is the discrete Neumann condition and
coincides with ghost-node reflection ``u_{-1} = u_1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import DegeneracyModel

Array = np.ndarray

MIN_NODES = 16


@dataclass(frozen=True)
class Grid:
    nodes: Array
    placement: str  # "node" or "face"
    x0_index: int  # node index, or the node just left of the x0 face
    x0: float
    x0_shift: float = 0.0

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> Array:
        return np.diff(self.nodes)

    @property
    def faces(self) -> Array:
        """Endpoints plus midpoints; ``faces[i]`` and ``faces[i+1]`` bound node ``i``."""
        x = self.nodes
        f = np.empty(x.size + 1)
        f[0], f[-1] = 0.0, 1.0
        f[1:-1] = 0.5 * (x[:-1] + x[1:])
        if self.placement == "face":
            f[self.x0_index + 1] = self.x0
        return f

    @property
    def cell_widths(self) -> Array:
        """Width of each node's control volume (half cells at the ends)."""
        return np.diff(self.faces)

    def mask(self, interval) -> Array:
        """Nodes whose control volume lies inside the closed interval."""
        lo, hi = interval
        f = self.faces
        tol = 1e-12
        return (f[:-1] >= lo - tol) & (f[1:] <= hi + tol)

    def to_csv(self, path, model: DegeneracyModel, weights: Optional[Array] = None):
        w = self.cell_widths if weights is None else weights
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node", "a", "weight"])
            for xi, ai, wi in zip(self.nodes, model.a(self.nodes), w):
                wr.writerow([repr(float(xi)), repr(float(ai)), repr(float(wi))])


def _graded_side(length: float, m: int, grading: float, toward_end: bool) -> Array:
    xi = np.linspace(0.0, 1.0, m + 1)
    if grading == 1.0:
        return length * xi
    if toward_end:
        return length * (1.0 - (1.0 - xi) ** grading)
    return length * xi ** grading


def build_grid(n: int, model: DegeneracyModel, grading: float = 1.0,
               placement: Optional[str] = None) -> Grid:
    """Build an ``n``-node grid on [0, 1] adapted to ``x0``.

    ``placement`` defaults to ``"node"`` for the divergence form and
    ``"face"`` for the non-divergence form.  ``grading > 1`` stretches both
    sides by a power law so that cells adjacent to ``x0`` have width of
    order ``h**grading``, ``h = 1/(n-1)``.
    """
    if n < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} nodes, got {n}")
    if grading < 1.0:
        raise ValueError("grading must be >= 1")
    x0 = model.x0
    if placement is None:
        placement = "node" if model.form == "divergence" else "face"
    h = 1.0 / (n - 1)

    if placement == "node":
        mL = int(round(x0 * (n - 1)))
        mL = min(max(mL, 1), n - 2)
        mR = n - 1 - mL
        if grading == 1.0 and abs(x0 * (n - 1) - mL) < 1e-9:
            x = np.linspace(0.0, 1.0, n)
            shift = float(x[mL] - x0)
        else:
            left = _graded_side(x0, mL, grading, toward_end=True)
            right = x0 + _graded_side(1.0 - x0, mR, grading, toward_end=False)
            x = np.concatenate([left, right[1:]])
            shift = 0.0
        x[mL] = x0
        x[0], x[-1] = 0.0, 1.0
        return Grid(nodes=x, placement="node", x0_index=mL, x0=x0, x0_shift=shift)

    if placement != "face":
        raise ValueError(f"unknown placement {placement!r}")
    k = x0 * (n - 1) - 0.5
    kr = int(round(k))
    if grading == 1.0 and abs(k - kr) < 1e-9 and 0 <= kr <= n - 2:
        x = np.linspace(0.0, 1.0, n)
        shift = float(0.5 * (x[kr] + x[kr + 1]) - x0)
        if abs(shift) > 1e-15:
            x[kr], x[kr + 1] = x0 - 0.5 * h, x0 + 0.5 * h
        return Grid(nodes=x, placement="face", x0_index=kr, x0=x0, x0_shift=shift)

    gap = h ** grading
    L = x0 - 0.5 * gap
    R = 1.0 - x0 - 0.5 * gap
    if L <= 0 or R <= 0:
        raise ValueError("x0 too close to the boundary for this resolution")
    mL = int(round(L / (L + R) * (n - 2)))
    mL = min(max(mL, 1), n - 3)
    mR = n - 2 - mL
    left = _graded_side(L, mL, grading, toward_end=True)
    right = (x0 + 0.5 * gap) + _graded_side(R, mR, grading, toward_end=False)
    x = np.concatenate([left, right])
    x[0], x[-1] = 0.0, 1.0
    shift = float(0.5 * (x[mL] + x[mL + 1]) - x0)
    return Grid(nodes=x, placement="face", x0_index=mL, x0=x0, x0_shift=shift)


@dataclass(frozen=True)
class InnerProduct:
    """Diagonal quadrature ``<u, v> = sum_i w_i u_i v_i``."""

    weights: Array
    kind: str  # "plain" or "inv_a"

    def inner(self, u, v):
        return np.dot(self.weights * u, v)

    def norm_sq(self, u):
        return np.dot(self.weights * u, u)

    def norm(self, u):
        return np.sqrt(self.norm_sq(u))


def inner_product(model: DegeneracyModel, grid: Grid, kind: Optional[str] = None) -> InnerProduct:
    """Plain cell weights for L2, or ``cell / a(node)`` for the 1/a-weighted space."""
    kind = kind or ("plain" if model.form == "divergence" else "inv_a")
    ell = grid.cell_widths
    if kind == "plain":
        return InnerProduct(ell, "plain")
    if grid.placement != "face":
        raise ValueError("1/a weights need x0 on a face")
    return InnerProduct(ell / model.a(grid.nodes), "inv_a")


@dataclass(frozen=True)
class DiscreteOperator:
    """Tridiagonal discretisation of ``(a u')'`` or ``a u''`` with Neumann closure.

    ``sub[i]``, ``diag[i]`` and ``sup[i]`` multiply ``u[i-1]``, ``u[i]`` and
    ``u[i+1]`` in row ``i``; ``sub[0]`` and ``sup[-1]`` are zero.
    """

    sub: Array
    diag: Array
    sup: Array
    form: str
    ip: InnerProduct
    # per-face conductance c_i multiplying (u_{i+1}-u_i) in the flux
    conductance: Array = field(repr=False)
    # per-node scaling applied to the flux difference
    row_scale: Array = field(repr=False)

    @property
    def n(self):
        return self.diag.size

    def apply(self, u):
        """``A u`` via flux differences; exactly zero on constants."""
        u = np.asarray(u, float)
        flux = np.zeros(u.size + 1)
        flux[1:-1] = self.conductance * np.diff(u)
        return self.row_scale * np.diff(flux)

    def dirichlet_form(self, u, v):
        """Discrete ``int a u' v'`` (divergence) or ``int u' v'`` (non-divergence)."""
        return np.dot(self.conductance * np.diff(u), np.diff(v))

    def to_dense(self):
        A = np.diag(self.diag)
        A += np.diag(self.sub[1:], -1)
        A += np.diag(self.sup[:-1], 1)
        return A

    def norm_estimate(self):
        return float(np.max(np.abs(self.sub) + np.abs(self.diag) + np.abs(self.sup)))


def assemble_operator(model: DegeneracyModel, grid: Grid) -> DiscreteOperator:
    h = grid.spacing
    ell = grid.cell_widths
    if model.form == "divergence":
        if grid.placement != "node":
            raise ValueError("divergence form expects x0 on a node")
        mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        cond = model.a(mid) / h
        row_scale = 1.0 / ell
    else:
        if grid.placement != "face":
            raise ValueError("non-divergence form expects x0 on a face")
        cond = 1.0 / h
        row_scale = model.a(grid.nodes) / ell
    n = grid.n
    sub = np.zeros(n)
    sup = np.zeros(n)
    sup[:-1] = row_scale[:-1] * cond
    sub[1:] = row_scale[1:] * cond
    diag = -(sub + sup)
    ip = inner_product(model, grid)
    return DiscreteOperator(sub=sub, diag=diag, sup=sup, form=model.form, ip=ip,
                            conductance=np.asarray(cond, float) * np.ones(n - 1), row_scale=row_scale)


def green_residual(op: DiscreteOperator, grid: Grid, u, v, relative: bool = False) -> float:
    """``|<A u, v>_X + B(u, v)|`` where ``B`` is the discrete Dirichlet form.

    With ``relative=True`` the residual is divided by the sum of absolute
    face contributions, the natural size of either side.
    """
    lhs = op.ip.inner(op.apply(u), v)
    terms = op.conductance * np.diff(u) * np.diff(v)
    res = abs(lhs + terms.sum())
    if not relative:
        return float(res)
    scale = np.sum(np.abs(terms))
    return float(res / scale) if scale > 0 else float(res)


def symmetry_defect(op: DiscreteOperator, u, v) -> float:
    """``|<Au, v> - <u, Av>| / (|u| |v| |A|)`` in the operator's inner product."""
    ip = op.ip
    d = abs(ip.inner(op.apply(u), v) - ip.inner(u, op.apply(v)))
    scale = ip.norm(u) * ip.norm(v) * op.norm_estimate()
    return float(d / scale) if scale > 0 else float(d)
