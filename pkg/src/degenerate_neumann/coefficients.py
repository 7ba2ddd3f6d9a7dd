"""Degenerate diffusion coefficients and their structural hypotheses.

A coefficient ``a`` vanishes at one interior point ``x0`` and is positive
elsewhere on ``[0, 1]``.  The prototype is ``a(x) = |x - x0|**K``; custom
coefficients must supply ``a'`` explicitly so that every hypothesis check
is a pointwise evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

Array = np.ndarray

FORMS = ("divergence", "nondivergence")

# probes stay this far from x0; every clause is continuous away from it
PROBE_WINDOW = 1e-6
TOL_REL = 1e-9


class OutOfTheoryError(ValueError):
    """Parameters outside the range covered by the theory (e.g. K >= 2)."""


@dataclass(frozen=True)
class DegeneracyModel:
    """A degenerate coefficient together with the equation form.

    Use :func:`power_law` or :func:`custom` rather than calling this
    directly.
    """

    x0: float
    form: str
    K_bound: float
    K: Optional[float] = None
    a_func: Optional[Callable[[Array], Array]] = field(default=None, repr=False)
    a_prime_func: Optional[Callable[[Array], Array]] = field(default=None, repr=False)
    theta: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if not 0.0 < self.x0 < 1.0:
            raise ValueError(f"x0 must lie in (0, 1), got {self.x0}")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.K_bound <= 0:
            raise ValueError("K_bound must be positive")
        if self.K is None and self.a_func is None:
            raise ValueError("either K (power law) or a custom coefficient is required")

    @property
    def kind(self) -> str:
        return "power_law" if self.K is not None else "custom"

    @property
    def has_derivative(self) -> bool:
        return self.kind == "power_law" or self.a_prime_func is not None

    def a(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.K is not None:
            return np.abs(x - self.x0) ** self.K
        return np.asarray(self.a_func(x), dtype=float)

    def a_prime(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.K is not None:
            d = x - self.x0
            with np.errstate(divide="ignore", invalid="ignore"):
                return self.K * np.sign(d) * np.abs(d) ** (self.K - 1.0)
        if self.a_prime_func is None:
            raise ValueError("custom model has no derivative")
        return np.asarray(self.a_prime_func(x), dtype=float)

    def log_ratio(self, x) -> Array:
        """``(x - x0) a'(x) / a(x)``; identically ``K`` for the prototype."""
        x = np.asarray(x, dtype=float)
        if self.K is not None:
            return np.full_like(x, self.K)
        return (x - self.x0) * self.a_prime(x) / self.a(x)

    def dist_sq_over_a(self, x) -> Array:
        """``(x - x0)**2 / a(x)`` with its limit 0 at ``x0`` when K < 2."""
        x = np.asarray(x, dtype=float)
        d = np.abs(x - self.x0)
        if self.K is not None:
            with np.errstate(divide="ignore"):
                return d ** (2.0 - self.K)
        a = self.a(x)
        out = np.zeros_like(x)
        nz = d > 0
        out[nz] = d[nz] ** 2 / a[nz]
        return out

    def with_form(self, form: str) -> "DegeneracyModel":
        return DegeneracyModel(
            x0=self.x0, form=form, K_bound=self.K_bound, K=self.K,
            a_func=self.a_func, a_prime_func=self.a_prime_func,
            theta=self.theta, label=self.label,
        )

    def describe(self) -> dict:
        out = {"x0": self.x0, "form": self.form, "kind": self.kind, "K_bound": self.K_bound}
        if self.K is not None:
            out["K"] = self.K
        if self.label:
            out["label"] = self.label
        return out


def power_law(x0: float, K: float, form: str = "divergence") -> DegeneracyModel:
    """Prototype coefficient ``a(x) = |x - x0|**K``."""
    if K <= 0:
        raise ValueError("K must be positive")
    return DegeneracyModel(x0=float(x0), form=form, K_bound=float(K), K=float(K), theta=float(K))


def custom(x0, a, a_prime=None, K_bound=1.0, form="divergence", theta=None, label="custom"):
    """Wrap user-supplied ``a`` and ``a'`` callables (vectorised over numpy arrays)."""
    return DegeneracyModel(
        x0=float(x0), form=form, K_bound=float(K_bound), a_func=a, a_prime_func=a_prime,
        theta=theta, label=label,
    )


def default_probe(x0: float, n: int = 1001, window: float = PROBE_WINDOW) -> Array:
    """``n`` uniform points of [0, 1] with a symmetric window around ``x0`` removed.

    Points falling inside the window are pushed to its edge so the probe
    keeps ``n`` points.
    """
    x = np.linspace(0.0, 1.0, n)
    d = x - x0
    inside = np.abs(d) < window
    x[inside] = x0 + np.where(d[inside] >= 0, window, -window)
    return x


def nondegenerate_mask(probe: Array, x0: float, window: float = PROBE_WINDOW) -> Array:
    return np.abs(np.asarray(probe) - x0) >= window * (1 - 1e-12)


# --- reports --------------------------------------------------------------


@dataclass
class Clause:
    """One hypothesis clause.  ``verdict`` is True, False or None (unable to verify)."""

    name: str
    verdict: Optional[bool]
    witnesses: list = field(default_factory=list)
    detail: str = ""

    def __post_init__(self):
        if self.verdict is False and not self.witnesses:
            raise ValueError(f"failed clause {self.name!r} needs a witness")


@dataclass
class HypothesisReport:
    clauses: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def add(self, name, verdict, witnesses=(), detail=""):
        self.clauses.append(Clause(name, verdict, [float(w) for w in witnesses], detail))

    def __getitem__(self, name) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        """No clause is violated (unable-to-verify clauses do not fail)."""
        return all(c.verdict is not False for c in self.clauses)

    @property
    def verified(self) -> bool:
        return all(c.verdict is True for c in self.clauses)

    def lines(self) -> list:
        out = []
        for c in self.clauses:
            tag = {True: "pass", False: "FAIL", None: "unable-to-verify"}[c.verdict]
            line = f"{c.name}: {tag}"
            if c.detail:
                line += f" ({c.detail})"
            if c.witnesses:
                line += f" witnesses={c.witnesses[:5]}"
            out.append(line)
        for k, v in self.constants.items():
            out.append(f"{k} = {v}")
        return out


def _witnesses(x, bad, limit=10):
    return list(np.asarray(x)[np.asarray(bad)][:limit])


# --- classification -------------------------------------------------------


def effective_K(model: DegeneracyModel, probe: Optional[Array] = None) -> float:
    """Smallest admissible degeneracy constant: ``min(K_bound, sup (x-x0)a'/a)``."""
    if model.K is not None:
        return model.K
    if not model.has_derivative:
        return model.K_bound
    x = default_probe(model.x0) if probe is None else np.asarray(probe, float)
    sup = float(np.max(model.log_ratio(x)))
    return min(model.K_bound, max(sup, 0.0))


def classify(model: DegeneracyModel) -> str:
    """Return ``"weak"`` or ``"strong"``.

    Raises :class:`OutOfTheoryError` when the degeneracy constant falls
    outside ``(0, 2)``.
    """
    K = effective_K(model)
    if K <= 0 or K >= 2:
        raise OutOfTheoryError(f"degeneracy constant K={K:g} is outside (0, 2)")
    if K < 1:
        return "weak"
    if model.kind == "custom" and model.has_derivative:
        # strong degeneracy asks for a in W^{1,inf}: a' bounded on the probes
        x = default_probe(model.x0)
        if not np.all(np.isfinite(model.a_prime(x))):
            raise OutOfTheoryError("a' is unbounded on the probe set; a is not Lipschitz")
    return "strong"


# --- hypothesis checks ----------------------------------------------------


def check_degeneracy_bound(model: DegeneracyModel, probe: Optional[Array] = None,
                           tol_rel: float = TOL_REL) -> HypothesisReport:
    """Check ``(x - x0) a'(x) <= K_bound a(x)`` at every probe point."""
    x = default_probe(model.x0) if probe is None else np.asarray(probe, float)
    report = HypothesisReport()
    if not model.has_derivative:
        report.add("degeneracy_bound", None, detail="no derivative supplied")
        return report
    keep = nondegenerate_mask(x, model.x0)
    x = x[keep]
    a = model.a(x)
    lhs = (x - model.x0) * model.a_prime(x)
    bad = lhs - model.K_bound * a > tol_rel * a
    report.add("degeneracy_bound", not bad.any(), _witnesses(x, bad),
               detail=f"K_bound={model.K_bound:g}, max ratio={np.max(lhs / a):.6g}")
    report.add("positivity", bool(np.all(a > 0)), _witnesses(x, a <= 0))
    return report


def _approach(x0, side, n=25):
    d = np.logspace(-6, -1, n)
    return x0 + side * d


def _sampled_bounded(f, x0, outer):
    """Heuristic boundedness of ``f`` near ``x0``.

    The maximum along a geometric approach to x0 must not exceed twice
    the maximum over the outer probe set.
    """
    inner = np.concatenate([_approach(x0, -1), _approach(x0, 1)])
    inner = inner[(inner >= 0) & (inner <= 1)]
    fo = np.abs(f(outer))
    fi = np.abs(f(inner))
    ref = np.max(fo[np.isfinite(fo)]) if np.any(np.isfinite(fo)) else np.inf
    bad = ~np.isfinite(fi) | (fi > 2.0 * ref)
    return not bad.any(), _witnesses(inner, bad), float(max(ref, np.max(fi[np.isfinite(fi)], initial=0)))


def estimate_theta(model: DegeneracyModel, probe: Optional[Array] = None) -> float:
    """Largest ``theta <= K`` making ``a/|x-x0|**theta`` monotone on both sides.

    On either side the monotonicity required is equivalent to
    ``(x - x0) a'(x) / a(x) >= theta``.
    """
    if model.theta is not None:
        return model.theta
    x = default_probe(model.x0) if probe is None else np.asarray(probe, float)
    x = x[nondegenerate_mask(x, model.x0)]
    return float(min(effective_K(model), np.min(model.log_ratio(x))))


def _monotone_clause(report, model, x, theta, name="monotone_a_over_power"):
    d = x - model.x0
    g = model.a(x) / np.abs(d) ** theta
    left = d < 0
    right = d > 0
    xl, gl = x[left], g[left]
    xr, gr = x[right], g[right]
    # nonincreasing on the left, nondecreasing on the right (up to rounding)
    bad_l = np.diff(gl) > TOL_REL * np.maximum(np.abs(gl[:-1]), 1e-300)
    bad_r = np.diff(gr) < -TOL_REL * np.maximum(np.abs(gr[:-1]), 1e-300)
    wit = list(xl[1:][bad_l][:5]) + list(xr[1:][bad_r][:5])
    report.add(name, not (bad_l.any() or bad_r.any()), wit, detail=f"theta={theta:g}")
    return g


def check_carleman_hypotheses(model: DegeneracyModel, probe: Optional[Array] = None) -> HypothesisReport:
    """Structural hypotheses behind the Carleman estimates.

    Divergence form: weak/strong degeneracy, regularity, and for strong
    degeneracy with ``K > 4/3`` the monotonicity of ``a/|x-x0|**theta``;
    for ``K > 3/2`` also a positive lower bound of that map and the
    ``|a'| <= Sigma |x-x0|**(2 theta - 3)`` bound.

    Non-divergence form: boundedness and Lipschitz continuity of
    ``(x-x0) a'/a`` and, for ``K >= 1/2``, the same monotonicity.
    """
    report = HypothesisReport()
    x = default_probe(model.x0) if probe is None else np.asarray(probe, float)
    x = np.sort(x[nondegenerate_mask(x, model.x0)])

    try:
        kind = classify(model)
        report.add("degenerate", True, detail=kind)
    except OutOfTheoryError as exc:
        report.add("degenerate", False, [model.x0], detail=str(exc))
        return report
    report.constants["class"] = kind

    if not model.has_derivative:
        report.add("derivative_supplied", None, detail="custom model without a'")
        return report

    K = effective_K(model)
    report.constants["K"] = K
    theta = estimate_theta(model, x)
    report.constants["theta"] = theta

    if model.kind == "power_law":
        report.add("regularity", True, detail="closed form")
    else:
        report.add("regularity", None, detail="not verifiable for non-closed-form coefficients")

    if model.form == "divergence":
        if kind == "strong" and K > 4.0 / 3.0:
            if not 0 < theta <= K:
                report.add("theta_range", False, [model.x0], detail=f"theta={theta:g}")
                return report
            g = _monotone_clause(report, model, x, theta)
            if K > 1.5:
                gmin = float(np.min(g))
                report.add("bounded_below", gmin > 0, [] if gmin > 0 else [float(x[np.argmin(g)])],
                           detail=f"min={gmin:.6g}")

                def sigma_ratio(y):
                    return model.a_prime(y) / np.abs(y - model.x0) ** (2 * theta - 3)

                ok, wit, sigma = _sampled_bounded(sigma_ratio, model.x0, x)
                report.add("sigma_bound", ok, wit, detail=f"Sigma={sigma:.6g}")
                if ok:
                    report.constants["Sigma"] = sigma
    else:
        if model.kind == "power_law":
            report.add("ratio_w1inf", True, detail="(x-x0)a'/a is constant K")
        else:
            r = model.log_ratio(x)
            ok_b, wit_b, rmax = _sampled_bounded(model.log_ratio, model.x0, x)
            lip = np.abs(np.diff(r) / np.diff(x))
            same_side = (x[1:] - model.x0) * (x[:-1] - model.x0) > 0
            lip = lip[same_side]
            ok_l = bool(np.all(np.isfinite(lip)))
            report.add("ratio_w1inf", ok_b and ok_l, wit_b if not ok_b else ([] if ok_l else [model.x0]),
                       detail=f"sup={rmax:.6g}, lipschitz~{np.max(lip) if lip.size else 0:.6g}")
        if K >= 0.5:
            _monotone_clause(report, model, x, theta)
    return report


# --- observability hypotheses ---------------------------------------------


def prototype_g(x):
    return np.ones_like(np.asarray(x, float))


def prototype_h(model: DegeneracyModel, x, B):
    """Closed-form ``h(x, B)`` for ``a = |x-x0|**alpha`` with ``g = g0 = h0 = 1``."""
    alpha = model.K
    d = np.asarray(x, float) - model.x0
    sgn = 1.0 if model.form == "nondivergence" else -1.0
    return np.abs(d) ** (alpha / 2 - 1) * (sgn * (alpha / 2) * np.sign(d) * (B + 1 - x) + np.abs(d))


def identity_residual(model, x, B, g=prototype_g, h=None, h0=1.0, g_integral=None):
    """Pointwise residual of the weak-case observability identity.

    Divergence form uses ``-a'/(2 sqrt a) (int_x^B g + h0) + sqrt(a) g``,
    non-divergence flips the sign of the first term.
    """
    x = np.asarray(x, float)
    B = np.asarray(B, float)
    if h is None:
        h = lambda xx, BB: prototype_h(model, xx, BB)  # noqa: E731
    if g_integral is None:
        if g is prototype_g:
            G = B - x
        else:
            G = np.array([integrate.quad(g, xi, bi, epsabs=1e-13)[0] for xi, bi in zip(x, B)])
    else:
        G = g_integral(x, B)
    a = model.a(x)
    ap = model.a_prime(x)
    sgn = 1.0 if model.form == "nondivergence" else -1.0
    lhs = sgn * ap / (2 * np.sqrt(a)) * (G + h0) + np.sqrt(a) * g(x)
    rhs = h(x, B)
    return lhs - rhs, np.maximum(np.abs(lhs), np.abs(rhs))


def probe_pairs(x0: float, count: int = 200, gap: float = 1e-3, seed: int = 0):
    """Pairs ``(x, B)`` with ``x < B < x0`` or ``x0 < x < B``, kept ``gap`` away from x0."""
    rng = np.random.default_rng(seed)
    xs, Bs = [], []
    half = count // 2
    for side, m in ((-1, half), (1, count - half)):
        lo, hi = (0.0, x0 - gap) if side < 0 else (x0 + gap, 1.0)
        u = np.sort(rng.uniform(lo, hi, size=(m, 2)), axis=1)
        # keep a strict ordering
        u[:, 1] = np.maximum(u[:, 1], u[:, 0] + 1e-9)
        u[:, 1] = np.minimum(u[:, 1], hi)
        xs.append(u[:, 0])
        Bs.append(u[:, 1])
    return np.concatenate(xs), np.concatenate(Bs)


def check_observability_hypotheses(model: DegeneracyModel, probe_x=None, probe_B=None,
                                   g=None, h=None, g0=None, h0=None, tol=1e-10) -> HypothesisReport:
    """Weak-case identity required by the observability inequalities.

    Strong degeneracy makes the hypothesis vacuous.  For weak power-law
    models the prototype ``g = g0 = h0 = 1`` and the closed-form ``h`` are
    used unless a pair ``(g, h)`` is supplied.
    """
    report = HypothesisReport()
    try:
        kind = classify(model)
    except OutOfTheoryError as exc:
        report.add("degenerate", False, [model.x0], detail=str(exc))
        return report
    if kind == "strong":
        report.add("observability_identity", True, detail="vacuous for strong degeneracy")
        return report

    if g is None or h is None:
        if model.kind != "power_law":
            report.add("observability_identity", None, detail="weak custom model needs (g, h)")
            return report
        g, h = prototype_g, (lambda xx, BB: prototype_h(model, xx, BB))
        g0 = 1.0 if g0 is None else g0
        h0 = 1.0 if h0 is None else h0
    g0 = 1.0 if g0 is None else g0
    h0 = 1.0 if h0 is None else h0
    report.constants.update({"g0": g0, "h0": h0})

    if probe_x is None:
        probe_x, probe_B = probe_pairs(model.x0)
    res, scale = identity_residual(model, probe_x, probe_B, g=g, h=h, h0=h0)
    rel = np.abs(res) / np.maximum(scale, 1.0)
    bad = rel > tol
    report.add("observability_identity", not bad.any(), _witnesses(probe_x, bad),
               detail=f"max residual={np.max(rel):.3e} on {len(res)} pairs")
    gx = g(np.asarray(probe_x))
    report.add("g_lower_bound", bool(np.all(gx >= g0)), _witnesses(probe_x, gx < g0))
    report.constants["max_residual"] = float(np.max(rel))
    return report
