"""The acceptance battery shared by the ``suite`` subcommand and the test suite.

Each ``criterion_N`` returns a :class:`CriterionResult`; nothing here
decides what counts as a pass other than the stated tolerances.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import carleman, control, oracles
from .coefficients import check_observability_hypotheses, power_law, probe_pairs
from .evolution import energy_report, make_problem, solve_adjoint, solve_forward
from .mesh import assemble_operator, build_grid, green_residual, symmetry_defect
from .weights import (NonDivWeights, CarlemanWeights, check_admissible, min_c2, min_d2)

FORMS = ("divergence", "nondivergence")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    note: str = ""
    # wall-clock figures are kept apart from metrics so written summaries stay deterministic
    timings: dict = field(default_factory=dict)

    def line(self, timing: bool = True) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items() if not isinstance(v, (list, dict)))
        if timing:
            times = "".join(f", {k}={v:.1f}s" for k, v in self.timings.items())
            parts += f"; {self.seconds:.1f}s{times}"
        out = f"[{tag}] criterion {self.number}: {self.title} ({parts})"
        if self.note:
            out += f" note: {self.note}"
        return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _random_fields(rng, x, count):
    """Cosine sums plus nodal noise: smooth and rough parts together."""
    k = np.arange(8)
    basis = np.cos(np.pi * np.outer(k, x))
    return rng.standard_normal((count, k.size)) @ basis + 0.1 * rng.standard_normal((count, x.size))


@_timed
def criterion_1(seed=0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for form in FORMS:
        for K in (0.5, 1.0, 1.5):
            for n in (51, 101, 201, 401):
                m = power_law(0.5, K, form)
                g = build_grid(n, m)
                op = assemble_operator(m, g)
                U = _random_fields(rng, g.nodes, 10)
                V = _random_fields(rng, g.nodes, 10)
                for u, v in zip(U, V):
                    worst = max(worst, green_residual(op, g, u, v, relative=True))
    elapsed = time.perf_counter() - t0
    return CriterionResult(1, "discrete Green formula", worst <= 1e-12 and elapsed < 5.0,
                           {"max_relative_residual": worst}, timings={"checks": elapsed})


@_timed
def criterion_2(seed=0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    sym, quad = 0.0, -math.inf
    for form in FORMS:
        for K in (0.5, 1.0, 1.5):
            for n in (51, 201):
                m = power_law(0.5, K, form)
                g = build_grid(n, m)
                op = assemble_operator(m, g)
                U = _random_fields(rng, g.nodes, 100)
                V = _random_fields(rng, g.nodes, 100)
                for u, v in zip(U, V):
                    sym = max(sym, symmetry_defect(op, u, v))
                    quad = max(quad, op.ip.inner(op.apply(u), u) / op.ip.norm_sq(u))
    ok = sym <= 1e-12 and quad <= 1e-12
    return CriterionResult(2, "self-adjoint and nonpositive", ok,
                           {"max_symmetry_defect": sym, "max_Au_u_over_u2": quad})


@_timed
def criterion_3(seed=0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    bound_ok, mono_ok = True, True
    worst_ratio, worst_drift = 0.0, 0.0
    for form in FORMS:
        for K in (0.5, 1.5):
            prob = make_problem(power_law(0.5, K, form), n=101, nt=200)
            x = prob.grid.nodes
            for _ in range(20):
                u0 = _random_fields(rng, x, 1)[0]
                H = rng.standard_normal((prob.nt + 1, x.size))
                traj = solve_forward(prob, u0, H, omega=(0.2, 0.7))
                rep = energy_report(traj, u0, H, omega=(0.2, 0.7))
                bound_ok &= rep.passed
                worst_ratio = max(worst_ratio, rep.sup_norm_sq / rep.rhs_bound)
                free = solve_forward(prob, u0)
                frep = energy_report(free, u0)
                mono_ok &= frep.step_monotone
                if form == "divergence":
                    scale = max(1.0, float(np.sum(np.abs(u0) * prob.grid.cell_widths)))
                    worst_drift = max(worst_drift, frep.max_mass_drift / scale)
    ok = bound_ok and mono_ok and worst_drift <= 1e-12
    return CriterionResult(3, "energy estimate", ok,
                           {"max_sup_over_bound": worst_ratio, "monotone": mono_ok,
                            "max_mass_drift_per_step": worst_drift})


@_timed
def criterion_4() -> CriterionResult:
    ok = True
    worst = {}
    for K in (0.5, 1.0, 1.5):
        for x0 in (0.3, 0.5, 0.7):
            m = power_law(x0, K)
            w = CarlemanWeights(m, 1.0, 1.5 * min_c2(m))
            okp, lo, hi = check_admissible(w)
            mn = power_law(x0, K, "nondivergence")
            wn = NonDivWeights(mn, 1.0, 1.5 * min_d2(mn, 1.0), 1.0)
            okm, lom, him = check_admissible(wn)
            ok &= okp and okm
            worst[f"K={K},x0={x0}"] = max(hi, him)
    return CriterionResult(4, "weight admissibility", ok, {"max_weight_value": max(worst.values()),
                                                           "cases": len(worst)})


@_timed
def criterion_5(seed=0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst_rel, worst_hom, worst_ratio = 0.0, 0.0, 0.0
    for form in FORMS:
        for K in (0.5, 1.5):
            m = power_law(0.5, K, form)
            prob = make_problem(m, n=51, nt=50)
            x = prob.grid.nodes
            if form == "divergence":
                w = CarlemanWeights(m, 1.0, 1.5 * min_c2(m))
            else:
                w = NonDivWeights(m, 1.0, 1.5 * min_d2(m, 1.0), 1.0)
            spatial = list(w.spatial(x))
            vT = _random_fields(rng, x, 1)[0]
            traj = solve_adjoint(prob, vT)
            H = rng.standard_normal(traj.fields.shape)
            big = solve_adjoint(prob, 2.0 * vT)
            # small s keeps every plain exponential of the naive sums representable
            for s in (0.02, 0.1, 0.5):
                L = carleman.lhs_scaled(traj, w, s).value
                R = carleman.rhs_scaled(traj, H, w, s).value
                Ln, Rn = oracles.carleman_sums(traj.fields, traj.times, x, 0.5, K, form, s, spatial,
                                               cells=prob.grid.cell_widths, h=H)
                worst_rel = max(worst_rel, abs(L - Ln) / Ln, abs(R - Rn) / Rn)
                L2 = carleman.lhs_scaled(big, w, s).value
                R2 = carleman.rhs_scaled(big, 2.0 * H, w, s).value
                worst_hom = max(worst_hom, abs(L2 - 4 * L) / (4 * L), abs(R2 - 4 * R) / (4 * R))
                ratio = carleman.lhs_scaled(traj, w, s) / carleman.rhs_scaled(traj, H, w, s)
                ratio2 = carleman.lhs_scaled(big, w, s) / carleman.rhs_scaled(big, 2.0 * H, w, s)
                worst_ratio = max(worst_ratio, abs(ratio2 - ratio) / ratio)
    ok = worst_rel <= 1e-12 and worst_hom <= 1e-12 and worst_ratio <= 1e-12
    return CriterionResult(5, "Carleman functionals match the naive oracle", ok,
                           {"max_oracle_rel_diff": worst_rel, "max_homogeneity_defect": worst_hom,
                            "max_ratio_scale_defect": worst_ratio})


@_timed
def criterion_6(seed=0, threads=1) -> CriterionResult:
    t0 = time.perf_counter()
    s_grid = np.logspace(1, 3, 20)
    ens = carleman.EnsembleSpec(count=20, seed=seed)
    plateau_all = True
    stable_all = True
    details = {}
    for form in FORMS:
        for K in (0.5, 1.5):
            m = power_law(0.5, K, form)
            reps = {}
            for n in (201, 401):
                reps[n] = carleman.s_scan(make_problem(m, n=n), ens, s_grid, threads=threads)
            p, q = reps[201], reps[401]
            plateau = p.plateau_found and q.plateau_found
            change = abs(q.C - p.C) / p.C if plateau else math.nan
            grow = float(p.max_ratio[-1] / p.max_ratio[0])
            details[f"{form},K={K}"] = {"s0_201": p.s0, "s0_401": q.s0, "C_201": p.C, "C_401": q.C,
                                        "max_ratio_growth_over_scan": grow,
                                        "mesh_change_at_top_s": float(abs(q.max_ratio[-1] - p.max_ratio[-1]) / p.max_ratio[-1])}
            plateau_all &= plateau
            stable_all &= plateau and change < 0.1
    growth = min(d["max_ratio_growth_over_scan"] for d in details.values())
    note = "" if plateau_all else "no plateau: max ratio grows like s^3 across the scan"
    elapsed = time.perf_counter() - t0
    return CriterionResult(6, "Carleman ratio plateau", plateau_all and stable_all and elapsed < 180.0,
                           {"plateau_found": plateau_all, "mesh_stable": stable_all,
                            "min_growth_factor": growth, "cases": details}, note=note,
                           timings={"scans": elapsed})


@_timed
def criterion_7(seed=0) -> CriterionResult:
    cfg = control.ObservabilityConfig((0.4, 0.6), 1.0)
    m = power_law(0.5, 0.5)
    small = make_problem(m, n=51)
    est51 = control.estimate_CT(small, cfg)
    oracle = control.dense_CT(small, cfg)
    r201 = control.estimate_CT(make_problem(m, n=201), cfg, samples=50, seed=seed)
    r401 = control.estimate_CT(make_problem(m, n=401), cfg)
    agree = abs(est51.C_T - oracle) / oracle
    stable = abs(r401.C_T - r201.C_T) / r201.C_T
    conv = est51.converged and r201.converged and r401.converged
    ok = conv and agree <= 0.05 and stable <= 0.10 and r201.dominates()
    return CriterionResult(7, "observability constant", ok,
                           {"C_T_51": est51.C_T, "dense_51": oracle, "rel_diff_51": agree,
                            "C_T_201": r201.C_T, "C_T_401": r401.C_T, "mesh_change": stable,
                            "converged": conv, "max_sample_quotient": max(r201.quotients),
                            "dominates": r201.dominates()})


@_timed
def criterion_8() -> CriterionResult:
    t0 = time.perf_counter()
    m = power_law(0.5, 0.5)
    prob = make_problem(m, n=201)
    cfg = control.ObservabilityConfig((0.4, 0.6), 1.0)
    u0 = np.cos(np.pi * prob.grid.nodes)
    res = control.hum_control(prob, u0, cfg, 1e-6)
    ver = control.verify_null_control(prob, u0, res)
    elapsed = time.perf_counter() - t0
    ct = control.estimate_CT(prob, cfg).C_T
    rel = res.final_norm / res.initial_norm
    cost = res.cost / res.initial_norm ** 2
    ok = (rel <= 1e-3 and math.isfinite(cost) and cost <= 1.5 * ct and res.iterations <= 500
          and elapsed < 60 and ver.agreement <= 1e-10)
    return CriterionResult(8, "null control", ok,
                           {"relative_final_norm": rel, "cost_over_u0_sq": cost, "C_T": ct,
                            "cg_iterations": res.iterations, "independent_agreement": ver.agreement},
                           timings={"control": elapsed})


@_timed
def criterion_9() -> CriterionResult:
    cfg = control.ObservabilityConfig((0.6, 0.8), 1.0)
    vals = []
    for K in (1.5, 1.7, 1.9):
        prob = make_problem(power_law(0.5, K, "nondivergence"), n=201)
        vals.append(control.estimate_CT(prob, cfg).C_T)
    ok = all(b > a for a, b in zip(vals, vals[1:]))
    return CriterionResult(9, "C_T increases with degeneracy strength", ok,
                           {"C_T_K1.5": vals[0], "C_T_K1.7": vals[1], "C_T_K1.9": vals[2]})


@_timed
def criterion_10() -> CriterionResult:
    worst = 0.0
    ok = True
    for form in FORMS:
        m = power_law(0.5, 0.5, form)
        x, B = probe_pairs(m.x0, 200)
        rep = check_observability_hypotheses(m, x, B)
        ok &= rep["observability_identity"].verdict is True
        worst = max(worst, rep.constants["max_residual"])
    return CriterionResult(10, "observability hypothesis identities", ok and worst <= 1e-10,
                           {"max_residual": worst, "pairs": 200})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def run_suite(numbers=None, seed=0, threads=1, echo=None):
    out = []
    for i in numbers or sorted(CRITERIA):
        res = _call(i, seed, threads)
        out.append(res)
        if echo:
            echo(res.line())
    return out


def _call(i, seed, threads):
    fn = CRITERIA[i]
    if i in (1, 2, 3, 5, 7):
        return fn(seed=seed)
    if i == 6:
        return fn(seed=seed, threads=threads)
    return fn()


def write_summary(results, csv_path, json_path=None, extra=None):
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["criterion", "title", "passed", "metrics", "note"])
        for r in results:
            flat = {k: v for k, v in r.metrics.items() if not isinstance(v, dict)}
            wr.writerow([r.number, r.title, r.passed, json.dumps(flat, sort_keys=True, default=float), r.note])
    if json_path:
        payload = {"criteria": [{"number": r.number, "title": r.title, "passed": r.passed,
                                 "metrics": r.metrics, "note": r.note} for r in results],
                   "all_passed": all(r.passed for r in results)}
        if extra:
            payload.update(extra)
        with open(json_path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=float)
