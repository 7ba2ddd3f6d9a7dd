"""Command line entry point: ``degenerate-neumann <subcommand> [--config PATH]``.

Every run writes CSV tables plus one JSON summary into ``--out``.  The
summary embeds the fully resolved configuration, so constants given as
``"auto"`` appear there with their computed values.  No timestamps or
wall-clock figures are written, so identical (config, seed) pairs give
byte-identical files.

Exit codes: 0 ok, 1 config error, 2 parameters outside the theory,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import re
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__, carleman, control, suite
from .coefficients import (OutOfTheoryError, check_carleman_hypotheses, check_degeneracy_bound,
                           check_observability_hypotheses, classify, effective_K, power_law,
                           probe_pairs)
from .evolution import SolverError, energy_report, make_problem, solve_forward
from .mesh import MIN_NODES
from .weights import (CarlemanWeights, NonDivWeights, c1_lower_bound_observability, check_admissible,
                      log_theta, min_c2, min_d2)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_THEORY, EXIT_NUMERICAL = 0, 1, 2, 3
GENERATOR = carleman.GENERATOR
AUTO = "auto"

# section -> key -> (accepted types, default)
SCHEMA = {
    "model": {"x0": ((float,), 0.5), "K": ((float,), 0.5), "form": ((str,), "divergence")},
    "discretization": {"n": ((int,), 201), "nt": ((int,), 400), "grading": ((float,), 1.0),
                       "scheme": ((str,), "implicit_euler"), "T": ((float,), 1.0)},
    "weights": {"c1": ((float, str), AUTO), "c2": ((float, str), AUTO), "d1": ((float, str), AUTO),
                "d2": ((float, str), AUTO), "R": ((float,), 1.0), "r": ((float,), 1.0),
                "frak_c": ((float,), 2.0), "lambda2": ((float, str), AUTO)},
    "solve": {"u0": ((str,), "cos"), "mode": ((int,), 1), "source": ((float,), 0.0),
              "omega": ((list,), [0.4, 0.6])},
    "carleman": {"s_min": ((float,), 10.0), "s_max": ((float,), 1000.0), "s_count": ((int,), 20),
                 "ensemble": ((int,), 20), "modes": ((int,), 5), "smooth": ((bool,), True),
                 "omega": ((list, str), "none")},
    "observability": {"omega": ((list,), [0.4, 0.6]), "method": ((str,), "spectral"),
                      "samples": ((int,), 50), "max_iter": ((int,), 200), "tau": ((float,), 1e-12)},
    "control": {"epsilon": ((list, float), [1e-6]), "u0": ((str,), "cos"), "mode": ((int,), 1),
                "tol": ((float,), 1e-8), "maxiter": ((int,), 500)},
    "suite": {"criteria": ((list,), list(range(1, 11)))},
    "run": {"seed": ((int,), 0), "threads": ((int,), 1)},
}
CHOICES = {("model", "form"): ("divergence", "nondivergence"),
           ("discretization", "scheme"): ("implicit_euler", "crank_nicolson"),
           ("solve", "u0"): ("cos", "constant", "random"),
           ("control", "u0"): ("cos", "constant", "random"),
           ("observability", "method"): ("spectral", "sweeps")}


class Config(dict):
    """Validated configuration; ``lines`` maps ``(section, key)`` to its source line."""

    lines: dict = {}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message)

    def __str__(self):
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line else msg


def _key_lines(text):
    """Map ``(section, key)`` to the 1-based line that defines it; sections map to ``(section, None)``."""
    out = {}
    section = ""
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_\-]+)\s*\]$", line)
        if m:
            section = m.group(1)
            out[(section, None)] = no
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", line)
        if m:
            out[(section, m.group(1))] = no
    return out


def _coerce(value, types, where, line):
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{where}: expected {_type_names(types)}, got a boolean", line)
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {_type_names(types)}, got {type(value).__name__}", line)
    return value


def _type_names(types):
    names = {float: "number", int: "integer", str: "string", list: "array", bool: "boolean"}
    return " or ".join(names[t] for t in types)


def _interval(value, where, line, allow_none=False):
    if allow_none and value == "none":
        return None
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"{where}: expected [lo, hi]", line)
    lo, hi = float(value[0]), float(value[1])
    if not 0.0 < lo < hi < 1.0:
        raise ConfigError(f"{where}: need 0 < lo < hi < 1, got [{lo}, {hi}]", line)
    return [lo, hi]


def load_config(path=None, text=None) -> dict:
    """Parse and validate a TOML config; missing keys take their defaults."""
    if text is None:
        if path is None:
            text = ""
        else:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None) from None
    lines = _key_lines(text)
    cfg = Config()
    cfg.lines = lines
    for section, value in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        if not isinstance(value, dict):
            raise ConfigError(f"{section} must be a table", lines.get(("", section)))
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        for k in given:
            if k not in keys:
                raise ConfigError(f"unknown key {section}.{k} (known: {', '.join(sorted(keys))})",
                                  lines.get((section, k)))
        out = {}
        for k, (types, default) in keys.items():
            line = lines.get((section, k))
            where = f"{section}.{k}"
            v = _coerce(given[k], types, where, line) if k in given else copy.deepcopy(default)
            if isinstance(v, str) and str in types and types != (str,) and v != AUTO and \
                    not (section == "carleman" and k == "omega"):
                raise ConfigError(f"{where}: expected a number or \"auto\", got {v!r}", line)
            if (section, k) in CHOICES and v not in CHOICES[(section, k)]:
                raise ConfigError(f"{where}: must be one of {', '.join(CHOICES[(section, k)])}", line)
            out[k] = v
        _validate_section(section, out, lines)
        cfg[section] = out
    return cfg


def _validate_section(section, out, lines):
    def err(k, msg):
        raise ConfigError(f"{section}.{k}: {msg}", lines.get((section, k)))

    if section == "model":
        if not 0.0 < out["x0"] < 1.0:
            err("x0", "must lie in (0, 1)")
        if out["K"] <= 0:
            err("K", "must be positive")
    elif section == "discretization":
        if out["n"] < MIN_NODES:
            err("n", f"need at least {MIN_NODES} nodes")
        if out["nt"] < 2:
            err("nt", "need at least 2 time steps")
        if out["grading"] < 1.0:
            err("grading", "must be >= 1")
        if out["T"] <= 0:
            err("T", "must be positive")
    elif section == "weights":
        for k in ("c1", "c2", "d1", "d2"):
            if out[k] != AUTO and out[k] <= 0:
                err(k, "must be positive or \"auto\"")
        if out["R"] <= 0:
            err("R", "must be positive")
    elif section == "solve":
        out["omega"] = _interval(out["omega"], "solve.omega", lines.get((section, "omega")))
    elif section == "carleman":
        if not 0 < out["s_min"] <= out["s_max"]:
            err("s_max", "need 0 < s_min <= s_max")
        if out["s_count"] < 1 or out["ensemble"] < 1 or out["modes"] < 1:
            err("s_count", "counts must be positive")
        out["omega"] = _interval(out["omega"], "carleman.omega", lines.get((section, "omega")),
                                 allow_none=True)
    elif section == "observability":
        out["omega"] = _interval(out["omega"], "observability.omega", lines.get((section, "omega")))
        if out["samples"] < 0:
            err("samples", "must be >= 0")
    elif section == "control":
        eps = out["epsilon"]
        eps = eps if isinstance(eps, list) else [eps]
        if not eps or not all(isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in eps):
            err("epsilon", "must be a positive number or a list of positive numbers")
        out["epsilon"] = [float(e) for e in eps]
    elif section == "suite":
        c = out["criteria"]
        if not c or not all(isinstance(i, int) and 1 <= i <= 10 for i in c):
            err("criteria", "must list criterion numbers between 1 and 10")
    elif section == "run":
        if out["seed"] < 0 or out["seed"] >= 2 ** 64:
            err("seed", "must be an unsigned 64-bit integer")
        if out["threads"] < 1:
            err("threads", "must be >= 1")


# --- resolution of "auto" constants ------------------------------------------------


def build_model(cfg, form=None):
    m = cfg["model"]
    return power_law(m["x0"], m["K"], form or m["form"])


def build_problem(cfg, model=None):
    d = cfg["discretization"]
    model = build_model(cfg) if model is None else model
    return make_problem(model, n=d["n"], T=d["T"], nt=d["nt"], scheme=d["scheme"], grading=d["grading"])


def resolve_weights(cfg, notes):
    """Fill in ``"auto"`` weight constants; returns (psi weights, mu weights)."""
    w = cfg["weights"]
    T = cfg["discretization"]["T"]
    mdiv = build_model(cfg, "divergence")
    mnd = build_model(cfg, "nondivergence")
    classify(mdiv)  # refuses K outside (0, 2)

    def err(k, msg):
        raise ConfigError(f"weights.{k}: {msg}", cfg.lines.get(("weights", k)))

    floor = min_c2(mdiv)
    c2 = 1.5 * floor if w["c2"] == AUTO else w["c2"]
    if not c2 > floor:
        err("c2", f"must exceed min_c2 = {floor:.10g}")
    if w["c1"] == AUTO:
        lam = None if w["lambda2"] == AUTO else w["lambda2"]
        if lam is not None and not mdiv.x0 < lam < 1.0:
            err("lambda2", "must lie in (x0, 1)")
        c1 = max(1.0, c1_lower_bound_observability(mdiv, c2, r=w["r"], frak_c=w["frak_c"], lambda2=lam))
        notes.append("c1 floor uses r, frak_c and lambda2 = midpoint of (x0, 1) by default; "
                     "these values are choices of this tool, not derived constants")
    else:
        c1 = w["c1"]
    d1 = 1.0 if w["d1"] == AUTO else w["d1"]
    dfloor = min_d2(mnd, w["R"])
    d2 = 1.5 * dfloor if w["d2"] == AUTO else w["d2"]
    if not d2 > dfloor:
        err("d2", f"must exceed min_d2 = {dfloor:.10g} for R = {w['R']:g}")
    psi_w = CarlemanWeights(mdiv, c1, c2, T)
    mu_w = NonDivWeights(mnd, d1, d2, w["R"], T)
    lam = 0.5 * (mdiv.x0 + 1.0) if w["lambda2"] == AUTO else w["lambda2"]
    w.update({"c1": c1, "c2": c2, "d1": d1, "d2": d2, "lambda2": lam})
    return psi_w, mu_w


def _initial_state(kind, mode, x, seed):
    if kind == "cos":
        return np.cos(mode * np.pi * x)
    if kind == "constant":
        return np.ones_like(x)
    return carleman.EnsembleSpec(count=1, seed=seed).members(x)[0]


# --- output -----------------------------------------------------------------------


class Writer:
    """Serialises every file write of a run through one object."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def rows(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows)

    def summary(self, name, payload):
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _f(v):
    return repr(float(v))


@dataclass
class Run:
    cfg: dict
    writer: Writer
    seed: int
    threads: int
    notes: list

    def header(self, name):
        return {"subcommand": name, "version": __version__, "seed": self.seed,
                "generator": GENERATOR, "config": self.cfg, "notes": self.notes}


# --- subcommands ------------------------------------------------------------------


def cmd_classify(run: Run) -> int:
    m = build_model(run.cfg)
    K = effective_K(m)
    try:
        kind = classify(m)
    except OutOfTheoryError as exc:
        print(f"refused: {exc}; the degeneracy must satisfy 0 < K < 2 "
              "(for K >= 2 null controllability fails)", file=sys.stderr)
        return EXIT_THEORY
    lines = [f"model: a(x) = |x - {m.x0:g}|^{K:g}, {m.form} form", f"degeneracy: {kind}",
             f"theta = K = {m.theta:g}"]
    reports = {"degeneracy": check_degeneracy_bound(m), "carleman": check_carleman_hypotheses(m)}
    x, B = probe_pairs(m.x0, 200, seed=run.seed)
    reports["observability"] = check_observability_hypotheses(m, x, B)
    rows = []
    for name, rep in reports.items():
        for ln in rep.lines():
            lines.append(f"[{name}] {ln}")
        for c in rep.clauses:
            rows.append([name, c.name, {True: "pass", False: "fail", None: "unable-to-verify"}[c.verdict],
                         c.detail, " ".join(_f(w) for w in c.witnesses[:10])])
    print("\n".join(lines))
    run.writer.rows("classify.csv", ["report", "clause", "verdict", "detail", "witnesses"], rows)
    run.writer.summary("classify.json", {**run.header("classify"), "class": kind, "theta": m.theta,
                                         "K": K, "report": lines,
                                         "passed": all(r.passed for r in reports.values())})
    return EXIT_OK


def cmd_solve(run: Run) -> int:
    prob = build_problem(run.cfg)
    s = run.cfg["solve"]
    x = prob.grid.nodes
    u0 = _initial_state(s["u0"], s["mode"], x, run.seed)
    H = None if s["source"] == 0.0 else np.full((prob.nt + 1, x.size), s["source"])
    omega = s["omega"] if H is not None else None
    traj = solve_forward(prob, u0, H, omega=omega)
    rep = energy_report(traj, u0, H, omega=omega)
    traj.to_csv(run.writer.path("solve.csv"))
    prob.grid.to_csv(run.writer.path("grid.csv"), prob.model)
    run.writer.summary("solve.json", {**run.header("solve"), "energy": {
        "sup_norm_sq": rep.sup_norm_sq, "rhs_bound": rep.rhs_bound, "passed": rep.passed,
        "step_monotone": rep.step_monotone}, "final_norm": float(prob.ip.norm(traj.final)),
        "initial_norm": float(prob.ip.norm(u0))})
    print(f"solve: {prob.nt} steps on {x.size} nodes, energy bound {'holds' if rep.passed else 'VIOLATED'}")
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def cmd_weights(run: Run) -> int:
    psi_w, mu_w = resolve_weights(run.cfg, run.notes)
    x = np.linspace(0.0, 1.0, 1001)
    ps, ms = psi_w.spatial(x), mu_w.spatial(x)
    run.writer.rows("weights_space.csv", ["x", "psi", "mu"],
                    [[_f(a), _f(b), _f(c)] for a, b, c in zip(x, ps, ms)])
    T = run.cfg["discretization"]["T"]
    t = np.linspace(0.0, T, 201)[1:-1]
    th = np.exp(log_theta(t, T))
    run.writer.rows("weights_time.csv", ["t", "Theta"], [[_f(a), _f(b)] for a, b in zip(t, th)])
    okp, lop, hip = check_admissible(psi_w)
    okm, lom, him = check_admissible(mu_w)
    run.writer.summary("weights.json", {**run.header("weights"), "admissible": {
        "psi": {"ok": okp, "min": lop, "max": hip, "lower_bound": psi_w.bounds()[0]},
        "mu": {"ok": okm, "min": lom, "max": him, "lower_bound": mu_w.bounds()[0]}}})
    for n in run.notes:
        print(f"warning: {n}", file=sys.stderr)
    print(f"weights: psi in [{lop:.6g}, {hip:.6g}], mu in [{lom:.6g}, {him:.6g}]")
    return EXIT_OK if okp and okm else EXIT_NUMERICAL


def _weights_for(run, model):
    psi_w, mu_w = resolve_weights(run.cfg, run.notes)
    return psi_w if model.form == "divergence" else mu_w


def cmd_carleman_scan(run: Run) -> int:
    c = run.cfg["carleman"]
    prob = build_problem(run.cfg)
    w = _weights_for(run, prob.model)
    s_grid = np.logspace(math.log10(c["s_min"]), math.log10(c["s_max"]), c["s_count"])
    ens = carleman.EnsembleSpec(count=c["ensemble"], seed=run.seed, modes=c["modes"], smooth=c["smooth"])
    try:
        rep = carleman.s_scan(prob, ens, s_grid, w, omega=c["omega"], threads=run.threads)
    except ValueError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_THEORY
    rep.to_csv(run.writer.path("carleman_scan.csv"))
    run.writer.summary("carleman_scan.json", {**run.header("carleman-scan"), "report": rep.summary(),
                                              "asymptotic_ratio_at_s_max":
                                                  carleman.asymptotic_ratio(prob, w, s_grid[-1])})
    if rep.plateau_found:
        print(f"carleman-scan: plateau from s0={rep.s0:.4g}, C={rep.C:.6g}")
    else:
        print("carleman-scan: no plateau within the scanned s range")
    return EXIT_OK


def cmd_observability(run: Run) -> int:
    o = run.cfg["observability"]
    prob = build_problem(run.cfg)
    cfg = control.ObservabilityConfig(tuple(o["omega"]), prob.T)
    rep = control.estimate_CT(prob, cfg, method=o["method"], max_iter=o["max_iter"], tau=o["tau"],
                              samples=o["samples"], seed=run.seed)
    rep.to_csv(run.writer.path("observability.csv"))
    run.writer.summary("observability.json", {**run.header("observability"), "report": rep.summary()})
    print(f"observability: C_T = {rep.C_T:.6g} ({'converged' if rep.converged else 'NOT converged'})")
    return EXIT_OK if rep.converged else EXIT_NUMERICAL


def cmd_control(run: Run) -> int:
    c = run.cfg["control"]
    prob = build_problem(run.cfg)
    cfg = control.ObservabilityConfig(tuple(run.cfg["observability"]["omega"]), prob.T)
    u0 = _initial_state(c["u0"], c["mode"], prob.grid.nodes, run.seed)
    results = []
    ok = True
    for i, eps in enumerate(c["epsilon"]):
        res = control.hum_control(prob, u0, cfg, eps, tol=c["tol"], maxiter=c["maxiter"])
        ver = control.verify_null_control(prob, u0, res)
        res.to_csv(run.writer.path(f"control_{i}.csv"))
        results.append({**res.summary(), "verification": {
            "final_norm": ver.final_norm, "relative_final_norm": ver.relative_final_norm,
            "cost_ratio": ver.cost_ratio, "agreement": ver.agreement}})
        ok &= res.converged and ver.agreement <= 1e-10
        print(f"control eps={eps:g}: |u(T)|/|u0| = {ver.relative_final_norm:.3e}, "
              f"cost = {res.cost:.6g}, iterations = {res.iterations}")
    run.writer.summary("control.json", {**run.header("control"), "runs": results})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_suite(run: Run, strict=False) -> int:
    results = suite.run_suite(run.cfg["suite"]["criteria"], seed=run.seed, threads=run.threads,
                              echo=print)
    suite.write_summary(results, run.writer.path("suite.csv"), run.writer.path("suite.json"),
                        extra={k: v for k, v in _jsonable(run.header("suite")).items()})
    failed = [r.number for r in results if not r.passed]
    print(f"suite: {len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_NUMERICAL if strict and failed else EXIT_OK


COMMANDS = {"classify": cmd_classify, "solve": cmd_solve, "weights": cmd_weights,
            "carleman-scan": cmd_carleman_scan, "observability": cmd_observability,
            "control": cmd_control, "suite": cmd_suite}


def build_parser():
    p = argparse.ArgumentParser(prog="degenerate-neumann", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="TOML configuration file")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides run.seed)")
        sp.add_argument("--threads", type=int, help="worker threads for scans (overrides run.threads)")
        if name == "suite":
            sp.add_argument("--strict", action="store_true", help="exit 3 when any criterion fails")
    return p


def run(command, config=None, out="out", seed=None, threads=None, strict=False, text=None) -> int:
    """Run one subcommand; returns the exit status."""
    try:
        cfg = load_config(config, text=text)
        if seed is not None:
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["run"]["seed"] = seed
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg["run"]["threads"] = threads
        r = Run(cfg, Writer(out), cfg["run"]["seed"], cfg["run"]["threads"], [])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if command == "suite":
                return cmd_suite(r, strict)
            return COMMANDS[command](r)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfTheoryError as exc:
        print(f"refused: {exc}; the construction needs 0 < K < 2", file=sys.stderr)
        return EXIT_THEORY
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads,
               getattr(args, "strict", False))


if __name__ == "__main__":
    sys.exit(main())
