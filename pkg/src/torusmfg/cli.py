"""Command-line front end: flat-text configs, run directories, result lines.

Config files hold one ``section.key = value`` per line; ``#`` starts a
comment. Every run writes into its own directory:

* ``config.txt``: normalised echo of the config, enough to reproduce the run;
* ``*.fmfg``: field snapshots;
* ``*.csv``: iteration and energy traces;
* ``certificate.txt``: human-readable certificates;
* ``result.txt``: the line ``RESULT status=<ok|diverged|failed> E=<float> iters=<int>``.

The process exits with 0 exactly when the run ends certified.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, model
from .fokker_planck import FlowPair
from .grid import Grid, read_field, write_field
from .nonuniqueness import nonuniqueness_experiment
from .picard import picard_solve
from .problem import BlowUpError, Problem, cosine_bump, uniform
from .variational import energy, minimize_energy, optimal_flux, recover_and_certify

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main", "SCHEMA"]


class ConfigError(ValueError):
    """Carries every problem found in a config, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


# key -> (parser, default); a default of _REQUIRED marks a mandatory key
_REQUIRED = object()
SCHEMA = {
    "model.gamma": (float, _REQUIRED),
    "model.alpha": (float, _REQUIRED),
    "model.kappa": (float, 1.0),
    "model.hamiltonian": (_choice("power"), "power"),
    "model.coupling": (_choice("power"), "power"),
    "model.eta": (float, 0.0),
    "model.M": (float, None),
    "grid.N": (int, _REQUIRED),
    "grid.n": (int, _REQUIRED),
    "grid.n_t": (int, _REQUIRED),
    "grid.T": (float, _REQUIRED),
    "data.m0": (_choice("uniform", "cosine-bump", "snapshot"), "uniform"),
    "data.m0_amplitude": (float, 0.3),
    "data.m0_path": (str, None),
    "data.u_T": (_choice("zero", "cosine-bump", "snapshot"), "zero"),
    "data.u_T_amplitude": (float, 0.1),
    "data.u_T_path": (str, None),
    "solver.method": (_choice("picard", "variational", "both"), _REQUIRED),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 500),
    "solver.quadrature": (_choice("midpoint", "trapezoid"), "midpoint"),
    "solver.gap_tol": (float, 1e-12),
    "solver.max_inner": (int, 50_000),
    "solver.max_outer": (int, 100),
    "solver.inner": (_choice("lbfgs", "pdhg"), "lbfgs"),
    "solver.seed": (int, 0),
    "experiment.kind": (_choice("solve", "certify", "nonuniqueness", "sweep"), "solve"),
    "experiment.sweep": (_choice("T", "alpha"), "T"),
    "experiment.values": (_floats, None),
    "experiment.steps_per_unit": (int, 100),
    "experiment.T": (float, None),
    "certify.m_path": (str, None),
    "certify.u_path": (str, None),
    "certify.recompute_u": (_bool, False),
}
# "solver = picard" is accepted as shorthand for solver.method
_ALIASES = {"solver": "solver.method"}


@dataclass
class RunConfig:
    """Validated configuration; ``values`` maps every schema key to its value."""

    values: dict
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def spec(self) -> model.ModelSpec:
        return model.ModelSpec.power(self["model.gamma"], self["model.alpha"], self["model.kappa"],
                                     eta=self["model.eta"], truncation=self["model.M"])

    def grid(self) -> Grid:
        return Grid(self["grid.N"], self["grid.n"], self["grid.T"], self["grid.n_t"])

    def regime(self) -> model.RegimeReport:
        return model.classify_regime(self.spec(), self["grid.N"])

    def with_values(self, **changes) -> RunConfig:
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in changes.items()})
        return RunConfig(vals, self.explicit | {k.replace("__", ".") for k in changes})

    def echo(self) -> str:
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if v is None:
                continue
            if key.endswith("_amplitude") and self.values[key[: -len("_amplitude")]] != "cosine-bump":
                continue
            if isinstance(v, list):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat config; raises :class:`ConfigError` listing all problems."""
    errors, raw, explicit = [], {}, set()
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {ln}: expected 'section.key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in SCHEMA:
            errors.append(f"line {ln}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {ln}: duplicate key {key!r}")
        raw[key] = (ln, val)
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            ln, val = raw[key]
            try:
                values[key] = parser(val)
                explicit.add(key)
            except ValueError as exc:
                errors.append(f"line {ln}: {key}: {exc}")
                values[key] = None
        elif default is _REQUIRED:
            errors.append(f"missing required key {key}")
            values[key] = None
        else:
            values[key] = default
    errors += _validate(values, explicit)
    if errors:
        raise ConfigError(errors)
    return RunConfig(values, explicit)


def _validate(v, explicit):
    errs = []

    def positive(key):
        if v.get(key) is not None and not v[key] > 0:
            errs.append(f"{key} must be positive")

    for key in ("model.gamma", "model.alpha", "model.kappa", "grid.T", "solver.tol", "solver.gap_tol",
                "solver.max_iter", "solver.max_inner", "solver.max_outer", "experiment.steps_per_unit"):
        positive(key)
    if v.get("model.gamma") is not None and not v["model.gamma"] > 1:
        errs.append("model.gamma must exceed 1")
    if v.get("model.eta") is not None and v["model.eta"] < 0:
        errs.append("model.eta must be nonnegative")
    positive("model.M")
    if v.get("grid.N") is not None and v["grid.N"] not in (1, 2):
        errs.append("N must be 1 or 2")
    n = v.get("grid.n")
    if n is not None and (n < 4 or n & (n - 1)):
        errs.append("n must be a power of two" + (" and at least 4" if n < 4 else ""))
    if v.get("grid.n_t") is not None and v["grid.n_t"] < 2:
        errs.append("n_t must be at least 2")
    for name in ("m0", "u_T"):
        preset, path = v.get(f"data.{name}"), v.get(f"data.{name}_path")
        if preset == "snapshot" and path is None:
            errs.append(f"data.{name} = snapshot needs data.{name}_path")
        if path is not None and preset != "snapshot":
            errs.append(f"data.{name}_path conflicts with preset data.{name} = {preset}")
        if f"data.{name}_amplitude" in explicit and preset != "cosine-bump":
            errs.append(f"data.{name}_amplitude only applies to data.{name} = cosine-bump")
    amp = v.get("data.m0_amplitude")
    if v.get("data.m0") == "cosine-bump" and amp is not None and not 0 <= amp < 1:
        errs.append("data.m0_amplitude must lie in [0, 1) to keep m0 positive")
    if v.get("experiment.kind") == "sweep" and not v.get("experiment.values"):
        errs.append("experiment.kind = sweep needs experiment.values")
    return errs


# -- running -----------------------------------------------------------------------------


def _field(cfg: RunConfig, grid: Grid, name: str):
    preset = cfg[f"data.{name}"]
    if preset == "snapshot":
        g2, vals = read_field(cfg[f"data.{name}_path"])
        if g2.shape != grid.shape:
            raise ValueError(f"snapshot for {name} has spatial shape {g2.shape}, grid is {grid.shape}")
        return vals[0] if name == "m0" else vals[-1]
    if preset == "cosine-bump":
        base = 1.0 if name == "m0" else 0.0
        return cosine_bump(grid, cfg[f"data.{name}_amplitude"], base=base)
    return uniform(grid, 1.0 if name == "m0" else 0.0)


def build_problem(cfg: RunConfig) -> Problem:
    grid = cfg.grid()
    return Problem(grid, cfg.spec(), _field(cfg, grid, "m0"), _field(cfg, grid, "u_T"))


@dataclass
class Outcome:
    status: str
    energy: float
    iterations: int
    certified: bool
    lines: list = field(default_factory=list)

    @property
    def result_line(self) -> str:
        return f"RESULT status={self.status} E={self.energy!r} iters={self.iterations}"


def _write_lines(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def _solve(cfg: RunConfig, out: str) -> Outcome:
    pb = build_problem(cfg)
    g, spec = pb.grid, pb.spec
    method = cfg["solver.method"]
    cert_lines, iters = [], 0
    status, E, certified = "ok", math.nan, True
    results = {}
    if method in ("picard", "both"):
        res = picard_solve(pb, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                           quadrature=cfg["solver.quadrature"])
        res.write_csv(os.path.join(out, "picard.csv"))
        iters += res.iterations
        cert_lines.append(f"[picard] {res.message}; contraction ratio {res.contraction_ratio:.6g}")
        if res.converged:
            pair = FlowPair(g, res.m, optimal_flux(g, res.m, res.u, pb.hamiltonian))
            cert = recover_and_certify(pair, res.u, pb)
            cert_lines.append(cert.summary())
            results["picard"] = (pair, res.u)
            E = energy(pair, spec, pb.u_T, eta=spec.eta).total
            certified &= cert.passed
        else:
            status, certified = ("diverged" if res.status == "diverged" else "failed"), False
    if method in ("variational", "both") and status == "ok":
        rep = minimize_energy(pb, gap_tol=cfg["solver.gap_tol"], max_inner=cfg["solver.max_inner"],
                              max_outer=cfg["solver.max_outer"], method=cfg["solver.inner"], M=cfg["model.M"],
                              allow_supercritical=True)
        rep.write_csv(os.path.join(out, "energy.csv"))
        iters += rep.outer_iterations
        cert_lines.append(f"[variational] {rep.message}; final convexifier integral {rep.final_G:.3e}")
        cert_lines.append(rep.certificate.summary())
        results["variational"] = (rep.pair, rep.u)
        E = rep.energy
        certified &= rep.converged and rep.certificate.passed
        if not rep.converged:
            status = "failed"
    if len(results) == 2:
        d = float(np.max(np.abs(results["picard"][0].m - results["variational"][0].m)))
        cert_lines.append(f"[both] sup |m_picard - m_variational| = {d:.6e}")
    for name, (pair, u) in results.items():
        write_field(os.path.join(out, f"{name}.m.fmfg"), g, pair.m)
        write_field(os.path.join(out, f"{name}.u.fmfg"), g, u)
    if status == "ok" and not certified:
        status = "failed"
    return Outcome(status, E, iters, certified and status == "ok", cert_lines)


def _certify(cfg: RunConfig, out: str) -> Outcome:
    if cfg["certify.m_path"] is None or cfg["certify.u_path"] is None:
        # nothing to load: solve first, then the certificates are those of the solve
        return _solve(cfg, out)
    pb = build_problem(cfg)
    g2, m = read_field(cfg["certify.m_path"])
    _, u = read_field(cfg["certify.u_path"])
    if g2.shape != pb.grid.shape or m.shape[0] != pb.grid.n_t + 1:
        raise ValueError("snapshots do not match the configured grid")
    pair = FlowPair(pb.grid, m, optimal_flux(pb.grid, m, u, pb.hamiltonian))
    cert = recover_and_certify(pair, u, pb, recompute_u=cfg["certify.recompute_u"])
    E = energy(pair, pb.spec, pb.u_T, eta=pb.spec.eta).total
    return Outcome("ok" if cert.passed else "failed", E, 0, cert.passed, [cert.summary()])


def _nonuniq(cfg: RunConfig, out: str) -> Outcome:
    spec = cfg.spec()
    opts = {"gap_tol": cfg["solver.gap_tol"], "max_inner": cfg["solver.max_inner"],
            "max_outer": cfg["solver.max_outer"], "method": cfg["solver.inner"]}
    rep = nonuniqueness_experiment(spec, N=cfg["grid.N"], n=cfg["grid.n"],
                                   steps_per_unit=cfg["experiment.steps_per_unit"], T=cfg["experiment.T"],
                                   solver_options=opts)
    rep.write_csv(os.path.join(out, "nonuniqueness.csv"))
    lines = [f"epsilon={rep.epsilon!r} delta={rep.delta!r} C={rep.ramp_cost!r} T_threshold={rep.T_threshold!r} T={rep.T!r}",
             f"E_trivial={rep.E_trivial!r} E_competitor={rep.E_competitor!r}",
             f"E_run1={rep.E_run1!r} E_run2={rep.E_run2!r} separation={rep.separation!r}"]
    for name, r in (("trivial-seeded", rep.run_trivial), ("competitor-seeded", rep.run_competitor)):
        lines.append(f"[{name}] {r.message}")
        lines.append(r.certificate.summary())
        r.write_csv(os.path.join(out, f"energy_{name}.csv"))
        write_field(os.path.join(out, f"{name}.m.fmfg"), r.pair.grid, r.pair.m)
        write_field(os.path.join(out, f"{name}.u.fmfg"), r.pair.grid, r.u)
    ok = rep.certified and rep.competitor_wins
    iters = rep.run_trivial.outer_iterations + rep.run_competitor.outer_iterations
    return Outcome("ok" if ok else "failed", rep.E_run2, iters, ok, lines)


def _sweep_one(args):
    cfg, out = args
    os.makedirs(out, exist_ok=True)
    try:
        oc = _solve(cfg, out)
    except BlowUpError as exc:
        oc = Outcome("diverged", math.nan, 0, False, [f"{exc.module} blew up at step {exc.step}"])
    _finish(cfg, out, oc)
    return oc


def _threads() -> int:
    raw = os.environ.get("FMFG_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _sweep(cfg: RunConfig, out: str) -> Outcome:
    key = "grid.T" if cfg["experiment.sweep"] == "T" else "model.alpha"
    jobs = []
    for i, val in enumerate(cfg["experiment.values"]):
        sub = cfg.with_values(**{key.replace(".", "__"): float(val), "experiment__kind": "solve"})
        jobs.append((sub, os.path.join(out, f"{i:03d}_{cfg['experiment.sweep']}={val!r}")))
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(_sweep_one, jobs))
    else:
        outs = [_sweep_one(j) for j in jobs]
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([cfg["experiment.sweep"], "status", "energy", "iterations", "certified"])
        for (sub, _), oc in zip(jobs, outs):
            wr.writerow([repr(sub[key]), oc.status, repr(oc.energy), oc.iterations, int(oc.certified)])
    good = all(o.certified for o in outs)
    lines = [f"{cfg['experiment.sweep']}={s[key]!r}: {o.result_line}" for (s, _), o in zip(jobs, outs)]
    status = "ok" if good else ("diverged" if any(o.status == "diverged" for o in outs) else "failed")
    return Outcome(status, outs[-1].energy, sum(o.iterations for o in outs), good, lines)


_RUNNERS = {"solve": _solve, "certify": _certify, "nonuniqueness": _nonuniq, "sweep": _sweep}


def _finish(cfg, out, oc: Outcome):
    _write_lines(os.path.join(out, "certificate.txt"), oc.lines)
    _write_lines(os.path.join(out, "result.txt"), [oc.result_line])


def run(cfg: RunConfig, out: str, echo=print) -> int:
    """Execute a config into the directory ``out``; returns the exit status."""
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.echo())
    try:
        oc = _RUNNERS[cfg["experiment.kind"]](cfg, out)
    except BlowUpError as exc:
        oc = Outcome("failed", math.nan, 0, False, [f"error in module {exc.module} at step {exc.step}: {exc}"])
        echo(oc.lines[0], file=sys.stderr)
    except (ValueError, model.LegendreError) as exc:
        oc = Outcome("failed", math.nan, 0, False, [f"error: {exc}"])
        echo(oc.lines[0], file=sys.stderr)
    _finish(cfg, out, oc)
    for line in oc.lines:
        echo(line)
    echo(oc.result_line)
    return 0 if oc.certified else 1


def _exponents_cmd(args) -> int:
    if args.config:
        cfg = _load(args.config)
        gc, alpha, N = cfg.spec().gamma_conj, cfg["model.alpha"], cfg["grid.N"]
    else:
        if args.gamma_conj is None or args.alpha is None:
            print("exponents needs --config or both --gamma-conj and --alpha", file=sys.stderr)
            return 2
        gc, alpha, N = args.gamma_conj, args.alpha, args.N
    print(f"regime: {model.classify_regime((gc, alpha), N).regime.value}")
    try:
        table = diagnostics.exponents((gc, alpha), N)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for k in ("p", "r", "eta_gn", "theta", "delta"):
        v = getattr(table, k)
        print(f"{k} = {v} ({float(v):.12g})")
    return 0


def _load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _parser():
    p = argparse.ArgumentParser(prog="torusmfg", description="Mean-field games on the flat torus.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve one configuration"),
                        ("certify", "certify snapshots (or a fresh solve)"),
                        ("nonuniq", "run the two-equilibria experiment"),
                        ("sweep", "solve over a list of horizons or exponents")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="flat 'section.key = value' file")
        sp.add_argument("--out", default=None, help="run directory (default ./runs/<timestamp>)")
    sp = sub.add_parser("exponents", help="print the interpolation exponents")
    sp.add_argument("--config", default=None)
    sp.add_argument("--gamma-conj", type=float, default=None)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--N", type=int, default=1)
    return p


_KIND = {"solve": "solve", "certify": "certify", "nonuniq": "nonuniqueness", "sweep": "sweep"}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "exponents":
        return _exponents_cmd(args)
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    cfg = cfg.with_values(experiment__kind=_KIND[args.command])
    if args.command == "sweep" and not cfg["experiment.values"]:
        print("invalid config:\n  sweep needs experiment.values", file=sys.stderr)
        return 2
    out = args.out or os.path.join("runs", _dt.datetime.now().strftime("%Y%m%d-%H%M%S"))
    return run(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
