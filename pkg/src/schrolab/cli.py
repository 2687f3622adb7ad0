"""Command line driver: scenario files, analysis blocks, result files.

A scenario is an INI file with sections ``[scenario]``, ``[grid]``,
``[initial]``, ``[potential]``, ``[time]`` and any of the analysis blocks
``[observe]``, ``[carleman]``, ``[appell]``, ``[mass]``, ``[chain]``.
Every table is written as CSV (17 significant digits) with a JSON mirror
and whitespace-separated ``.dat`` columns for plotting. Timestamps and wall
times go to ``metadata.json`` only, so CSV bodies are reproducible.

Exit codes: 0 success, 1 validation failure, 2 runtime failure,
3 a check inside a block failed.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import hashlib
import io
import json
import logging
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .appell import check_interval_bounds, random_bound_suite
from .carleman import (SUITE_R, SUITE_SIGMA_MAX, CarlemanConfig, SpaceTimeField, admissible_bump, build_cutoffs,
                       calibrate_c_n, carleman_check, commutator_check, conjugation_residual,
                       random_admissible_field, reference_suite, symmetry_defects)
from .diagnostics import admissible_gamma, mass_identity_residual, proof_chain_diagnostics
from .grid import Grid, GridError, Trajectory, WaveField, make_grid
from .observability import (LowerBoundReport, ObservabilityError, ObservabilityQuery, ScenarioConstants,
                            compute_constants, decay_fit, evaluate_query, free_source, observability_parts,
                            solve_source, t_star, trajectory_source, uniqueness_probe)
from .propagator import (GAIN_LIMIT, PotentialSpec, constant_potential, gaussian_packet, gaussian_well, solve,
                         zero_potential)

log = logging.getLogger("schrolab")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
BLOCKS = ("observe", "carleman", "appell", "mass", "chain")
COMMAND_BLOCK = {"observe": "observe", "carleman-check": "carleman", "appell-check": "appell",
                 "mass-check": "mass", "chain-check": "chain"}


class ValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# -- scenario parsing --


@dataclass
class Scenario:
    name: str
    source: str
    config: configparser.ConfigParser
    lines: dict = field(default_factory=dict)  # (section, key) -> line number
    seed: int = 0

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()[:16]

    def where(self, section: str, key: str | None = None) -> str:
        n = self.lines.get((section, key)) or self.lines.get((section, None))
        return f"line {n}" if n else "missing"

    def has(self, section: str) -> bool:
        return self.config.has_section(section)

    def get(self, section: str, key: str, default=None):
        if not self.config.has_option(section, key):
            return default
        return self.config.get(section, key)

    def num(self, section: str, key: str, default=None, kind=float):
        raw = self.get(section, key)
        if raw is None or not raw.strip():
            return default
        return parse_number(raw, kind)

    def nums(self, section: str, key: str, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        return [parse_number(x) for x in raw.replace(";", ",").split(",") if x.strip()]

    def cnum(self, section: str, key: str, default=0j) -> complex:
        raw = self.get(section, key)
        return default if raw is None else complex(raw.replace(" ", ""))

    def set(self, dotted: str, value) -> "Scenario":
        """A copy with one entry replaced; the source text is regenerated so
        hashes and sweep workers see the override."""
        section, key = dotted.split(".", 1)
        cp = copy.deepcopy(self.config)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))
        buf = io.StringIO()
        cp.write(buf)
        return parse_scenario(buf.getvalue(), self.name)


def parse_number(text: str, kind=float):
    t = text.strip().lower()
    if t in ("inf", "infinity", "+inf"):
        return math.inf
    if t == "pi":
        return math.pi
    return kind(float(t)) if kind is int else kind(t)


def _line_map(text: str) -> dict:
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = n
        elif section and "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = n
    return out


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    return parse_scenario(text, default_name=Path(path).stem)


def parse_scenario(text: str, default_name: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError([f"parse error: {exc}"]) from exc
    name = cp.get("scenario", "name", fallback=default_name)
    seed = int(cp.get("scenario", "seed", fallback="0"))
    return Scenario(name, text, cp, _line_map(text), seed)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("schrolab") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".ini")}


def resolve_config(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if arg in bundled:
        return bundled[arg]
    raise ValidationError([f"config {arg!r} not found (bundled: {', '.join(sorted(bundled))})"])


# -- builders --


def build_grid(scn: Scenario) -> Grid:
    return make_grid(scn.num("grid", "dim", 1, int), scn.num("grid", "half_width"), scn.num("grid", "points", kind=int))


def build_initial(scn: Scenario, grid: Grid) -> WaveField:
    kind = scn.get("initial", "kind", "gaussian")
    if kind == "gaussian":
        return gaussian_packet(grid, center=scn.nums("initial", "center"), width=scn.num("initial", "width", 1.0),
                               momentum=scn.nums("initial", "momentum"), amplitude=scn.cnum("initial", "amplitude", 1.0))
    if kind == "sum":
        centers = scn.nums("initial", "centers")
        widths = scn.nums("initial", "widths", [1.0] * len(centers))
        momenta = scn.nums("initial", "momenta", [0.0] * len(centers))
        vals = sum(gaussian_packet(grid, center=c, width=w, momentum=p).values
                   for c, w, p in zip(centers, widths, momenta))
        return WaveField(grid, vals)
    if kind == "zero":
        return WaveField(grid, np.zeros(grid.shape, complex))
    if kind == "file":
        return WaveField(grid, np.load(scn.get("initial", "path")))
    raise ValidationError([f"[initial] kind {kind!r} unknown ({scn.where('initial', 'kind')})"])


def build_potential(scn: Scenario) -> PotentialSpec:
    kind = scn.get("potential", "kind", "zero")
    if kind == "zero":
        return zero_potential()
    if kind == "constant":
        return constant_potential(scn.cnum("potential", "value"))
    if kind == "gaussian_well":
        return gaussian_well(scn.cnum("potential", "v0"), scn.num("potential", "width", 1.0),
                             scn.num("potential", "modulation_frequency", 0.0),
                             center=scn.nums("potential", "center"))
    raise ValidationError([f"[potential] kind {kind!r} unknown ({scn.where('potential', 'kind')})"])


def _imag_bound(V: PotentialSpec) -> float:
    if V.is_zero:
        return 0.0
    if V.kind == "constant":
        return abs(V.params["c"].imag)
    return V.sup_bound


# -- validation --


def validate(scn: Scenario, blocks) -> None:
    problems = []

    def bad(section, key, msg):
        problems.append(f"[{section}] {key}: {msg} ({scn.where(section, key)})")

    needs_solve = "simulate" in blocks or any(b in blocks for b in ("mass", "observe", "chain"))
    grid = None
    if needs_solve or "observe" in blocks:
        try:
            grid = build_grid(scn)
        except (GridError, TypeError, ValueError) as exc:
            bad("grid", "points", str(exc))
        try:
            V = build_potential(scn)
        except (ValidationError, ValueError) as exc:
            bad("potential", "kind", str(exc))
            V = None
        dt, t_end = scn.num("time", "dt"), scn.num("time", "t_end")
        if dt is None or not dt > 0:
            bad("time", "dt", "must be positive")
        if t_end is None or not t_end > 0:
            bad("time", "t_end", "must be positive")
        if dt and t_end and dt > 0 and abs(round(t_end / dt) * dt - t_end) > 1e-9 * t_end:
            bad("time", "dt", f"does not divide t_end = {t_end}")
        if V is not None and dt and dt * _imag_bound(V) > GAIN_LIMIT:
            bad("time", "dt", f"dt * sup|Im V| = {dt * _imag_bound(V):.3g} exceeds {GAIN_LIMIT}")
        if grid is not None:
            try:
                build_initial(scn, grid)
            except (ValidationError, ValueError, TypeError, GridError) as exc:
                bad("initial", "kind", str(exc))

    if "observe" in blocks:
        if not scn.has("observe"):
            bad("observe", "", "section missing")
        else:
            R0, M = scn.num("observe", "R0"), scn.num("observe", "M", math.inf)
            if R0 is None or not R0 > 0:
                bad("observe", "r0", "R0 must be positive")
            elif M < 4 * R0 + 1:
                bad("observe", "m", f"M = {M} violates the hypothesis M >= 4 R0 + 1 = {4 * R0 + 1}")
            bf = scn.num("observe", "band_factor", 4.0)
            ts = scn.nums("observe", "ts", [])
            if grid is not None and R0:
                for rho in scn.nums("observe", "rhos", []):
                    for t in ts:
                        cells = 2 * bf * rho * math.sqrt(t) / grid.spacing
                        if cells < 8:
                            bad("observe", "ts", f"band at rho={rho}, t={t} spans {cells:.2f} cells, need 8")
    if "carleman" in blocks and scn.has("carleman"):
        if scn.num("carleman", "R", SUITE_R) < 2:
            bad("carleman", "r", "R must be at least 2")
    if "appell" in blocks and scn.has("appell"):
        for gm in scn.nums("appell", "gammas", []):
            if not gm > 16:
                bad("appell", "gammas", f"gamma = {gm} must exceed 16")
    if "chain" in blocks and scn.has("chain"):
        if scn.num("chain", "R0") is None:
            bad("chain", "r0", "R0 required")
        else:
            M = scn.num("chain", "M", math.inf)
            if M < 4 * scn.num("chain", "R0") + 1:
                bad("chain", "m", "violates the hypothesis M >= 4 R0 + 1")
    if problems:
        raise ValidationError(problems)


# -- tables --


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"{self.name}: row has {len(row)} fields for {len(self.columns)} columns")
        self.rows.append(list(row))


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.16e" % float(x)
    return str(x).replace(",", ";")


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_table(out: Path, prefix: str, table: Table) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    base = out / f"{prefix}_{table.name}"
    lines = [",".join(table.columns)] + [",".join(fmt(v) for v in row) for row in table.rows]
    base.with_suffix(".csv").write_text("\n".join(lines) + "\n")
    recs = [{c: _jsonable(v) for c, v in zip(table.columns, row)} for row in table.rows]
    base.with_suffix(".json").write_text(json.dumps({"columns": table.columns, "rows": recs}, indent=1) + "\n")
    numeric = [i for i, c in enumerate(table.columns)
               if table.rows and all(isinstance(r[i], (int, float, np.number)) and not isinstance(r[i], bool)
                                     for r in table.rows)]
    if len(numeric) >= 2:
        body = ["# " + " ".join(table.columns[i] for i in numeric)]
        body += [" ".join("%.16e" % float(r[i]) for i in numeric) for r in table.rows]
        base.with_suffix(".dat").write_text("\n".join(body) + "\n")
    return base.with_suffix(".csv")


@dataclass
class BlockResult:
    block: str
    tables: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)  # name -> bool
    error: str | None = None
    wall_time: float = 0.0

    @property
    def failed_checks(self):
        return [k for k, v in self.checks.items() if v is False]


# -- analysis blocks --


class Context:
    """Lazily built shared state for one scenario run."""

    def __init__(self, scn: Scenario):
        self.scn = scn
        self._traj = None

    @property
    def grid(self) -> Grid:
        return build_grid(self.scn)

    @property
    def V(self) -> PotentialSpec:
        return build_potential(self.scn)

    @property
    def u0(self) -> WaveField:
        return build_initial(self.scn, self.grid)

    @property
    def trajectory(self) -> Trajectory:
        if self._traj is None:
            s = self.scn
            self._traj = solve(self.u0, self.V, None, s.num("time", "t_end"), s.num("time", "dt"),
                               store_every=s.num("time", "store_every", 1, int))
        return self._traj


def block_simulate(ctx: Context) -> BlockResult:
    tr = ctx.trajectory
    g = tr.grid
    tab = Table("trajectory", ["t", "mass", "max_abs"])
    mass = np.real(np.sum(np.abs(tr.values) ** 2, axis=g.fft_axes)) * g.cell_volume
    for t, m, a in zip(tr.times, mass, np.max(np.abs(tr.values).reshape(len(tr), -1), axis=1)):
        tab.add(float(t), float(m), float(a))
    return BlockResult("simulate", [tab])


def _obs_constants(ctx: Context) -> ScenarioConstants:
    s = ctx.scn
    return compute_constants(ctx.trajectory, None if ctx.V.is_zero else ctx.V, s.num("observe", "R0"),
                             s.num("observe", "M", math.inf))


def _obs_source(ctx: Context):
    kind = ctx.scn.get("observe", "source", "auto")
    if kind == "auto":
        kind = "free" if ctx.V.is_zero else "solve"
    if kind == "free":
        if not ctx.V.is_zero:
            raise ObservabilityError("source 'free' needs a zero potential")
        return free_source(ctx.u0)
    if kind == "solve":
        return solve_source(ctx.u0, ctx.V)
    if kind == "trajectory":
        return trajectory_source(ctx.trajectory)
    raise ObservabilityError(f"unknown source {kind!r}")


def block_observe(ctx: Context) -> BlockResult:
    s = ctx.scn
    C = _obs_constants(ctx)
    res = BlockResult("observe")
    consts = Table("constants", ["c0", "R0", "M", "A", "L", "t_star"])
    if C.flagged:
        consts.add(C.c0, C.R0, C.M, C.A, C.L, math.nan)
        res.tables.append(consts)
        res.checks["c0_positive"] = None
        return res
    ts_ = t_star(C)
    consts.add(C.c0, C.R0, C.M, C.A, C.L, ts_)
    res.tables.append(consts)
    src = _obs_source(ctx)
    slices = s.num("observe", "slices", 257, int)
    bf = s.num("observe", "band_factor", 4.0)

    fit_t = s.num("observe", "fit_t_fraction", 0.9) * ts_
    fit_rhos = s.nums("observe", "fit_rhos", [])
    c_fit = s.num("observe", "c_fit")
    if fit_rhos:
        samples = [(r, fit_t, evaluate_query(src, ObservabilityQuery(r, fit_t, bf), slices)) for r in fit_rhos]
        fit = decay_fit(samples)
        ftab = Table("fit", ["t_fit", "slope", "intercept", "r2", "c_emp"])
        ftab.add(fit_t, fit.slope, fit.intercept, fit.r2, fit.c_emp)
        res.tables.append(ftab)
        res.checks["fit_r2>=0.99"] = fit.r2 >= 0.99
        res.checks["fit_slope<0"] = fit.slope < 0
        if c_fit is None:
            c_fit = fit.c_emp
    c_fit = 0.0 if c_fit is None else c_fit

    ts = list(s.nums("observe", "ts", [])) + [f * ts_ for f in s.nums("observe", "t_fractions", [])]
    jt = Table("J", ["rho", "t", "J", "J_mass", "J_gradient", "log_margin", "pass"])
    all_pass = True
    for t in ts:
        for rho in s.nums("observe", "rhos", []):
            q = ObservabilityQuery(rho, t, bf)
            a, b = q.time_window
            traj = src(a, b, slices)
            jm, jg = observability_parts(traj, q)
            if t < ts_ and C.R0 <= rho <= C.M:
                rep = LowerBoundReport(rho, t, jm + jg, c_fit, C.c0)
                jt.add(rho, t, jm + jg, jm, jg, rep.log_margin, bool(rep.passed))
                all_pass &= bool(rep.passed)
            else:  # outside the hypotheses: J only
                jt.add(rho, t, jm + jg, jm, jg, math.nan, None)
    res.tables.append(jt)
    if jt.rows and s.get("observe", "require_lower_bound", "yes").lower() in ("1", "yes", "true"):
        res.checks["lower_bound"] = all_pass

    probe_rho = s.num("observe", "probe_rho")
    if probe_rho is not None and c_fit > 0:
        pt = Table("probe", ["mode", "c", "sample", "log_value", "classification"])
        tf = s.nums("observe", "probe_t_fractions", [0.5, 0.25, 0.125, 0.0625])
        for mult in s.nums("observe", "probe_c_multiples", [2.0, 0.25]):
            pr = uniqueness_probe(src, mult * c_fit, "t_to_zero", [f * ts_ for f in tf], rho=probe_rho,
                                  band_factor=bf, slices=slices)
            for x, lv in zip(pr.samples, pr.log_values):
                pt.add("t_to_zero", pr.c, float(x), float(lv), pr.classification)
        res.tables.append(pt)
    return res


def block_carleman(ctx: Context) -> BlockResult:
    s = ctx.scn
    res = BlockResult("carleman")
    points = s.num("carleman", "points", 2048, int)
    slices = s.num("carleman", "slices", 401, int)
    fields = reference_suite(points, slices)
    cut = build_cutoffs(SUITE_R)
    sigma_max = s.num("carleman", "sigma_max", SUITE_SIGMA_MAX)
    cal = calibrate_c_n(fields, SUITE_R, cut, sigma_max, c_min=s.num("carleman", "c_min", 1e-4))
    ct = Table("calibration", ["c_n", "R", "sigma_max", "sup_dphi", "sup_d2phi"])
    ct.add(math.nan if cal.c_n is None else cal.c_n, SUITE_R, sigma_max, cut.sup_dphi, cut.sup_d2phi)
    res.tables.append(ct)
    res.checks["calibrated"] = cal.c_n is not None
    if cal.c_n is not None:
        c = cal.c_n
        tab = Table("inequality", ["field", "sigma", "log_lhs", "log_rhs", "log_ratio", "pass"])
        ok, mono = True, True
        for i, f in enumerate(fields):
            flags = []
            for m in (1, 2, 4):
                r = carleman_check(f, CarlemanConfig(SUITE_R, m * c * SUITE_R**2, cut, c))
                tab.add(i, r.sigma, r.log_lhs, r.log_rhs, r.log_ratio, r.passed)
                flags.append(r.passed)
            ok &= all(flags)
            mono &= flags == sorted(flags)  # a pass is never followed by a fail
        res.tables.append(tab)
        res.checks["inequality_all_pass"] = ok
        res.checks["monotone_in_sigma"] = mono
    n_alg = s.num("carleman", "algebra_fields", 20, int)
    if n_alg:
        rng = np.random.default_rng(s.seed)
        g = make_grid(1, 8.0, s.num("carleman", "algebra_points", 2048, int))
        times = np.linspace(0, 1, s.num("carleman", "algebra_slices", 201, int))
        alg = Table("algebra", ["field", "sigma", "conjugation_rel", "S_sym_rel", "A_antisym_rel"])
        worst = 0.0
        for i in range(n_alg):
            sigma = float(rng.uniform(0.25, 1.0))
            cfg = CarlemanConfig(SUITE_R, sigma, cut, sigma / SUITE_R**2)
            f = random_admissible_field(g, times, SUITE_R, rng)
            h = random_admissible_field(g, times, SUITE_R, rng)
            conj = conjugation_residual(f, cfg)["rel"]
            sym = symmetry_defects(f, h, cfg)
            alg.add(i, sigma, conj, sym["S"], sym["A"])
            worst = max(worst, conj, sym["S"], sym["A"])
        res.tables.append(alg)
        res.checks["algebra<=1e-8"] = worst <= 1e-8
    if s.get("carleman", "commutator", "yes").lower() in ("1", "yes", "true"):
        res.tables.append(commutator_table(cut))
    return res


COMMUTATOR_FIELDS = {"static": (-4.4, 1.2, 0.5, 0.08), "moving": (3.5, 1.2, 0.5, 0.3)}


def commutator_table(cut, levels=((512, 401), (1024, 801), (2048, 1601))) -> Table:
    """Stated vs derived commutator weight coefficient under two refinements.

    ``rel_stated`` uses the coefficient ``4 sigma^2/R^4`` on the weight term,
    ``rel_derived`` uses ``8 sigma^2/R^4``; a value that stays flat under
    refinement is a genuine mismatch, one that shrinks is discretization.
    """
    comm = Table("commutator", ["window", "points", "slices", "rel_stated", "rel_derived", "norm_direct"])
    for label, (x0, r, tc, tr) in COMMUTATOR_FIELDS.items():
        for pts, sl in levels:
            gg = make_grid(1, 8.0, pts)
            tt = np.linspace(0, 1, sl)
            f = SpaceTimeField(gg, tt, admissible_bump(gg, tt, x0, r, tc, tr, momentum=0.7))
            rep = commutator_check(f, CarlemanConfig(SUITE_R, 1.0, cut, 0.01))
            comm.add(label, pts, sl, rep["rel_stated"], rep["rel_derived"], rep["norm_direct"])
    return comm


def block_appell(ctx: Context) -> BlockResult:
    s = ctx.scn
    res = BlockResult("appell")
    samples = s.num("appell", "samples", 10000, int)
    tab = Table("bounds", ["gamma", "check", "pass", "slack"])
    for gm in s.nums("appell", "gammas", [16.0001, 1e6]):
        rep = check_interval_bounds(gm, samples)
        for name, (ok, slack) in rep.checks.items():
            tab.add(gm, name, ok, slack)
        res.checks[f"bounds_gamma={gm:g}"] = rep.passed
    n = s.num("appell", "random_samples", 10000, int)
    if n:
        rep = random_bound_suite(n, np.random.default_rng(s.seed))
        for name, (ok, slack) in rep.checks.items():
            tab.add(math.nan, name, ok, slack)
        res.checks["random_suite"] = rep.passed
    res.tables.append(tab)
    return res


def block_mass(ctx: Context) -> BlockResult:
    s = ctx.scn
    res = BlockResult("mass")
    tr = ctx.trajectory
    V = None if ctx.V.is_zero else ctx.V
    tab = Table("identity", ["weight", "t", "residual"])
    tol = s.num("mass", "tolerance")
    weights = {"none": None, "box": 1.0}
    scale = s.num("mass", "gaussian_weight_scale")
    if scale:
        weights["gaussian"] = lambda *xs: np.exp(-sum(x**2 for x in xs) / scale**2)
    for name in (s.get("mass", "weights", "box,none")).split(","):
        name = name.strip()
        r = mass_identity_residual(tr, V, weights[name])
        tab.add(name, float(tr.times[-1]), r)
        if tol is not None and name == "box":
            res.checks["box_residual<=tol"] = r <= tol
    res.tables.append(tab)
    return res


def block_chain(ctx: Context) -> BlockResult:
    s = ctx.scn
    res = BlockResult("chain")
    V = None if ctx.V.is_zero else ctx.V
    R0, M = s.num("chain", "R0"), s.num("chain", "M", math.inf)
    C = compute_constants(ctx.trajectory, V, R0, M)
    gamma = s.num("chain", "gamma")
    if gamma is None:
        gamma = admissible_gamma(C) * s.num("chain", "gamma_factor", 1.01)
    g = make_grid(ctx.grid.dim, ctx.grid.half_width, s.num("chain", "points", kind=int))
    dt = s.num("chain", "dt")
    hi2 = 3 / (gamma + 3)
    n = int(math.ceil(hi2 / dt))
    tr = solve(build_initial(s, g), V, None, n * dt, dt)
    rep = proof_chain_diagnostics(tr, gamma, C, V=V, c_n=s.num("chain", "c_n"))
    tab = Table("quantities", ["name", "value", "bound", "pass"])
    q = rep.quantities
    for name, ok in rep.passed.items():
        val = q.get(name, rep.extras.get(name))
        tab.add(name, val, rep.bound_rhs[name], ok)
        res.checks[name] = ok
    res.tables.append(tab)
    ex = Table("extras", ["name", "value"])
    for k, v in rep.extras.items():
        ex.add(k, float(v))
    res.tables.append(ex)
    return res


RUNNERS = {"simulate": block_simulate, "observe": block_observe, "carleman": block_carleman,
           "appell": block_appell, "mass": block_mass, "chain": block_chain}


def run_scenario(scn: Scenario, blocks, out: Path | None = None) -> list[BlockResult]:
    """Validate everything, then run each block; block errors do not stop siblings."""
    validate(scn, blocks)
    ctx = Context(scn)
    results = []
    for b in blocks:
        t0 = time.perf_counter()
        try:
            r = RUNNERS[b](ctx)
        except Exception as exc:  # recorded per block
            log.error("block %s failed: %s", b, exc)
            log.debug("traceback", exc_info=True)
            r = BlockResult(b, error=f"{type(exc).__name__}: {exc}")
        r.wall_time = time.perf_counter() - t0
        results.append(r)
    if out is not None:
        write_results(scn, results, out)
    return results


def write_results(scn: Scenario, results, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        for tab in r.tables:
            write_table(out, f"{scn.name}_{r.block}", tab)
        checks = Table("checks", ["check", "status"])
        for k, v in r.checks.items():
            checks.add(k, "skip" if v is None else ("pass" if v else "fail"))
        if r.error:
            checks.add("error", r.error)
        write_table(out, f"{scn.name}_{r.block}", checks)
    append_records(out, [make_record(scn, r) for r in results])
    meta = {"scenario": scn.name, "config_hash": scn.digest, "version": __version__, "seed": scn.seed,
            "finished": datetime.now(timezone.utc).isoformat(),
            "wall_time": {r.block: r.wall_time for r in results}}
    (out / "metadata.json").write_text(json.dumps(meta, indent=1) + "\n")


def make_record(scn: Scenario, r: BlockResult) -> dict:
    params = dict(scn.config.items(r.block)) if scn.has(r.block) else {}
    headline = SWEEP_OUTPUTS[r.block](r) if r.block in SWEEP_OUTPUTS and not r.error else None
    return {"scenario": scn.name, "operation": r.block, "parameters": params,
            "output": _jsonable(headline), "checks": r.checks, "error": r.error,
            "wall_time": r.wall_time, "config_hash": scn.digest, "version": __version__}


def append_records(out: Path, records) -> None:
    """Records are only ever appended."""
    out.mkdir(parents=True, exist_ok=True)
    with (out / "records.jsonl").open("a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, default=_jsonable) + "\n")


def exit_code(results) -> int:
    if any(r.error for r in results):
        return EXIT_RUNTIME
    if any(r.failed_checks for r in results):
        return EXIT_CHECK
    return EXIT_OK


# -- sweep --


def _first(r: BlockResult, table: str, col: str):
    for t in r.tables:
        if t.name == table and t.rows:
            return t.rows[0][t.columns.index(col)]
    return math.nan


# headline scalar per block, reported in the sweep CSV
SWEEP_OUTPUTS = {
    "observe": lambda r: _first(r, "J", "J"),
    "appell": lambda r: min((row[3] for row in r.tables[0].rows), default=math.nan),
    "mass": lambda r: _first(r, "identity", "residual"),
    "chain": lambda r: _first(r, "quantities", "value"),
    "carleman": lambda r: _first(r, "calibration", "c_n"),
}


def _sweep_one(args):
    source, name, block, axis, value = args
    scn = parse_scenario(source, name).set(axis, value)
    try:
        validate(scn, [block])
    except ValidationError as exc:
        return value, None, "; ".join(exc.problems)
    r = run_scenario(scn, [block])[0]
    return value, r, r.error


def sweep(scn: Scenario, block: str, axis: str, values, threads: int = 1) -> Table:
    """One row per value, in input order; failures are recorded, not raised."""
    jobs = [(scn.source, scn.name, block, axis, v) for v in values]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(_sweep_one, jobs))
    else:
        outs = [_sweep_one(j) for j in jobs]
    tab = Table("sweep", ["value", "status", "checks_passed", "checks_failed", "output", "error"])
    records = []
    for value, r, err in outs:
        rec = {"scenario": scn.name, "operation": f"sweep:{block}", "parameters": {axis: value},
               "config_hash": scn.digest, "version": __version__, "error": err,
               "checks": r.checks if r is not None else {}, "wall_time": r.wall_time if r is not None else 0.0}
        records.append(rec)
        if r is None or err:
            tab.add(float(value), "error", 0, 0, math.nan, err or "")
            continue
        out = SWEEP_OUTPUTS[block](r)
        npass = sum(1 for v in r.checks.values() if v)
        nfail = len(r.failed_checks)
        tab.add(float(value), "fail" if nfail else "ok", npass, nfail, float(out), "")
        rec["output"] = _jsonable(out)
    tab.records = records
    return tab


# -- entry point --


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _global_flags(p, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="scenario file or bundled scenario name")
    p.add_argument("--out", default=d("results"), help="output directory")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes for sweep")
    p.add_argument("--seed", type=int, default=d(None), help="seed for randomized suites")
    p.add_argument("--set", action="append", default=d([]), metavar="SECTION.KEY=VALUE",
                   help="override a config entry (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="schrolab", description=__doc__.split("\n")[0])
    _global_flags(p, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)  # also accepted after the subcommand
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="solve and run every analysis block in the config")
    for c in COMMAND_BLOCK:
        sub.add_parser(c, parents=[common], help=f"run the [{COMMAND_BLOCK[c]}] block")
    sw = sub.add_parser("sweep", parents=[common], help="vary one numeric parameter")
    sw.add_argument("--block", required=True, choices=BLOCKS)
    sw.add_argument("--axis", required=True, help="section.key, e.g. observe.rhos")
    sw.add_argument("--values", default="", help="comma-separated values")
    sub.add_parser("list", parents=[common], help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "list":
        for name, path in sorted(bundled_scenarios().items()):
            print(f"{name}\t{path}")
        return EXIT_OK
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        scn = load_scenario(resolve_config(args.config))
        for item in args.set:
            key, _, value = item.partition("=")
            if "." not in key:
                raise ValidationError([f"--set {item!r}: expected SECTION.KEY=VALUE"])
            scn = scn.set(key.strip(), value.strip())
        if args.seed is not None:
            scn = scn.set("scenario.seed", args.seed)
        out = Path(args.out)
        if args.command == "sweep":
            values = [parse_number(v) for v in args.values.split(",") if v.strip()]
            tab = sweep(scn, args.block, args.axis, values, args.threads)
            tab.name = f"sweep_{args.axis.replace('.', '_')}"
            write_table(out, scn.name, tab)
            append_records(out, tab.records)
            print(",".join(tab.columns))
            for row in tab.rows:
                print(",".join(fmt(v) for v in row))
            return EXIT_RUNTIME if any(r[1] == "error" for r in tab.rows) else EXIT_OK
        if args.command == "simulate":
            blocks = (["simulate"] if scn.has("grid") else []) + [b for b in BLOCKS if scn.has(b)]
        else:
            blocks = [COMMAND_BLOCK[args.command]]
        results = run_scenario(scn, blocks, out)
    except ValidationError as exc:
        for prob in exc.problems:
            print(f"validation: {prob}", file=sys.stderr)
        return EXIT_VALIDATION
    for r in results:
        status = "ERROR " + r.error if r.error else ("FAIL " + ",".join(r.failed_checks) if r.failed_checks else "ok")
        print(f"{scn.name} {r.block}: {status} ({r.wall_time:.2f}s)")
    return exit_code(results)


if __name__ == "__main__":
    sys.exit(main())
