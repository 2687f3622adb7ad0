"""Acceptance suite: one test per headline criterion, one PASS/FAIL line each.

Every test records its line through :func:`report` before asserting, so
the lines appear in ``pytest -v`` output and again in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from manufactured import TRIPLES
from schrolab.appell import AppellParams, appell_transform, random_bound_suite, transform_forcing, \
    transform_potential
from schrolab.carleman import (SUITE_R, SUITE_SIGMA_MAX, CarlemanConfig, build_cutoffs, calibrate_c_n,
                               carleman_check, conjugation_residual, random_admissible_field, reference_suite,
                               symmetry_defects)
from schrolab.cli import commutator_table, main
from schrolab.diagnostics import admissible_gamma, mass_identity_residual, proof_chain_diagnostics
from schrolab.grid import WaveField, make_grid
from schrolab.observability import (ObservabilityQuery, LowerBoundReport, compute_constants, decay_fit,
                                    evaluate_query, free_source, t_star, uniqueness_probe)
from schrolab.propagator import (free_propagate, function_potential, gaussian_packet, gaussian_well, l2_norm,
                                 schrodinger_residual, solve, zero_potential)

# same quadrature oracle as the propagator unit tests
FREE_AT_T1 = {
    0.0: 0.77688698701501865 - 0.32179712645279131j,
    1.5: 0.63080396177945009 - 0.070595049218849667j,
    -3.0: 0.20301250683034275 + 0.18252240544644931j,
}


@pytest.fixture
def report(request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit


def test_solver_order(report):
    t0 = time.perf_counter()
    g = make_grid(1, 20.0, 512)
    u0 = gaussian_packet(g, width=1.0, momentum=1.0)
    V = gaussian_well(2.0 + 1.0j, 2.0, 3.0, center=(1.0,))
    ref = solve(u0, V, None, 0.5, 1.25e-4, store_every=4000).values[-1]
    errs = [l2_norm(solve(u0, V, None, 0.5, dt, store_every=int(round(0.5 / dt))).values[-1] - ref, g)
            for dt in (4e-3, 2e-3, 1e-3)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    wall = time.perf_counter() - t0
    ok = all(3.4 <= r <= 4.6 for r in ratios) and wall < 120
    assert report("solver order", ok, f"ratios {ratios[0]:.3f}, {ratios[1]:.3f}; {wall:.1f}s")


def test_free_propagator_oracle(report):
    g = make_grid(1, 24.0, 1024)
    x = g.axis
    exact = (1 + 1j) ** -0.5 * np.exp(-x**2 / (4 * (1 + 1j)))
    u0 = WaveField(g, np.exp(-x**2 / 4))
    pointwise = float(np.max(np.abs(free_propagate(u0, 1.0).values - exact)))
    oracle = max(abs(free_propagate(u0, 1.0).values[int(np.argmin(np.abs(x - p)))] - v)
                 for p, v in FREE_AT_T1.items())
    l2 = l2_norm(solve(u0, None, None, 1.0, 1e-3, store_every=1000).values[-1] - exact, g)
    ok = pointwise <= 1e-10 and oracle <= 1e-10 and l2 <= 1e-8
    assert report("free propagator", ok, f"pointwise {pointwise:.2e}, quadrature points {oracle:.2e}, "
                                         f"solve L2 {l2:.2e}")


def test_appell_closure(report):
    orders = []
    for tri in TRIPLES:
        errs = []
        for points, dt in ((128, 4e-3), (256, 2e-3)):
            tr = tri.trajectory(points, dt)
            p = AppellParams(4.0)
            ut = appell_transform(tr, p, times=np.arange(0.1, 0.9 + 1e-12, dt))
            r = schrodinger_residual(ut, transform_potential(tri.potential(), p),
                                     transform_forcing(tri.forcing(), p))
            errs.append(float(np.max(l2_norm(r, tr.grid))))
        orders.append(math.log2(errs[0] / errs[1]))
    tr = solve(gaussian_packet(make_grid(1, 16.0, 128), width=1.0, momentum=0.5), None, None, 1.0, 1e-2)
    ident = float(np.max(np.abs(appell_transform(tr, AppellParams(1.0)).values - tr.values)))
    ok = min(orders) >= 1.8 and ident <= 1e-12
    assert report("appell closure", ok, f"orders {', '.join(f'{o:.2f}' for o in orders)}; identity {ident:.1e}")


def test_bound_suite(report):
    t0 = time.perf_counter()
    rep = random_bound_suite(10_000, np.random.default_rng(2024))
    wall = time.perf_counter() - t0
    ok_ident, slack = rep.checks["identity_sqrt(g)alpha(t(s))"]
    ok = rep.passed and ok_ident and wall < 5
    failed = [k for k, (v, _) in rep.checks.items() if not v]
    assert report("scalar bound suite", ok, f"{len(rep.checks)} checks, failed {failed or 'none'}; "
                                            f"identity error {1e-12 - slack:.1e}; {wall:.2f}s")


def random_potential(rng, wells=3):
    a = rng.normal(size=wells) + 1j * rng.uniform(0, 1, wells)
    c = rng.uniform(-4, 4, wells)
    w = rng.uniform(1, 3, wells)
    om = rng.uniform(0, 4, wells)

    def V(coords, t):
        x = coords[0]
        return sum(a[k] * np.exp(-(x - c[k]) ** 2 / w[k] ** 2) * np.cos(om[k] * t) for k in range(wells))

    return function_potential(V, float(np.sum(np.abs(a))))


def test_mass_identity(report):
    g = make_grid(1, 20.0, 1024)
    u0 = gaussian_packet(g, width=1.0, momentum=0.5)
    free = solve(u0, zero_potential(), None, 1.0, 1e-3)
    cons = max(mass_identity_residual(free, None, w) for w in (None, 1.0))
    V = random_potential(np.random.default_rng(7))
    res = [mass_identity_residual(solve(u0, V, None, 0.5, dt), V, 1.0) for dt in (2e-3, 1e-3)]
    ratio = res[0] / res[1]
    ok = cons <= 1e-8 and 3.4 <= ratio <= 4.6
    assert report("mass identity", ok, f"V=0 residual {cons:.1e}; random V halving ratio {ratio:.3f}")


def test_carleman_algebra(report, tmp_path):
    cut = build_cutoffs(SUITE_R)
    rng = np.random.default_rng(2024)
    g = make_grid(1, 8.0, 2048)
    times = np.linspace(0, 1, 201)
    worst = 0.0
    for _ in range(20):
        sigma = float(rng.uniform(0.25, 1.0))
        cfg = CarlemanConfig(SUITE_R, sigma, cut, sigma / SUITE_R**2)
        f = random_admissible_field(g, times, SUITE_R, rng)
        h = random_admissible_field(g, times, SUITE_R, rng)
        sym = symmetry_defects(f, h, cfg)
        worst = max(worst, conjugation_residual(f, cfg)["rel"], sym["S"], sym["A"])
    comm = commutator_table(cut, levels=((512, 401), (1024, 801)))
    rows = {(r[0], r[1]): r for r in comm.rows}
    static = [rows[("static", n)] for n in (512, 1024)]
    stated_flat = abs(static[1][3] / static[0][3] - 1) < 0.05
    derived_falls = static[1][4] < static[0][4] / 8
    ok = worst <= 1e-8 and stated_flat and derived_falls
    detail = (f"worst relative defect {worst:.1e}; commutator weight term (static window) "
              f"stated-coefficient mismatch {static[0][3]:.3f} -> {static[1][3]:.3f} (persistent), "
              f"derived {static[0][4]:.1e} -> {static[1][4]:.1e}")
    assert report("carleman algebra", ok, detail)


def test_carleman_inequality(report):
    t0 = time.perf_counter()
    cut = build_cutoffs(SUITE_R)
    fields = reference_suite()
    cal = calibrate_c_n(fields, SUITE_R, cut, SUITE_SIGMA_MAX)
    c = cal.c_n
    flags = []
    for f in fields:
        flags.append([carleman_check(f, CarlemanConfig(SUITE_R, m * c * SUITE_R**2, cut, c)).passed
                      for m in (1, 2, 4)])
    wall = time.perf_counter() - t0
    n_pass = sum(map(sum, flags))
    mono = all(fl == sorted(fl) for fl in flags)
    ok = c is not None and n_pass == 30 and mono and wall < 180
    assert report("carleman inequality", ok, f"c_n = {c:.6g}; {n_pass}/30 pass; monotone {mono}; {wall:.1f}s")


@pytest.fixture(scope="module")
def free_gaussian():
    g = make_grid(1, 20.0, 16384)
    u0 = WaveField(g, np.exp(-g.axis**2 / 4))
    C = compute_constants(solve(u0, None, None, 0.1, 0.05), None, 2.0, 9.0)
    src = free_source(u0)
    ts = t_star(C)
    t_fit = 0.9 * ts
    samples = [(r, t_fit, evaluate_query(src, ObservabilityQuery(r, t_fit))) for r in np.linspace(2.0, 4.0, 8)]
    return C, src, ts, decay_fit(samples)


def test_observability(report, free_gaussian):
    C, src, ts, fit = free_gaussian
    c_fit = fit.c_emp
    margins = []
    for fr in (0.25, 0.2, 0.1, 0.05):
        for m in (1.1, 1.3, 1.5, 1.7, 1.9):
            rho, t = C.R0 * m, fr * ts
            J = evaluate_query(src, ObservabilityQuery(rho, t))
            margins.append(LowerBoundReport(rho, t, J, c_fit, C.c0).log_margin)
    n_pass = sum(m >= 0 for m in margins)
    ok = fit.r2 >= 0.99 and fit.slope < 0 and n_pass == 20
    assert report("observability", ok, f"r2 {fit.r2:.5f}, slope {fit.slope:.3e}; held-out {n_pass}/20 pass, "
                                       f"min log margin {min(margins):.2f}")


def probe_times(ts):
    return [f * ts for f in (0.5, 0.25, 0.125, 0.0625)]


def test_uniqueness_zero_and_growth(report, free_gaussian):
    C, src, ts, fit = free_gaussian
    g = make_grid(1, 20.0, 16384)
    zero = free_source(WaveField(g, np.zeros(g.shape)))
    z1 = uniqueness_probe(zero, fit.c_emp, "t_to_zero", probe_times(ts), rho=C.R0).classification
    z2 = uniqueness_probe(zero, fit.c_emp, "rho_to_inf", [2.0, 2.5, 3.0, 3.5], t=0.5 * ts).classification
    grow = uniqueness_probe(src, 2 * fit.c_emp, "t_to_zero", probe_times(ts), rho=C.R0).classification
    ok = z1 == "->0" and z2 == "->0" and grow == "->inf"
    assert report("uniqueness probes (zero, 2 c_emp)", ok, f"zero: {z1} / {z2}; gaussian at 2 c_emp: {grow}")


@pytest.mark.xfail(strict=True, reason="unattainable as stated: J decays slower than exp(-c_emp rho^2/(4t)) "
                                       "as t -> 0 at fixed rho; see the decisions ledger")
def test_uniqueness_quarter_constant(report, free_gaussian):
    C, src, ts, fit = free_gaussian
    pr = uniqueness_probe(src, fit.c_emp / 4, "t_to_zero", probe_times(ts), rho=C.R0)
    steps = ", ".join(f"{v:.3g}" for v in pr.log_values)
    ok = pr.classification == "->0"
    assert report("uniqueness probe (c_emp/4)", ok, f"classified {pr.classification}; log values {steps}")


def test_proof_chain(report):
    V = gaussian_well(0.5 + 0.5j, 2.0, 3.0)
    g = make_grid(1, 20.0, 1024)
    C = compute_constants(solve(gaussian_packet(g, width=1.0), V, None, 1.0, 1e-3), V, 4.0, 17.0)
    gamma = 1.01 * admissible_gamma(C)
    dt = 2e-6
    gf = make_grid(1, 20.0, 32768)
    tr = solve(gaussian_packet(gf, width=1.0), V, None, math.ceil(3 / (gamma + 3) / dt) * dt, dt)
    rep = proof_chain_diagnostics(tr, gamma, C, V=V)
    keys = ("B2", "B1", "floor", "I1")
    ok = all(rep.passed[k] is True for k in keys)
    detail = "; ".join(f"{k} {rep.quantities[k]:.3e} vs {rep.bound_rhs[k]:.3e}" for k in keys)
    assert report("proof chain", ok, f"gamma {gamma:.6g}; {detail}")


def test_determinism(report, tmp_path):
    names = ("gaussian_free_1d", "potential_well_1d", "carleman_suite")
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for n in names:
            main(["simulate", "--config", n, "--out", str(out)])
        runs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = runs[0].keys() == runs[1].keys() and all(runs[0][k] == runs[1][k] for k in runs[0])
    ok = same and len(runs[0]) > 10
    assert report("determinism", ok, f"{len(runs[0])} CSV files byte-identical across two runs: {same}")
