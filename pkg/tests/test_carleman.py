import math

import numpy as np
import pytest
import sympy as sp

from schrolab.carleman import (SUITE_R, SUITE_SIGMA_MAX, CarlemanConfig, SpaceTimeField, SupportError,
                               admissible_bump, build_cutoffs, build_g, calibrate_c_n, carleman_check,
                               check_support, commutator_check, conjugation_residual, log_weighted_norm,
                               random_admissible_field, reference_suite, smoothstep, symmetry_defects,
                               time_derivative, weight_function)
from schrolab.grid import GridError, Trajectory, make_grid

# smallest lattice constant passing the reference suite (R = 2, sigma <= 32,
# four lattice points per octave from 1e-4); frozen at first run
C_N_FROZEN = 0.018101933598375617


@pytest.fixture(scope="module")
def cut():
    return build_cutoffs(2.0)


def test_cutoff_examples(cut):
    assert cut.theta(0.0) == 1.0 and cut.theta(2.0) == 1.0
    assert cut.theta(3.0) == 0.0
    assert 0 < cut.theta(2.5) < 1
    assert cut.phi(0.5) == 4.0 and cut.phi(0.4) == 4.0
    assert cut.phi(0.2) == 0.0 and cut.phi(0.9) == 0.0
    assert cut.eta(3.0) == 1.0 and cut.eta(1.0) == 0.0
    t = np.linspace(0, 1, 2001)
    assert np.all((cut.phi(t) >= 0) & (cut.phi(t) <= 4))


def test_smoothstep_endpoints():
    for k in (4, 5, 7):
        P = smoothstep(k)
        assert P(0.0) == pytest.approx(0.0, abs=1e-14) and P(1.0) == pytest.approx(1.0, abs=1e-12)
        for d in range(1, k + 1):
            assert P.deriv(d)(0.0) == pytest.approx(0.0, abs=1e-9)
            assert P.deriv(d)(1.0) == pytest.approx(0.0, abs=1e-9)


def test_cutoff_derivative_bounds(cut):
    # the degree-9 step has peak slope 630/256 at its midpoint; phi rises
    # by 4 over a window of length 1/8
    assert cut.sup_dphi == pytest.approx(32 * 630 / 256, rel=1e-12)
    t = np.linspace(0, 1, 40001)
    assert np.max(np.abs(cut.dphi(t))) <= cut.sup_dphi * (1 + 1e-12)
    assert np.max(np.abs(cut.d2phi(t))) <= cut.sup_d2phi * (1 + 1e-9)
    # finite differences agree with the analytic derivative
    h = 1e-6
    for s in (0.3, 0.31, 0.7):
        fd = (cut.phi(s + h) - cut.phi(s - h)) / (2 * h)
        assert fd == pytest.approx(float(cut.dphi(s)), rel=1e-6)
    with pytest.raises(ValueError):
        build_cutoffs(1.5)
    with pytest.raises(ValueError):
        build_cutoffs(2.0, 3)


def test_config_validation(cut):
    with pytest.raises(ValueError):
        CarlemanConfig(2.0, 0.0, cut)
    with pytest.raises(ValueError):
        CarlemanConfig(1.0, 1.0, cut)
    assert CarlemanConfig(2.0, 4.0, cut, 1.0).admissible
    assert not CarlemanConfig(2.0, 3.9, cut, 1.0).admissible


def test_space_time_field_validation():
    g = make_grid(1, 8.0, 64)
    t = np.linspace(0, 1, 11)
    with pytest.raises(GridError):
        SpaceTimeField(g, t, np.zeros((10, 64)))
    with pytest.raises(GridError):
        SpaceTimeField(g, t[:4], np.zeros((4, 64)))
    with pytest.raises(GridError):
        SpaceTimeField(g, t**2, np.zeros((11, 64)))
    edge = np.zeros((11, 64))
    edge[1, 30] = 1.0
    with pytest.raises(SupportError):
        SpaceTimeField(g, t, edge)
    wall = np.zeros((11, 64))
    wall[5, 0] = 1.0
    with pytest.raises(SupportError):
        SpaceTimeField(g, t, wall)
    SpaceTimeField(g, t, wall, compact=False)


def test_time_derivative_fourth_order():
    # sin(pi t)^8 e^{3it} vanishes to high order at both ends, so zero
    # extension past the range is harmless
    errs = []
    for n in (41, 81):
        t = np.linspace(0, 1, n)
        f = np.sin(np.pi * t) ** 8 * np.exp(3j * t)
        exact = (8 * np.pi * np.sin(np.pi * t) ** 7 * np.cos(np.pi * t) + 3j * np.sin(np.pi * t) ** 8) * np.exp(3j * t)
        errs.append(np.max(np.abs(time_derivative(f, t[1] - t[0]) - exact)))
    assert 14 <= errs[0] / errs[1] <= 18


def test_build_g(cut):
    g = make_grid(1, 8.0, 256)
    t = np.linspace(0, 1, 41)
    zero = Trajectory(g, t, np.zeros((41, 256)))
    assert not np.any(build_g(zero, cut).values)
    rng = np.random.default_rng(1)
    v = Trajectory(g, t, rng.normal(size=(41, 256)) + 1j * rng.normal(size=(41, 256)))
    out = build_g(v, cut).values
    # at t = 1/2 the weight center sits at x = -8, so eta = 1 on |x| <= R
    k = 20
    inside = np.abs(g.axis) <= 2.0
    assert np.array_equal(out[k, inside], v.values[k, inside])
    assert not np.any(out[:, np.abs(g.axis) >= 3.0])
    # phi = 0 before t = 1/4: eta kills |x| < 3 = R + 1
    assert not np.any(out[t <= 0.25])
    with pytest.raises(GridError):
        build_g(Trajectory(make_grid(1, 3.0, 64), t, np.zeros((41, 64))), cut)


def static_fields(n, points=1024, slices=201, seed=11):
    g = make_grid(1, 8.0, points)
    t = np.linspace(0, 1, slices)
    rng = np.random.default_rng(seed)
    return [random_admissible_field(g, t, 2.0, rng) for _ in range(n)]


def test_conjugation_and_symmetry(cut):
    fields = static_fields(4, points=2048)
    for f, h in zip(fields, fields[1:] + fields[:1]):
        cfg = CarlemanConfig(2.0, 0.6, cut, 0.1)
        assert conjugation_residual(f, cfg)["rel"] <= 1e-8
        d = symmetry_defects(f, h, cfg)
        assert d["S"] <= 1e-10 and d["A"] <= 1e-10


def test_conjugation_residual_of_zero(cut):
    g = make_grid(1, 8.0, 128)
    f = SpaceTimeField(g, np.linspace(0, 1, 21), np.zeros((21, 128)))
    rep = conjugation_residual(f, CarlemanConfig(2.0, 1.0, cut))
    assert rep["abs"] == 0 and rep["rel"] == 0
    assert commutator_check(f, CarlemanConfig(2.0, 1.0, cut))["norm_direct"] == 0


def test_commutator_weight_coefficient_symbolic():
    # independent symbolic oracle for [S, A] in one dimension
    x, t, R, s = sp.symbols("x t R sigma", positive=True)
    phi = sp.Function("phi")(t)
    f = sp.Function("f")(x, t)
    b = x / R + phi
    S = lambda v: sp.I * sp.diff(v, t) + sp.diff(v, x, 2) + 4 * s**2 / R**2 * b**2 * v
    A = lambda v: b / R * sp.diff(v, x) + v / (2 * R**2) + sp.I * sp.diff(phi, t) / 2 * b * v
    comm = sp.expand(S(A(f)) - A(S(f)))
    rest = (2 / R**2) * sp.diff(f, x, 2) - sp.Rational(1, 2) * (b * sp.diff(phi, t, 2) + sp.diff(phi, t) ** 2) * f \
        + 2 * sp.I * sp.diff(phi, t) / R * sp.diff(f, x)
    k = sp.Symbol("k")
    sol = sp.solve(sp.expand(comm - rest + k * s**2 / R**4 * b**2 * f), k)
    assert sol == [8]


def test_commutator_refinement(cut):
    # static window: the 8 sigma^2/R^4 form converges, the 4 sigma^2/R^4 form does not
    out = []
    for pts, sl in ((512, 401), (1024, 801)):
        g = make_grid(1, 8.0, pts)
        tt = np.linspace(0, 1, sl)
        f = SpaceTimeField(g, tt, admissible_bump(g, tt, -4.4, 1.2, 0.5, 0.08, momentum=0.7))
        out.append(commutator_check(f, CarlemanConfig(2.0, 1.0, cut, 0.01)))
    assert out[1]["rel_derived"] < out[0]["rel_derived"] / 8
    assert out[1]["rel_derived"] <= 1e-3
    for rep in out:
        assert rep["rel_stated"] == pytest.approx(0.195, abs=0.005)


def test_carleman_check_errors_and_zero(cut):
    g = make_grid(1, 8.0, 256)
    t = np.linspace(0, 1, 41)
    zero = SpaceTimeField(g, t, np.zeros((41, 256)))
    res = carleman_check(zero, CarlemanConfig(2.0, 1.0, cut, 0.1))
    assert res.passed and res.log_ratio == 0.0
    assert check_support(zero, CarlemanConfig(2.0, 1.0, cut)) == math.inf
    # sqrt(w) = |x/2 + 4| at t = 1/2, below 1 for x < -6
    bad = SpaceTimeField(g, t, admissible_bump(g, t, -6.0, 0.5, 0.5, 0.1))
    with pytest.raises(SupportError):
        carleman_check(bad, CarlemanConfig(2.0, 1.0, cut, 0.01))
    ok = SpaceTimeField(g, t, admissible_bump(g, t, -4.0, 1.0, 0.5, 0.1))
    with pytest.raises(ValueError):
        carleman_check(ok, CarlemanConfig(2.0, 0.01, cut, 1.0))
    res = carleman_check(ok, CarlemanConfig(2.0, 4.0, cut, 1.0))
    assert math.isfinite(res.log_lhs) and math.isfinite(res.log_rhs)


def test_weight_minimum_on_support(cut):
    # w at t = 1/2 is (x/2 + 4)^2, so sqrt(w) >= 1 exactly when x >= -6
    g = make_grid(1, 8.0, 256)
    t = np.linspace(0, 1, 41)
    w = weight_function(g, t, 2.0, cut)
    assert w[20] == pytest.approx((g.axis / 2 + 4) ** 2)
    f = SpaceTimeField(g, t, admissible_bump(g, t, -4.0, 1.0, 0.5, 0.1))
    assert check_support(f, CarlemanConfig(2.0, 1.0, cut)) >= 1.0


def test_log_weighted_norm_large_sigma():
    g = make_grid(1, 4.0, 64)
    v = np.ones((5, 64))
    sw = np.full((5, 64), 2000.0)
    # ||e^{2000} 1|| = e^{2000} sqrt(8 * 5 dt)
    val = log_weighted_norm(v, sw, g, 0.25)
    assert val == pytest.approx(2000 + 0.5 * math.log(8 * 5 * 0.25), rel=1e-14)
    assert log_weighted_norm(0 * v, sw, g, 0.25) == -math.inf


@pytest.fixture(scope="module")
def calibration(cut):
    return calibrate_c_n(reference_suite(), SUITE_R, cut, SUITE_SIGMA_MAX)


def test_calibration_frozen(calibration):
    assert calibration.c_n == pytest.approx(C_N_FROZEN, rel=1e-12)
    assert calibration.profiles.shape[0] == 10


def test_calibration_passes_are_monotone(calibration, cut):
    c = calibration.c_n
    for i in range(calibration.profiles.shape[0]):
        flags = [calibration.log_ratio(i, m * c * SUITE_R**2, c) >= 0 for m in (1, 2, 4)]
        assert all(flags)
    # one lattice step below the constant something fails
    c_lo = c / 2 ** 0.25
    j = int(np.argmin(np.abs(calibration.lattice - c_lo * SUITE_R**2)))
    worst = calibration.profiles.min(axis=0)
    n = np.count_nonzero(calibration.lattice <= SUITE_SIGMA_MAX * (1 + 1e-12))
    assert np.any(worst[j:n] + math.log(c_lo) < 0) or np.any(worst[[j, j + 4, j + 8]] + math.log(c_lo) < 0)


def test_calibration_agrees_with_direct_check(calibration, cut):
    fields = reference_suite()
    c = calibration.c_n
    for i in (0, 4, 9):
        sigma = 2 * c * SUITE_R**2
        res = carleman_check(fields[i], CarlemanConfig(SUITE_R, sigma, cut, c))
        assert res.passed
        assert res.log_ratio == pytest.approx(calibration.log_ratio(i, sigma, c), abs=1e-9)


def test_calibration_rejects_off_lattice_multiples(cut):
    with pytest.raises(ValueError):
        calibrate_c_n(static_fields(1, 256, 41), 2.0, cut, 8.0, multiples=(1, 3))
