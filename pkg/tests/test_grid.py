import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schrolab.grid import (GridError, Trajectory, WaveField, ball, band_weight, divergence_array,
                           gradient_array, integrate, laplacian_array, make_grid, quadrature,
                           spectral_gradient, spectral_laplacian, window_integral)


def test_spacing_examples():
    assert make_grid(1, 16.0, 256).spacing == 0.125
    g = make_grid(1, math.pi, 32)
    assert g.spacing == pytest.approx(math.pi / 16, rel=1e-15)
    assert g.spacing * g.points_per_axis == pytest.approx(2 * g.half_width, rel=1e-15)


@pytest.mark.parametrize("args", [(1, 16.0, 255), (1, 16.0, 6), (1, 0.0, 64), (1, -1.0, 64), (3, 1.0, 16),
                                  (1, 1.0, 32.5)])
def test_make_grid_rejects(args):
    with pytest.raises(GridError):
        make_grid(*args)


def test_wavenumbers_zero_once():
    for n in (8, 64, 100):
        g = make_grid(2, 3.0, n)
        for k in g.wavenumbers:
            assert np.count_nonzero(k == 0) == 1
            assert k[1] == pytest.approx(2 * math.pi / (2 * g.half_width))


def test_gradient_examples_on_torus():
    g = make_grid(1, math.pi, 32)
    x = g.axis
    d = spectral_gradient(WaveField(g, np.sin(x)))[0].values
    assert np.max(np.abs(d - np.cos(x))) <= 1e-12
    d = spectral_gradient(WaveField(g, np.ones(32)))[0].values
    assert np.max(np.abs(d)) <= 1e-14
    f = np.exp(3j * x)
    d = spectral_gradient(WaveField(g, f))[0].values
    assert np.max(np.abs(d - 3j * f)) <= 1e-12


def test_nyquist_dropped_for_gradient_only():
    g = make_grid(1, math.pi, 16)
    nyq = np.cos(8 * g.axis)
    assert np.max(np.abs(gradient_array(nyq, g)[0])) < 1e-13
    assert np.max(np.abs(laplacian_array(nyq, g) + 64 * nyq)) < 1e-11


def test_quadrature_examples():
    g = make_grid(1, 16.0, 256)
    one = WaveField(g, np.ones(256))
    assert quadrature(one) == 32.0
    gauss = WaveField(g, np.exp(-g.axis**2))
    assert quadrature(gauss) == pytest.approx(math.sqrt(math.pi / 2), abs=1e-12)
    assert quadrature(gauss, lambda x: x > 100) == 0.0
    assert quadrature(gauss, np.zeros(256, bool)) == 0.0


def test_quadrature_integrands():
    g = make_grid(1, 16.0, 512)
    x = g.axis
    u = WaveField(g, np.exp(-x**2 / 2) * np.exp(0.3j * x))
    w = WaveField(g, np.exp(-x**2 / 2))
    # |u'|^2 = (x^2 + 0.09) e^{-x^2}; integral sqrt(pi)/2 + 0.09 sqrt(pi)
    assert quadrature(u, integrand="grad2") == pytest.approx(math.sqrt(math.pi) * 0.59, rel=1e-12)
    inner = quadrature(u, integrand="inner", other=w)
    # int e^{-x^2} e^{0.3ix} = sqrt(pi) e^{-0.0225}
    assert inner == pytest.approx(math.sqrt(math.pi) * math.exp(-0.0225), rel=1e-12)
    with pytest.raises(ValueError):
        quadrature(u, integrand="inner")
    with pytest.raises(ValueError):
        quadrature(u, integrand="cube")


def test_ball_region_2d():
    g = make_grid(2, 4.0, 64)
    f = WaveField(g, np.ones(g.shape))
    inside = quadrature(f, ball(1.0))
    # lattice point count of the unit disk at h = 1/8, times h^2
    assert inside == pytest.approx(np.count_nonzero(g.radius <= 1.0) * g.cell_volume)
    assert inside == pytest.approx(math.pi, rel=0.03)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_plancherel_and_additivity(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 5.0, 32)
    u = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    f = WaveField(g, u)
    coeff = np.fft.fftn(u)
    # (2L)^n / N^{2n} sum |c|^2 with h^n = (2L)^n / N^n
    parseval = g.cell_volume * np.sum(np.abs(coeff) ** 2) / g.size
    assert quadrature(f) == pytest.approx(parseval, rel=1e-10)
    region = rng.random(g.shape) < 0.4
    a, b = quadrature(f, region), quadrature(f, ~region)
    assert a + b == pytest.approx(quadrature(f), rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_squared_sums_to_laplacian(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 3.0, 32)
    # smooth band-limited field, Nyquist-free
    c = np.zeros(g.shape, complex)
    c[:6, :6] = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    u = np.fft.ifftn(c)
    grads = gradient_array(u, g)
    twice = sum(gradient_array(d, g)[ax] for ax, d in enumerate(grads))
    lap = laplacian_array(u, g)
    assert np.linalg.norm(twice - lap) <= 1e-10 * np.linalg.norm(lap)
    assert np.allclose(divergence_array(grads, g), lap, atol=1e-10 * np.max(np.abs(lap)))
    assert np.allclose(spectral_laplacian(WaveField(g, u)).values, lap)


def test_wavefield_validation():
    g = make_grid(1, 1.0, 8)
    with pytest.raises(GridError):
        WaveField(g, np.ones(9))
    bad = np.ones(8, complex)
    bad[3] = np.nan
    with pytest.raises(GridError):
        WaveField(g, bad)


def test_trajectory_validation():
    g = make_grid(1, 1.0, 8)
    vals = np.zeros((3, 8))
    tr = Trajectory(g, [0.0, 0.1, 0.2], vals)
    assert tr.dt == pytest.approx(0.1)
    assert tr.index_of(0.1) == 1
    with pytest.raises(GridError):
        tr.index_of(0.15)
    with pytest.raises(GridError):
        Trajectory(g, [0.0, 0.1, 0.25], vals)
    with pytest.raises(GridError):
        Trajectory(g, [0.0, 0.2, 0.1], vals)
    with pytest.raises(GridError):
        Trajectory(g, [0.0, 0.1], vals)


def test_integrate_keeps_leading_axes():
    g = make_grid(1, 2.0, 16)
    stack = np.stack([np.ones(16), 2 * np.ones(16)])
    assert np.allclose(integrate(stack, g), [4.0, 8.0])


def test_band_weight_exact_measure_1d():
    g = make_grid(1, 10.0, 1000)
    for center, hw in ((3.0, 0.4), (5.123, 0.777), (2.2, 0.0301)):
        total = integrate(band_weight(g, center, hw), g)
        assert total == pytest.approx(4 * hw, abs=1e-12)


def test_window_integral():
    t = np.linspace(0, 1, 11)
    v = 2 * t + 1
    assert window_integral(t, v, 0.0, 1.0) == pytest.approx(2.0)
    # linear integrand is exact even on partial cells
    assert window_integral(t, v, 0.13, 0.77) == pytest.approx((0.77**2 + 0.77) - (0.13**2 + 0.13))
    with pytest.raises(GridError):
        window_integral(t, v, -0.1, 0.5)
