"""Periodic spatial grids, spectral differentiation and region quadrature.

The whole package works on a periodic box ``[-half_width, half_width)^dim``
sampled at ``points_per_axis`` points per axis. Fields are plain complex
numpy arrays of shape ``(N,)`` or ``(N, N)``; batched arrays carry any
number of leading axes (typically time).

Wavenumbers follow the FFT ordering ``k = 2*pi*fftfreq(N, h)``. For first
derivatives the Nyquist coefficient is dropped (symmetric convention), the
Laplacian keeps the full ``-k**2`` symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

Region = Union[None, np.ndarray, Callable[..., np.ndarray]]


class GridError(ValueError):
    """Raised for invalid grids or fields that do not fit their grid."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice with spectral wavenumbers."""

    dim: int
    half_width: float
    points_per_axis: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        """Coordinates along one axis, ``-half_width + j*h``."""
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        k = 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)
        return (k,) * self.dim

    @cached_property
    def _deriv_k(self) -> tuple[np.ndarray, ...]:
        out = []
        for ax in range(self.dim):
            k = self.wavenumbers[ax].copy()
            k[self.points_per_axis // 2] = 0.0
            shape = [1] * self.dim
            shape[ax] = self.points_per_axis
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*self.wavenumbers, indexing="ij")
        return sum(k**2 for k in ks)

    @property
    def fft_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def mask(self, region: Region) -> np.ndarray:
        """Boolean indicator of ``region`` sampled at the grid points."""
        if region is None:
            return np.ones(self.shape, dtype=bool)
        if callable(region):
            m = np.asarray(region(*self.coords))
        else:
            m = np.asarray(region)
        m = np.broadcast_to(m, self.shape).astype(bool)
        return m

    def boundary_layer(self, cells: int = 3) -> np.ndarray:
        """Mask of points within ``cells`` grid cells of the box edge."""
        idx = np.arange(self.points_per_axis)
        edge = (idx < cells) | (idx >= self.points_per_axis - cells)
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.points_per_axis
            m |= edge.reshape(shape)
        return m


def make_grid(dim: int, half_width: float, points_per_axis: int) -> Grid:
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    if not half_width > 0:
        raise GridError(f"half_width must be positive, got {half_width}")
    if int(points_per_axis) != points_per_axis or points_per_axis < 8:
        raise GridError(f"points_per_axis must be an integer >= 8, got {points_per_axis}")
    if points_per_axis % 2:
        raise GridError(f"points_per_axis must be even, got {points_per_axis}")
    return Grid(int(dim), float(half_width), int(points_per_axis))


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise GridError("field contains non-finite values")


@dataclass
class WaveField:
    """Complex samples of a field at one time."""

    grid: Grid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise GridError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        _check_finite(self.values)

    def norm(self) -> float:
        return float(np.sqrt(integrate(np.abs(self.values) ** 2, self.grid)))


@dataclass
class Trajectory:
    """Time-indexed family of fields on one grid with a uniform step.

    ``values`` has shape ``(len(times),) + grid.shape``.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.ndim != 1 or self.times.size < 1:
            raise GridError("times must be a non-empty 1-D sequence")
        if self.values.shape != (self.times.size,) + self.grid.shape:
            raise GridError(
                f"values shape {self.values.shape} does not match "
                f"{(self.times.size,) + self.grid.shape}"
            )
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise GridError("times must be strictly increasing")
            dt = (self.times[-1] - self.times[0]) / (self.times.size - 1)
            if np.max(np.abs(steps - dt)) > 1e-12 * max(abs(dt), np.max(np.abs(self.times))):
                raise GridError("times must have a uniform step")
        _check_finite(self.values)

    @property
    def dt(self) -> float:
        if self.times.size < 2:
            return 0.0
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    def __len__(self) -> int:
        return self.times.size

    def field(self, k: int) -> WaveField:
        return WaveField(self.grid, self.values[k], float(self.times[k]))

    @property
    def fields(self) -> list[WaveField]:
        return [self.field(k) for k in range(len(self))]

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the stored slice at time ``t``."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise GridError(f"time {t} is not a stored slice")
        return k


# -- spectral operators on raw arrays (trailing axes are space) --


def gradient_array(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Spectral first derivatives along each spatial axis."""
    vh = np.fft.fftn(values, axes=grid.fft_axes)
    return [np.fft.ifftn(1j * k * vh, axes=grid.fft_axes) for k in grid._deriv_k]


def laplacian_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    vh = np.fft.fftn(values, axes=grid.fft_axes)
    return np.fft.ifftn(-grid.k_squared * vh, axes=grid.fft_axes)


def divergence_array(components: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    out = 0
    for k, comp in zip(grid._deriv_k, components):
        ch = np.fft.fftn(comp, axes=grid.fft_axes)
        out = out + np.fft.ifftn(1j * k * ch, axes=grid.fft_axes)
    return out


def grad_squared_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(np.abs(g) ** 2 for g in gradient_array(values, grid))


def spectral_gradient(f: WaveField) -> list[WaveField]:
    _check_finite(f.values)
    return [WaveField(f.grid, g, f.time_tag) for g in gradient_array(f.values, f.grid)]


def spectral_laplacian(f: WaveField) -> WaveField:
    return WaveField(f.grid, laplacian_array(f.values, f.grid), f.time_tag)


def integrate(density: np.ndarray, grid: Grid, region: Region = None) -> np.ndarray:
    """Riemann sum ``h**dim * sum`` over the grid points inside ``region``.

    Leading axes of ``density`` are kept, so a time stack integrates to a
    time series.
    """
    density = np.asarray(density)
    if region is not None:
        density = np.where(grid.mask(region), density, 0)
    return grid.cell_volume * density.sum(axis=grid.fft_axes)


def quadrature(f: WaveField, region: Region = None, integrand: str = "abs2",
               other: WaveField | None = None):
    """Integrate ``|u|^2``, ``|grad u|^2`` or ``u * conj(w)`` over ``region``."""
    if integrand == "abs2":
        dens = np.abs(f.values) ** 2
    elif integrand == "grad2":
        dens = grad_squared_array(f.values, f.grid)
    elif integrand == "inner":
        if other is None:
            raise ValueError("integrand 'inner' needs the second field")
        if other.grid != f.grid:
            raise GridError("fields live on different grids")
        dens = f.values * np.conj(other.values)
    else:
        raise ValueError(f"unknown integrand {integrand!r}")
    val = integrate(dens, f.grid, region)
    return complex(val) if integrand == "inner" else float(np.real(val))


def ball(radius: float, center: Sequence[float] | None = None):
    """Region predicate for the closed ball ``|x - center| <= radius``."""

    def pred(*xs):
        c = center if center is not None else (0.0,) * len(xs)
        return sum((x - c0) ** 2 for x, c0 in zip(xs, c)) <= radius**2

    return pred


def band_weight(grid: Grid, center: float, half_width: float, distance: np.ndarray | None = None) -> np.ndarray:
    """Cell-coverage fraction of the shell ``| |x| - center | < half_width``.

    ``clip((half_width - dist)/h + 1/2, 0, 1)``: exact in 1-D for cells cut
    by a single edge, a second-order radial approximation in 2-D.
    ``distance`` overrides ``| |x| - center |`` (e.g. periodic distances).
    """
    dist = np.abs(grid.radius - center) if distance is None else distance
    return np.clip((half_width - dist) / grid.spacing + 0.5, 0.0, 1.0)


def window_integral(times: np.ndarray, values: np.ndarray, a: float, b: float) -> float:
    """Integral over ``[a, b]`` of the piecewise-linear interpolant of ``values``.

    The composite trapezoid on the stored samples, with the partial end
    intervals handled by linear interpolation.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if a < times[0] - 1e-12 * abs(b) or b > times[-1] + 1e-12 * abs(b):
        raise GridError(f"[{a}, {b}] not covered by samples on [{times[0]}, {times[-1]}]")
    fa, fb = np.interp(a, times, values), np.interp(b, times, values)
    keep = (times > a) & (times < b)
    xs = np.concatenate([[a], times[keep], [b]])
    ys = np.concatenate([[fa], values[keep], [fb]])
    return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))
