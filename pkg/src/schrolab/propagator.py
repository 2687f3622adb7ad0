"""Time stepping for ``du/dt = i (Lap u + V u + F)`` on a periodic grid.

Strang splitting: a half step of the potential phase/gain, an exact
spectral kinetic step, a second potential half step. Forcing enters at the
midpoint of the kinetic step. For ``V = F = 0`` a step is the exact free
evolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import Grid, GridError, Trajectory, WaveField, integrate, laplacian_array

# dt * sup|Im V| above this refuses to run
GAIN_LIMIT = 0.1
BOUNDARY_CELLS = 3
BOUNDARY_TOL = 1e-8


class StabilityError(RuntimeError):
    """The complex gain per step is too large or the state blew up."""


class BoundaryMassError(RuntimeError):
    """Solution mass reached the edge of the periodic box."""


Coords = tuple


@dataclass
class PotentialSpec:
    """A bounded complex space-time function with a certified sup bound.

    ``fn(coords, t)`` returns values broadcastable to the coordinate arrays.
    Forcing terms use the same type (see :data:`ForcingSpec`).
    """

    kind: str
    fn: Callable[[Coords, float], np.ndarray] = field(repr=False)
    sup_bound: float
    params: dict = field(default_factory=dict)

    def evaluate(self, coords: Coords, t: float) -> np.ndarray:
        v = np.asarray(self.fn(coords, t), dtype=complex)
        return np.broadcast_to(v, np.broadcast(*coords).shape)

    def on_grid(self, grid: Grid, t: float) -> np.ndarray:
        return self.evaluate(grid.coords, t)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def max_modulus(self, grid: Grid, times) -> float:
        return max(float(np.max(np.abs(self.on_grid(grid, t)))) for t in times)

    def validate(self, grid: Grid, times) -> None:
        """Check ``|V| <= sup_bound`` on the space-time sample set."""
        m = self.max_modulus(grid, times)
        if m > self.sup_bound * (1 + 1e-12) + 1e-300:
            raise ValueError(f"{self.kind}: max |V| = {m:.6g} exceeds sup_bound {self.sup_bound:.6g}")


ForcingSpec = PotentialSpec


def zero_potential() -> PotentialSpec:
    return PotentialSpec("zero", lambda coords, t: 0.0, 0.0)


def constant_potential(c: complex) -> PotentialSpec:
    c = complex(c)
    return PotentialSpec("constant", lambda coords, t: c, abs(c), {"c": c})


def gaussian_well(v0: complex, width: float, modulation_frequency: float = 0.0,
                  center=None) -> PotentialSpec:
    """``v0 * exp(-|x - center|^2 / width^2) * cos(modulation_frequency * t)``."""
    v0 = complex(v0)

    def fn(coords, t):
        c = center if center is not None else (0.0,) * len(coords)
        r2 = sum((x - c0) ** 2 for x, c0 in zip(coords, c))
        return v0 * np.exp(-r2 / width**2) * np.cos(modulation_frequency * t)

    return PotentialSpec("gaussian_well", fn, abs(v0),
                         {"v0": v0, "width": width, "modulation_frequency": modulation_frequency})


def function_potential(fn, sup_bound: float, name: str = "function") -> PotentialSpec:
    """Closed-form potential or forcing given as ``fn(coords, t)``."""
    return PotentialSpec(name, fn, float(sup_bound))


def sampled_potential(grid: Grid, times, values, sup_bound: float | None = None,
                      **params) -> PotentialSpec:
    """Potential known on the grid at ``times``; linear in time between slices.

    Off-grid spatial points are linearly interpolated; points outside the box
    evaluate to zero.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=complex)
    if values.shape != (times.size,) + grid.shape:
        raise GridError("sampled potential does not match grid and times")
    if sup_bound is None:
        sup_bound = float(np.max(np.abs(values))) if values.size else 0.0

    def at_time(t):
        if times.size == 1:
            return values[0]
        k = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        w = min(max(w, 0.0), 1.0)
        return (1 - w) * values[k] + w * values[k + 1]

    def fn(coords, t):
        slab = at_time(t)
        if all(c.shape == g.shape and np.array_equal(c, g) for c, g in zip(coords, grid.coords)):
            return slab
        axes = (grid.axis,) * grid.dim
        pts = np.stack([np.asarray(c, dtype=float).ravel() for c in coords], axis=-1)
        shape = np.broadcast(*coords).shape
        re = RegularGridInterpolator(axes, slab.real, bounds_error=False, fill_value=0.0)(pts)
        im = RegularGridInterpolator(axes, slab.imag, bounds_error=False, fill_value=0.0)(pts)
        return (re + 1j * im).reshape(shape)

    return PotentialSpec("sampled", fn, float(sup_bound),
                         {"grid": grid, "times": times, "values": values, **params})


class _Stepper:
    """Caches the kinetic multipliers for a fixed grid and step."""

    def __init__(self, grid: Grid, dt: float):
        self.grid = grid
        self.dt = dt
        self.kin_full = np.exp(-1j * dt * grid.k_squared)
        self.kin_half = np.exp(-0.5j * dt * grid.k_squared)

    def _phase(self, u, V: PotentialSpec, t):
        if V.is_zero:
            return u
        v = V.on_grid(self.grid, t)
        gain = self.dt * float(np.max(np.abs(v.imag)))
        if gain > GAIN_LIMIT:
            raise StabilityError(f"dt * sup|Im V| = {gain:.3g} exceeds {GAIN_LIMIT}")
        return np.exp(0.5j * self.dt * v) * u

    def __call__(self, u: np.ndarray, V: PotentialSpec, F: Optional[PotentialSpec], t: float):
        axes = self.grid.fft_axes
        dt = self.dt
        u = self._phase(u, V, t + 0.25 * dt)
        if F is None or F.is_zero:
            u = np.fft.ifftn(self.kin_full * np.fft.fftn(u, axes=axes), axes=axes)
        else:
            u = np.fft.ifftn(self.kin_half * np.fft.fftn(u, axes=axes), axes=axes)
            u = u + 1j * dt * F.on_grid(self.grid, t + 0.5 * dt)
            u = np.fft.ifftn(self.kin_half * np.fft.fftn(u, axes=axes), axes=axes)
        u = self._phase(u, V, t + 0.75 * dt)
        if not np.all(np.isfinite(u)):
            raise StabilityError(f"non-finite state after step at t={t}")
        return u


def step_strang(state: WaveField, V: PotentialSpec, F: Optional[PotentialSpec],
                t: float, dt: float) -> WaveField:
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = _Stepper(state.grid, dt)(state.values, V, F, t)
    return WaveField(state.grid, u, t + dt)


def boundary_fraction(values: np.ndarray, grid: Grid, cells: int = BOUNDARY_CELLS) -> float:
    """Fraction of the mass of one slice within ``cells`` of the box edge."""
    dens = np.abs(values) ** 2
    total = dens.sum()
    if total == 0:
        return 0.0
    return float(dens[grid.boundary_layer(cells)].sum() / total)


def _n_steps(t_end: float, dt: float) -> int:
    if not t_end > 0 or not dt > 0:
        raise ValueError("t_end and dt must be positive")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * t_end:
        raise ValueError(f"dt={dt} does not divide t_end={t_end}")
    return n


def solve(u0: WaveField, V: PotentialSpec | None = None, F: PotentialSpec | None = None,
          t_end: float = 1.0, dt: float = 1e-3, store_every: int = 1,
          check_boundary: bool = True) -> Trajectory:
    """Integrate from ``u0.time_tag`` to ``u0.time_tag + t_end``.

    Every ``store_every``-th step is kept; the stored times are uniform.
    """
    V = V if V is not None else zero_potential()
    n = _n_steps(t_end, dt)
    if n % store_every:
        raise ValueError("store_every must divide the number of steps")
    grid = u0.grid
    stepper = _Stepper(grid, dt)
    t0 = u0.time_tag
    u = u0.values.copy()
    out = [u.copy()]
    for j in range(n):
        u = stepper(u, V, F, t0 + j * dt)
        if (j + 1) % store_every == 0:
            if check_boundary:
                frac = boundary_fraction(u, grid)
                if frac > BOUNDARY_TOL:
                    raise BoundaryMassError(
                        f"boundary mass fraction {frac:.3g} at t={t0 + (j + 1) * dt:.6g}")
            out.append(u.copy())
    times = t0 + dt * store_every * np.arange(len(out))
    return Trajectory(grid, times, np.array(out))


def free_propagate(u0: WaveField, t: float) -> WaveField:
    """``exp(i t Lap) u0`` via the exact Fourier multiplier ``exp(-i t |k|^2)``."""
    g = u0.grid
    if t == 0:
        return WaveField(g, u0.values.copy(), u0.time_tag)
    uh = np.fft.fftn(u0.values, axes=g.fft_axes)
    u = np.fft.ifftn(np.exp(-1j * t * g.k_squared) * uh, axes=g.fft_axes)
    return WaveField(g, u, u0.time_tag + t)


def gaussian_packet(grid: Grid, center=None, width: float = 1.0, momentum=None,
                    amplitude: complex = 1.0) -> WaveField:
    """``amplitude * exp(-|x-c|^2 / (4 width^2) + i p.x)``."""
    c = center if center is not None else (0.0,) * grid.dim
    p = momentum if momentum is not None else (0.0,) * grid.dim
    c = np.broadcast_to(np.asarray(c, dtype=float), (grid.dim,))
    p = np.broadcast_to(np.asarray(p, dtype=float), (grid.dim,))
    r2 = sum((x - c0) ** 2 for x, c0 in zip(grid.coords, c))
    phase = sum(x * p0 for x, p0 in zip(grid.coords, p))
    return WaveField(grid, amplitude * np.exp(-r2 / (4 * width**2) + 1j * phase))


# -- nonlinear runs and the difference potential --


def solve_nls(u0: WaveField, f: Callable[[np.ndarray], np.ndarray], t_end: float,
              dt: float, store_every: int = 1) -> Trajectory:
    """Strang splitting for ``du/dt = i (Lap u + f(|u|^2) u)`` with real ``f``.

    The nonlinear substep is solved exactly since it preserves ``|u|``.
    """
    n = _n_steps(t_end, dt)
    g = u0.grid
    axes = g.fft_axes
    kin = np.exp(-1j * dt * g.k_squared)
    u = u0.values.copy()
    out = [u.copy()]
    for j in range(n):
        u = np.exp(0.5j * dt * f(np.abs(u) ** 2)) * u
        u = np.fft.ifftn(kin * np.fft.fftn(u, axes=axes), axes=axes)
        u = np.exp(0.5j * dt * f(np.abs(u) ** 2)) * u
        if (j + 1) % store_every == 0:
            out.append(u.copy())
    times = u0.time_tag + dt * store_every * np.arange(len(out))
    return Trajectory(g, times, np.array(out))


def _same_sampling(a: Trajectory, b: Trajectory) -> None:
    if a.grid != b.grid:
        raise GridError("trajectories live on different grids")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise GridError("trajectories have different times")


def nls_difference_potential(u1: Trajectory, u2: Trajectory, f: Callable, floor: float) -> PotentialSpec:
    """Effective potential for ``w = u1 - u2`` of two NLS solutions.

    ``V_eff = (f(|u1|^2) u1 - f(|u2|^2) u2) / w`` where ``|w| >= floor``,
    zero elsewhere. The excluded set is returned in ``params['floor_mask']``.
    """
    _same_sampling(u1, u2)
    if not floor > 0:
        raise ValueError("floor must be positive")
    a, b = u1.values, u2.values
    w = a - b
    num = f(np.abs(a) ** 2) * a - f(np.abs(b) ** 2) * b
    keep = np.abs(w) >= floor
    v = np.zeros_like(w)
    v[keep] = num[keep] / w[keep]
    mask = ~keep
    measure = integrate(mask.astype(float), u1.grid)
    return sampled_potential(u1.grid, u1.times, v, floor_mask=mask, floor_measure=measure)


def schrodinger_residual(traj: Trajectory, V: PotentialSpec | None = None,
                         F: PotentialSpec | None = None) -> np.ndarray:
    """``du/dt - i (Lap u + V u + F)`` at interior slices.

    The time derivative is the centered second-order difference; the result
    has one fewer slice at each end.
    """
    if len(traj) < 3:
        raise ValueError("need at least three slices")
    g = traj.grid
    u = traj.values
    dudt = (u[2:] - u[:-2]) / (2 * traj.dt)
    mid = u[1:-1]
    rhs = laplacian_array(mid, g)
    for k, t in enumerate(traj.times[1:-1]):
        if V is not None and not V.is_zero:
            rhs[k] += V.on_grid(g, t) * mid[k]
        if F is not None and not F.is_zero:
            rhs[k] += F.on_grid(g, t)
    return dudt - 1j * rhs


def l2_norm(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sqrt(np.real(integrate(np.abs(values) ** 2, grid)))
