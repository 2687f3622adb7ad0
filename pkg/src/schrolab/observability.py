"""Observability functional over moving annuli, its threshold time and probes.

For a trajectory ``u`` and a pair ``(rho, t)`` the functional is

    J(rho, t) = (1/t) int_{t/4}^{3t} int_{region(s)} |u|^2 + s |grad u|^2 dy ds,
    region(s) = { y : | |y| - rho (1 + s/t) | < 4 rho sqrt(t) }.

The lower bound of interest reads ``exp(c rho^2 / t) J(rho, t) >= c0^2``
for ``t`` below the threshold :func:`t_star`. The constant ``c`` is not
known in closed form; :func:`decay_fit` estimates it from data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .grid import Grid, Trajectory, WaveField, band_weight, grad_squared_array, integrate, window_integral
from .propagator import PotentialSpec, solve

MIN_BAND_CELLS = 8
MIN_WINDOW_SLICES = 16


class ObservabilityError(ValueError):
    """Invalid query, insufficient resolution or coverage."""


@dataclass(frozen=True)
class ObservabilityQuery:
    rho: float
    t: float
    band_factor: float = 4.0
    periodic: bool = False

    def __post_init__(self):
        if not (self.rho > 0 and self.t > 0):
            raise ObservabilityError("rho and t must be positive")
        if not self.band_factor > 0:
            raise ObservabilityError("band_factor must be positive")

    @property
    def time_window(self) -> tuple[float, float]:
        return self.t / 4, 3 * self.t

    @property
    def half_band(self) -> float:
        return self.band_factor * self.rho * math.sqrt(self.t)

    def center(self, s):
        return self.rho * (1 + np.asarray(s) / self.t)


@dataclass(frozen=True)
class ScenarioConstants:
    """Measured scenario constants; ``M = inf`` means the whole box."""

    c0: float
    R0: float
    M: float
    A: float
    L: float

    def __post_init__(self):
        if self.M < 4 * self.R0 + 1:
            raise ObservabilityError(f"M = {self.M} violates M >= 4 R0 + 1 = {4 * self.R0 + 1}")

    @property
    def flagged(self) -> bool:
        """True when there is no initial mass to observe."""
        return not self.c0 > 0


def _disk(grid: Grid, radius: float) -> np.ndarray:
    if math.isinf(radius):
        return np.ones(grid.shape, dtype=bool)
    return grid.radius <= radius


def compute_constants(traj: Trajectory, V: PotentialSpec | None, R0: float, M: float = math.inf) -> ScenarioConstants:
    """``c0``, ``A`` by quadrature on ``traj``; ``L`` from the potential's bound."""
    if not R0 > 0:
        raise ObservabilityError("R0 must be positive")
    g = traj.grid
    c0 = math.sqrt(float(integrate(np.abs(traj.values[0]) ** 2, g, _disk(g, R0))))
    dens = np.abs(traj.values) ** 2 + grad_squared_array(traj.values, g)
    A = math.sqrt(float(np.max(integrate(dens, g, _disk(g, M)))))
    L = 0.0 if V is None else float(V.sup_bound)
    return ScenarioConstants(c0=c0, R0=float(R0), M=float(M), A=A, L=L)


def t_star(constants: ScenarioConstants) -> float:
    """``min(256 A/(c0 L), 2^-14 (c0/A)^4, R0^2, 1/L^2)``; ``L = 0`` drops two terms."""
    c0, A, L, R0 = constants.c0, constants.A, constants.L, constants.R0
    if not c0 > 0:
        raise ObservabilityError("t* needs c0 > 0")
    terms = [2.0**-14 * (c0 / A) ** 4, R0**2]
    if L > 0:
        terms += [256 * A / (c0 * L), 1 / L**2]
    return float(min(terms))


def _merge_length(intervals) -> float:
    total, end = 0.0, -math.inf
    for a, b in sorted(intervals):
        if b <= end:
            continue
        total += b - max(a, end)
        end = b
    return total


def region_measure(query: ObservabilityQuery, s: float, grid: Grid | None = None, dim: int | None = None) -> float:
    """Lebesgue measure of the annulus at time ``s`` (inside the box).

    ``dim`` defaults to the grid's dimension, or 1 without a grid. In
    periodic mode the box is a 1-D torus and the two intervals wrap.
    """
    a, b = query.time_window
    if not (a * (1 - 1e-12) <= s <= b * (1 + 1e-12)):
        raise ObservabilityError(f"s = {s} outside the window [{a}, {b}]")
    dim = dim or (grid.dim if grid is not None else 1)
    c, w = float(query.center(s)), query.half_band
    if query.periodic:
        if grid is None or grid.dim != 1:
            raise ObservabilityError("periodic mode needs a 1-D grid")
        P = 2 * grid.half_width
        if 2 * w >= P:
            return P
        pieces = []
        for mid in (c, -c):
            lo = (mid - w + grid.half_width) % P
            hi = lo + 2 * w
            pieces += [(lo, min(hi, P))] + ([(0.0, hi - P)] if hi > P else [])
        return _merge_length(pieces)
    if grid is not None and c + w > grid.half_width:
        raise ObservabilityError(f"band reaches radius {c + w} beyond the box half-width {grid.half_width}")
    if dim == 1:
        return 4 * w if c > w else 2 * (c + w)
    inner = max(c - w, 0.0)
    return math.pi * ((c + w) ** 2 - inner**2)


def region_weight(query: ObservabilityQuery, s: float, grid: Grid) -> np.ndarray:
    """Fraction of each grid cell covered by the annulus at time ``s``.

    Uses ``clip((w - dist)/h + 1/2, 0, 1)`` with ``dist`` the radial distance
    to the band's center line; exact for cells cut by one edge in 1-D,
    which the band-width gate guarantees.
    """
    c, w = float(query.center(s)), query.half_band
    if query.periodic:
        if grid.dim != 1:
            raise ObservabilityError("periodic mode needs a 1-D grid")
        P = 2 * grid.half_width
        y = grid.coords[0]
        wrap = lambda m: np.abs((y - m + P / 2) % P - P / 2)
        return band_weight(grid, c, w, np.minimum(wrap(c), wrap(-c)))
    return band_weight(grid, c, w)


def _window_slices(traj: Trajectory, query: ObservabilityQuery):
    a, b = query.time_window
    times = traj.times
    eps = 1e-9 * b
    if times[0] > a + eps or times[-1] < b - eps:
        raise ObservabilityError(f"trajectory [{times[0]}, {times[-1]}] does not cover [{a}, {b}]")
    inside = np.flatnonzero((times >= a - eps) & (times <= b + eps))
    if inside.size < MIN_WINDOW_SLICES:
        raise ObservabilityError(f"only {inside.size} stored slices inside the window, need {MIN_WINDOW_SLICES}")
    lo = max(inside[0] - 1, 0)
    hi = min(inside[-1] + 1, times.size - 1)
    return np.arange(lo, hi + 1)


def _check_band(query: ObservabilityQuery, grid: Grid) -> None:
    cells = 2 * query.half_band / grid.spacing
    if cells < MIN_BAND_CELLS:
        raise ObservabilityError(f"band spans {cells:.1f} cells, need {MIN_BAND_CELLS}")
    if not query.periodic:
        c_max = float(query.center(3 * query.t))
        if c_max + query.half_band > grid.half_width - 3 * grid.spacing:
            raise ObservabilityError("band leaves the box inside the time window")


def observability_parts(traj: Trajectory, query: ObservabilityQuery) -> tuple[float, float]:
    """``(J_mass, J_gradient)``; their sum is the functional."""
    g = traj.grid
    _check_band(query, g)
    idx = _window_slices(traj, query)
    s = traj.times[idx]
    vals = traj.values[idx]
    weights = np.stack([region_weight(query, sk, g) for sk in s])
    mass = integrate(weights * np.abs(vals) ** 2, g)
    grad = integrate(weights * grad_squared_array(vals, g), g) * s
    a, b = query.time_window
    return (window_integral(s, mass, a, b) / query.t, window_integral(s, grad, a, b) / query.t)


def observability_functional(traj: Trajectory, query: ObservabilityQuery) -> float:
    jm, jg = observability_parts(traj, query)
    return jm + jg


# -- sources of window trajectories --

WindowSource = Callable[[float, float, int], Trajectory]


def free_source(u0: WaveField) -> WindowSource:
    """Exact free evolution of ``u0`` sampled on ``[t0, t1]``."""

    g = u0.grid
    uh = np.fft.fftn(u0.values, axes=g.fft_axes)

    def make(t0: float, t1: float, slices: int) -> Trajectory:
        times = np.linspace(t0, t1, slices)
        tt = times.reshape((-1,) + (1,) * g.dim)
        vals = np.fft.ifftn(np.exp(-1j * tt * g.k_squared) * uh, axes=g.fft_axes)
        return Trajectory(g, times, vals)

    return make


def solve_source(u0: WaveField, V: PotentialSpec | None, slices_per_t: int = 96) -> WindowSource:
    """Re-solve from ``s = 0`` with step ``t/slices_per_t`` for each window.

    For potentials without a closed form, where the stored run is far too
    coarse for windows of length ``~t``.
    """

    def make(t0: float, t1: float, slices: int) -> Trajectory:
        n = 3 * slices_per_t
        return solve(u0, V, None, t1, t1 / n)

    return make


def trajectory_source(traj: Trajectory) -> WindowSource:
    """Serve windows from one stored trajectory (no resampling)."""

    def make(t0: float, t1: float, slices: int) -> Trajectory:
        return traj

    return make


def evaluate_query(source: Union[Trajectory, WindowSource], query: ObservabilityQuery,
                   slices: int = 257) -> float:
    if isinstance(source, Trajectory):
        return observability_functional(source, query)
    a, b = query.time_window
    return observability_functional(source(a, b, slices), query)


@dataclass
class LowerBoundReport:
    rho: float
    t: float
    J: float
    c_fit: float
    c0: float
    skipped: bool = False

    @property
    def log_margin(self) -> float:
        """``c rho^2/t + log J - log c0^2``; non-negative on a pass."""
        if self.skipped:
            return math.nan
        if self.J <= 0:
            return -math.inf
        return self.c_fit * self.rho**2 / self.t + math.log(self.J) - 2 * math.log(self.c0)

    @property
    def passed(self) -> bool | None:
        return None if self.skipped else self.log_margin >= 0


def lower_bound_check(source: Union[Trajectory, WindowSource], query: ObservabilityQuery,
                      constants: ScenarioConstants, c_fit: float) -> LowerBoundReport:
    """Test ``exp(c_fit rho^2/t) J(rho, t) >= c0^2`` in log scale."""
    if constants.flagged:
        return LowerBoundReport(query.rho, query.t, 0.0, c_fit, constants.c0, skipped=True)
    ts = t_star(constants)
    if not query.t < ts:
        raise ObservabilityError(f"t = {query.t} is not below t* = {ts}")
    if not constants.R0 <= query.rho <= constants.M:
        raise ObservabilityError(f"rho = {query.rho} outside [R0, M] = [{constants.R0}, {constants.M}]")
    J = evaluate_query(source, query)
    return LowerBoundReport(query.rho, query.t, J, c_fit, constants.c0)


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r2: float

    @property
    def c_emp(self) -> float:
        return -self.slope


def decay_fit(samples: Sequence[tuple[float, float, float]]) -> DecayFit:
    """Least squares of ``log J`` against ``rho^2 / t``."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 5 or arr.shape[1] != 3:
        raise ValueError("need at least five (rho, t, J) samples")
    rho, t, J = arr.T
    if np.any(J <= 0) or not np.all(np.isfinite(J)):
        raise ValueError("all J must be positive and finite")
    x = rho**2 / t
    y = np.log(J)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("rho^2/t does not vary across samples")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return DecayFit(slope, intercept, r2)


TAIL_RATIO = 1.5


@dataclass
class ProbeResult:
    mode: str
    c: float
    samples: np.ndarray
    log_values: np.ndarray  # log of the probed quantity, -inf where J = 0
    classification: str
    tail: int = 3

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)


def classify(log_values: np.ndarray, tail: int = 3, ratio: float = TAIL_RATIO) -> str:
    """``->0``, ``->inf`` or ``bounded`` from the last ``tail`` successive ratios."""
    lv = np.asarray(log_values, dtype=float)
    if np.all(lv == -np.inf):
        return "->0"
    if lv.size < tail + 1:
        raise ValueError(f"need at least {tail + 1} samples")
    last = lv[-(tail + 1):]
    if np.all(last == -np.inf):
        return "->0"
    if np.any(last == -np.inf):
        return "bounded"
    steps = np.diff(last)
    if np.all(steps > math.log(ratio)):
        return "->inf"
    if np.all(steps < -math.log(ratio)):
        return "->0"
    return "bounded"


def uniqueness_probe(source: Union[Trajectory, WindowSource], c: float, mode: str,
                     samples: Sequence[float], rho: float | None = None, t: float | None = None,
                     band_factor: float = 4.0, slices: int = 257) -> ProbeResult:
    """The quantity ``exp(c rho^2/t) J(rho, t)`` along a sequence.

    ``mode='t_to_zero'`` holds ``rho`` fixed and ``samples`` are times that
    should decrease; ``mode='rho_to_inf'`` holds ``t`` fixed and
    ``samples`` are radii that should increase.
    """
    samples = np.asarray(samples, dtype=float)
    out = []
    for x in samples:
        if mode == "t_to_zero":
            if rho is None:
                raise ValueError("t_to_zero needs rho")
            q = ObservabilityQuery(rho, float(x), band_factor)
        elif mode == "rho_to_inf":
            if t is None:
                raise ValueError("rho_to_inf needs t")
            q = ObservabilityQuery(float(x), t, band_factor)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        J = evaluate_query(source, q, slices)
        out.append(-math.inf if J <= 0 else c * q.rho**2 / q.t + math.log(J))
    lv = np.array(out)
    return ProbeResult(mode, c, samples, lv, classify(lv))
