"""Pseudoconformal (Appell) transformation and its scalar time maps.

For positive ``alpha, beta`` put ``D(t) = alpha (1-t) + beta t``,
``lam(t) = sqrt(alpha beta) / D(t)`` and ``s(t) = beta t / D(t)``. A solution
``u(y, s)`` of ``du/ds = i(Lap u + V u + F)`` is sent to

    u~(x, t) = lam^{n/2} u(lam x, s(t)) exp((alpha - beta) |x|^2 / (4 i D)),

which solves the same equation with ``V~ = lam^2 V(lam x, s)`` and
``F~ = lam^{n/2+2} F(lam x, s) exp(...)``. With the normalization
``alpha beta = 1`` everything depends on ``gamma = alpha / beta`` only and
``lam`` becomes :func:`alpha_of_t`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import Grid, Trajectory
from .propagator import PotentialSpec

ALIAS_TOL = 1e-8


class AppellDomainError(ValueError):
    """The dilated argument leaves the box or the time map leaves the data."""


def _check_gamma(gamma) -> None:
    if not np.all(np.asarray(gamma) > 0):
        raise ValueError("gamma must be positive")


def _check_unit(name, x) -> None:
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must lie in [0, 1]")


def alpha_of_t(gamma, t):
    """``1 / (sqrt(gamma)(1-t) + t/sqrt(gamma))``."""
    _check_gamma(gamma)
    _check_unit("t", t)
    g = np.sqrt(gamma)
    return 1.0 / (g * (1 - t) + t / g)


def s_of_t(gamma, t):
    _check_gamma(gamma)
    _check_unit("t", t)
    return t / (gamma * (1 - t) + t)


def t_of_s(gamma, s):
    _check_gamma(gamma)
    _check_unit("s", s)
    return s * gamma / (1 + s * (gamma - 1))


def beta_of_t(gamma, t):
    _check_gamma(gamma)
    _check_unit("t", t)
    return 1.0 / (1 - t + t / gamma) - 1.0 / (gamma * (1 - t) + t)


def dt_ds(gamma, s):
    """Jacobian of ``t(s)``."""
    return gamma / (1 + s * (gamma - 1)) ** 2


@dataclass(frozen=True)
class ScalarFns:
    """The gamma-dependent maps bundled for one gamma."""

    gamma: float

    def alpha(self, t):
        return alpha_of_t(self.gamma, t)

    def beta(self, t):
        return beta_of_t(self.gamma, t)

    def s(self, t):
        return s_of_t(self.gamma, t)

    def t(self, s):
        return t_of_s(self.gamma, s)

    def dt_ds(self, s):
        return dt_ds(self.gamma, s)


def interval_1(gamma):
    """Image of ``t in [3/8, 5/8]`` under ``s(t)``."""
    return 3.0 / (5 * gamma + 3), 5.0 / (3 * gamma + 5)


def interval_2(gamma):
    """Image of ``t in [1/4, 3/4]`` under ``s(t)``."""
    return 1.0 / (3 * gamma + 1), 3.0 / (gamma + 3)


@dataclass(frozen=True)
class IntervalBounds:
    gamma: float

    @property
    def interval_1(self):
        return interval_1(self.gamma)

    @property
    def interval_2(self):
        return interval_2(self.gamma)

    @property
    def nested(self) -> bool:
        a1, b1 = self.interval_1
        a2, b2 = self.interval_2
        return a2 <= a1 and b1 <= b2


@dataclass
class BoundReport:
    """Per-inequality outcome of the scalar bound suite.

    ``checks[name]`` is ``(passed, worst_slack)``; slack is the smallest
    distance to the violated side (negative means violated). For the
    identity the slack is ``tol - max relative error``.
    """

    gamma: object
    samples: int
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def lines(self):
        for name, (ok, slack) in self.checks.items():
            yield f"{'PASS' if ok else 'FAIL'} {name} slack={slack:.3e}"


IDENTITY_TOL = 1e-12


def _between(lo, x, hi):
    slack = np.minimum(x - lo, hi - x)
    return bool(np.all(slack >= 0)), float(np.min(slack))


def bound_checks(gamma, frac) -> dict:
    """Evaluate every scalar bound at the points ``frac`` in ``[0, 1]``.

    ``gamma`` and ``frac`` broadcast together; ``frac`` is the relative
    position inside each time interval or ``s`` interval, so one call can
    cover many random ``(gamma, t)`` pairs.
    """
    gamma, frac = np.broadcast_arrays(np.asarray(gamma, dtype=float), np.asarray(frac, dtype=float))
    rg = np.sqrt(gamma)
    out = {}

    t1 = 3 / 8 + frac / 4
    a1 = alpha_of_t(gamma, t1)
    out["alpha_on_[3/8,5/8]"] = _between(1 / rg, a1, 3 / rg)

    lo1, hi1 = interval_1(gamma)
    err = max(float(np.max(np.abs(s_of_t(gamma, 3 / 8) - lo1) / lo1)),
              float(np.max(np.abs(s_of_t(gamma, 5 / 8) - hi1) / hi1)))
    out["interval_1_is_image"] = (bool(err <= 1e-12), 1e-12 - float(err))
    len1 = hi1 - lo1
    out["length_I1"] = _between(1 / (4 * gamma), len1, 2 / gamma)
    s1 = lo1 + frac * len1
    out["dt/ds_on_I1"] = _between(gamma / 8, dt_ds(gamma, s1), gamma)

    t2 = 1 / 4 + frac / 2
    a2 = alpha_of_t(gamma, t2)
    out["alpha_on_[1/4,3/4]"] = _between(1 / rg, a2, 4 / rg)
    b2 = beta_of_t(gamma, t2)
    out["beta_on_[1/4,3/4]"] = _between(0.0, b2, 4.0)
    mid = 1.0 / (1 - t2 + t2 / gamma)
    out["beta_intermediate"] = _between(b2, mid, 4.0)
    lo2, hi2 = interval_2(gamma)
    len2 = hi2 - lo2
    out["length_I2"] = _between(1 / (2 * gamma), len2, 3 / gamma)
    s2 = lo2 + frac * len2
    out["dt/ds_on_I2"] = _between(gamma / 16, dt_ds(gamma, s2), gamma)
    out["I1_in_I2"] = _between(0.0, np.minimum(lo1 - lo2, hi2 - hi1), np.inf)

    worst = 0.0
    for s in (s1, s2):
        rhs = 1 + s * gamma - s
        worst = max(worst, float(np.max(np.abs(rg * alpha_of_t(gamma, t_of_s(gamma, s)) - rhs) / rhs)))
    out["identity_sqrt(g)alpha(t(s))"] = (worst <= IDENTITY_TOL, IDENTITY_TOL - worst)
    return out


def check_interval_bounds(gamma: float, samples: int = 10_000) -> BoundReport:
    """Dense-sampling check of the scalar bounds for one ``gamma > 16``."""
    if not gamma > 16:
        raise ValueError(f"gamma must exceed 16, got {gamma}")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    frac = np.linspace(0.0, 1.0, samples)
    return BoundReport(gamma, samples, bound_checks(gamma, frac))


def random_bound_suite(n: int, rng: np.random.Generator, gamma_range=(16.0 + 1e-6, 1e8)) -> BoundReport:
    """The bound suite on ``n`` random ``(gamma, position)`` pairs.

    ``gamma`` is log-uniform on ``gamma_range``.
    """
    lo, hi = gamma_range
    if not lo > 16:
        raise ValueError("gamma range must lie above 16")
    gamma = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    frac = rng.uniform(0.0, 1.0, n)
    return BoundReport((lo, hi), n, bound_checks(gamma, frac))


@dataclass(frozen=True)
class AppellParams:
    """``gamma = alpha / beta``; normalized to ``alpha beta = 1`` by default."""

    gamma: float
    general_alpha: Optional[float] = None
    general_beta: Optional[float] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if (self.general_alpha is None) != (self.general_beta is None):
            raise ValueError("give both general_alpha and general_beta or neither")
        if self.general_alpha is not None:
            if not (self.general_alpha > 0 and self.general_beta > 0):
                raise ValueError("alpha and beta must be positive")
            ratio = self.general_alpha / self.general_beta
            if abs(ratio - self.gamma) > 1e-12 * self.gamma:
                raise ValueError("gamma must equal alpha / beta")

    @classmethod
    def from_alpha_beta(cls, alpha: float, beta: float) -> "AppellParams":
        return cls(alpha / beta, alpha, beta)

    @property
    def alpha(self) -> float:
        return self.general_alpha if self.general_alpha is not None else math.sqrt(self.gamma)

    @property
    def beta(self) -> float:
        return self.general_beta if self.general_beta is not None else 1.0 / math.sqrt(self.gamma)

    def inverse(self) -> "AppellParams":
        return AppellParams(1.0 / self.gamma, self.beta, self.alpha)

    def denom(self, t):
        return self.alpha * (1 - t) + self.beta * t

    def dilation(self, t):
        return math.sqrt(self.alpha * self.beta) / self.denom(t)

    def s_of(self, t):
        return self.beta * t / self.denom(t)

    def t_of(self, s):
        return self.alpha * s / (self.beta * (1 - s) + self.alpha * s)

    def chirp(self, t):
        """Coefficient ``c`` of the phase ``exp(-i c |x|^2)``."""
        return (self.alpha - self.beta) / (4 * self.denom(t))

    def max_dilation_squared(self, t0: float = 0.0, t1: float = 1.0) -> float:
        # lam is monotone in t
        return max(self.dilation(t0), self.dilation(t1)) ** 2


# -- spatial / temporal resampling --


def _lagrange_cubic(times: np.ndarray, values: np.ndarray, s: float) -> np.ndarray:
    """Two-sided four-point cubic interpolation of ``values`` at time ``s``."""
    n = times.size
    if n < 4:
        raise AppellDomainError("need at least four stored slices")
    k = int(np.searchsorted(times, s)) - 1
    k0 = min(max(k - 1, 0), n - 4)
    ts = times[k0:k0 + 4]
    out = 0
    for i in range(4):
        w = 1.0
        for j in range(4):
            if j != i:
                w *= (s - ts[j]) / (ts[i] - ts[j])
        out = out + w * values[k0 + i]
    return out


def _trig_matrix(grid: Grid, points: np.ndarray) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant at ``points`` (one axis).

    The Nyquist mode is taken as a cosine. Points outside the box get zero
    rows.
    """
    n = grid.points_per_axis
    half = n // 2
    dk = grid.wavenumbers[0][1]
    z = np.exp(1j * dk * (points + grid.half_width))
    # powers z^m, m = 0..n/2, by running product (error ~ n * eps)
    P = np.cumprod(np.concatenate([np.ones((z.size, 1), complex),
                                   np.repeat(z[:, None], half, axis=1)], axis=1), axis=1)
    E = np.empty((z.size, n), dtype=complex)
    E[:, :half] = P[:, :half]
    E[:, half] = P[:, half].real
    E[:, half + 1:] = np.conj(P[:, half - 1:0:-1])
    E /= n
    outside = np.abs(points) > grid.half_width
    E[outside] = 0.0
    return E


def evaluate_dilated(values: np.ndarray, grid: Grid, lam: float) -> np.ndarray:
    """Trigonometric interpolant of ``values`` at ``lam * x`` on the grid."""
    E = _trig_matrix(grid, lam * grid.axis)
    c = np.fft.fftn(values, axes=grid.fft_axes)
    if grid.dim == 1:
        return E @ c
    return E @ c @ E.T


def _alias_fraction(values: np.ndarray, grid: Grid, lam: float) -> float:
    """Mass fraction that would fall outside the output box."""
    dens = np.abs(values) ** 2
    total = dens.sum()
    if total == 0:
        return 0.0
    reach = min(lam, 1.0) * grid.half_width - 3 * grid.spacing
    outside = np.zeros(grid.shape, dtype=bool)
    for c in grid.coords:
        outside |= np.abs(c) > reach
    return float(dens[outside].sum() / total)


def appell_transform(traj: Trajectory, params: AppellParams, direction: str = "forward",
                     times=None) -> Trajectory:
    """Transform a trajectory ``u(y, s)`` into ``u~(x, t)`` on the same grid.

    ``times`` are the target times (uniform); by default the image of the
    input time range with the same number of slices. ``direction='inverse'``
    applies the transform with ``alpha`` and ``beta`` swapped, which undoes
    the forward map.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    p = params if direction == "forward" else params.inverse()
    grid = traj.grid
    s_lo, s_hi = traj.times[0], traj.times[-1]
    if times is None:
        times = np.linspace(p.t_of(s_lo), p.t_of(s_hi), len(traj))
    times = np.asarray(times, dtype=float)
    tol = 1e-12 * max(1.0, abs(s_hi))
    out = np.empty((times.size,) + grid.shape, dtype=complex)
    r2 = grid.radius**2
    n = grid.dim
    for j, t in enumerate(times):
        s = p.s_of(t)
        if s < s_lo - tol or s > s_hi + tol:
            raise AppellDomainError(f"s(t={t:.6g}) = {s:.6g} outside data range [{s_lo:.6g}, {s_hi:.6g}]")
        slab = _lagrange_cubic(traj.times, traj.values, min(max(s, s_lo), s_hi))
        lam = p.dilation(t)
        frac = _alias_fraction(slab, grid, lam)
        if frac > ALIAS_TOL:
            raise AppellDomainError(
                f"dilation {lam:.4g} at t={t:.6g} pushes mass fraction {frac:.2e} out of the box")
        phase = np.exp(-1j * p.chirp(t) * r2)
        out[j] = lam ** (n / 2) * evaluate_dilated(slab, grid, lam) * phase
    return Trajectory(grid, times, out)


def transform_potential(V: PotentialSpec, params: AppellParams) -> PotentialSpec:
    """``V~(x, t) = lam(t)^2 V(lam(t) x, s(t))``."""
    if V.is_zero:
        return PotentialSpec("zero", lambda coords, t: 0.0, 0.0)
    p = params

    def fn(coords, t):
        lam = p.dilation(t)
        return lam**2 * V.evaluate(tuple(lam * c for c in coords), p.s_of(t))

    return PotentialSpec("appell", fn, V.sup_bound * p.max_dilation_squared(),
                         {"source": V, "params": p})


def transform_forcing(F: PotentialSpec, params: AppellParams) -> PotentialSpec:
    """``F~ = lam^{n/2+2} F(lam x, s(t)) exp(-i chirp |x|^2)``."""
    if F.is_zero:
        return PotentialSpec("zero", lambda coords, t: 0.0, 0.0)
    p = params

    def fn(coords, t):
        lam = p.dilation(t)
        n = len(coords)
        r2 = sum(c**2 for c in coords)
        vals = F.evaluate(tuple(lam * c for c in coords), p.s_of(t))
        return lam ** (n / 2 + 2) * vals * np.exp(-1j * p.chirp(t) * r2)

    lam_max = math.sqrt(p.max_dilation_squared())
    bound = F.sup_bound * max(lam_max**2.5, lam_max**3)
    return PotentialSpec("appell", fn, bound, {"source": F, "params": p})


def potential_sup_on(Vt: PotentialSpec, grid: Grid, times) -> float:
    """Measured ``sup |V~|`` on the grid at ``times``."""
    return Vt.max_modulus(grid, times)
