"""Mass-flux identity and the quantities of the lower-bound argument.

The local mass identity used here is

    |u(x,t)|^2 - |u(x,0)|^2 = -2 Im int_0^t div(conj(u) grad u) + V |u|^2 ds

for ``du/dt = i(Lap u + V u)``. Against a weight ``w`` the flux term is
integrated by parts, ``int w div(conj(u) grad u) = -int grad w . conj(u) grad u``.

The proof-chain quantities live on the short ``s``-intervals

    I1 = [3/(5 gamma + 3), 5/(3 gamma + 5)],  I2 = [1/(3 gamma + 1), 3/(gamma + 3)]

(images of ``[3/8, 5/8]`` and ``[1/4, 3/4]`` under ``s(t)``) with the
moving cutoff ``W_s(y) = theta_R(|y| / alpha(t(s)))^2`` and ``R = R0 sqrt(gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.integrate import simpson

from .appell import ScalarFns, interval_1, interval_2
from .carleman import CutoffSet, build_cutoffs
from .grid import Grid, GridError, Trajectory, band_weight, gradient_array, integrate, window_integral
from .observability import MIN_WINDOW_SLICES, ScenarioConstants
from .propagator import PotentialSpec

Weight = Union[None, float, np.ndarray, Callable[..., np.ndarray]]


class DiagnosticsError(ValueError):
    """Admissibility or resolution violation."""


def _weight_array(weight: Weight, grid: Grid) -> np.ndarray:
    if callable(weight):
        return np.broadcast_to(np.asarray(weight(*grid.coords), dtype=float), grid.shape)
    return np.broadcast_to(np.asarray(weight, dtype=float), grid.shape)


def _flux(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """``conj(u) grad u`` componentwise."""
    return [np.conj(values) * d for d in gradient_array(values, grid)]


def _potential_stack(V: PotentialSpec | None, grid: Grid, times) -> np.ndarray | float:
    if V is None or V.is_zero:
        return 0.0
    return np.stack([V.on_grid(grid, t) for t in times])


def mass_identity_residual(traj: Trajectory, V: PotentialSpec | None = None, weight: Weight = None,
                           t: float | None = None) -> float:
    """Defect of the mass identity between the first slice and time ``t``.

    Without a weight: the L1 norm over ``x`` of the pointwise defect. With a
    weight (a constant, an array or a callable on the coordinates): the
    absolute defect of the weighted integral, flux term by parts. The time
    integral uses Simpson's rule on the stored slices.
    """
    g = traj.grid
    k = len(traj) - 1 if t is None else traj.index_of(t)
    if k < 2:
        raise GridError("need at least three stored slices up to t")
    times = traj.times[: k + 1]
    u = traj.values[: k + 1]
    Vs = _potential_stack(V, g, times)
    pot = Vs * np.abs(u) ** 2
    flux = _flux(u, g)
    lhs = np.abs(u[-1]) ** 2 - np.abs(u[0]) ** 2
    if weight is None:
        div = sum(gradient_array(f, g)[ax] for ax, f in enumerate(flux))
        rhs = -2 * np.imag(simpson(div + pot, x=times, axis=0))
        return float(integrate(np.abs(lhs - rhs), g))
    w = _weight_array(weight, g)
    gw = gradient_array(w.astype(complex), g)
    by_parts = -sum(integrate(np.real(gwi)[None] * f, g) for gwi, f in zip(gw, flux))
    series = by_parts + integrate(w[None] * pot, g)
    rhs = -2 * np.imag(simpson(series, x=times))
    return float(abs(integrate(w * lhs, g) - rhs))


@dataclass
class ProofChainReport:
    """Quantities of the lower-bound argument, their bounds and pass flags.

    ``bound_rhs[name]`` is the right-hand side compared against; ``passed``
    holds ``value <= bound`` (``>=`` for the floor). ``extras`` records the
    direct evaluation of B, the identity defect, the local radius variant
    of A and the parameter conditions.
    """

    gamma: float
    R0: float
    L: float
    A: float
    B: float
    B1: float
    B2: float
    I1: float
    I11: float
    I12: float
    I2: float
    floor: float
    bound_rhs: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def quantities(self) -> dict:
        return {k: getattr(self, k) for k in ("B", "B1", "B2", "I1", "I11", "I12", "I2", "floor")}

    def lines(self):
        for name, ok in self.passed.items():
            tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
            q = self.quantities.get(name, self.extras.get(name))
            yield f"{tag} {name} value={q:.6e} bound={self.bound_rhs[name]:.6e}"


def admissible_gamma(constants: ScenarioConstants) -> float:
    """``max(c0 L/(256 A), 2^14 (A/c0)^4, 1/R0^2, L^2)``."""
    c0, A, L, R0 = constants.c0, constants.A, constants.L, constants.R0
    if constants.flagged:
        raise DiagnosticsError("admissibility needs c0 > 0")
    return max(c0 * L / (256 * A), 2.0**14 * (A / c0) ** 4, 1 / R0**2, L**2)


def _theta_sq(cut: CutoffSet, r_scaled, alpha: float, grid: Grid):
    """``W = theta_R(r/alpha)^2`` and its gradient in ``y``."""
    th = cut.theta(r_scaled)
    dth = cut.theta(r_scaled, 1)
    W = th**2
    r = grid.radius
    safe = np.where(r > 0, r, 1.0)
    radial = 2 * th * dth / alpha
    grad = [np.where(r > 0, radial * x / safe, 0.0) for x in grid.coords]
    return W, grad


def _sigma_conditions(constants: ScenarioConstants, gamma: float, R: float, c_n: float,
                      moving_integral: float) -> dict:
    """The three large-sigma conditions with ``sigma = 64 c_n R^2``, in log space."""
    c0, A, L, R0 = constants.c0, constants.A, constants.L, constants.R0
    sigma = 64 * c_n * R**2
    log_pref = 1.5 * math.log(sigma) - math.log(c_n * R**2)
    cond2 = True if L == 0 else log_pref >= math.log(2 * L / gamma)
    cond3 = log_pref >= math.log(512 * A / c0)
    lhs4 = log_pref + math.log(c0 / 16)
    if moving_integral > 0:
        big = math.log(6 * gamma * R0) + 36 * sigma + 0.5 * math.log(moving_integral)
        rhs4 = float(np.logaddexp(math.log(16 * A), big))
    else:
        rhs4 = math.log(16 * A)
    return {"sigma": sigma, "cond2": bool(cond2), "cond3": bool(cond3), "cond4": bool(lhs4 <= rhs4),
            "cond4_log_lhs": lhs4, "cond4_log_rhs": rhs4}


def proof_chain_diagnostics(traj: Trajectory, gamma: float, constants: ScenarioConstants,
                            cutoffs: CutoffSet | None = None, V: PotentialSpec | None = None,
                            c_n: float | None = None) -> ProofChainReport:
    """Evaluate B, B1, B2, I11, I12, I1, I2 and the initial-mass floor.

    ``traj`` must start at ``s = 0`` with uniform slices covering ``I2``.
    One streaming pass over the slices keeps memory at a few fields.
    """
    g = traj.grid
    R0 = constants.R0
    R = R0 * math.sqrt(gamma)
    if not gamma > 16:
        raise DiagnosticsError("gamma must exceed 16")
    if not constants.flagged:
        need = admissible_gamma(constants)
        if gamma < need * (1 - 1e-12):
            raise DiagnosticsError(f"gamma = {gamma} below the admissible value {need}")
    if R < 2:
        raise DiagnosticsError(f"R = R0 sqrt(gamma) = {R} must be at least 2")
    cut = cutoffs if cutoffs is not None else build_cutoffs(R)
    if abs(cut.R - R) > 1e-9 * R:
        raise DiagnosticsError(f"cutoffs built for R = {cut.R}, expected {R}")
    lo1, hi1 = interval_1(gamma)
    lo2, hi2 = interval_2(gamma)
    times = traj.times
    if abs(times[0]) > 1e-15:
        raise DiagnosticsError("trajectory must start at s = 0")
    if times[-1] < hi2 * (1 - 1e-12):
        raise DiagnosticsError(f"trajectory ends at {times[-1]}, I2 needs {hi2}")
    for lo, hi in ((lo1, hi1), (lo2, hi2)):
        n_in = int(np.sum((times >= lo) & (times <= hi)))
        if n_in < MIN_WINDOW_SLICES:
            raise DiagnosticsError(f"{n_in} slices in [{lo:.3e}, {hi:.3e}], need {MIN_WINDOW_SLICES}")
    ymax = 4 * R0 * (1 + 1 / R) + 3 * g.spacing
    if g.half_width < ymax:
        raise DiagnosticsError(f"box half-width {g.half_width} below the cutoff support {ymax}")
    alpha_min = 1 / math.sqrt(gamma)
    if alpha_min / g.spacing < 4:
        raise DiagnosticsError("grid does not resolve the cutoff transition (need h <= alpha/4)")

    fns = ScalarFns(gamma)
    last = int(min(np.searchsorted(times, hi2, side="left") + 1, times.size - 1))
    dt = traj.dt
    u0 = traj.values[0]
    r = g.radius
    local_disk = r <= 4 * R / math.sqrt(gamma)
    cum_flux = [np.zeros(g.shape, complex) for _ in range(g.dim)]
    cum_pot = np.zeros(g.shape, complex)
    prev_flux = prev_pot = None
    rows = {k: [] for k in ("s", "G1", "G2", "Gd", "Gf", "H11", "H12", "H2", "P11", "P12", "P2", "Pm")}
    A_local2 = 0.0
    for k in range(last + 1):
        s = float(times[k])
        u = traj.values[k]
        grads = gradient_array(u, g)
        flux = [np.conj(u) * d for d in grads]
        Vk = 0.0 if V is None or V.is_zero else V.on_grid(g, s)
        pot = Vk * np.abs(u) ** 2
        if k > 0:
            for i in range(g.dim):
                cum_flux[i] += 0.5 * dt * (prev_flux[i] + flux[i])
            cum_pot += 0.5 * dt * (prev_pot + pot)
        prev_flux, prev_pot = flux, pot
        u2 = np.abs(u) ** 2
        gu2 = sum(np.abs(d) ** 2 for d in grads)
        A_local2 = max(A_local2, float(integrate(np.where(local_disk, u2 + gu2, 0.0), g)))
        rows["s"].append(s)
        if s == 0:
            for key in list(rows)[1:]:
                rows[key].append(0.0)
            continue
        tt = float(fns.t(s))
        alpha = float(fns.alpha(tt))
        beta = float(fns.beta(tt))
        W, gradW = _theta_sq(cut, r / alpha, alpha, g)
        rows["G1"].append(2 * float(np.imag(sum(integrate(gw * cf, g) for gw, cf in zip(gradW, cum_flux)))))
        rows["G2"].append(-2 * float(np.imag(integrate(W * cum_pot, g))))
        rows["Gd"].append(float(integrate(W * (u2 - np.abs(u0) ** 2), g)))
        rows["Gf"].append(float(integrate(W * np.abs(u0) ** 2, g)))
        jac = float(fns.dt_ds(s))
        ball = r <= alpha * (R + 1)
        shell = ball & (r >= alpha * R)
        gv2 = sum(np.abs(alpha * d - 0.5j * (beta / alpha) * x * u) ** 2 for d, x in zip(grads, g.coords))
        rows["H11"].append(jac * float(integrate(np.where(ball, u2, 0.0), g)))
        rows["H12"].append(4 / R**2 * jac * float(integrate(np.where(ball, gv2, 0.0), g)))
        rows["H2"].append(jac * float(integrate(np.where(shell, u2 + gv2, 0.0), g)))
        mix = u2 + gu2 / gamma
        rows["P11"].append(gamma * float(integrate(np.where(ball, u2, 0.0), g)))
        rows["P12"].append(36 * gamma * float(integrate(np.where(ball, mix, 0.0), g)))
        rows["P2"].append(32 * gamma**2 * R0**2 * float(integrate(np.where(shell, mix, 0.0), g)))
        band = band_weight(g, R0 + R0 * s * gamma, 4 * R0 / math.sqrt(gamma))
        rows["Pm"].append(float(integrate(band * mix, g)))

    S = np.array(rows["s"])
    on1 = lambda key: window_integral(S, np.array(rows[key]), lo1, hi1)
    on2 = lambda key: window_integral(S, np.array(rows[key]), lo2, hi2)
    b1s, b2s, bd = on1("G1"), on1("G2"), on1("Gd")
    B1, B2 = abs(b1s), abs(b2s)
    B = abs(b1s + b2s)
    floor = gamma * on1("Gf")
    I11, I12, I2 = on2("H11"), on2("H12"), on2("H2")
    I1 = I11 + I12
    A, L, c0 = constants.A, constants.L, constants.c0

    bounds = {
        "B1": 8 * A**2 / gamma**1.5,
        "B2": 8 * A**2 * L / gamma**2,
        "gammaB": 16 * A**2 / math.sqrt(gamma),
        "I11": on2("P11"),
        "I12": on2("P12"),
        "I1": 216 * A**2,
        "I2": on2("P2"),
        "floor": c0**2 / 4,
    }
    values = {"B1": B1, "B2": B2, "gammaB": gamma * B, "I11": I11, "I12": I12, "I1": I1, "I2": I2, "floor": floor}
    tol = 1e-12
    passed = {k: values[k] <= bounds[k] * (1 + tol) + 1e-300 for k in bounds if k != "floor"}
    passed["floor"] = None if constants.flagged else floor >= bounds["floor"]
    if L > 0 and gamma < L**2:
        passed["gammaB"] = None  # only claimed once gamma >= L^2
    extras = {
        "B_direct": abs(bd),
        "identity_defect": abs(bd - (b1s + b2s)),
        "B_triangle_ok": B <= (B1 + B2) * (1 + 1e-10) + 1e-300,
        "A_local": math.sqrt(A_local2),
        "B1_bound_local": 8 * A_local2 / gamma**1.5,
        "B2_bound_local": 8 * A_local2 * L / gamma**2,
        "gammaB": gamma * B,
        "moving_annulus_integral": on2("Pm"),
        "R": R,
    }
    extras["B1_local_ok"] = B1 <= extras["B1_bound_local"] * (1 + tol) + 1e-300
    extras["B2_local_ok"] = B2 <= extras["B2_bound_local"] * (1 + tol) + 1e-300
    if c_n is not None and not constants.flagged:
        extras.update(_sigma_conditions(constants, gamma, R, c_n, extras["moving_annulus_integral"]))
    return ProofChainReport(gamma=gamma, R0=R0, L=L, A=A, B=B, B1=B1, B2=B2, I1=I1, I11=I11, I12=I12,
                            I2=I2, floor=floor, bound_rhs=bounds, passed=passed, extras=extras)


def halve_slices(traj: Trajectory) -> Trajectory:
    """Every other slice, for a doubled-step resolution comparison."""
    return Trajectory(traj.grid, traj.times[::2], traj.values[::2])


def chain_resolution_change(traj: Trajectory, gamma: float, constants: ScenarioConstants,
                            V: PotentialSpec | None = None) -> dict:
    """Relative change of each quantity when the time step is doubled."""
    fine = proof_chain_diagnostics(traj, gamma, constants, V=V)
    coarse = proof_chain_diagnostics(halve_slices(traj), gamma, constants, V=V)
    out = {}
    for k, v in fine.quantities.items():
        w = coarse.quantities[k]
        out[k] = abs(v - w) / abs(v) if v else abs(w)
    return out
