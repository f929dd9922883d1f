"""Compressible ionic Euler-Poisson solver.

Barotropic system on the torus,

    dt rho + div(rho u) = 0
    dt(rho u) + div(rho u x u) + grad p = -rho grad phi,   p = K rho^{5/3}
    Lap phi = e^phi - rho,

with the algebraic closure theta = K rho^{2/3} (no independent energy
equation).  Finite-volume Rusanov fluxes with optional MUSCL (minmod)
reconstruction and SSP-RK2 time stepping; the potential is re-solved from
the nonlinear Poisson equation at every stage.

The velocity field always carries three components; only the spatial axes
present in the grid are transported, the remaining components are advected
as passive momentum densities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .grids import SpatialGrid
from .poisson import EllipticSolveOptions, gradient, solve_nonlinear_poisson

__all__ = [
    "FluidState",
    "EulerOptions",
    "EulerTrajectory",
    "init_irrotational",
    "equilibrium_state",
    "cfl_dt",
    "step_euler_poisson",
    "run_euler",
    "time_derivatives",
    "export_trajectory_csv",
]

GAMMA = 5.0 / 3.0


@dataclass(frozen=True)
class EulerOptions:
    K: float = 1.0
    cfl: float = 0.4
    muscl: bool = False
    wave_speed_margin: float = 1.5
    elliptic: EllipticSolveOptions = field(default_factory=EllipticSolveOptions)

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError("pressure constant K must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")


@dataclass(frozen=True)
class FluidState:
    """Fluid fields on one spatial grid; theta = K rho^{2/3} is derived."""

    rho: np.ndarray  # grid.shape
    u: np.ndarray  # (3, *grid.shape)
    phi: np.ndarray  # grid.shape
    K: float
    time: float = 0.0

    def __post_init__(self):
        if np.min(self.rho) <= 0:
            raise ValueError("vacuum: density must stay positive")
        if self.K <= 0:
            raise ValueError("pressure constant K must be positive")

    @property
    def theta(self) -> np.ndarray:
        return self.K * self.rho ** (2.0 / 3.0)

    @property
    def pressure(self) -> np.ndarray:
        return self.K * self.rho**GAMMA

    def sound_speed(self) -> np.ndarray:
        return np.sqrt(GAMMA * self.K * self.rho ** (2.0 / 3.0))


@dataclass(frozen=True)
class EulerTrajectory:
    """Stored snapshots plus a cubic Hermite interpolant in time.

    The Hermite derivative data comes from the PDE right-hand side at each
    snapshot, not from differencing the stored series.
    """

    grid: SpatialGrid
    states: tuple
    times: np.ndarray

    def __post_init__(self):
        self.times.setflags(write=False)

    def interpolant(self):
        """CubicHermiteSpline over stacked (rho, u, phi) fields."""
        ys, dys = [], []
        opts = EulerOptions(K=self.states[0].K)
        for s in self.states:
            drho, du, _, dphi = time_derivatives(s, self.grid, opts)
            ys.append(np.concatenate([s.rho[None], s.u, s.phi[None]], axis=0))
            dys.append(np.concatenate([drho[None], du, dphi[None]], axis=0))
        if len(self.states) == 1:
            y0 = ys[0]
            return lambda t: y0
        return CubicHermiteSpline(self.times, np.stack(ys), np.stack(dys), axis=0)

    def state_at(self, t: float) -> FluidState:
        if len(self.states) == 1:
            return self.states[0]
        y = self.interpolant()(t)
        return FluidState(rho=y[0], u=y[1:4], phi=y[4], K=self.states[0].K, time=t)


def equilibrium_state(grid: SpatialGrid, rho0: float = 1.0, K: float = 1.0) -> FluidState:
    rho = np.full(grid.shape, float(rho0))
    return FluidState(
        rho=rho,
        u=np.zeros((3,) + grid.shape),
        phi=np.full(grid.shape, np.log(float(rho0))),
        K=K,
    )


def init_irrotational(
    amplitude: float,
    modes: list,
    K: float,
    grid: SpatialGrid,
    opts: EulerOptions | None = None,
    velocity_amplitude: float | None = None,
) -> FluidState:
    """Cosine density perturbation with u = grad(chi) (irrotational).

    rho = 1 + amplitude * sum_k cos(k . x), chi built from the same modes so
    that the curl of u vanishes identically.
    """
    if abs(amplitude) > 0.1:
        raise ValueError("amplitude must satisfy |amplitude| <= 0.1 (small-data regime)")
    opts = opts or EulerOptions(K=K)
    if velocity_amplitude is None:
        velocity_amplitude = amplitude
    xs = grid.coords()
    rho = np.ones(grid.shape)
    u = np.zeros((3,) + grid.shape)
    for mode in modes:
        mode = np.asarray(mode, dtype=float)
        if len(mode) != grid.dim:
            raise ValueError(f"mode {mode} does not match spatial dim {grid.dim}")
        kvec = 2.0 * np.pi * mode / grid.length
        phase = sum(kvec[a] * xs[a] for a in range(grid.dim))
        rho = rho + amplitude * np.cos(phase)
        # chi = (va / |k|^2) sin(k.x)  =>  u = grad chi = va * khat-aligned cosine
        k2 = float(np.dot(kvec, kvec))
        if k2 > 0:
            for a in range(grid.dim):
                u[a] += velocity_amplitude * (kvec[a] / np.sqrt(k2)) * np.cos(phase)
    phi = solve_nonlinear_poisson(rho, grid, opts.elliptic)
    return FluidState(rho=rho, u=u, phi=phi, K=K)


def _conserved(state: FluidState) -> np.ndarray:
    U = np.empty((4,) + state.rho.shape)
    U[0] = state.rho
    U[1:] = state.rho * state.u
    return U


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _hyperbolic_rhs(U: np.ndarray, grid: SpatialGrid, opts: EulerOptions) -> np.ndarray:
    """-div of the Rusanov numerical flux of the barotropic system."""
    rhs = np.zeros_like(U)
    for axis in range(grid.dim):
        ax = 1 + axis  # array axis (component axis is 0)
        if opts.muscl:
            dU_p = np.roll(U, -1, axis=ax) - U
            dU_m = U - np.roll(U, 1, axis=ax)
            slope = _minmod(dU_p, dU_m)
            UL = U + 0.5 * slope  # left state of interface i+1/2
            UR = np.roll(U - 0.5 * slope, -1, axis=ax)  # right state
        else:
            UL = U
            UR = np.roll(U, -1, axis=ax)
        flux = 0.5 * (_axis_flux(UL, axis, opts) + _axis_flux(UR, axis, opts))
        smax = np.maximum(_axis_speed(UL, axis, opts), _axis_speed(UR, axis, opts))
        flux -= 0.5 * smax * (UR - UL)
        rhs -= (flux - np.roll(flux, 1, axis=ax)) / grid.dx
    return rhs


def _axis_flux(U: np.ndarray, axis: int, opts: EulerOptions) -> np.ndarray:
    rho = U[0]
    ua = U[1 + axis] / rho
    p = opts.K * rho**GAMMA
    F = U * ua
    F[1 + axis] += p
    return F


def _axis_speed(U: np.ndarray, axis: int, opts: EulerOptions) -> np.ndarray:
    rho = U[0]
    c = np.sqrt(GAMMA * opts.K * rho ** (2.0 / 3.0))
    return np.abs(U[1 + axis] / rho) + c


def cfl_dt(state: FluidState, grid: SpatialGrid, opts: EulerOptions) -> float:
    """Largest admissible dt: cfl * dx / (margin * max(|u_a| + c))."""
    c = state.sound_speed()
    smax = max(
        float(np.max(np.abs(state.u[a]) + c)) for a in range(grid.dim)
    )
    return opts.cfl * grid.dx / (opts.wave_speed_margin * smax)


def step_euler_poisson(
    state: FluidState, grid: SpatialGrid, dt: float, opts: EulerOptions | None = None
) -> FluidState:
    """One SSP-RK2 step of the barotropic Euler-Poisson system."""
    opts = opts or EulerOptions(K=state.K)
    if opts.K != state.K:
        raise ValueError("options K does not match state K")
    dt_max = cfl_dt(state, grid, opts)
    if dt > dt_max * (1.0 + 1e-12):
        raise ValueError(f"CFL violation: dt={dt:.3e} exceeds bound {dt_max:.3e}")

    def rhs(U, phi_guess):
        phi = solve_nonlinear_poisson(U[0], grid, opts.elliptic, initial_guess=phi_guess)
        out = _hyperbolic_rhs(U, grid, opts)
        gphi = gradient(phi, grid)
        for a in range(grid.dim):
            out[1 + a] -= U[0] * gphi[a]
        return out, phi

    U0 = _conserved(state)
    k1, phi1 = rhs(U0, state.phi)
    U1 = U0 + dt * k1
    if np.min(U1[0]) <= 0:
        raise ValueError("vacuum: density went non-positive mid-step")
    k2, phi2 = rhs(U1, phi1)
    U2 = 0.5 * (U0 + U1 + dt * k2)
    if np.min(U2[0]) <= 0:
        raise ValueError("vacuum: density went non-positive")
    phi = solve_nonlinear_poisson(U2[0], grid, opts.elliptic, initial_guess=phi2)
    return FluidState(
        rho=U2[0], u=U2[1:] / U2[0], phi=phi, K=state.K, time=state.time + dt
    )


def run_euler(
    state: FluidState,
    grid: SpatialGrid,
    T: float,
    opts: EulerOptions | None = None,
    store_every: int = 1,
    dt: float | None = None,
) -> EulerTrajectory:
    """Evolve to time T storing every ``store_every``-th step (plus endpoints)."""
    opts = opts or EulerOptions(K=state.K)
    if T < 0:
        raise ValueError("T must be nonnegative")
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    states = [state]
    times = [state.time]
    if T > 0:
        t_end = state.time + T
        step_count = 0
        while state.time < t_end - 1e-14:
            step = dt if dt is not None else 0.95 * cfl_dt(state, grid, opts)
            step = min(step, t_end - state.time)
            state = step_euler_poisson(state, grid, step, opts)
            step_count += 1
            if step_count % store_every == 0 or state.time >= t_end - 1e-14:
                states.append(state)
                times.append(state.time)
    return EulerTrajectory(grid=grid, states=tuple(states), times=np.asarray(times))


def time_derivatives(state: FluidState, grid: SpatialGrid, opts: EulerOptions | None = None):
    """(dt rho, dt u, dt theta, dt phi) from the PDE right-hand side.

    Centered differences of the smooth fields; dt theta follows from the
    barotropic chain rule and dt phi from differentiating the Poisson
    equation: (e^phi - Lap) dt phi = dt rho.
    """
    from .poisson import solve_screened_poisson

    opts = opts or EulerOptions(K=state.K)
    rho, u, phi = state.rho, state.u, state.phi
    grad_rho = gradient(rho, grid)
    grad_phi = gradient(phi, grid)
    div_rho_u = np.zeros(grid.shape)
    for a in range(grid.dim):
        div_rho_u += gradient(rho * u[a], grid)[a]
    drho = -div_rho_u
    du = np.zeros_like(u)
    # grad p / rho = gamma K rho^{-1/3} grad rho / ... = c^2 grad(rho)/rho
    c2 = GAMMA * opts.K * rho ** (2.0 / 3.0)
    for comp in range(3):
        adv = np.zeros(grid.shape)
        for a in range(grid.dim):
            adv += u[a] * gradient(u[comp], grid)[a]
        du[comp] = -adv
        if comp < grid.dim:
            du[comp] -= c2 * grad_rho[comp] / rho + grad_phi[comp]
    dtheta = (2.0 / 3.0) * (state.theta / rho) * drho
    dphi = solve_screened_poisson(np.exp(phi), drho, grid, opts.elliptic)
    return drho, du, dtheta, dphi


def export_trajectory_csv(traj: EulerTrajectory, path: str) -> None:
    """Rows: t, cell index, rho, u1, u2, u3, theta, phi."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cell", "rho", "u1", "u2", "u3", "theta", "phi"])
        for t, s in zip(traj.times, traj.states):
            rho = s.rho.ravel()
            th = s.theta.ravel()
            ph = s.phi.ravel()
            uu = s.u.reshape(3, -1)
            for c in range(rho.size):
                writer.writerow(
                    [f"{t:.17g}", c, f"{rho[c]:.17g}", f"{uu[0, c]:.17g}",
                     f"{uu[1, c]:.17g}", f"{uu[2, c]:.17g}", f"{th[c]:.17g}",
                     f"{ph[c]:.17g}"]
                )


def total_mass(state: FluidState, grid: SpatialGrid) -> float:
    return float(np.sum(state.rho) * grid.cell_volume)
