"""Elliptic solvers on the periodic torus.

Nonlinear Poisson-Boltzmann solve  Lap(phi) = e^phi - rho  by Newton
iteration, screened linear solves  (c - Lap) u = r  by CG with an
FFT-diagonalized constant-coefficient preconditioner, and the Lyapunov
energy density  psi e^psi - e^psi + 1.

The Laplacian is the second-order centered stencil; its exact Fourier
symbol  (2 - 2 cos(k dx)) / dx^2  per axis is what the preconditioner and
the direct constant-coefficient solver invert.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import SpatialGrid

__all__ = [
    "EllipticSolveOptions",
    "laplacian",
    "gradient",
    "solve_nonlinear_poisson",
    "solve_screened_poisson",
    "lyapunov_energy",
    "NewtonDivergenceError",
]


@dataclass(frozen=True)
class EllipticSolveOptions:
    newton_tol: float = 1e-11
    max_newton: int = 30
    krylov_tol: float = 1e-12
    max_krylov: int = 200

    def __post_init__(self):
        if min(self.newton_tol, self.krylov_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1 or self.max_krylov < 1:
            raise ValueError("iteration limits must be positive")


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def laplacian(phi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Second-order centered periodic Laplacian."""
    phi = np.asarray(phi)
    out = np.zeros_like(phi, dtype=float)
    inv_dx2 = 1.0 / grid.dx**2
    for axis in range(grid.dim):
        out += (np.roll(phi, -1, axis=axis) - 2.0 * phi + np.roll(phi, 1, axis=axis)) * inv_dx2
    return out


def gradient(phi: np.ndarray, grid: SpatialGrid) -> list[np.ndarray]:
    """Second-order centered periodic gradient, one array per spatial axis."""
    phi = np.asarray(phi)
    inv_2dx = 0.5 / grid.dx
    return [
        (np.roll(phi, -1, axis=axis) - np.roll(phi, 1, axis=axis)) * inv_2dx
        for axis in range(grid.dim)
    ]


def _stencil_symbol(grid: SpatialGrid) -> np.ndarray:
    """Fourier symbol of the centered-stencil Laplacian, shape grid.shape."""
    n, dx = grid.cells_per_axis, grid.dx
    sym1 = (2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(n))) / dx**2
    total = np.zeros(grid.shape)
    for axis in range(grid.dim):
        shape = [1] * grid.dim
        shape[axis] = n
        total = total + sym1.reshape(shape)
    return total


def solve_screened_poisson(
    c: np.ndarray,
    rhs: np.ndarray,
    grid: SpatialGrid,
    opts: EllipticSolveOptions | None = None,
) -> np.ndarray:
    """Solve (c - Lap_h) u = rhs with cellwise positive c.

    Preconditioned CG; the preconditioner is the exact inverse of
    (mean(c) - Lap_h) applied via FFT diagonalization of the stencil.
    """
    opts = opts or EllipticSolveOptions()
    c = np.broadcast_to(np.asarray(c, dtype=float), grid.shape)
    rhs = np.asarray(rhs, dtype=float).reshape(grid.shape)
    if np.min(c) <= 0:
        raise ValueError("screening coefficient must be positive cellwise")
    cbar = float(np.mean(c))
    denom = cbar + _stencil_symbol(grid)

    def apply_A(u):
        return c * u - laplacian(u, grid)

    def precond(r):
        return np.real(np.fft.ifftn(np.fft.fftn(r) / denom))

    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(grid.shape)
    x = np.zeros(grid.shape)
    r = rhs.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    for _ in range(opts.max_krylov):
        Ap = apply_A(p)
        alpha = rz / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= opts.krylov_tol * bnorm:
            return x
        z = precond(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise RuntimeError(
        f"screened Poisson CG stalled: relative residual "
        f"{np.linalg.norm(apply_A(x) - rhs) / bnorm:.3e} after {opts.max_krylov} iterations"
    )


def solve_nonlinear_poisson(
    rho: np.ndarray,
    grid: SpatialGrid,
    opts: EllipticSolveOptions | None = None,
    initial_guess: np.ndarray | None = None,
) -> np.ndarray:
    """Solve Lap_h(phi) = e^phi - rho on the torus by Newton iteration.

    Jacobian of the residual is (e^phi - Lap_h), inverted by the screened
    solver.  Initial guess log(mean rho) is exact for constant data.  On
    residual growth for three consecutive steps one damped (step-halving)
    retry is attempted before raising.
    """
    opts = opts or EllipticSolveOptions()
    rho = np.asarray(rho, dtype=float).reshape(grid.shape)
    if np.min(rho) <= 0:
        raise ValueError("ion density must be positive cellwise")
    if initial_guess is None:
        phi = np.full(grid.shape, np.log(float(np.mean(rho))))
    else:
        phi = np.array(initial_guess, dtype=float).reshape(grid.shape).copy()

    def residual(p):
        return laplacian(p, grid) - np.exp(p) + rho

    history = []
    growth = 0
    damped_retry_used = False
    res = residual(phi)
    for _ in range(opts.max_newton):
        rnorm = float(np.max(np.abs(res)))
        history.append(rnorm)
        if rnorm <= opts.newton_tol:
            return phi
        delta = solve_screened_poisson(np.exp(phi), res, grid, opts)
        phi_new = phi + delta
        res_new = residual(phi_new)
        if np.max(np.abs(res_new)) > rnorm:
            growth += 1
            if growth >= 3:
                if damped_retry_used:
                    raise NewtonDivergenceError(
                        "nonlinear Poisson Newton iteration diverged "
                        f"(residual history {history})",
                        history,
                    )
                damped_retry_used = True
                growth = 0
                step = 0.5
                while step > 1e-3:
                    phi_try = phi + step * delta
                    res_try = residual(phi_try)
                    if np.max(np.abs(res_try)) < rnorm:
                        phi_new, res_new = phi_try, res_try
                        break
                    step *= 0.5
                else:
                    raise NewtonDivergenceError(
                        "nonlinear Poisson damped retry failed "
                        f"(residual history {history})",
                        history,
                    )
        else:
            growth = 0
        phi, res = phi_new, res_new
    rnorm = float(np.max(np.abs(res)))
    if rnorm <= opts.newton_tol:
        return phi
    raise NewtonDivergenceError(
        f"nonlinear Poisson did not reach tolerance: residual {rnorm:.3e} "
        f"(history {history})",
        history,
    )


def lyapunov_energy(psi: np.ndarray, H: np.ndarray, grid: SpatialGrid) -> float:
    """int H (psi e^psi - e^psi + 1) dx; the integrand is pointwise >= 0."""
    psi = np.asarray(psi, dtype=float)
    H = np.broadcast_to(np.asarray(H, dtype=float), psi.shape)
    density = psi * np.exp(psi) - np.exp(psi) + 1.0
    return float(np.sum(H * density) * grid.cell_volume)
