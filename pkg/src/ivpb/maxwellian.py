"""Local and global Maxwellians, hydrodynamic moments, the five collision
invariants chi_0..chi_4, the hydrodynamic projection and the polynomial
velocity weight.

The chi functions are the orthonormal null-space basis of the linearized
collision operator attached to a local Maxwellian background:

    chi_0 = sqrt(mu) / sqrt(rho)
    chi_i = (v^i - u^i) sqrt(mu) / sqrt(rho theta),  i = 1..3
    chi_4 = (|v - u|^2 / theta - 3) sqrt(mu) / sqrt(6 rho)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import VelocityGrid, integrate_velocity

__all__ = [
    "LocalMaxwellianParams",
    "GlobalMaxwellian",
    "ChiBasis",
    "WeightConfig",
    "eval_local_maxwellian",
    "eval_global_maxwellian",
    "moments",
    "build_chi_basis",
    "project_hydro",
    "hydro_coordinates",
    "select_theta_M",
    "velocity_weight",
]

GRAM_HARD_FAIL = 1e-4


@dataclass(frozen=True)
class LocalMaxwellianParams:
    rho: float
    u: tuple[float, float, float]
    theta: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("density must be positive")
        if self.theta <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "u", tuple(float(c) for c in self.u))
        if len(self.u) != 3:
            raise ValueError("bulk velocity must be a 3-vector")


@dataclass(frozen=True)
class GlobalMaxwellian:
    theta_M: float

    def __post_init__(self):
        if self.theta_M <= 0:
            raise ValueError("theta_M must be positive")


@dataclass(frozen=True)
class WeightConfig:
    """Polynomial velocity weight w(v) = (1 + |v|^2)^beta, beta >= 7/2."""

    beta: float = 3.5

    def __post_init__(self):
        if self.beta < 3.5:
            raise ValueError(f"beta >= 7/2 required, got {self.beta}")


def velocity_weight(grid: VelocityGrid, beta: float = 3.5) -> np.ndarray:
    WeightConfig(beta=beta)
    v2 = np.sum(grid.nodes**2, axis=1)
    return (1.0 + v2) ** beta


@dataclass(frozen=True)
class ChiBasis:
    """Collision invariants chi_0..chi_4 on one velocity grid.

    ``chi`` holds the analytic formulas evaluated nodewise; ``ortho`` is the
    same span re-orthonormalized against the quadrature inner product, used
    wherever an exact discrete projector is needed.
    """

    params: LocalMaxwellianParams
    grid: VelocityGrid
    chi: np.ndarray = field(repr=False)  # (5, n_nodes)
    ortho: np.ndarray = field(repr=False)  # (5, n_nodes)
    gram_defect: float

    def __post_init__(self):
        self.chi.setflags(write=False)
        self.ortho.setflags(write=False)


def eval_local_maxwellian(
    params: LocalMaxwellianParams, grid: VelocityGrid
) -> np.ndarray:
    """mu(v) = rho (2 pi theta)^{-3/2} exp(-|v - u|^2 / (2 theta)) nodewise."""
    c = grid.nodes - np.asarray(params.u)
    arg = np.sum(c**2, axis=1) / (2.0 * params.theta)
    return params.rho * (2.0 * np.pi * params.theta) ** (-1.5) * np.exp(-arg)


def eval_global_maxwellian(gm: GlobalMaxwellian, grid: VelocityGrid) -> np.ndarray:
    params = LocalMaxwellianParams(rho=1.0, u=(0.0, 0.0, 0.0), theta=gm.theta_M)
    return eval_local_maxwellian(params, grid)


def moments(F: np.ndarray, grid: VelocityGrid):
    """(mass, momentum, energy) = (int F, int v F, int |v|^2 F) dv."""
    F = np.asarray(F)
    mass = integrate_velocity(F, grid)
    mom = np.stack(
        [integrate_velocity(F * grid.nodes[:, i], grid) for i in range(3)], axis=-1
    )
    energy = integrate_velocity(F * np.sum(grid.nodes**2, axis=1), grid)
    return mass, mom, energy


def _raw_chi(params: LocalMaxwellianParams, grid: VelocityGrid) -> np.ndarray:
    mu = eval_local_maxwellian(params, grid)
    sqmu = np.sqrt(mu)
    c = grid.nodes - np.asarray(params.u)
    c2 = np.sum(c**2, axis=1)
    rho, theta = params.rho, params.theta
    chi = np.empty((5, grid.n_nodes))
    chi[0] = sqmu / np.sqrt(rho)
    for i in range(3):
        chi[1 + i] = c[:, i] * sqmu / np.sqrt(rho * theta)
    chi[4] = (c2 / theta - 3.0) * sqmu / np.sqrt(6.0 * rho)
    return chi


def build_chi_basis(params: LocalMaxwellianParams, grid: VelocityGrid) -> ChiBasis:
    """Evaluate the five analytic formulas nodewise and report the Gram defect.

    A defect above 1e-4 signals a grid that does not resolve the Maxwellian
    (v_max or dv too coarse) and raises.
    """
    chi = _raw_chi(params, grid)
    gram = np.array(
        [[integrate_velocity(chi[i] * chi[j], grid) for j in range(5)] for i in range(5)]
    )
    defect = float(np.max(np.abs(gram - np.eye(5))))
    if defect > GRAM_HARD_FAIL:
        raise ValueError(
            f"chi-basis Gram defect {defect:.3e} exceeds {GRAM_HARD_FAIL:.0e}: "
            "velocity grid does not resolve the Maxwellian background "
            f"(need v_max >= ~6 sqrt(theta) + |u|, have v_max={grid.v_max})"
        )
    ortho = chi.copy()
    for i in range(5):
        for j in range(i):
            ortho[i] -= integrate_velocity(ortho[i] * ortho[j], grid) * ortho[j]
        ortho[i] /= np.sqrt(integrate_velocity(ortho[i] * ortho[i], grid))
    return ChiBasis(params=params, grid=grid, chi=chi, ortho=ortho, gram_defect=defect)


def project_hydro(g: np.ndarray, basis: ChiBasis, grid: VelocityGrid | None = None):
    """L^2-orthogonal projection of g onto span{chi_i}; returns (Pg, g - Pg).

    The projection uses the discretely orthonormalized basis so that P is an
    exact (idempotent) projector on the grid.
    """
    grid = grid if grid is not None else basis.grid
    q = basis.ortho
    coeffs = np.array([integrate_velocity(g * q[i], grid) for i in range(5)])
    Pg = coeffs @ q
    return Pg, g - Pg


def hydro_coordinates(
    g: np.ndarray, basis: ChiBasis, background: LocalMaxwellianParams | None = None
):
    """Fluid coordinates (rho_i, u_i, theta_i) of a coefficient field g = F_i/sqrt(mu).

    Inverts the hydrodynamic expansion
        P g = (rho_i/sqrt(rho_0)) chi_0
              + sum_j sqrt(rho_0/theta_0) u_i^j chi_j
              + sqrt(3 rho_0/2) (theta_i/theta_0) chi_4,
    so that int F_i dv = rho_i, int (v-u_0) F_i dv = rho_0 u_i and
    int |v-u_0|^2 F_i dv = 3 theta_i rho_0 + 3 theta_0 rho_i.
    """
    grid = basis.grid
    chi = basis.chi
    background = background if background is not None else basis.params
    rho0, theta0 = background.rho, background.theta
    a = np.array([integrate_velocity(g * chi[i], grid) for i in range(5)])
    rho_i = a[0] * np.sqrt(rho0)
    u_i = a[1:4] * np.sqrt(theta0 / rho0)
    theta_i = a[4] * theta0 * np.sqrt(2.0 / (3.0 * rho0))
    return rho_i, u_i, theta_i


def select_theta_M(theta_field: np.ndarray, policy: str = "midpoint") -> GlobalMaxwellian:
    """Pick theta_M with theta_M <= min(theta) and max(theta) <= 2 theta_M.

    The admissible bracket is [max(theta)/2, min(theta)].  Policy
    ``"midpoint"`` (default) returns its midpoint; ``"warm"`` returns the
    upper end min(theta), which keeps the reference Maxwellian as warm as
    admissible so that velocity-weighted remainder norms peak well inside
    the truncation box.  Infeasible when max > 2 min.
    """
    theta_field = np.asarray(theta_field, dtype=float)
    if np.any(theta_field <= 0):
        raise ValueError("temperatures must be positive")
    if policy not in ("midpoint", "warm"):
        raise ValueError("policy must be 'midpoint' or 'warm'")
    lo = float(theta_field.max()) / 2.0
    hi = float(theta_field.min())
    if lo > hi:
        raise ValueError(
            "temperature contrast exceeds the admissible bracket: "
            f"max theta = {theta_field.max():.6g} > 2 * min theta = "
            f"{2 * theta_field.min():.6g}"
        )
    return GlobalMaxwellian(theta_M=hi if policy == "warm" else 0.5 * (lo + hi))
