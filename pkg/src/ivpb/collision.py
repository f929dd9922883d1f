"""Hard-sphere Boltzmann collision operator, its linearization L = nu - K,
the bilinear form Gamma, the pseudo-inverse of L on the microscopic subspace,
and the BGK surrogate.

The discrete Q uses double quadrature over (u, omega) with post-collision
velocities brought back to the grid by tri-linear interpolation; an optional
least-squares fix restores exact discrete conservation of (1, v, |v|^2).
L is assembled densely through a reduced kernel that folds the Gaussian
collision identities in analytically, then symmetrized and composed with the
complement of the hydrodynamic projection so that its null space and symmetry
are exact on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .grids import AngularQuadrature, VelocityGrid, build_angular_quadrature, integrate_velocity
from .maxwellian import (
    ChiBasis,
    LocalMaxwellianParams,
    build_chi_basis,
    eval_local_maxwellian,
    moments,
)

__all__ = [
    "CollisionConfig",
    "LinearizedOperator",
    "collide",
    "collide_parts",
    "conservation_fix",
    "collision_frequency",
    "build_linearized_operator",
    "apply_L",
    "apply_L_collide",
    "apply_Gamma",
    "invert_L",
    "discrete_maxwellian",
    "bgk_relax",
]


@dataclass(frozen=True)
class CollisionConfig:
    mode: str = "bgk"
    angular: Optional[AngularQuadrature] = None
    conservation_fix: bool = True
    bgk_rate: float = 1.0
    interp_order: int = 1  # 1 = trilinear (default), 3 = tricubic

    def __post_init__(self):
        if self.mode not in ("hard_sphere", "bgk"):
            raise ValueError(f"unknown collision mode {self.mode!r}")
        if self.mode == "bgk" and self.bgk_rate <= 0:
            raise ValueError("bgk_rate must be positive")
        if self.interp_order not in (1, 3):
            raise ValueError("interp_order must be 1 (trilinear) or 3 (tricubic)")
        if self.angular is None and self.mode == "hard_sphere":
            object.__setattr__(self, "angular", build_angular_quadrature())
        if self.angular is not None:
            if abs(self.angular.weights.sum() - 4.0 * np.pi) > 1e-12:
                raise ValueError("angular weights must sum to 4*pi")


def _invariant_fields(grid: VelocityGrid) -> np.ndarray:
    v = grid.nodes
    return np.stack(
        [np.ones(grid.n_nodes), v[:, 0], v[:, 1], v[:, 2], np.sum(v**2, axis=1)]
    )


def conservation_fix(Q: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Least-squares projection of Q onto the subspace with exactly zero
    discrete (mass, momentum, energy) moments: subtract the minimal-norm
    combination of the collision invariants carrying the defect."""
    psi = _invariant_fields(grid)
    w = grid.weights
    gram = (psi * w) @ psi.T
    defect = (psi * w) @ Q
    coeffs = np.linalg.solve(gram, defect)
    return Q - coeffs @ psi


def collide_parts(
    F1: np.ndarray, F2: np.ndarray, grid: VelocityGrid, cfg: CollisionConfig
):
    """Gain term and loss frequency of the hard-sphere Q(F1, F2).

    Returns (gain, nu1) with loss(v) = F2(v) * nu1(v); both use the same
    discrete angular rule.  No conservation fix is applied here.
    """
    if cfg.mode != "hard_sphere":
        raise ValueError("collide requires hard_sphere mode")
    F1 = np.ascontiguousarray(F1, dtype=float)
    F2 = np.ascontiguousarray(F2, dtype=float)
    if F1.shape != (grid.n_nodes,) or F2.shape != (grid.n_nodes,):
        raise ValueError("fields must have one entry per velocity node")
    same = F1 is F2 or bool(np.array_equal(F1, F2))
    gain, nu1 = _kernels.collide_pair_kernel(
        F1,
        F2,
        -grid.v_max,
        grid.dv,
        grid.nodes_per_axis,
        cfg.angular.directions,
        cfg.angular.weights,
        cfg.interp_order,
        same,
    )
    return gain, nu1


def collide(
    F1: np.ndarray, F2: np.ndarray, grid: VelocityGrid, cfg: CollisionConfig
) -> np.ndarray:
    """Discrete hard-sphere Q(F1, F2); exactly conservative when
    cfg.conservation_fix is set."""
    gain, nu1 = collide_parts(F1, F2, grid, cfg)
    Q = gain - np.asarray(F2) * nu1
    if cfg.conservation_fix:
        Q = conservation_fix(Q, grid)
    return Q


def collision_frequency(
    background: LocalMaxwellianParams,
    grid: VelocityGrid,
    angular: Optional[AngularQuadrature] = None,
) -> np.ndarray:
    """nu(v) = 2 pi int |u - v| mu(u) du; the angular integral of the
    hard-sphere kernel is int_{S^2} |a.om| dom = 2 pi |a|, done in closed
    form (the ``angular`` argument is accepted for interface symmetry)."""
    mu = eval_local_maxwellian(background, grid)
    return _kernels.nu_analytic_kernel(
        np.ascontiguousarray(mu), -grid.v_max, grid.dv, grid.nodes_per_axis
    )


@dataclass(frozen=True)
class LinearizedOperator:
    """Linearized collision operator around a local Maxwellian background.

    For hard spheres a dense, symmetrized matrix with exact discrete null
    space is stored; for the BGK surrogate the operator is rate * (I - P).
    ``nu`` is the positive collision frequency used as a preconditioner and
    for the nu-weighted norm.
    """

    mode: str
    background: LocalMaxwellianParams
    grid: VelocityGrid
    basis: ChiBasis
    nu: np.ndarray = field(repr=False)
    matrix: Optional[np.ndarray] = field(repr=False, default=None)
    rate: float = 1.0

    def __post_init__(self):
        if np.min(self.nu) <= 0:
            raise ValueError("collision frequency must be strictly positive")
        self.nu.setflags(write=False)
        if self.matrix is not None:
            self.matrix.setflags(write=False)


def _hydro_projector(basis: ChiBasis, grid: VelocityGrid) -> np.ndarray:
    q = basis.ortho
    return (q.T * grid.weights[:, None]) @ q


def build_linearized_operator(
    background: LocalMaxwellianParams,
    grid: VelocityGrid,
    cfg: CollisionConfig,
    basis: Optional[ChiBasis] = None,
) -> LinearizedOperator:
    basis = basis if basis is not None else build_chi_basis(background, grid)
    if cfg.mode == "bgk":
        nu = np.full(grid.n_nodes, cfg.bgk_rate)
        return LinearizedOperator(
            mode="bgk",
            background=background,
            grid=grid,
            basis=basis,
            nu=nu,
            matrix=None,
            rate=cfg.bgk_rate,
        )
    mu = np.ascontiguousarray(eval_local_maxwellian(background, grid))
    sqmu = np.sqrt(mu)
    M = _kernels.assemble_L_kernel(
        mu,
        sqmu,
        -grid.v_max,
        grid.dv,
        grid.nodes_per_axis,
        cfg.angular.directions,
        cfg.angular.weights,
        cfg.interp_order,
    )
    # quadrature weights are uniform, so the weighted symmetrization is the
    # plain one; composing with (I - P) makes null space and symmetry exact
    M = 0.5 * (M + M.T)
    P = _hydro_projector(basis, grid)
    comp = np.eye(grid.n_nodes) - P
    M = comp @ M @ comp
    M = 0.5 * (M + M.T)
    nu = collision_frequency(background, grid)
    return LinearizedOperator(
        mode="hard_sphere",
        background=background,
        grid=grid,
        basis=basis,
        nu=nu,
        matrix=M,
    )


def apply_L(g: np.ndarray, op: LinearizedOperator) -> np.ndarray:
    """L g; symmetric and positive semidefinite with exact null space
    span{chi_i} by construction."""
    g = np.asarray(g, dtype=float)
    if op.mode == "bgk":
        q = op.basis.ortho
        coeffs = np.array([integrate_velocity(g * q[i], op.grid) for i in range(5)])
        return op.rate * (g - coeffs @ q)
    return op.matrix @ g


def apply_L_collide(
    g: np.ndarray,
    background: LocalMaxwellianParams,
    grid: VelocityGrid,
    cfg: CollisionConfig,
) -> np.ndarray:
    """Matrix-free reference L g = -(1/sqrt(mu)) {Q(mu, sqrt(mu) g) +
    Q(sqrt(mu) g, mu)} via two collide calls (no conservation fix); carries
    the raw interpolation defect and serves as a cross-check of the
    assembled operator."""
    mu = eval_local_maxwellian(background, grid)
    sqmu = np.sqrt(mu)
    raw = CollisionConfig(
        mode="hard_sphere",
        angular=cfg.angular,
        conservation_fix=False,
        interp_order=cfg.interp_order,
    )
    q1 = collide(mu, sqmu * g, grid, raw)
    q2 = collide(sqmu * g, mu, grid, raw)
    return -(q1 + q2) / sqmu


def apply_Gamma(
    g1: np.ndarray,
    g2: np.ndarray,
    background: LocalMaxwellianParams,
    grid: VelocityGrid,
    cfg: CollisionConfig,
) -> np.ndarray:
    """Gamma(g1, g2) = (1/sqrt(mu)) Q(sqrt(mu) g1, sqrt(mu) g2)."""
    mu = eval_local_maxwellian(background, grid)
    sqmu = np.sqrt(mu)
    return collide(sqmu * np.asarray(g1), sqmu * np.asarray(g2), grid, cfg) / sqmu


class InvertLError(RuntimeError):
    pass


def invert_L(
    r: np.ndarray,
    op: LinearizedOperator,
    basis: Optional[ChiBasis] = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> np.ndarray:
    """Solve L g = r on the microscopic subspace.

    Requires r orthogonal to the chi basis (relative tolerance 1e-6);
    conjugate gradients preconditioned by 1/nu, with re-projection onto the
    microscopic subspace every iteration.
    """
    basis = basis if basis is not None else op.basis
    grid = op.grid
    r = np.asarray(r, dtype=float)
    rnorm = np.sqrt(integrate_velocity(r * r, grid))
    if rnorm == 0.0:
        return np.zeros_like(r)
    for i in range(5):
        c = integrate_velocity(r * basis.chi[i], grid)
        if abs(c) > 1e-6 * rnorm:
            raise InvertLError(
                "hydrodynamic component in L^{-1} argument: "
                f"<r, chi_{i}> = {c:.3e} vs ||r|| = {rnorm:.3e}"
            )

    q = basis.ortho
    w = grid.weights

    def project_out(x):
        coeffs = (q * w) @ x
        return x - coeffs @ q

    if op.mode == "bgk":
        return project_out(r) / op.rate

    b = project_out(r)
    x = np.zeros_like(b)
    res = b.copy()
    z = project_out(res / op.nu)
    p = z.copy()
    rz = float(np.dot(res * w, z))
    bnorm = np.sqrt(float(np.dot(b * w, b)))
    for _ in range(max_iter):
        Ap = op.matrix @ p
        alpha = rz / float(np.dot(p * w, Ap))
        x += alpha * p
        res -= alpha * Ap
        if np.sqrt(float(np.dot(res * w, res))) <= tol * bnorm:
            return project_out(x)
        z = project_out(res / op.nu)
        rz_new = float(np.dot(res * w, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = np.sqrt(float(np.dot(res * w, res))) / bnorm
    raise InvertLError(
        f"L^-1 Krylov iteration stalled: relative residual {final:.3e} "
        f"after {max_iter} iterations"
    )


def discrete_maxwellian(
    grid: VelocityGrid, mass: float, momentum: np.ndarray, energy: float,
    max_iter: int = 50, tol: float = 1e-13,
) -> np.ndarray:
    """Exponential-family field exp(a + b.v - c|v|^2) whose *discrete* moments
    match (mass, momentum, energy) to near machine precision.

    Newton iteration on the five natural parameters, started from the
    continuous Maxwellian formulas; this is what makes BGK relaxation exactly
    conservative on the truncated grid.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    momentum = np.asarray(momentum, dtype=float)
    u = momentum / mass
    theta = (energy / mass - np.dot(u, u)) / 3.0
    if theta <= 0:
        raise ValueError("non-physical moments: derived temperature <= 0")
    v = grid.nodes
    v2 = np.sum(v**2, axis=1)
    a = np.log(mass * (2.0 * np.pi * theta) ** -1.5) - np.dot(u, u) / (2.0 * theta)
    b = u / theta
    c = 1.0 / (2.0 * theta)
    target = np.array([mass, *momentum, energy])
    psi = np.stack([np.ones(grid.n_nodes), v[:, 0], v[:, 1], v[:, 2], v2])
    scale = max(abs(mass), abs(energy))
    for _ in range(max_iter):
        M = np.exp(a + v @ b - c * v2)
        mom_vec = (psi * grid.weights) @ M
        resid = mom_vec - target
        if np.max(np.abs(resid)) <= tol * scale:
            return M
        # d moments / d params: psi_i psi_j moments of M (sign flip on c)
        jac = (psi * (grid.weights * M)) @ psi.T
        jac[:, 4] *= -1.0
        step = np.linalg.solve(jac, resid)
        a -= step[0]
        b -= step[1:4]
        c -= step[4]
    raise RuntimeError("discrete Maxwellian moment matching did not converge")


def bgk_relax(F: np.ndarray, grid: VelocityGrid, rate: float) -> np.ndarray:
    """rate * (M[F] - F) with M[F] the discrete-moment-matched Maxwellian."""
    if rate <= 0:
        raise ValueError("relaxation rate must be positive")
    F = np.asarray(F, dtype=float)
    mass, momentum, energy = moments(F, grid)
    M = discrete_maxwellian(grid, mass, momentum, energy)
    return rate * (M - F)
