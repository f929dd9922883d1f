"""Periodic spatial grids, truncated velocity grids and angular quadrature.

The spatial domain is a torus of period ``length`` per axis with uniform
cells; velocity space is a uniform Cartesian midpoint grid on
``[-v_max, v_max]^3`` with an even node count per axis, so the node set is
closed under ``v -> -v`` and no node sits at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialGrid",
    "VelocityGrid",
    "AngularQuadrature",
    "build_spatial_grid",
    "build_velocity_grid",
    "build_angular_quadrature",
    "integrate_velocity",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on ``[0, length)^dim``."""

    dim: int
    cells_per_axis: int
    length: float
    cell_volume: float = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"spatial dim must be 1, 2 or 3, got {self.dim}")
        if self.cells_per_axis < 2:
            raise ValueError("need at least 2 cells per axis")
        if self.length <= 0:
            raise ValueError("period length must be positive")
        object.__setattr__(
            self, "cell_volume", (self.length / self.cells_per_axis) ** self.dim
        )

    @property
    def dx(self) -> float:
        return self.length / self.cells_per_axis

    @property
    def shape(self) -> tuple:
        return (self.cells_per_axis,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim

    def axis_coords(self) -> np.ndarray:
        """Node coordinates along one axis: x_j = j * length / n."""
        return np.arange(self.cells_per_axis) * self.dx

    def coords(self) -> list[np.ndarray]:
        """Meshgrid coordinate arrays, one per spatial axis, shape ``self.shape``."""
        axes = [self.axis_coords() for _ in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        """FFT wavenumbers 2*pi*m/length along one axis, shaped for broadcasting."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.cells_per_axis, d=self.dx)
        shape = [1] * self.dim
        shape[axis] = self.cells_per_axis
        return k.reshape(shape)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform midpoint grid on ``[-v_max, v_max]^3``.

    Nodes are cell centers ``-v_max + (i + 1/2) dv``; an even count per axis
    makes the set symmetric under negation with no node at v = 0.
    """

    nodes_per_axis: int
    v_max: float
    nodes: np.ndarray = field(init=False, repr=False)  # (n^3, 3)
    weights: np.ndarray = field(init=False, repr=False)  # (n^3,)

    def __post_init__(self):
        n = self.nodes_per_axis
        if n < 2:
            raise ValueError("need at least 2 velocity nodes per axis")
        if n % 2 != 0:
            raise ValueError(
                "velocity nodes_per_axis must be even: midpoint nodes of an even "
                "grid are closed under v -> -v, which the collision symmetry "
                "tests require (an odd count would place a node at v = 0 and "
                "break the pairing)"
            )
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        dv = 2.0 * self.v_max / n
        axis = -self.v_max + (np.arange(n) + 0.5) * dv
        vx, vy, vz = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.stack([vx.ravel(), vy.ravel(), vz.ravel()], axis=1)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.full(n**3, dv**3))
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)
        refl = self.reflect_index()
        first = np.nonzero(np.arange(n**3) < refl)[0]
        object.__setattr__(self, "_pairs", (first, refl[first]))

    @property
    def dv(self) -> float:
        return 2.0 * self.v_max / self.nodes_per_axis

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis**3

    @property
    def axis_nodes(self) -> np.ndarray:
        return -self.v_max + (np.arange(self.nodes_per_axis) + 0.5) * self.dv

    def reflect_index(self) -> np.ndarray:
        """Permutation p with nodes[p[i]] == -nodes[i]."""
        n = self.nodes_per_axis
        rev = np.arange(n)[::-1]
        idx = np.arange(n**3).reshape(n, n, n)
        return idx[np.ix_(rev, rev, rev)].ravel()

    def _pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Split nodes into (i, reflect(i)) pairs; the midpoint grid has no
        self-reflected node, so this is an exact bipartition."""
        return self._pairs


@dataclass(frozen=True)
class AngularQuadrature:
    """Quadrature rule on the unit sphere with weights summing to 4*pi."""

    directions: np.ndarray  # (m, 3) unit vectors
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        norms = np.linalg.norm(self.directions, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-14:
            raise ValueError("angular directions must be unit vectors")
        if abs(self.weights.sum() - 4.0 * np.pi) > 1e-12:
            raise ValueError("angular weights must sum to 4*pi")
        self.directions.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_dirs(self) -> int:
        return len(self.weights)


def build_spatial_grid(dim: int, cells_per_axis: int, length: float) -> SpatialGrid:
    return SpatialGrid(dim=dim, cells_per_axis=int(cells_per_axis), length=float(length))


def build_velocity_grid(nodes_per_axis: int, v_max: float) -> VelocityGrid:
    return VelocityGrid(nodes_per_axis=int(nodes_per_axis), v_max=float(v_max))


def build_angular_quadrature(n_polar: int = 4, n_azimuth: int = 8) -> AngularQuadrature:
    """Product Gauss-Legendre (cos theta) x uniform (phi) rule on S^2.

    With ``n_polar`` Gauss points and ``n_azimuth`` uniform azimuths the rule
    integrates spherical polynomials of degree ``min(2 n_polar - 1,
    n_azimuth - 1)`` exactly; the default 4 x 8 = 32-point rule has degree 7.
    The node set is closed under ``omega -> -omega``.
    """
    if n_polar < 1 or n_azimuth < 2:
        raise ValueError("need n_polar >= 1 and n_azimuth >= 2")
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    wphi = 2.0 * np.pi / n_azimuth
    st = np.sqrt(1.0 - mu**2)
    dirs = np.empty((n_polar * n_azimuth, 3))
    wts = np.empty(n_polar * n_azimuth)
    m = 0
    for i in range(n_polar):
        for j in range(n_azimuth):
            dirs[m] = (st[i] * np.cos(phi[j]), st[i] * np.sin(phi[j]), mu[i])
            wts[m] = wmu[i] * wphi
            m += 1
    return AngularQuadrature(directions=dirs, weights=wts)


def integrate_velocity(values: np.ndarray, grid: VelocityGrid) -> float:
    """Midpoint-rule velocity integral.

    Terms are accumulated as reflection pairs ``f(v) + f(-v)`` in a fixed node
    order, so reflecting the integrand reproduces the result bitwise (float
    addition within a pair is commutative).
    """
    values = np.asarray(values)
    if values.shape[-1] != grid.n_nodes:
        raise ValueError(
            f"values last axis {values.shape[-1]} does not match grid "
            f"({grid.n_nodes} nodes)"
        )
    terms = values * grid.weights
    first, second = grid._pair_indices()
    return (terms[..., first] + terms[..., second]).sum(axis=-1)
