import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivpb.grids import (
    build_angular_quadrature,
    build_spatial_grid,
    build_velocity_grid,
    integrate_velocity,
)


def test_spatial_grid_geometry():
    g = build_spatial_grid(1, 8, 2.0 * np.pi)
    assert g.dx == pytest.approx(np.pi / 4)
    assert g.n_cells == 8
    assert g.cell_volume == pytest.approx(g.dx)
    x = g.axis_coords()
    assert x[0] == 0.0
    assert np.allclose(np.diff(x), g.dx)


def test_spatial_grid_nesting_under_refinement():
    coarse = build_spatial_grid(1, 8, 2.0 * np.pi)
    fine = build_spatial_grid(1, 32, 2.0 * np.pi)
    assert np.allclose(fine.axis_coords()[::4], coarse.axis_coords())


def test_spatial_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_spatial_grid(4, 8, 1.0)
    with pytest.raises(ValueError):
        build_spatial_grid(1, 1, 1.0)
    with pytest.raises(ValueError):
        build_spatial_grid(1, 8, -1.0)


def test_velocity_grid_midpoints_symmetric(vgrid8):
    # midpoint nodes of an even grid are closed under v -> -v, none at 0
    refl = vgrid8.reflect_index()
    assert np.allclose(vgrid8.nodes[refl], -vgrid8.nodes)
    assert np.min(np.abs(vgrid8.nodes).sum(axis=1)) > 0
    assert vgrid8.weights.sum() == pytest.approx((2 * vgrid8.v_max) ** 3)


def test_velocity_grid_rejects_odd_count():
    with pytest.raises(ValueError, match="even"):
        build_velocity_grid(7, 6.0)


def test_pair_indices_bipartition(vgrid8):
    first, second = vgrid8._pair_indices()
    assert len(first) == len(second) == vgrid8.n_nodes // 2
    assert np.allclose(vgrid8.nodes[second], -vgrid8.nodes[first])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10**6))
def test_odd_moments_of_even_fields_vanish(seed):
    # reflection-symmetric integrands have exactly zero odd moments
    grid = build_velocity_grid(8, 5.0)
    rng = np.random.default_rng(seed)
    half = rng.normal(size=grid.n_nodes // 2)
    first, second = grid._pair_indices()
    F = np.empty(grid.n_nodes)
    F[first] = half
    F[second] = half
    for i in range(3):
        assert integrate_velocity(F * grid.nodes[:, i], grid) == pytest.approx(
            0.0, abs=1e-13
        )


def test_angular_quadrature_weights_and_degree():
    quad = build_angular_quadrature()
    assert quad.weights.sum() == pytest.approx(4.0 * np.pi, abs=1e-12)
    # spherical-harmonic exactness through degree 7: odd monomials vanish,
    # int z^2 = 4 pi / 3, int z^4 = 4 pi / 5, int z^6 = 4 pi / 7
    z = quad.directions[:, 2]
    for p, exact in [(1, 0.0), (3, 0.0), (5, 0.0), (7, 0.0),
                     (2, 4 * np.pi / 3), (4, 4 * np.pi / 5), (6, 4 * np.pi / 7)]:
        assert np.dot(quad.weights, z**p) == pytest.approx(exact, abs=1e-12)
    x, y = quad.directions[:, 0], quad.directions[:, 1]
    assert np.dot(quad.weights, x**2 * y**2 * z**2) == pytest.approx(
        4 * np.pi / 105, abs=1e-12
    )


def test_integrate_velocity_gaussian(vgrid16):
    F = np.exp(-np.sum(vgrid16.nodes**2, axis=1) / 2.0) / (2 * np.pi) ** 1.5
    assert integrate_velocity(F, vgrid16) == pytest.approx(1.0, abs=1e-8)
