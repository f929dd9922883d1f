import numpy as np
import pytest

from ivpb.cascade import (
    CascadeError,
    ExpansionSet,
    advection_matrices,
    assemble_expansion,
    background_slice,
    build_expansion,
    electron_series_closed_forms,
    exp_taylor_coeffs,
    hilbert_source_leading,
    hydro_roundtrip,
    load_expansion,
    microscopic_part,
    save_expansion,
    solve_coefficient_system,
    symmetrized_matrices,
    taylor_remainder,
)
from ivpb.collision import CollisionConfig
from ivpb.euler import EulerOptions, FluidState, init_irrotational, run_euler
from ivpb.grids import build_spatial_grid, build_velocity_grid
from ivpb.diagnostics import fit_order

BGK = CollisionConfig(mode="bgk", bgk_rate=1.0)


def _grid(n=16):
    return build_spatial_grid(1, n, 2.0 * np.pi)


@pytest.fixture(scope="module")
def background():
    grid = _grid(16)
    state = init_irrotational(0.05, [(1,)], 1.0, grid)
    return background_slice(state, grid)


def test_electron_series_closed_forms(rng):
    phi_list = [rng.normal(size=12) for _ in range(4)]
    assert electron_series_closed_forms(phi_list) <= 1e-12


def test_exp_taylor_recursion_low_orders(rng):
    phi = [rng.normal(size=6) * 0.3 for _ in range(4)]
    A = exp_taylor_coeffs(phi)
    assert np.allclose(A[0], 1.0)
    assert np.allclose(A[1], phi[1])
    assert np.allclose(A[2], phi[2] + 0.5 * phi[1] ** 2)
    assert np.allclose(A[3], phi[3] + phi[1] * phi[2] + phi[1] ** 3 / 6.0)


def test_taylor_remainder_order(rng):
    # remainder after truncating at order m scales like eps^{m+1}
    phi = [rng.normal(size=8) * 0.4 for _ in range(5)]
    for order in (1, 2, 3):
        pts = []
        for eps in (0.1, 0.05, 0.025, 0.0125):
            rem = taylor_remainder(phi, eps, order)
            pts.append((eps, float(np.max(np.abs(rem)))))
        slope, _, _ = fit_order(pts)
        assert abs(slope - (order + 1)) <= 0.3


def test_taylor_remainder_validation(rng):
    phi = [rng.normal(size=4) for _ in range(3)]
    with pytest.raises(ValueError):
        taylor_remainder(phi, -0.1, 1)
    with pytest.raises(ValueError):
        taylor_remainder(phi, 0.1, 5)


def test_advection_matrices_symmetrizable(background):
    # the symmetrized matrices are exactly symmetric cellwise
    A0, Ai, Bs = symmetrized_matrices(background)
    for i in range(Ai.shape[0]):
        # symmetric to rounding: the off-diagonal pairs come from products
        # evaluated in different association orders
        defect = np.max(np.abs(Ai[i] - np.transpose(Ai[i], (1, 0, 2))))
        assert defect <= 4 * np.finfo(float).eps * np.max(np.abs(Ai[i]))
    assert np.min(A0[np.arange(5), np.arange(5)]) > 0
    # and they equal symmetrizer times the evolution-form matrices
    Abar, _ = advection_matrices(background)
    recon = np.einsum("rsn,isln->irln", A0, Abar)
    assert np.max(np.abs(recon - Ai)) <= 1e-13


def test_hilbert_source_hydro_leakage_small(background, vgrid12):
    S, mu = hilbert_source_leading(background, vgrid12)
    micro, leakage = microscopic_part(S, background, vgrid12, BGK)
    assert leakage <= 1e-3
    assert micro.shape == S.shape
    assert np.all(np.isfinite(micro))


def test_microscopic_part_refuses_nonuniform_hard_sphere(background, vgrid12):
    S, _ = hilbert_source_leading(background, vgrid12)
    with pytest.raises(CascadeError):
        microscopic_part(S, background, vgrid12, CollisionConfig(mode="hard_sphere"))


@pytest.fixture(scope="module")
def short_traj():
    grid = _grid(16)
    opts = EulerOptions(K=1.0, muscl=True)
    state = init_irrotational(0.05, [(1,)], 1.0, grid, opts)
    return run_euler(state, grid, 0.1, opts, store_every=1, dt=0.01)


def test_coefficient_system_zero_sources_stays_zero(short_traj, vgrid12):
    series = solve_coefficient_system(
        1,
        short_traj,
        vgrid12,
        BGK,
        0.1,
        0.01,
        np.array([0.0, 0.05, 0.1]),
        source_fn=lambda t, bg: (
            np.zeros((3, short_traj.grid.n_cells)),
            np.zeros(short_traj.grid.n_cells),
        ),
    )
    assert np.max(np.abs(series.U)) == 0.0
    assert np.max(np.abs(series.phi)) <= 1e-10


@pytest.fixture(scope="module")
def expansion(short_traj, vgrid12):
    times = np.array([0.0, 0.05, 0.1])
    return build_expansion(short_traj, vgrid12, 1, BGK, times=times)


def test_expansion_structure_and_leakage(expansion, vgrid12):
    assert sorted(expansion.F) == [0, 1]
    assert expansion.leakage <= 1e-3
    nt = len(expansion.times)
    assert expansion.F[0].shape == (nt, 16, vgrid12.n_nodes)
    # F_0 is the local Maxwellian: positive with the background density
    assert np.min(expansion.F[0]) > 0
    rho = expansion.F[0][0] @ vgrid12.weights
    assert np.allclose(rho, expansion.rho[0][0], atol=1e-6)


def test_assemble_expansion_linearity(expansion):
    F1, phi1 = assemble_expansion(expansion, 0.1, 0)
    F2, phi2 = assemble_expansion(expansion, 0.2, 0)
    # F(eps) is affine in eps: F(0.2) - F(0.1) = 0.1 * F_1
    assert np.allclose(F2 - F1, 0.1 * expansion.F[1][0], atol=1e-14)
    assert np.allclose(phi2 - phi1, 0.1 * expansion.phi[1][0], atol=1e-14)


def test_hydro_roundtrip_consistency(expansion):
    rho, u, th = hydro_roundtrip(expansion, 1, 1)
    assert np.max(np.abs(rho - expansion.rho[1][1])) <= 1e-5 * max(
        1.0, np.max(np.abs(expansion.rho[1][1]))
    )
    assert np.max(np.abs(u[0] - expansion.u[1][1][0])) <= 1e-5 * max(
        1.0, np.max(np.abs(expansion.u[1][1]))
    )


def test_expansion_save_load_bit_exact(expansion, tmp_path):
    prefix = str(tmp_path / "exp")
    save_expansion(expansion, prefix)
    back = load_expansion(prefix)
    assert back.k == expansion.k
    assert np.array_equal(back.times, expansion.times)
    for i in expansion.F:
        assert np.array_equal(back.F[i], expansion.F[i])
        assert np.array_equal(back.phi[i], expansion.phi[i])
    assert back.leakage == expansion.leakage


def test_higher_order_expansion_refused(short_traj, vgrid12):
    with pytest.raises(CascadeError, match="k = 1"):
        build_expansion(short_traj, vgrid12, 2, BGK)
