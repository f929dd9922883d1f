import numpy as np
import pytest

from ivpb.collision import CollisionConfig
from ivpb.euler import equilibrium_state, init_irrotational
from ivpb.grids import build_spatial_grid, build_velocity_grid
from ivpb.kinetic import (
    KineticOptions,
    entropy,
    init_well_prepared,
    run_vpb,
    save_snapshot,
    step_vpb,
)
from ivpb.maxwellian import LocalMaxwellianParams, eval_local_maxwellian

BGK = CollisionConfig(mode="bgk", bgk_rate=1.0)


def _setup(cells=16, nodes=12, amplitude=0.05, epsilon=0.5):
    sgrid = build_spatial_grid(1, cells, 2.0 * np.pi)
    vgrid = build_velocity_grid(nodes, 6.0)
    fluid = init_irrotational(amplitude, [(1,)], 1.0, sgrid)
    state = init_well_prepared(fluid, sgrid, vgrid, epsilon)
    return sgrid, vgrid, state


def test_global_equilibrium_is_stationary():
    sgrid = build_spatial_grid(1, 16, 2.0 * np.pi)
    vgrid = build_velocity_grid(12, 6.0)
    fluid = equilibrium_state(sgrid)
    state = init_well_prepared(fluid, sgrid, vgrid, 0.5)
    F0 = state.F.copy()
    for _ in range(5):
        state = step_vpb(state, sgrid, vgrid, 0.01, BGK)
    assert np.max(np.abs(state.F - F0)) <= 1e-8 * np.max(F0)


@pytest.mark.slow
def test_hard_sphere_equilibrium_is_stationary():
    # the consistency-corrected hard-sphere substep keeps the global
    # Maxwellian fixed regardless of the Knudsen number
    sgrid = build_spatial_grid(1, 4, 2.0 * np.pi)
    vgrid = build_velocity_grid(12, 6.0)
    fluid = equilibrium_state(sgrid)
    cfg = CollisionConfig(mode="hard_sphere", interp_order=1)
    for eps in (1.0, 0.1):
        state = init_well_prepared(fluid, sgrid, vgrid, eps)
        F0 = state.F.copy()
        state = step_vpb(state, sgrid, vgrid, 0.01, cfg)
        assert np.max(np.abs(state.F - F0)) <= 1e-8 * np.max(F0)


def test_mass_conservation_per_step():
    sgrid, vgrid, state = _setup()
    vol = sgrid.cell_volume * vgrid.dv**3
    mass = float(np.sum(state.F) * vol)
    for _ in range(10):
        state = step_vpb(state, sgrid, vgrid, 0.01, BGK)
        new_mass = float(np.sum(state.F) * vol)
        assert abs(new_mass - mass) <= 1e-12 * mass
        mass = new_mass


def test_positivity_contract_and_ledger():
    sgrid, vgrid, state = _setup()
    for _ in range(10):
        state = step_vpb(state, sgrid, vgrid, 0.01, BGK)
        assert np.min(state.F) >= -1e-12 * np.max(state.F)
        assert state.ledger.clipped_fraction <= 1e-3
    assert np.isfinite(state.ledger.momentum_field)


def test_entropy_decay_bgk():
    # a spatially uniform bimodal velocity distribution relaxes toward the
    # Maxwellian; H = int F log F decreases monotonically
    sgrid = build_spatial_grid(1, 8, 2.0 * np.pi)
    vgrid = build_velocity_grid(12, 6.0)
    m1 = eval_local_maxwellian(
        LocalMaxwellianParams(rho=0.5, u=(1.0, 0.0, 0.0), theta=0.7), vgrid
    )
    m2 = eval_local_maxwellian(
        LocalMaxwellianParams(rho=0.5, u=(-1.0, 0.0, 0.0), theta=0.7), vgrid
    )
    F = np.tile(m1 + m2, (sgrid.n_cells, 1))
    from ivpb.kinetic import KineticState
    from ivpb.poisson import solve_nonlinear_poisson
    from ivpb.grids import integrate_velocity

    phi = solve_nonlinear_poisson(
        integrate_velocity(F, vgrid).reshape(sgrid.shape), sgrid
    )
    state = KineticState(F=F, phi=phi, epsilon=1.0)
    H = entropy(state.F, sgrid, vgrid)
    for _ in range(50):
        state = step_vpb(state, sgrid, vgrid, 0.02, BGK)
        H_new = entropy(state.F, sgrid, vgrid)
        assert H_new <= H + 1e-10
        H = H_new


def test_strang_self_convergence():
    # halving dt must shrink the endpoint error by >= 2.5x (second order ~ 4x)
    sgrid, vgrid, state0 = _setup(cells=16, nodes=12, epsilon=0.5)
    T = 0.08

    def endpoint(dt):
        traj = run_vpb(state0, sgrid, vgrid, T, dt, BGK, store_every=10**9)
        return traj.states[-1].F

    F_ref = endpoint(0.0025)
    e1 = np.max(np.abs(endpoint(0.02) - F_ref))
    e2 = np.max(np.abs(endpoint(0.01) - F_ref))
    assert e1 / e2 >= 2.5


def test_upwind_cfl_guard():
    sgrid, vgrid, state = _setup(cells=8)
    opts = KineticOptions(transport="upwind")
    # dt far beyond dx / v_max violates the transport CFL bound
    with pytest.raises(ValueError):
        step_vpb(state, sgrid, vgrid, 10.0, BGK, opts)


def test_upwind_transport_runs_and_conserves():
    sgrid, vgrid, state = _setup(cells=8)
    opts = KineticOptions(transport="upwind")
    vol = sgrid.cell_volume * vgrid.dv**3
    mass = float(np.sum(state.F) * vol)
    dt = 0.2 * sgrid.dx / vgrid.v_max
    state = step_vpb(state, sgrid, vgrid, dt, BGK, opts)
    assert abs(float(np.sum(state.F) * vol) - mass) <= 1e-12 * mass


def test_run_vpb_stores_endpoints():
    sgrid, vgrid, state = _setup(cells=8)
    traj = run_vpb(state, sgrid, vgrid, 0.05, 0.01, BGK, store_every=2)
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(0.05)
    assert len(traj.states) == len(traj.times)
    assert len(traj.ledgers) == 5


def test_linear_advect_order_also_valid():
    sgrid, vgrid, state = _setup(cells=8)
    opts = KineticOptions(advect_order=1)
    out = step_vpb(state, sgrid, vgrid, 0.01, BGK, opts)
    assert np.min(out.F) >= -1e-12 * np.max(out.F)


def test_save_snapshot_artifacts(tmp_path):
    sgrid, vgrid, state = _setup(cells=8)
    state = step_vpb(state, sgrid, vgrid, 0.01, BGK)
    prefix = str(tmp_path / "snap")
    save_snapshot(state, sgrid, vgrid, prefix)
    with np.load(prefix + ".npz") as data:
        assert np.array_equal(data["F"], state.F)
        assert np.array_equal(data["phi"], state.phi)
    import json

    manifest = json.loads((tmp_path / "snap.json").read_text())
    assert manifest["epsilon"] == state.epsilon
    assert "clipped_fraction" in manifest["ledger"]


def test_field_work_budget():
    # the electric field moves momentum and energy; the ledger's recorded
    # field work matches the actual momentum motion of the step
    sgrid, vgrid, state = _setup(cells=16, epsilon=0.5)
    vol = sgrid.cell_volume * vgrid.dv**3
    p0 = float(np.sum(state.F * vgrid.nodes[:, 0]) * vol)
    state = step_vpb(state, sgrid, vgrid, 0.01, BGK)
    p1 = float(np.sum(state.F * vgrid.nodes[:, 0]) * vol)
    moved = abs(p1 - p0)
    recorded = abs(state.ledger.momentum_field) + abs(
        state.ledger.momentum_transport
    ) + abs(state.ledger.momentum_collision)
    assert moved <= recorded + 1e-10
