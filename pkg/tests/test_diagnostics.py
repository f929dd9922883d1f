import numpy as np
import pytest

from ivpb.cascade import build_expansion
from ivpb.collision import CollisionConfig
from ivpb.diagnostics import (
    SweepConfig,
    epsilon_sweep,
    fit_order,
    norm_package,
    remainder_fields,
    sweep_report_csv,
    sweep_report_json,
)
from ivpb.euler import EulerOptions, init_irrotational, run_euler
from ivpb.grids import build_spatial_grid, build_velocity_grid
from ivpb.maxwellian import (
    GlobalMaxwellian,
    eval_global_maxwellian,
    select_theta_M,
    velocity_weight,
)

BGK = CollisionConfig(mode="bgk", bgk_rate=1.0)


@pytest.fixture(scope="module")
def small_expansion():
    sgrid = build_spatial_grid(1, 16, 2.0 * np.pi)
    vgrid = build_velocity_grid(12, 6.0)
    fluid = init_irrotational(0.05, [(1,)], 1.0, sgrid)
    traj = run_euler(fluid, sgrid, 0.1, EulerOptions(K=1.0, muscl=True), store_every=1)
    times = np.array([0.0, 0.05, 0.1])
    return build_expansion(traj, vgrid, 1, BGK, times=times)


def _exact_snapshot(expansion, eps, it):
    from ivpb.cascade import assemble_expansion

    F, phi = assemble_expansion(expansion, eps, it)
    return F, phi.reshape(expansion.grid.shape)


def test_zero_remainder_gives_zero_norms(small_expansion):
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    rem = remainder_fields(F, phi, small_expansion, 0.1, 0)
    assert np.max(np.abs(rem.R)) == 0.0
    norms = norm_package(rem)
    for key, value in norms.items():
        if key.startswith("flag_"):
            continue
        assert value == 0.0


def test_remainder_linearity(small_expansion, rng):
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    vgrid = small_expansion.vgrid
    mu = small_expansion.F[0][0]
    bump = 1e-3 * mu * rng.random(mu.shape)
    r1 = remainder_fields(F + bump, phi, small_expansion, 0.1, 0)
    r2 = remainder_fields(F + 2 * bump, phi, small_expansion, 0.1, 0)
    # rounding of F + bump leaves an absolute error of a few ulps of F
    assert np.allclose(r2.R, 2 * r1.R, rtol=1e-12, atol=1e-12 * np.max(np.abs(r1.R)))
    assert np.allclose(r2.h, 2 * r1.h, rtol=1e-12, atol=1e-12 * np.max(np.abs(r1.h)))


def test_remainder_scaling_in_epsilon(small_expansion):
    # R = eps^{-k} (F - F_trunc): the same absolute discrepancy at half the
    # epsilon gives twice the remainder for k = 1
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    bump = 1e-4 * small_expansion.F[0][0]
    Fh, phih = _exact_snapshot(small_expansion, 0.05, 0)
    r1 = remainder_fields(F + bump, phi, small_expansion, 0.1, 0)
    r2 = remainder_fields(Fh + bump, phih, small_expansion, 0.05, 0)
    assert np.allclose(r2.R, 2 * r1.R, rtol=1e-10, atol=1e-18)


def test_representation_consistency(small_expansion, rng):
    # h = w sqrt(mu / mu_M) f pointwise
    F, phi = _exact_snapshot(small_expansion, 0.1, 1)
    mu = small_expansion.F[0][1]
    bump = 1e-3 * mu * rng.random(mu.shape)
    rem = remainder_fields(F + bump, phi, small_expansion, 0.1, 1)
    vgrid = small_expansion.vgrid
    w = velocity_weight(vgrid, rem.beta)
    mu_M = eval_global_maxwellian(GlobalMaxwellian(rem.theta_M), vgrid)
    expected = rem.f * (w * np.sqrt(1.0))[None, :] * np.sqrt(mu / mu_M[None, :])
    assert np.allclose(rem.h, expected, rtol=1e-12, atol=1e-300)


def test_warm_policy_used_by_default(small_expansion):
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    rem = remainder_fields(F, phi, small_expansion, 0.1, 0)
    gm = select_theta_M(small_expansion.theta[0][0], policy="warm")
    assert rem.theta_M == gm.theta_M


def test_constant_profile_has_zero_x_gradient(small_expansion):
    # an R field with no x-dependence has exactly zero centered x-differences
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    vgrid = small_expansion.vgrid
    mu_M = eval_global_maxwellian(
        GlobalMaxwellian(select_theta_M(small_expansion.theta[0][0], "warm").theta_M),
        vgrid,
    )
    w = velocity_weight(vgrid, 3.5)
    profile = np.sqrt(mu_M) / w
    bump = 0.1 * 1e-3 * np.tile(profile, (F.shape[0], 1))
    rem = remainder_fields(F + bump, phi, small_expansion, 0.1, 0)
    norms = norm_package(rem)
    assert norms["winf_grad_x"] <= 1e-15
    assert norms["winf_h"] > 0


def test_norm_package_rejects_small_beta(small_expansion):
    F, phi = _exact_snapshot(small_expansion, 0.1, 0)
    rem = remainder_fields(F, phi, small_expansion, 0.1, 0)
    with pytest.raises(ValueError, match="beta"):
        norm_package(rem, beta=2.0)


def test_fit_order_exact_power_law():
    pts = [(e, e**2) for e in (0.2, 0.1, 0.05, 0.025)]
    slope, intercept, r2 = fit_order(pts)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert intercept == pytest.approx(0.0, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_order_prefactor():
    pts = [(e, 3.0 * e) for e in (0.4, 0.2, 0.1)]
    slope, intercept, _ = fit_order(pts)
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)


def test_fit_order_with_noise():
    rng = np.random.default_rng(7)
    eps = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    vals = eps * np.exp(rng.uniform(-0.05, 0.05, size=eps.size))
    slope, _, r2 = fit_order(list(zip(eps, vals)))
    assert 0.9 <= slope <= 1.1
    assert r2 >= 0.98


def test_fit_order_validation():
    with pytest.raises(ValueError):
        fit_order([(0.2, 1.0), (0.1, 0.5)])
    with pytest.raises(ValueError):
        fit_order([(0.2, 1.0), (0.1, 0.5), (0.1, 0.25)])
    with pytest.raises(ValueError):
        fit_order([(0.2, 1.0), (0.1, -0.5), (0.05, 0.25)])


def test_sweep_config_validation():
    with pytest.raises(ValueError, match=">= 3"):
        SweepConfig(epsilons=(0.2, 0.1))
    with pytest.raises(ValueError, match="distinct"):
        SweepConfig(epsilons=(0.2, 0.2, 0.1))
    with pytest.raises(ValueError, match="ratio 2"):
        SweepConfig(epsilons=(0.2, 0.1, 0.04))
    with pytest.raises(ValueError, match="descending"):
        SweepConfig(epsilons=(0.05, 0.1, 0.2))


@pytest.fixture(scope="module")
def tiny_sweep_config():
    return SweepConfig(
        epsilons=(0.4, 0.2, 0.1),
        cells_per_axis=16,
        nodes_per_axis=12,
        T=0.05,
        n_samples=5,
        dt_max=0.01,
    )


def test_sweep_deterministic_bytes(tiny_sweep_config):
    r1 = epsilon_sweep(tiny_sweep_config)
    r2 = epsilon_sweep(tiny_sweep_config)
    assert sweep_report_csv(r1) == sweep_report_csv(r2)
    assert sweep_report_json(r1) == sweep_report_json(r2)


def test_sweep_report_contents(tiny_sweep_config):
    report = epsilon_sweep(tiny_sweep_config)
    assert len(report.rows) == 3
    eps_col = [row["epsilon"] for row in report.rows]
    assert eps_col == [0.4, 0.2, 0.1]
    for row in report.rows:
        assert row["sup_dev"] > 0
        assert np.isfinite(row["winf_h"])
        assert row["max_clipped_fraction"] <= 1e-3
        assert row["max_mass_drift_per_step"] <= 1e-12
    assert "sup_dev" in report.fits
    assert report.floor_estimate >= 0.0
    # deviation from the fluid background shrinks with epsilon
    assert report.rows[0]["sup_dev"] > report.rows[-1]["sup_dev"]
    csv_text = sweep_report_csv(report)
    assert csv_text.splitlines()[0].startswith("epsilon,sup_dev,")
    json_text = sweep_report_json(report)
    assert "floor_estimate" in json_text
