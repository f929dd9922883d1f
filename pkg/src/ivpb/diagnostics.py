"""Remainder extraction, weighted norm package, and epsilon-convergence sweeps.

The remainder of the truncated expansion is recovered by subtraction,

    R = eps^{-k} (F^eps - sum_{i<2k} eps^i F_i),

never by evolving a remainder equation.  Three pointwise representations are
kept: R itself, f = R / sqrt(mu) against the local Maxwellian, and
h = w R / sqrt(mu_M) against the global Maxwellian with the polynomial
weight w = (1 + |v|^2)^beta.  The norm package evaluates the weighted
sup-norms (scaled by eps^{3/2} and eps^5) and the L^2 norms of f and of the
potential remainder and its derivatives.  ``epsilon_sweep`` runs the kinetic
solver across an epsilon ladder against one shared fluid background and fits
log-log convergence slopes.

Sup-norms over the velocity truncation box understate the continuum
sup-norms; every sup entry therefore carries a flag that fires when its
argmax sits on the outermost velocity layer.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .cascade import ExpansionSet, assemble_expansion, build_expansion
from .collision import CollisionConfig
from .euler import EulerOptions, init_irrotational, run_euler
from .grids import SpatialGrid, VelocityGrid, build_spatial_grid, build_velocity_grid
from .kinetic import KineticOptions, init_well_prepared, step_vpb
from .maxwellian import (
    GlobalMaxwellian,
    eval_global_maxwellian,
    select_theta_M,
    velocity_weight,
)
from .poisson import EllipticSolveOptions, gradient, laplacian

__all__ = [
    "RemainderFields",
    "SweepConfig",
    "SweepReport",
    "remainder_fields",
    "norm_package",
    "epsilon_sweep",
    "fit_order",
    "sweep_report_csv",
    "sweep_report_json",
]


# ----------------------------------------------------------------------
# Remainder representations


@dataclass(frozen=True)
class RemainderFields:
    """One remainder in its three pointwise representations.

    ``R`` (cells, nodes) is the bare remainder, ``f = R/sqrt(mu)`` with mu
    the local Maxwellian of the expansion background, ``h = w R/sqrt(mu_M)``
    with the global Maxwellian mu_M and weight w = (1+|v|^2)^beta, and
    ``phi_R`` the scaled potential discrepancy on the spatial grid.
    """

    R: np.ndarray
    f: np.ndarray
    h: np.ndarray
    phi_R: np.ndarray
    k: int
    epsilon: float
    beta: float
    theta_M: float
    sgrid: SpatialGrid
    vgrid: VelocityGrid


def remainder_fields(
    Feps: np.ndarray,
    phi_eps: np.ndarray,
    expansion: ExpansionSet,
    epsilon: float,
    time_index: int,
    beta: float = 3.5,
    theta_M_policy: str = "warm",
) -> RemainderFields:
    """Extract R, f, h, phi_R from a kinetic snapshot and the expansion."""
    sgrid, vgrid = expansion.grid, expansion.vgrid
    Feps = np.asarray(Feps, dtype=float)
    if Feps.shape != (sgrid.n_cells, vgrid.n_nodes):
        raise ValueError(
            f"phase-field shape {Feps.shape} does not match the expansion grids "
            f"({sgrid.n_cells} cells x {vgrid.n_nodes} nodes)"
        )
    phi_eps = np.asarray(phi_eps, dtype=float).reshape(sgrid.shape)
    k = expansion.k
    F_trunc, phi_trunc = assemble_expansion(expansion, epsilon, time_index)
    scale = epsilon ** (-k)
    R = scale * (Feps - F_trunc)
    phi_R = scale * (phi_eps - phi_trunc.reshape(sgrid.shape))

    mu = expansion.F[0][time_index]  # local Maxwellian background
    f = R / np.sqrt(mu)
    gm = select_theta_M(expansion.theta[0][time_index], theta_M_policy)
    mu_M = eval_global_maxwellian(gm, vgrid)
    w = velocity_weight(vgrid, beta)
    h = (w / np.sqrt(mu_M))[None, :] * R
    return RemainderFields(
        R=R,
        f=f,
        h=h,
        phi_R=phi_R,
        k=k,
        epsilon=epsilon,
        beta=beta,
        theta_M=gm.theta_M,
        sgrid=sgrid,
        vgrid=vgrid,
    )


# ----------------------------------------------------------------------
# Norm package


def _boundary_mask(vgrid: VelocityGrid) -> np.ndarray:
    """True on nodes whose |v_a| attains the outermost layer on any axis."""
    vmax_node = np.max(np.abs(vgrid.nodes))
    return np.any(np.abs(np.abs(vgrid.nodes) - vmax_node) < 1e-12, axis=1)


def _sup_with_flag(field2d: np.ndarray, vgrid: VelocityGrid):
    """(sup |field|, argmax-on-velocity-truncation-boundary flag)."""
    a = np.abs(field2d)
    flat = int(np.argmax(a))
    node = flat % a.shape[-1]
    return float(a.ravel()[flat]), bool(_boundary_mask(vgrid)[node])


def _velocity_cube(field2d: np.ndarray, vgrid: VelocityGrid, sgrid: SpatialGrid):
    n = vgrid.nodes_per_axis
    return field2d.reshape(sgrid.shape + (n, n, n))


def norm_package(rem: RemainderFields, beta: float | None = None) -> dict:
    """Weighted sup-norms and L^2 norms of one remainder snapshot.

    Entries (all nonnegative):
      - ``winf_h``: eps^{3/2} sup |(1+|v|)^{2 beta + 1} R / sqrt(mu_M)|
      - ``winf_grad_x``, ``winf_grad_v``: eps^5 sup of the centered x/v
        difference of the (1+|v|)^{2 beta}-weighted field R / sqrt(mu_M)
      - ``l2_f``, ``l2_phi_R``, ``l2_grad_phi_R``, ``l2_lap_phi_R``
    plus ``flag_*`` booleans marking sup entries whose argmax lies on the
    velocity truncation boundary.
    """
    beta = rem.beta if beta is None else float(beta)
    if beta < 3.5:
        raise ValueError(f"beta >= 7/2 required, got {beta}")
    sgrid, vgrid = rem.sgrid, rem.vgrid
    speed = np.sqrt(np.sum(vgrid.nodes**2, axis=1))
    mu_M = eval_global_maxwellian(GlobalMaxwellian(rem.theta_M), vgrid)
    base = rem.R / np.sqrt(mu_M)[None, :]
    eps = rem.epsilon

    w_sup = (1.0 + speed) ** (2.0 * beta + 1.0)
    sup_h, flag_h = _sup_with_flag(base * w_sup[None, :], vgrid)

    w_grad = (1.0 + speed) ** (2.0 * beta)
    G = _velocity_cube(base * w_grad[None, :], vgrid, sgrid)
    # centered differences: periodic in x, one-sided at the velocity ends
    sup_gx = 0.0
    flag_gx = False
    for a in range(sgrid.dim):
        d = (np.roll(G, -1, axis=a) - np.roll(G, 1, axis=a)) / (2.0 * sgrid.dx)
        s, fl = _sup_with_flag(d.reshape(sgrid.n_cells, vgrid.n_nodes), vgrid)
        if s > sup_gx:
            sup_gx, flag_gx = s, fl
    # centered v-differences exist on interior nodes only; the flag fires
    # when the argmax node lies on the truncation boundary
    sup_gv = 0.0
    flag_gv = False
    n = vgrid.nodes_per_axis
    for a in range(3):
        ax = sgrid.dim + a
        d = (
            np.take(G, range(2, n), axis=ax) - np.take(G, range(0, n - 2), axis=ax)
        ) / (2.0 * vgrid.dv)
        am = np.unravel_index(np.argmax(np.abs(d)), d.shape)
        s = float(np.abs(d)[am])
        vidx = list(am[sgrid.dim:])
        vidx[a] += 1  # back to full-grid index along the differentiated axis
        fl = any(i == 0 or i == n - 1 for i in vidx)
        if s > sup_gv:
            sup_gv, flag_gv = s, fl

    vol = sgrid.cell_volume * vgrid.dv**3
    l2_f = float(np.sqrt(np.sum(rem.f**2) * vol))
    l2_phi = float(np.sqrt(np.sum(rem.phi_R**2) * sgrid.cell_volume))
    gp = gradient(rem.phi_R, sgrid)
    l2_gphi = float(np.sqrt(sum(np.sum(g**2) for g in gp) * sgrid.cell_volume))
    lp = laplacian(rem.phi_R, sgrid)
    l2_lphi = float(np.sqrt(np.sum(lp**2) * sgrid.cell_volume))

    return {
        "winf_h": eps**1.5 * sup_h,
        "winf_grad_x": eps**5 * sup_gx,
        "winf_grad_v": eps**5 * sup_gv,
        "l2_f": l2_f,
        "l2_phi_R": l2_phi,
        "l2_grad_phi_R": l2_gphi,
        "l2_lap_phi_R": l2_lphi,
        "flag_winf_h": flag_h,
        "flag_winf_grad_x": flag_gx,
        "flag_winf_grad_v": flag_gv,
    }


# ----------------------------------------------------------------------
# Slope fitting


def fit_order(points) -> tuple[float, float, float]:
    """Least-squares fit log(value) = slope * log(eps) + intercept.

    Returns (slope, intercept, r_squared).  Needs >= 3 points with distinct
    positive epsilons and positive values.
    """
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < 3:
        raise ValueError("order fit needs >= 3 points")
    eps = np.array([p[0] for p in pts])
    val = np.array([p[1] for p in pts])
    if np.any(eps <= 0) or np.any(val <= 0):
        raise ValueError("order fit needs positive epsilons and values")
    if len(np.unique(eps)) != len(eps):
        raise ValueError("order fit needs distinct epsilons")
    x, y = np.log(eps), np.log(val)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, residual, _, _ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(residual[0]) if residual.size else float(
        np.sum((y - A @ coef) ** 2)
    )
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def _slope_confidence(points, level_t: float = 4.303):
    """(slope, intercept, r2, half-width) with a t-quantile half-width.

    ``level_t`` defaults to the two-sided 95% Student-t quantile for the
    n = 4 sweep (2 degrees of freedom).
    """
    slope, intercept, r2 = fit_order(points)
    eps = np.log([p[0] for p in points])
    val = np.log([p[1] for p in points])
    n = len(eps)
    resid = val - (slope * eps + intercept)
    dof = n - 2
    if dof <= 0:
        return slope, intercept, r2, float("inf")
    sxx = float(np.sum((eps - eps.mean()) ** 2))
    se = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    return slope, intercept, r2, level_t * se


# ----------------------------------------------------------------------
# The sweep


@dataclass(frozen=True)
class SweepConfig:
    """Everything an epsilon sweep depends on (pure inputs, fixed seed)."""

    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    dim: int = 1
    cells_per_axis: int = 64
    length: float = 2.0 * np.pi
    nodes_per_axis: int = 16
    v_max: float = 6.0
    K: float = 1.0
    amplitude: float = 0.05
    modes: tuple = ((1,),)
    T: float = 0.5
    dt_max: float = 0.005
    dt_eps_factor: float = 20.0
    n_samples: int = 25
    k: int = 1
    beta: float = 3.5
    collision_mode: str = "bgk"
    bgk_rate: float = 1.0
    advect_order: int = 3
    theta_M_policy: str = "warm"
    seed: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 3:
            raise ValueError("need >= 3 epsilons")
        if len(set(eps)) != len(eps):
            raise ValueError("epsilon entries must be distinct")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if list(eps) != sorted(eps, reverse=True):
            raise ValueError("epsilons must be sorted descending")
        for a, b in zip(eps, eps[1:]):
            if abs(a / b - 2.0) > 1e-6:
                raise ValueError(
                    "consecutive epsilons must have ratio 2 "
                    f"(got {a:g} / {b:g} = {a / b:g})"
                )


@dataclass(frozen=True)
class SweepReport:
    """Per-epsilon rows (sorted by epsilon descending) plus slope fits.

    Each row carries the sup-over-stored-times deviation from the local
    Maxwellian, the sup of every norm-package entry, the truncation-boundary
    flags, and a conservation ledger summary.  ``fits`` maps column name to
    (slope, intercept, r2, confidence half-width); ``floor_estimate`` is the
    intercept of the affine (not log) fit of the deviation against epsilon,
    clipped at zero — an estimate of the discretization floor.
    """

    config: SweepConfig
    rows: tuple
    fits: dict
    floor_estimate: float
    note: str = (
        "sup over time is taken over stored snapshots, not continuous time"
    )


def _sweep_grids(config: SweepConfig):
    sgrid = build_spatial_grid(config.dim, config.cells_per_axis, config.length)
    vgrid = build_velocity_grid(config.nodes_per_axis, config.v_max)
    return sgrid, vgrid


def prepare_background(config: SweepConfig, elliptic=None):
    """Shared fluid trajectory and truncated expansion for every epsilon."""
    sgrid, vgrid = _sweep_grids(config)
    fluid0 = init_irrotational(
        config.amplitude,
        [tuple(m) for m in config.modes],
        config.K,
        sgrid,
        EulerOptions(K=config.K, muscl=True, elliptic=elliptic or EllipticSolveOptions()),
    )
    traj = run_euler(
        fluid0, sgrid, config.T, EulerOptions(K=config.K, muscl=True), store_every=1
    )
    times = np.linspace(0.0, config.T, config.n_samples + 1)
    cascade_cfg = CollisionConfig(mode="bgk", bgk_rate=config.bgk_rate)
    expansion = build_expansion(traj, vgrid, config.k, cascade_cfg, times=times)
    return fluid0, traj, expansion


def _run_one_epsilon(config, eps, fluid0, expansion, sgrid, vgrid):
    cfg = CollisionConfig(
        mode=config.collision_mode, bgk_rate=config.bgk_rate, interp_order=3
    )
    opts = KineticOptions(advect_order=config.advect_order)
    dt_target = min(config.dt_max, eps / config.dt_eps_factor)
    interval = config.T / config.n_samples
    spi = max(1, int(np.ceil(interval / dt_target)))
    dt = interval / spi

    state = init_well_prepared(fluid0, sgrid, vgrid, eps, opts)
    vol = sgrid.cell_volume * vgrid.dv**3

    sup_dev = 0.0
    sups: dict = {}
    flags = {"flag_winf_h": False, "flag_winf_grad_x": False, "flag_winf_grad_v": False}
    mass0 = float(np.sum(state.F) * vol)
    max_mass_drift = 0.0
    max_clip = 0.0
    prev_mass = mass0
    for i_sample in range(config.n_samples + 1):
        if i_sample > 0:
            for _ in range(spi):
                state = step_vpb(state, sgrid, vgrid, dt, cfg, opts)
                mass = float(np.sum(state.F) * vol)
                max_mass_drift = max(max_mass_drift, abs(mass - prev_mass) / mass0)
                prev_mass = mass
                max_clip = max(max_clip, state.ledger.clipped_fraction)
        mu = expansion.F[0][i_sample]
        sup_dev = max(sup_dev, float(np.sqrt(np.sum((state.F - mu) ** 2) * vol)))
        rem = remainder_fields(
            state.F, state.phi, expansion, eps, i_sample, config.beta,
            config.theta_M_policy,
        )
        package = norm_package(rem)
        for key, value in package.items():
            if key.startswith("flag_"):
                flags[key] = flags[key] or value
            else:
                sups[key] = max(sups.get(key, 0.0), value)
    row = {"epsilon": eps, "sup_dev": sup_dev}
    row.update(sups)
    row.update(flags)
    row["max_mass_drift_per_step"] = max_mass_drift
    row["max_clipped_fraction"] = max_clip
    return row


def epsilon_sweep(config: SweepConfig) -> SweepReport:
    """Run the kinetic solver for each epsilon and fit convergence slopes."""
    sgrid, vgrid = _sweep_grids(config)
    fluid0, _, expansion = prepare_background(config)
    rows = [
        _run_one_epsilon(config, eps, fluid0, expansion, sgrid, vgrid)
        for eps in config.epsilons
    ]
    fit_columns = [
        "sup_dev",
        "winf_h",
        "winf_grad_x",
        "winf_grad_v",
        "l2_f",
        "l2_phi_R",
        "l2_grad_phi_R",
        "l2_lap_phi_R",
    ]
    fits = {}
    for col in fit_columns:
        points = [(r["epsilon"], r[col]) for r in rows if r[col] > 0.0]
        if len(points) >= 3:
            fits[col] = _slope_confidence(points)
    eps_arr = np.array([r["epsilon"] for r in rows])
    dev_arr = np.array([r["sup_dev"] for r in rows])
    A = np.vstack([eps_arr, np.ones_like(eps_arr)]).T
    coef, *_ = np.linalg.lstsq(A, dev_arr, rcond=None)
    floor = max(0.0, float(coef[1]))
    return SweepReport(config=config, rows=tuple(rows), fits=fits, floor_estimate=floor)


# ----------------------------------------------------------------------
# Report emission (deterministic bytes for a given report)


_CSV_COLUMNS = [
    "epsilon",
    "sup_dev",
    "winf_h",
    "winf_grad_x",
    "winf_grad_v",
    "l2_f",
    "l2_phi_R",
    "l2_grad_phi_R",
    "l2_lap_phi_R",
    "flag_winf_h",
    "flag_winf_grad_x",
    "flag_winf_grad_v",
    "max_mass_drift_per_step",
    "max_clipped_fraction",
]


def sweep_report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in report.rows:
        writer.writerow(
            [
                f"{row[c]:.17g}" if isinstance(row[c], float) else row[c]
                for c in _CSV_COLUMNS
            ]
        )
    return buf.getvalue()


def sweep_report_json(report: SweepReport) -> str:
    config = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in vars(report.config).items()
    }
    config["modes"] = [list(m) for m in report.config.modes]
    payload = {
        "config": config,
        "note": report.note,
        "rows": [dict(r) for r in report.rows],
        "fits": {
            name: {
                "slope": fit[0],
                "intercept": fit[1],
                "r_squared": fit[2],
                "confidence_halfwidth": fit[3],
            }
            for name, fit in sorted(report.fits.items())
        },
        "floor_estimate": report.floor_estimate,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
