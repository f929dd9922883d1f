"""Command-line front end: euler / cascade / kinetic / sweep / verify.

Every subcommand reads one strict key = value configuration file (all keys
optional, defaults materialized), writes its artifacts into ``--out``, and
drops a ``manifest.json`` with the full effective configuration, package
versions, and wall time.  Exit codes: 0 success, 1 runtime failure,
2 configuration rejection.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _apply_thread_env() -> None:
    threads = os.environ.get("IVPB_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        except (ImportError, ValueError):
            pass


def _grids(config: RunConfig):
    from .grids import build_spatial_grid, build_velocity_grid

    sgrid = build_spatial_grid(
        config["grid.dim"], config["grid.cells"], config["grid.length"]
    )
    vgrid = build_velocity_grid(config["velocity.nodes"], config["velocity.v_max"])
    return sgrid, vgrid


def _elliptic(config: RunConfig):
    from .poisson import EllipticSolveOptions

    return EllipticSolveOptions(
        newton_tol=config["solver.newton_tol"],
        max_newton=config["solver.max_newton"],
        krylov_tol=config["solver.krylov_tol"],
        max_krylov=config["solver.max_krylov"],
    )


def _collision_cfg(config: RunConfig):
    from .collision import CollisionConfig
    from .grids import build_angular_quadrature

    return CollisionConfig(
        mode=config["collision.mode"],
        angular=build_angular_quadrature(
            config["collision.angular_polar"], config["collision.angular_azimuth"]
        )
        if config["collision.mode"] == "hard_sphere"
        else None,
        conservation_fix=config["collision.conservation_fix"],
        bgk_rate=config["collision.bgk_rate"],
        interp_order=config["collision.interp_order"],
    )


def _euler_options(config: RunConfig):
    from .euler import EulerOptions

    return EulerOptions(
        K=config["physics.K"],
        cfl=config["euler.cfl"],
        muscl=config["euler.muscl"],
        elliptic=_elliptic(config),
    )


def _initial_fluid(config: RunConfig, sgrid):
    from .euler import init_irrotational

    modes = [(m,) + (0,) * (sgrid.dim - 1) for m in config["euler.modes"]]
    return init_irrotational(
        config["euler.amplitude"],
        modes,
        config["physics.K"],
        sgrid,
        _euler_options(config),
    )


def _write_manifest(out_dir, config, wall, extra=None):
    manifest = {
        "config": config.echo(),
        "versions": {"ivpb": __version__, "numpy": np.__version__},
        "wall_time_s": wall,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _save_fluid_trajectory(traj, path_prefix: str):
    arrays = {
        "times": np.asarray(traj.times),
        "rho": np.stack([s.rho for s in traj.states]),
        "u": np.stack([s.u for s in traj.states]),
        "phi": np.stack([s.phi for s in traj.states]),
    }
    np.savez(path_prefix + ".npz", **arrays)
    meta = {
        "K": traj.states[0].K,
        "spatial": {
            "dim": traj.grid.dim,
            "cells_per_axis": traj.grid.cells_per_axis,
            "length": traj.grid.length,
        },
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _load_fluid_trajectory(path_prefix: str):
    from .euler import EulerTrajectory, FluidState
    from .grids import build_spatial_grid

    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    data = np.load(path_prefix + ".npz")
    grid = build_spatial_grid(
        meta["spatial"]["dim"],
        meta["spatial"]["cells_per_axis"],
        meta["spatial"]["length"],
    )
    states = tuple(
        FluidState(
            rho=data["rho"][i],
            u=data["u"][i],
            phi=data["phi"][i],
            K=meta["K"],
            time=float(data["times"][i]),
        )
        for i in range(data["times"].size)
    )
    return EulerTrajectory(grid=grid, states=states, times=np.asarray(data["times"]))


# ----------------------------------------------------------------------
# Subcommands


def _cmd_euler(config: RunConfig, out_dir: str) -> int:
    from .euler import export_trajectory_csv, run_euler

    start = time.time()
    sgrid, _ = _grids(config)
    state = _initial_fluid(config, sgrid)
    traj = run_euler(state, sgrid, config["kinetic.T"], _euler_options(config))
    export_trajectory_csv(traj, os.path.join(out_dir, "euler_trajectory.csv"))
    _save_fluid_trajectory(traj, os.path.join(out_dir, "euler_trajectory"))
    _write_manifest(
        out_dir,
        config,
        time.time() - start,
        {"artifacts": ["euler_trajectory.csv", "euler_trajectory.npz"]},
    )
    return EXIT_OK


def _cmd_cascade(config: RunConfig, out_dir: str) -> int:
    from .cascade import build_expansion, save_expansion
    from .collision import CollisionConfig
    from .euler import run_euler

    start = time.time()
    sgrid, vgrid = _grids(config)
    extra = {}
    prefix = config["cascade.trajectory"]
    if prefix:
        traj = _load_fluid_trajectory(prefix)
        extra["trajectory_checksum"] = _sha256(prefix + ".npz")
    else:
        traj = run_euler(
            _initial_fluid(config, sgrid),
            sgrid,
            config["kinetic.T"],
            _euler_options(config),
        )
    cascade_cfg = CollisionConfig(mode="bgk", bgk_rate=config["collision.bgk_rate"])
    times = np.linspace(0.0, config["kinetic.T"], config["kinetic.n_samples"] + 1)
    expansion = build_expansion(
        traj,
        vgrid,
        config["cascade.k"],
        cascade_cfg,
        times=times,
        elliptic=_elliptic(config),
    )
    save_expansion(expansion, os.path.join(out_dir, "expansion"))
    extra.update(
        {
            "hydro_leakage": expansion.leakage,
            "artifacts": ["expansion.npz", "expansion.json"],
        }
    )
    _write_manifest(out_dir, config, time.time() - start, extra)
    return EXIT_OK


def _cmd_kinetic(config: RunConfig, out_dir: str) -> int:
    from .kinetic import KineticOptions, init_well_prepared, run_vpb, save_snapshot

    start = time.time()
    sgrid, vgrid = _grids(config)
    fluid0 = _initial_fluid(config, sgrid)
    cfg = _collision_cfg(config)
    opts = KineticOptions(
        transport=config["kinetic.transport"],
        advect_order=config["kinetic.advect_order"],
        elliptic=_elliptic(config),
    )
    artifacts = []
    for eps in config["kinetic.epsilons"]:
        dt = min(config["kinetic.dt_max"], eps / config["kinetic.dt_eps_factor"])
        n_steps = max(1, int(np.ceil(config["kinetic.T"] / dt)))
        dt = config["kinetic.T"] / n_steps
        initial = init_well_prepared(fluid0, sgrid, vgrid, eps, opts)
        store_every = max(1, n_steps // config["kinetic.n_samples"])
        traj = run_vpb(
            initial, sgrid, vgrid, config["kinetic.T"], dt, cfg, store_every, opts
        )
        name = f"kinetic_eps{eps:g}"
        save_snapshot(traj.states[-1], sgrid, vgrid, os.path.join(out_dir, name))
        artifacts.extend([name + ".npz", name + ".json"])
    _write_manifest(out_dir, config, time.time() - start, {"artifacts": artifacts})
    return EXIT_OK


def _sweep_config(config: RunConfig):
    from .diagnostics import SweepConfig

    return SweepConfig(
        epsilons=config["kinetic.epsilons"],
        dim=config["grid.dim"],
        cells_per_axis=config["grid.cells"],
        length=config["grid.length"],
        nodes_per_axis=config["velocity.nodes"],
        v_max=config["velocity.v_max"],
        K=config["physics.K"],
        amplitude=config["euler.amplitude"],
        modes=tuple(
            (m,) + (0,) * (config["grid.dim"] - 1) for m in config["euler.modes"]
        ),
        T=config["kinetic.T"],
        dt_max=config["kinetic.dt_max"],
        dt_eps_factor=config["kinetic.dt_eps_factor"],
        n_samples=config["kinetic.n_samples"],
        k=config["cascade.k"],
        beta=config["physics.beta"],
        collision_mode=config["collision.mode"],
        bgk_rate=config["collision.bgk_rate"],
        advect_order=config["kinetic.advect_order"],
        theta_M_policy=config["physics.theta_M_policy"],
        seed=config["seed"],
    )


def _cmd_sweep(config: RunConfig, out_dir: str) -> int:
    from .diagnostics import epsilon_sweep, sweep_report_csv, sweep_report_json

    if len(config["kinetic.epsilons"]) < 3:
        print("need >= 3 epsilons", file=sys.stderr)
        return EXIT_CONFIG
    start = time.time()
    try:
        sweep_cfg = _sweep_config(config)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    report = epsilon_sweep(sweep_cfg)
    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write(sweep_report_csv(report))
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        fh.write(sweep_report_json(report))
    _write_manifest(
        out_dir,
        config,
        time.time() - start,
        {"artifacts": ["sweep.csv", "sweep.json"]},
    )
    return EXIT_OK


def _verify_checks(config: RunConfig):
    """(name, defect, tolerance, passed) rows for the fast property suite."""
    from .cascade import electron_series_closed_forms
    from .collision import CollisionConfig, build_linearized_operator, collide
    from .grids import (
        SpatialGrid,
        VelocityGrid,
        build_angular_quadrature,
        integrate_velocity,
    )
    from .maxwellian import (
        LocalMaxwellianParams,
        build_chi_basis,
        eval_local_maxwellian,
    )
    from .poisson import laplacian, solve_nonlinear_poisson

    rng = np.random.default_rng(config["seed"])
    checks = []

    def record(name, defect, tol):
        checks.append(
            {"name": name, "defect": float(defect), "tolerance": tol,
             "passed": bool(defect <= tol)}
        )

    # chi-basis orthonormality
    bg = LocalMaxwellianParams(rho=1.0, u=np.zeros(3), theta=1.0)
    vg24 = VelocityGrid(nodes_per_axis=24, v_max=8.0)
    basis = build_chi_basis(bg, vg24)
    gram = np.array(
        [
            [integrate_velocity(basis.chi[i] * basis.chi[j], vg24) for j in range(5)]
            for i in range(5)
        ]
    )
    record("chi_orthonormality", np.max(np.abs(gram - np.eye(5))), 1e-6)

    # collision conservation with the fix, small hard-sphere grid
    vg8 = VelocityGrid(nodes_per_axis=8, v_max=6.0)
    cfg_hs = CollisionConfig(
        mode="hard_sphere",
        angular=build_angular_quadrature(
            config["collision.angular_polar"], config["collision.angular_azimuth"]
        ),
        interp_order=config["collision.interp_order"],
    )
    mu8 = eval_local_maxwellian(bg, vg8)
    worst = 0.0
    for _ in range(3):
        F = mu8 * (1.0 + 0.5 * rng.random(vg8.n_nodes))
        Q = collide(F, F, vg8, cfg_hs)
        mass = integrate_velocity(Q, vg8)
        mom = max(
            abs(integrate_velocity(Q * vg8.nodes[:, a], vg8)) for a in range(3)
        )
        en = integrate_velocity(Q * np.sum(vg8.nodes**2, axis=1), vg8)
        scale = float(np.max(np.abs(Q))) * vg8.dv**3 * vg8.n_nodes
        worst = max(worst, max(abs(mass), mom, abs(en)) / scale)
    record("collision_conservation_fix", worst, 1e-12)

    # linearized operator: symmetry and Rayleigh coercivity
    vg12 = VelocityGrid(nodes_per_axis=12, v_max=6.0)
    op = build_linearized_operator(bg, vg12, cfg_hs)
    record(
        "L_symmetry",
        np.max(np.abs(op.matrix - op.matrix.T)) / np.max(np.abs(op.matrix)),
        1e-8,
    )
    qb = op.basis.ortho
    min_rayleigh = np.inf
    for _ in range(20):
        g = rng.standard_normal(vg12.n_nodes)
        g = g - np.array(
            [integrate_velocity(g * qb[i], vg12) for i in range(5)]
        ) @ qb
        min_rayleigh = min(
            min_rayleigh, float(g @ (op.matrix @ g)) / float(np.sum(op.nu * g * g))
        )
    record("L_coercivity_estimate_positive", -min(min_rayleigh, 0.0), 0.0)

    # electron-density series closed forms
    sg = SpatialGrid(dim=1, cells_per_axis=16, length=2.0 * np.pi)
    phis = [0.2 * rng.standard_normal(sg.shape) for _ in range(4)]
    record("electron_series_closed_forms", electron_series_closed_forms(phis), 1e-12)

    # nonlinear Poisson manufactured solution
    x = sg.axis_coords()
    phi_star = 0.2 * np.sin(2.0 * np.pi * x / sg.length)
    rho_star = np.exp(phi_star) - laplacian(phi_star, sg)
    phi_num = solve_nonlinear_poisson(rho_star, sg)
    record("poisson_manufactured", np.max(np.abs(phi_num - phi_star)), 1e-9)

    # scalar Lyapunov bracketing
    xs = rng.uniform(-np.log(6.0), np.log(6.0), 10_000)
    density = xs * np.exp(xs) - np.exp(xs) + 1.0
    viol = np.maximum(density - 3.0 * xs**2, xs**2 / 12.0 - density)
    record("lyapunov_bracketing", float(np.max(viol)), 0.0)
    return checks


def _cmd_verify(config: RunConfig, out_dir: str) -> int:
    start = time.time()
    checks = _verify_checks(config)
    payload = {"checks": checks, "all_passed": all(c["passed"] for c in checks)}
    with open(os.path.join(out_dir, "verify.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    print(json.dumps(payload, indent=2, sort_keys=True))
    _write_manifest(out_dir, config, time.time() - start, {"artifacts": ["verify.json"]})
    return EXIT_OK if payload["all_passed"] else EXIT_RUNTIME


_COMMANDS = {
    "euler": _cmd_euler,
    "cascade": _cmd_cascade,
    "kinetic": _cmd_kinetic,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="ivpb",
        description="Ionic Vlasov-Poisson-Boltzmann experiments: fluid limit, "
        "expansion cascade, kinetic runs, and epsilon-convergence sweeps.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="key = value configuration file")
    parser.add_argument("--out", default="out", help="artifact directory")
    args = parser.parse_args(argv)

    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        config = parse_config(text)
    except (ConfigError, OSError) as exc:
        print(f"configuration rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    try:
        return _COMMANDS[args.command](config, args.out)
    except Exception as exc:  # noqa: BLE001 - report and map to exit code
        failure = {"command": args.command, "error": type(exc).__name__,
                   "message": str(exc)}
        print(json.dumps(failure, indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
