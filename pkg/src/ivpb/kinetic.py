"""Ionic Vlasov-Poisson-Boltzmann time integrator at finite Knudsen number.

Strang splitting per step:

    (a) x-transport for dt/2          (spectral phase shift, or upwind)
    (b) v-advection by -grad phi, dt/2 (semi-Lagrangian, cubic, phi frozen)
    (c) collision for dt with the 1/eps stiffness integrated exponentially
    (b) mirrored, (a) mirrored; phi re-solved after each transport substep.

The collision substep uses the integrating-factor form
``F <- e^{-nu dt/eps} F + (1 - e^{-nu dt/eps}) gain/nu`` for hard spheres
(gain and nu frozen at substep start) and exact exponential relaxation
toward the discrete moment-matched Maxwellian for BGK.  A per-step
conservation ledger records the mass/momentum/energy motion of every
substep together with velocity-truncation leakage and clipping events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .collision import (
    CollisionConfig,
    collide_parts,
    conservation_fix,
    discrete_maxwellian,
)
from .grids import SpatialGrid, VelocityGrid, integrate_velocity
from .maxwellian import moments
from .poisson import EllipticSolveOptions, gradient, solve_nonlinear_poisson

__all__ = [
    "KineticState",
    "KineticOptions",
    "StepLedger",
    "init_well_prepared",
    "step_vpb",
    "run_vpb",
    "KineticTrajectory",
    "entropy",
    "save_snapshot",
]


@dataclass(frozen=True)
class KineticOptions:
    transport: str = "spectral"  # or "upwind"
    advect_order: int = 3  # 3: cubic (sharp); 1: linear (monotone, positivity-exact)
    elliptic: EllipticSolveOptions = field(default_factory=EllipticSolveOptions)
    clip_budget: float = 1e-3  # fraction of phase cells allowed to be clipped

    def __post_init__(self):
        if self.transport not in ("spectral", "upwind"):
            raise ValueError("transport must be 'spectral' or 'upwind'")
        if self.advect_order not in (1, 3):
            raise ValueError("advect_order must be 1 or 3")


@dataclass(frozen=True)
class StepLedger:
    """Moment motion of one step, by substep, plus clipping/leakage counts."""

    mass_transport: float = 0.0
    mass_advection: float = 0.0
    mass_collision: float = 0.0
    momentum_field: float = 0.0
    momentum_transport: float = 0.0
    momentum_collision: float = 0.0
    energy_field: float = 0.0
    energy_collision: float = 0.0
    clipped_fraction: float = 0.0
    min_F: float = 0.0


@dataclass(frozen=True)
class KineticState:
    """Phase-space field F (cells, nodes), consistent potential, and time."""

    F: np.ndarray
    phi: np.ndarray  # grid.shape
    epsilon: float
    time: float = 0.0
    ledger: StepLedger = field(default_factory=StepLedger)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _density(F: np.ndarray, sgrid: SpatialGrid, vgrid: VelocityGrid) -> np.ndarray:
    return integrate_velocity(F, vgrid).reshape(sgrid.shape)


def init_well_prepared(
    fluid_state,
    sgrid: SpatialGrid,
    vgrid: VelocityGrid,
    epsilon: float,
    opts: KineticOptions | None = None,
) -> KineticState:
    """F^in = local Maxwellian of the fluid initial data (zero remainder)."""
    from .cascade import _maxwellian_cells

    opts = opts or KineticOptions()
    rho = fluid_state.rho.ravel()
    u = fluid_state.u.reshape(3, -1)
    theta = fluid_state.theta.ravel()
    F = _maxwellian_cells(rho, u, theta, vgrid)
    phi = solve_nonlinear_poisson(
        _density(F, sgrid, vgrid), sgrid, opts.elliptic,
        initial_guess=fluid_state.phi,
    )
    return KineticState(F=F, phi=phi, epsilon=epsilon)


# ----------------------------------------------------------------------
# Substeps


def _transport_x(F, sgrid, vgrid, dt, scheme):
    """Free transport dt step: dF/dt + v . grad_x F = 0."""
    shape = sgrid.shape + (vgrid.n_nodes,)
    G = F.reshape(shape)
    if scheme == "spectral":
        Gh = np.fft.fftn(G, axes=tuple(range(sgrid.dim)))
        for a in range(sgrid.dim):
            k = sgrid.wavenumbers(a).reshape(
                sgrid.wavenumbers(a).shape + (1,)
            )
            Gh = Gh * np.exp(-1j * k * vgrid.nodes[:, a] * dt)
        G = np.real(np.fft.ifftn(Gh, axes=tuple(range(sgrid.dim))))
        if np.min(G) < 0.0:
            # Trig interpolation undershoots around spatially rough tail
            # profiles; clamp at zero and rescale each velocity column to
            # its spatial sum (which the phase shift conserves exactly),
            # so every velocity moment is preserved to machine precision.
            axes = tuple(range(sgrid.dim))
            col = G.sum(axis=axes)
            Gc = np.maximum(G, 0.0)
            col_c = Gc.sum(axis=axes)
            scale = np.where(
                (col > 0.0) & (col_c > 0.0),
                col / np.where(col_c > 0.0, col_c, 1.0),
                1.0,
            )
            G = Gc * scale
    else:
        cfl = np.max(np.abs(vgrid.nodes[:, : sgrid.dim])) * dt / sgrid.dx
        if cfl > 1.0 + 1e-12:
            raise ValueError(f"transport CFL violation: v_max dt/dx = {cfl:.3f} > 1")
        for a in range(sgrid.dim):
            v = vgrid.nodes[:, a]
            up = np.roll(G, 1, axis=a)  # cell to the left
            dn = np.roll(G, -1, axis=a)
            flux_pos = (G - up) * np.maximum(v, 0.0)
            flux_neg = (dn - G) * np.minimum(v, 0.0)
            G = G - dt / sgrid.dx * (flux_pos + flux_neg)
    return G.reshape(F.shape)


def _cubic_shift_weights(q: float):
    """4-point Lagrange weights for sampling a grid function at index x + q."""
    i0 = int(np.floor(q))
    a = q - i0
    w = (
        -a * (a - 1.0) * (a - 2.0) / 6.0,
        (a + 1.0) * (a - 1.0) * (a - 2.0) / 2.0,
        -(a + 1.0) * a * (a - 2.0) / 2.0,
        (a + 1.0) * a * (a - 1.0) / 6.0,
    )
    return i0, w


def _gather_shift(cube: np.ndarray, axis: int, offsets, weights) -> np.ndarray:
    """Weighted sum of index-shifted copies with edge-replicated padding."""
    n = cube.shape[axis]
    idx = np.arange(n)
    out = np.zeros_like(cube)
    for s, wo in zip(offsets, weights):
        if wo == 0.0:
            continue
        out += wo * np.take(cube, np.clip(idx + s, 0, n - 1), axis=axis)
    return out


def _shift_axis(cube: np.ndarray, axis: int, q: float, order: int) -> np.ndarray:
    """Sample cube at index + q along one axis (edge-replicated beyond ends).

    Linear (order 1) is monotone; cubic (order 3) is sharper.  Both are
    meant for slowly varying fields: the advection routine applies them to
    the ratio F / Maxwellian, never to F itself, so the exponential tail
    variation is factored out before interpolating.
    """
    if order == 1:
        i0 = int(np.floor(q))
        a = q - i0
        return _gather_shift(cube, axis, (i0, i0 + 1), (1.0 - a, a))
    i0, w = _cubic_shift_weights(q)
    return _gather_shift(cube, axis, (i0 - 1, i0, i0 + 1, i0 + 2), w)


def _cell_maxwellian_params(Fc: np.ndarray, vgrid: VelocityGrid):
    """(rho, u, theta) from the discrete moments of one cell, or None."""
    mass, mom, en = moments(Fc, vgrid)
    if not mass > 0.0:
        return None
    u = mom / mass
    theta = (en / mass - float(u @ u)) / 3.0
    if not theta > 0.0:
        return None
    return float(mass), u, theta


def _advect_v(F, phi, sgrid, vgrid, dt, order=3):
    """Semi-Lagrangian dt step of dF/dt - grad phi . grad_v F = 0.

    Characteristics dv/dt = -grad phi, so F_new(v) = F_old(v + grad phi dt);
    per spatial cell the shift is uniform in v.  F is factored as M * G with
    M the analytic Maxwellian matching the cell's discrete moments: M at the
    shifted nodes is evaluated exactly and only the smooth O(1) ratio G is
    interpolated (axis by axis, edge-replicated).  Interpolating F directly
    would put the whole interpolation error on the exponential tails, where
    adjacent nodes differ by orders of magnitude.
    """
    gphi = [g.ravel() for g in gradient(phi, sgrid)]
    n = vgrid.nodes_per_axis
    nodes = vgrid.nodes
    out = np.empty_like(F)
    inv_two_pi = 1.0 / (2.0 * np.pi)
    for cell in range(F.shape[0]):
        shift = np.zeros(3)
        for a in range(sgrid.dim):
            shift[a] = gphi[a][cell] * dt
        if not np.any(shift):
            out[cell] = F[cell]
            continue
        params = _cell_maxwellian_params(F[cell], vgrid)
        if params is None:
            # degenerate moments: fall back to interpolating F itself
            cube = F[cell].reshape(n, n, n)
            for a in range(sgrid.dim):
                q = shift[a] / vgrid.dv
                if q != 0.0:
                    cube = _shift_axis(cube, a, q, order)
            out[cell] = cube.reshape(-1)
            continue
        rho, u, theta = params
        norm = rho * (inv_two_pi / theta) ** 1.5
        M_here = norm * np.exp(
            -np.sum((nodes - u) ** 2, axis=1) / (2.0 * theta)
        )
        M_there = norm * np.exp(
            -np.sum((nodes + shift - u) ** 2, axis=1) / (2.0 * theta)
        )
        # Clamp roundoff-band negatives before dividing: a tail value of
        # -1e-18 over M ~ 1e-21 would become a large negative ratio that the
        # shift then multiplies against a much larger M, amplifying noise
        # step over step until it leaves the positivity band.
        G = (np.maximum(F[cell], 0.0) / M_here).reshape(n, n, n)
        for a in range(sgrid.dim):
            q = shift[a] / vgrid.dv
            if q != 0.0:
                G = _shift_axis(G, a, q, order)
        # Cubic interpolation undershoots next to isolated ratio spikes
        # (tail noise of size ~1e-12 over M ~ 1e-21 is a spike of ~1e9 in
        # G); clamp so the reconstructed F stays nonnegative.
        new = np.maximum(G.reshape(-1), 0.0) * M_there
        # a uniform v-shift conserves the cell mass exactly; restore it
        new_mass = float(np.sum(new))
        if new_mass > 0.0:
            new *= float(np.sum(F[cell])) / new_mass
        out[cell] = new
    return out


def _collide_step(F, sgrid, vgrid, dt_over_eps, cfg, clip_budget):
    """Exponential collision substep; returns (F_new, clipped_fraction)."""
    # Negatives within -1e-12 * max F are roundoff-level tail oscillations;
    # only deeper excursions count as clipping events.
    clipped = np.count_nonzero(F < -1e-12 * np.max(F))
    total = F.size
    if clipped / total > clip_budget:
        raise ValueError(
            f"collision substep: {clipped / total:.2%} of phase cells negative, "
            f"beyond the clipping budget {clip_budget:.2%}"
        )
    Fc = np.maximum(F, 0.0)
    out = np.empty_like(F)
    if cfg.mode == "bgk":
        decay = np.exp(-cfg.bgk_rate * dt_over_eps)
        for cell in range(F.shape[0]):
            mass, mom, en = moments(Fc[cell], vgrid)
            M = discrete_maxwellian(vgrid, mass, mom, en)
            out[cell] = M + decay * (Fc[cell] - M)
    else:
        # The discrete gain term does not annihilate the grid Maxwellian
        # exactly (quadrature/interpolation residual), which would pin an
        # epsilon-independent deviation floor; subtracting the residual
        # Q(M, M) of the cell's moment-matched Maxwellian M makes M an
        # exact fixed point of the substep.
        for cell in range(F.shape[0]):
            mass, mom, en = moments(Fc[cell], vgrid)
            M = discrete_maxwellian(vgrid, mass, mom, en)
            gain, nu = collide_parts(Fc[cell], Fc[cell], vgrid, cfg)
            gain_M, nu_M = collide_parts(M, M, vgrid, cfg)
            # Floor at zero: the correction can undershoot by O(interp
            # error) in the far tails, which the exponential update would
            # amplify past the positivity band; at a Maxwellian the floor
            # is inactive (gain_eff = M * nu_M > 0), and the conservation
            # fix below restores the clipped invariant moments exactly.
            gain_eff = np.maximum(gain - gain_M + M * nu_M, 0.0)
            safe_nu = np.maximum(nu, 1e-300)
            decay = np.exp(-nu * dt_over_eps)
            dF = (1.0 - decay) * (gain_eff / safe_nu - Fc[cell])
            if cfg.conservation_fix:
                dF = _shape_weighted_fix(dF, Fc[cell], vgrid)
            out[cell] = Fc[cell] + dF
    return out, clipped / total


def _shape_weighted_fix(dF, shape, vgrid):
    """Remove the invariant-moment defect of dF with a correction shaped
    like the cell's own distribution.

    The plain least-squares fix spreads the correction over raw polynomial
    invariants, which is larger than the exponentially small distribution
    tails and would flip their sign; weighting the correction by the
    distribution keeps it a small relative perturbation everywhere, so the
    positivity contract survives while the moments are still zeroed exactly.
    Falls back to the unweighted projection when the cell is degenerate.
    """
    from .collision import _invariant_fields

    psi = _invariant_fields(vgrid)
    w = vgrid.weights
    defect = (psi * w) @ dF
    gram = (psi * (w * shape)) @ psi.T
    try:
        coeffs = np.linalg.solve(gram, defect)
    except np.linalg.LinAlgError:
        return conservation_fix(dF, vgrid)
    if not np.all(np.isfinite(coeffs)):
        return conservation_fix(dF, vgrid)
    return dF - shape * (coeffs @ psi)


# ----------------------------------------------------------------------
# Stepper


def _moments_total(F, sgrid, vgrid):
    mass = float(np.sum(integrate_velocity(F, vgrid)) * sgrid.cell_volume)
    mom = float(
        np.sum(integrate_velocity(F * vgrid.nodes[:, 0], vgrid)) * sgrid.cell_volume
    )
    en = float(
        np.sum(integrate_velocity(F * np.sum(vgrid.nodes**2, axis=1), vgrid))
        * sgrid.cell_volume
    )
    return mass, mom, en


def step_vpb(
    state: KineticState,
    sgrid: SpatialGrid,
    vgrid: VelocityGrid,
    dt: float,
    cfg: CollisionConfig,
    opts: KineticOptions | None = None,
) -> KineticState:
    """One Strang step of the VPB system at Knudsen number state.epsilon."""
    opts = opts or KineticOptions()
    F = state.F
    phi = state.phi

    m0 = _moments_total(F, sgrid, vgrid)
    F = _transport_x(F, sgrid, vgrid, 0.5 * dt, opts.transport)
    phi = solve_nonlinear_poisson(
        _density(F, sgrid, vgrid), sgrid, opts.elliptic, initial_guess=phi
    )
    m1 = _moments_total(F, sgrid, vgrid)
    F = _advect_v(F, phi, sgrid, vgrid, 0.5 * dt, opts.advect_order)
    m2 = _moments_total(F, sgrid, vgrid)
    F, clipped = _collide_step(F, sgrid, vgrid, dt / state.epsilon, cfg, opts.clip_budget)
    m3 = _moments_total(F, sgrid, vgrid)
    F = _advect_v(F, phi, sgrid, vgrid, 0.5 * dt, opts.advect_order)
    m4 = _moments_total(F, sgrid, vgrid)
    F = _transport_x(F, sgrid, vgrid, 0.5 * dt, opts.transport)
    phi = solve_nonlinear_poisson(
        _density(F, sgrid, vgrid), sgrid, opts.elliptic, initial_guess=phi
    )
    # End-of-step positivity: zero out excursions beyond the roundoff band
    # -1e-12 max F (interpolation/ringing tails), so stored states satisfy
    # min F >= -1e-12 max F; the zeroed cells count against the clip budget.
    deep = F < -1e-12 * np.max(F)
    n_deep = int(np.count_nonzero(deep))
    if n_deep:
        F = np.where(deep, 0.0, F)
    clipped = clipped + n_deep / F.size
    if clipped > opts.clip_budget:
        raise ValueError(
            f"step: {clipped:.2%} of phase cells clipped, "
            f"beyond the budget {opts.clip_budget:.2%}"
        )
    m5 = _moments_total(F, sgrid, vgrid)

    ledger = StepLedger(
        mass_transport=(m1[0] - m0[0]) + (m5[0] - m4[0]),
        mass_advection=(m2[0] - m1[0]) + (m4[0] - m3[0]),
        mass_collision=m3[0] - m2[0],
        momentum_transport=(m1[1] - m0[1]) + (m5[1] - m4[1]),
        momentum_field=(m2[1] - m1[1]) + (m4[1] - m3[1]),
        momentum_collision=m3[1] - m2[1],
        energy_field=(m2[2] - m1[2]) + (m4[2] - m3[2]),
        energy_collision=m3[2] - m2[2],
        clipped_fraction=clipped,
        min_F=float(np.min(F)),
    )
    return KineticState(
        F=F, phi=phi, epsilon=state.epsilon, time=state.time + dt, ledger=ledger
    )


@dataclass(frozen=True)
class KineticTrajectory:
    times: np.ndarray
    states: tuple
    ledgers: tuple


def run_vpb(
    initial: KineticState,
    sgrid: SpatialGrid,
    vgrid: VelocityGrid,
    T: float,
    dt: float,
    cfg: CollisionConfig,
    store_every: int = 1,
    opts: KineticOptions | None = None,
) -> KineticTrajectory:
    """Evolve to T, storing every ``store_every``-th step plus both endpoints."""
    opts = opts or KineticOptions()
    if T < 0:
        raise ValueError("T must be nonnegative")
    state = initial
    times = [state.time]
    states = [state]
    ledgers = []
    n_steps = 0
    t_end = initial.time + T
    while state.time < t_end - 1e-14:
        step = min(dt, t_end - state.time)
        state = step_vpb(state, sgrid, vgrid, step, cfg, opts)
        ledgers.append(state.ledger)
        n_steps += 1
        if n_steps % store_every == 0 or state.time >= t_end - 1e-14:
            times.append(state.time)
            states.append(state)
    return KineticTrajectory(
        times=np.asarray(times), states=tuple(states), ledgers=tuple(ledgers)
    )


def entropy(F: np.ndarray, sgrid: SpatialGrid, vgrid: VelocityGrid) -> float:
    """H = int int F log F dv dx (F <= 0 contributes zero)."""
    safe = np.where(F > 0.0, F, 1.0)
    return float(
        np.sum(integrate_velocity(np.where(F > 0.0, F * np.log(safe), 0.0), vgrid))
        * sgrid.cell_volume
    )


def save_snapshot(state: KineticState, sgrid: SpatialGrid, vgrid: VelocityGrid, path_prefix: str):
    """Binary field dump plus JSON manifest with the conservation ledger."""
    np.savez(path_prefix + ".npz", F=state.F, phi=state.phi)
    manifest = {
        "epsilon": state.epsilon,
        "time": state.time,
        "spatial": {"dim": sgrid.dim, "cells_per_axis": sgrid.cells_per_axis,
                    "length": sgrid.length},
        "velocity": {"nodes_per_axis": vgrid.nodes_per_axis, "v_max": vgrid.v_max},
        "ledger": {k: getattr(state.ledger, k) for k in state.ledger.__dataclass_fields__},
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
