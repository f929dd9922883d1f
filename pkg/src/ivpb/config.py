"""Strict key = value run configuration with full-default materialization.

The document format is one ``key = value`` pair per line, ``#`` comments,
blank lines ignored.  Every key has exactly one default, listed in the
schema below; unknown keys, type errors, and constraint violations are
rejected with the offending key path.  ``RunConfig.echo()`` renders the
fully materialized configuration back into canonical text so a run manifest
always records every effective value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["RunConfig", "ConfigError", "parse_config", "default_config_text"]


class ConfigError(ValueError):
    """Configuration rejection; message carries the key path."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _parse_ints(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


# key -> (parser, default, description)
_SCHEMA = {
    "grid.dim": (int, 1, "spatial dimension (1..3)"),
    "grid.cells": (int, 64, "cells per spatial axis"),
    "grid.length": (float, 2.0 * math.pi, "periodic box length"),
    "velocity.nodes": (int, 16, "velocity nodes per axis (even)"),
    "velocity.v_max": (float, 6.0, "velocity truncation half-width"),
    "physics.K": (float, 1.0, "barotropic pressure constant"),
    "physics.beta": (float, 3.5, "velocity weight exponent, >= 7/2"),
    "physics.theta_M_policy": (str, "warm", "global Maxwellian temperature rule"),
    "collision.mode": (str, "bgk", "bgk or hard_sphere"),
    "collision.bgk_rate": (float, 1.0, "BGK relaxation rate"),
    "collision.conservation_fix": (_parse_bool, True, "project collision invariants"),
    "collision.interp_order": (int, 3, "post-collision interpolation order"),
    "collision.angular_polar": (int, 4, "angular rule polar points"),
    "collision.angular_azimuth": (int, 8, "angular rule azimuthal points"),
    "cascade.k": (int, 1, "expansion truncation parameter"),
    "cascade.trajectory": (str, "", "saved fluid trajectory to reuse (path prefix)"),
    "euler.amplitude": (float, 0.05, "initial density perturbation amplitude"),
    "euler.modes": (_parse_ints, (1,), "cosine mode numbers along x"),
    "euler.cfl": (float, 0.4, "hyperbolic CFL number"),
    "euler.muscl": (_parse_bool, True, "second-order slope reconstruction"),
    "kinetic.epsilons": (_parse_floats, (0.2, 0.1, 0.05, 0.025), "Knudsen ladder"),
    "kinetic.T": (float, 0.5, "final time"),
    "kinetic.dt_max": (float, 0.005, "time step ceiling"),
    "kinetic.dt_eps_factor": (float, 20.0, "dt <= epsilon / this factor"),
    "kinetic.n_samples": (int, 25, "stored sample intervals over [0, T]"),
    "kinetic.transport": (str, "spectral", "x-transport scheme"),
    "kinetic.advect_order": (int, 3, "velocity interpolation order (1 or 3)"),
    "solver.newton_tol": (float, 1e-11, "nonlinear Poisson residual tolerance"),
    "solver.max_newton": (int, 30, "Newton iteration cap"),
    "solver.krylov_tol": (float, 1e-12, "screened-solve relative tolerance"),
    "solver.max_krylov": (int, 200, "Krylov iteration cap"),
    "output.dir": (str, "out", "artifact directory"),
    "seed": (int, 0, "seed for randomized property checks"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self) -> str:
        """Canonical text with every key materialized (sorted)."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                rendered = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = f"{value:.17g}"
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"


def _validate(values: dict) -> None:
    def fail(key, message):
        raise ConfigError(f"{key}: {message}")

    if values["grid.dim"] not in (1, 2, 3):
        fail("grid.dim", "must be 1, 2, or 3")
    if values["grid.cells"] < 2:
        fail("grid.cells", "must be >= 2")
    if values["grid.length"] <= 0:
        fail("grid.length", "must be positive")
    nodes = values["velocity.nodes"]
    if nodes < 4:
        fail("velocity.nodes", "must be >= 4")
    if nodes % 2 != 0:
        fail(
            "velocity.nodes",
            "must be even: the midpoint node set must be symmetric under "
            "v -> -v so that reflection pairs integrate exactly",
        )
    if values["velocity.v_max"] <= 0:
        fail("velocity.v_max", "must be positive")
    if values["physics.K"] <= 0:
        fail("physics.K", "must be positive")
    if values["physics.beta"] < 3.5:
        fail("physics.beta", "β ≥ 7/2 required")
    if values["physics.theta_M_policy"] not in ("midpoint", "warm"):
        fail("physics.theta_M_policy", "must be 'midpoint' or 'warm'")
    if values["collision.mode"] not in ("bgk", "hard_sphere"):
        fail("collision.mode", "must be 'bgk' or 'hard_sphere'")
    if values["collision.bgk_rate"] <= 0:
        fail("collision.bgk_rate", "must be positive")
    if values["collision.interp_order"] not in (1, 3):
        fail("collision.interp_order", "must be 1 or 3")
    if values["collision.angular_polar"] < 4 or values["collision.angular_azimuth"] < 8:
        fail(
            "collision.angular_polar",
            "angular rule must keep degree >= 7 (polar >= 4, azimuth >= 8)",
        )
    if values["cascade.k"] < 1:
        fail("cascade.k", "must be >= 1")
    if abs(values["euler.amplitude"]) > 0.1:
        fail("euler.amplitude", "|amplitude| <= 0.1 (small-data regime)")
    if values["euler.cfl"] <= 0 or values["euler.cfl"] > 1:
        fail("euler.cfl", "must lie in (0, 1]")
    if any(e <= 0 for e in values["kinetic.epsilons"]):
        fail("kinetic.epsilons", "all entries must be positive")
    if values["kinetic.T"] < 0:
        fail("kinetic.T", "must be nonnegative")
    if values["kinetic.dt_max"] <= 0 or values["kinetic.dt_eps_factor"] <= 0:
        fail("kinetic.dt_max", "time step controls must be positive")
    if values["kinetic.n_samples"] < 1:
        fail("kinetic.n_samples", "must be >= 1")
    if values["kinetic.transport"] not in ("spectral", "upwind"):
        fail("kinetic.transport", "must be 'spectral' or 'upwind'")
    if values["kinetic.advect_order"] not in (1, 3):
        fail("kinetic.advect_order", "must be 1 or 3")
    for key in ("solver.newton_tol", "solver.krylov_tol"):
        if values[key] <= 0:
            fail(key, "must be positive")
    for key in ("solver.max_newton", "solver.max_krylov"):
        if values[key] < 1:
            fail(key, "must be >= 1")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a key = value document, materializing defaults."""
    values = {key: default for key, (_, default, _) in _SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rendered = line.partition("=")
        key = key.strip()
        rendered = rendered.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown key (line {lineno})")
        parser = _SCHEMA[key][0]
        try:
            values[key] = parser(rendered)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc} (line {lineno})") from exc
    _validate(values)
    return RunConfig(values=values)


def default_config_text() -> str:
    """The full default configuration in canonical form."""
    return parse_config("").echo()
