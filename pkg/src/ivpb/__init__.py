"""Ionic Vlasov-Poisson-Boltzmann simulation library.

Kinetic solver at finite Knudsen number with Boltzmann-electron Poisson
coupling, its compressible Euler-Poisson fluid limit, the truncated
expansion machinery connecting the two, and convergence diagnostics for the
fluid-limit experiment.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    cascade,
    collision,
    config,
    diagnostics,
    euler,
    grids,
    kinetic,
    maxwellian,
    poisson,
)
