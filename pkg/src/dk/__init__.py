"""Desk-scale simulator and verification harness for a regularised
Dean-Kawasaki SPDE with correlated noise on a bounded domain with
Dirichlet boundary conditions.

The package provides:

* a 1D finite-volume stepper for the Ito and Stratonovich forms of the
  equation (with optional extra viscosity ``alpha`` and smoothed noise
  coefficient ``sigma_n``), plus a spectral Galerkin cross-check mode,
* harmonic Dirichlet lifts used by the energy / entropy monitors,
* kinetic-measure estimation and kinetic-equation residual checks,
* inequality monitors (energy, entropy, L^1_t L^k_x, L^1 contraction),
* a reproducible experiment CLI (``dk run / list / replay``).
"""

from dk.domain import DomainSpec, Grid, build_grid, distance_to_boundary, iota_gamma
from dk.coefficients import CoefficientSet, make_model_case, smooth_sigma
from dk.noise import NoiseModel, BrownianStream, make_sine_modes, sample_increments

__version__ = "0.1.0"

__all__ = [
    "DomainSpec",
    "Grid",
    "build_grid",
    "distance_to_boundary",
    "iota_gamma",
    "CoefficientSet",
    "make_model_case",
    "smooth_sigma",
    "NoiseModel",
    "BrownianStream",
    "make_sine_modes",
    "sample_increments",
    "__version__",
]
