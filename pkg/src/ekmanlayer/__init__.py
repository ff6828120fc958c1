"""Geometry-dependent Ekman-layer construction on a curved-bottom channel.

A numpy/scipy laboratory that builds the multi-scale near-wall approximate
solution for rotating flow over a curved bottom z = B(x, y), evolves the
geometry-dependent 2D limiting system, restores incompressibility with
explicit correctors, and measures the residual of the full rotating
Navier-Stokes equations together with its eps-scaling.
"""

from .spectral import (
    Grid2D,
    ScalarField2D,
    VectorField2D,
    ddx,
    dealias,
    inv_laplacian,
    leray_project,
)
from .geometry import (
    AdmissibilityReport,
    SurfaceGeometry,
    bl_depth,
    build_geometry,
    check_admissibility,
)
from .limiting import (
    DecayTrace,
    LimitState,
    compatibility_residual,
    evolve,
    hs_norm,
    recover_pressure,
    step,
    tendency,
    tilde_fields,
    vertical_component,
)
from .catalog import make_initial_data, make_surface, surface_geometry

__version__ = "0.1.0"

__all__ = [
    "Grid2D",
    "ScalarField2D",
    "VectorField2D",
    "ddx",
    "dealias",
    "inv_laplacian",
    "leray_project",
    "SurfaceGeometry",
    "AdmissibilityReport",
    "build_geometry",
    "check_admissibility",
    "bl_depth",
    "LimitState",
    "DecayTrace",
    "tendency",
    "step",
    "evolve",
    "recover_pressure",
    "vertical_component",
    "tilde_fields",
    "compatibility_residual",
    "hs_norm",
    "make_surface",
    "surface_geometry",
    "make_initial_data",
    "__version__",
]
