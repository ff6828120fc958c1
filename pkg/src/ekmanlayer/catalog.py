"""Built-in surface and initial-data catalog for reproducible experiments."""

import numpy as np

from .geometry import SurfaceGeometry, build_geometry
from .spectral import Grid2D, ScalarField2D, VectorField2D, deriv, leray_values

SURFACES = ("flat", "ridge", "eggcarton", "fourier")


def make_surface(name: str, grid: Grid2D, amp: float = 0.2, coeffs=None) -> ScalarField2D:
    """Sample a catalog surface on the grid.

    flat:      B = 0
    ridge:     B = amp * sin x
    eggcarton: B = amp * sin x * sin y
    fourier:   B = sum over coeffs {(kx, ky): (c_cos, c_sin)} of
               c_cos cos(kx x + ky y) + c_sin sin(kx x + ky y)
    """
    X, Y = grid.xy()
    if name == "flat":
        values = np.zeros(grid.shape)
    elif name == "ridge":
        values = amp * np.sin(X)
    elif name == "eggcarton":
        values = amp * np.sin(X) * np.sin(Y)
    elif name == "fourier":
        if not coeffs:
            raise ValueError("fourier surface needs a coefficient table")
        values = np.zeros(grid.shape)
        for (kx, ky), (c_cos, c_sin) in coeffs.items():
            phase = kx * X + ky * Y
            values += c_cos * np.cos(phase) + c_sin * np.sin(phase)
    else:
        raise ValueError(f"unknown surface {name!r}; choose from {SURFACES}")
    return ScalarField2D(grid, values)


def surface_geometry(name: str, grid: Grid2D, amp: float = 0.2, coeffs=None) -> SurfaceGeometry:
    return build_geometry(make_surface(name, grid, amp, coeffs))


U0_NAMES = ("shear", "tangent", "random")


def make_initial_data(
    name: str,
    geom: SurfaceGeometry,
    amp: float = 1.0,
    seed: int = 0,
    kmax: int = 3,
) -> VectorField2D:
    """Sample catalog initial data (always solenoidal).

    shear:   amp * (sin y, 0); well-prepared and compatible for flat B.
    tangent: amp * perp-grad(B); tangent to the surface pointwise and
             compatible whenever lap(B) is a function of B (ridge, eggcarton).
    random:  small random solenoidal field, band-limited to |k| <= kmax,
             scaled so its W^{1,inf} size is about `amp`.
    """
    grid = geom.grid
    X, Y = grid.xy()
    if name == "shear":
        return VectorField2D(grid, amp * np.sin(Y), np.zeros(grid.shape))
    if name == "tangent":
        return VectorField2D(grid, -amp * geom.by, amp * geom.bx)
    if name == "random":
        rng = np.random.default_rng(seed)
        psi = np.zeros(grid.shape)
        for kx in range(-kmax, kmax + 1):
            for ky in range(-kmax, kmax + 1):
                if kx == 0 and ky == 0 or kx * kx + ky * ky > kmax * kmax:
                    continue
                a, b = rng.standard_normal(2)
                psi += a * np.cos(kx * X + ky * Y) + b * np.sin(kx * X + ky * Y)
        u = deriv(grid, psi, "y")
        v = -deriv(grid, psi, "x")
        u, v = leray_values(grid, u, v)
        scale = max(
            np.max(np.hypot(u, v)),
            np.sqrt(
                np.max(
                    deriv(grid, u, "x") ** 2
                    + deriv(grid, u, "y") ** 2
                    + deriv(grid, v, "x") ** 2
                    + deriv(grid, v, "y") ** 2
                )
            ),
        )
        if scale > 0:
            u *= amp / scale
            v *= amp / scale
        return VectorField2D(grid, u, v)
    raise ValueError(f"unknown initial data {name!r}; choose from {U0_NAMES}")
