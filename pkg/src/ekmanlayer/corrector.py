"""Divergence correctors and pressure-corrector gradients.

The truncated expansion is not exactly divergence-free; per-order correctors
u^{c,0..2} restore incompressibility and keep the walls no-slip.  Each one
solves  div u^c = rhs,  u^c = 0 on both walls,  by an explicit bump lifting
in terrain coordinates:

    F(x, y) = int_0^2 rhs ds,        Phi = invlap(F - <F>),
    u_h^c   = g(s) grad Phi    (g a fixed smooth bump, integral 1),
    w(s)    = int_0^s (rhs - g lap Phi) ds',
    u3^c    = w + grad(B) . u_h^c,

which satisfies the terrain-coordinate divergence identity exactly and
vanishes at s = 0 and s = 2 up to the measured mean of rhs (the solvability
compatibility; violations raise with the measured mean).

The pressure corrections are never integrated to scalars: the construction
only ever needs their gradients, which are assembled verbatim as right-hand
sides and subtracted during residual evaluation.
"""

from dataclasses import dataclass

import numpy as np

from .channel import SGrid, chi_d1, chi_d2, chi_val
from .geometry import SurfaceGeometry
from .jets import jmul, jshift, jtrunc
from .spectral import deriv, deriv_both, inv_laplacian_values


@dataclass
class Cutoff:
    """Sampled channel cutoff chi and its derivatives on the s-nodes."""

    s_nodes: np.ndarray
    chi: np.ndarray
    dchi: np.ndarray
    d2chi: np.ndarray


def make_cutoff(s_nodes: np.ndarray) -> Cutoff:
    """Quintic smoothstep rising on [1/2, 3/2]; max slope 15/8 at s = 1."""
    s_nodes = np.asarray(s_nodes, dtype=float)
    if s_nodes[0] > 0.0 or s_nodes[-1] < 2.0:
        raise ValueError("cutoff nodes must cover [0, 2]")
    return Cutoff(s_nodes, chi_val(s_nodes), chi_d1(s_nodes), chi_d2(s_nodes))


def bump_profile(s: np.ndarray) -> np.ndarray:
    """Smooth bump on (1/4, 7/4) with unit integral and C^4 contact."""
    sig = (np.asarray(s, dtype=float) - 0.25) / 1.5
    inside = (sig > 0.0) & (sig < 1.0)
    sig = np.clip(sig, 0.0, 1.0)
    # int_0^1 (sig(1-sig))^5 dsig = B(6,6) = 1/2772; support width 3/2
    return np.where(inside, (sig * (1.0 - sig)) ** 5 * (2772.0 / 1.5), 0.0)


class CompatibilityError(ValueError):
    """rhs of a corrector problem has a nonzero channel mean."""

    def __init__(self, mean_value, scale):
        self.mean_value = mean_value
        super().__init__(
            f"corrector rhs violates zero-mean compatibility: "
            f"integral {mean_value:.3e} exceeds 1e-8 * |rhs| = {1e-8 * scale:.3e}"
        )


def solve_corrector(
    rhs: np.ndarray, geom: SurfaceGeometry, sgrid: SGrid, tol: float = 1e-8
) -> np.ndarray:
    """Lift a zero-mean divergence to a wall-vanishing vector field.

    rhs: (..., ns, ny, nx), jets allowed on leading axes.  Returns the
    corrector as (..., 3, ns, ny, nx).  The terrain divergence of the result
    reproduces rhs to spectral/quadrature accuracy and all components vanish
    on both walls.
    """
    grid = geom.grid
    volume = grid.cell_area  # times the s-quadrature below
    f2d = np.tensordot(np.moveaxis(rhs, -3, -1), sgrid.weights, axes=([-1], [0]))
    total = np.sum(f2d, axis=(-2, -1)) * volume
    l2 = np.sqrt(
        np.sum(
            np.tensordot(np.moveaxis(rhs**2, -3, -1), sgrid.weights, axes=([-1], [0])),
            axis=(-2, -1),
        )
        * volume
    )
    worst = np.max(np.abs(np.atleast_1d(total)))
    scale = np.max(np.atleast_1d(l2))
    if worst > tol * max(scale, 1e-300):
        raise CompatibilityError(worst, scale)

    mean = f2d.mean(axis=(-2, -1), keepdims=True)
    lap_phi = f2d - mean
    phi = inv_laplacian_values(grid, lap_phi)
    gx, gy = deriv_both(grid, phi)
    g_s = bump_profile(sgrid.nodes)[:, None, None]
    uh_x = g_s * gx[..., None, :, :]
    uh_y = g_s * gy[..., None, :, :]
    w = sgrid.cumint(
        rhs - g_s * lap_phi[..., None, :, :]
    )
    out = np.empty(rhs.shape[:-3] + (3,) + rhs.shape[-3:])
    out[..., 0, :, :, :] = uh_x
    out[..., 1, :, :, :] = uh_y
    out[..., 2, :, :, :] = w + geom.bx * uh_x + geom.by * uh_y
    return out


def terrain_divergence(geom: SurfaceGeometry, sgrid: SGrid, u: np.ndarray) -> np.ndarray:
    """div u in terrain coordinates: grad_h . u_h |_s + d/ds (u3 - gradB . u_h)."""
    ux = u[..., 0, :, :, :]
    uy = u[..., 1, :, :, :]
    uz = u[..., 2, :, :, :]
    return (
        deriv(geom.grid, ux, "x")
        + deriv(geom.grid, uy, "y")
        + sgrid.ds(uz - geom.bx * ux - geom.by * uy)
    )


def coriolis3(u: np.ndarray) -> np.ndarray:
    """R u = (-u2, u1, 0) on a (..., 3, ns, ny, nx) stack."""
    out = np.zeros_like(u)
    out[..., 0, :, :, :] = -u[..., 1, :, :, :]
    out[..., 1, :, :, :] = u[..., 0, :, :, :]
    return out
