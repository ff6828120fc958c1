"""Terrain-following channel grid and 3D field operators.

The curved channel [B, B+2] maps to the slab s in [0, 2] via s = z - B(x,y).
Fields are sampled as (..., ns, ny, nx) on boundary-clustered s-nodes; exact
3D derivatives at fixed z follow from the chain rule

    d/dx|_z = d/dx|_s - Bx d/ds,     d/dz = d/ds,

with horizontal derivatives spectral and s-derivatives 4th-order finite
differences on the clustered nodes.  The smooth channel cutoff chi(s)
(0 below s = 1/2, 1 above s = 3/2, quintic smoothstep between) lives here
because both the expansion sources and the correctors need it pointwise.
"""

import numpy as np
from .blayer import fornberg_weights
from .geometry import SurfaceGeometry
from .spectral import Grid2D, deriv


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------

def chi_val(x, lo: float = 0.5, hi: float = 1.5):
    """Quintic smoothstep: 0 below lo, 1 above hi."""
    t = np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return t**3 * (6.0 * t**2 - 15.0 * t + 10.0)


def chi_d1(x, lo: float = 0.5, hi: float = 1.5):
    t = np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return 30.0 * t**2 * (t - 1.0) ** 2 / (hi - lo)


def chi_d2(x, lo: float = 0.5, hi: float = 1.5):
    t = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 60.0 * t * (t - 1.0) * (2.0 * t - 1.0) / (hi - lo) ** 2, 0.0)


class ZCutoff:
    """Channel cutoff as a function of z alone.

    Rises from 0 to 1 on the largest window compatible with the construction,
    (max B + 1/2, min B + 3/2); the admissibility bound |B| < 1/4 guarantees
    the window is nonempty.  A z-only cutoff keeps grad(chi) purely vertical,
    which is what every chi'-coupling display assumes.  On each column it
    satisfies chi = 0 for s <= 1/2 and chi = 1 for s >= 3/2.
    """

    def __init__(self, b_values: np.ndarray):
        self.z_lo = float(np.max(b_values)) + 0.5
        self.z_hi = float(np.min(b_values)) + 1.5
        if self.z_hi <= self.z_lo:
            raise ValueError(
                "surface oscillation too large for a z-only cutoff (needs |B| < 1/4)"
            )

    def val(self, z):
        return chi_val(z, self.z_lo, self.z_hi)

    def d1(self, z):
        return chi_d1(z, self.z_lo, self.z_hi)

    def d2(self, z):
        return chi_d2(z, self.z_lo, self.z_hi)


# ---------------------------------------------------------------------------
# clustered nodes and 1D machinery
# ---------------------------------------------------------------------------

def tanh_snodes(ns: int, beta: float) -> np.ndarray:
    """Symmetric tanh-clustered nodes on [0, 2], finer near both walls."""
    xi = np.linspace(-1.0, 1.0, ns)
    s = 1.0 + np.tanh(beta * xi) / np.tanh(beta)
    s[0], s[-1] = 0.0, 2.0
    return s


def snodes_for_spacing(ns: int, target: float) -> np.ndarray:
    """Pick the mildest beta whose first node spacing is <= target."""
    lo, hi = 0.5, 12.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        s = tanh_snodes(ns, mid)
        if s[1] - s[0] <= target:
            hi = mid
        else:
            lo = mid
    return tanh_snodes(ns, hi)


def interp_columns(nodes: np.ndarray, values: np.ndarray, targets: np.ndarray,
                   fill: str = "zero") -> np.ndarray:
    """Cubic-Lagrange interpolation along the level axis of column data.

    values: (..., n, ny, nx) sampled on `nodes`; targets: (nt, ny, nx).
    fill = "zero": out-of-range targets evaluate to 0 (decayed layer data);
    fill = "edge": they clamp to the nearest node (slab data).
    """
    n = nodes.size
    t = np.asarray(targets, dtype=float)
    if fill == "edge":
        t = np.clip(t, nodes[0], nodes[-1])
    idx = np.searchsorted(nodes, t) - 1
    base = np.clip(idx - 1, 0, n - 4)
    xk = nodes[base[None] + np.arange(4)[:, None, None, None]]
    lag = np.ones((4,) + t.shape)
    for k in range(4):
        for j in range(4):
            if j != k:
                lag[k] *= (t - xk[j]) / (xk[k] - xk[j])
    ny, nx = t.shape[-2:]
    iy = np.arange(ny)[None, :, None]
    ix = np.arange(nx)[None, None, :]
    out = 0.0
    for k in range(4):
        out = out + lag[k] * values[..., base + k, iy, ix]
    if fill == "zero":
        inside = (np.asarray(targets) >= nodes[0]) & (np.asarray(targets) <= nodes[-1])
        out = out * inside
    return out


class SGrid:
    """Terrain-coordinate levels with derivative and quadrature operators."""

    def __init__(self, ns: int = 257, min_spacing: float = 0.004):
        self.nodes = snodes_for_spacing(ns, min_spacing)
        self.ns = ns
        self.d1 = self._fd_matrix(1)
        self.d2 = self._fd_matrix(2)
        self.weights = self._quad_weights()
        self._cum_matrix = self._cumulative_weights()

    def _fd_matrix(self, order: int, width: int = 5) -> np.ndarray:
        d = np.zeros((self.ns, self.ns))
        for i in range(self.ns):
            lo = min(max(i - width // 2, 0), self.ns - width)
            w = fornberg_weights(self.nodes[i], self.nodes[lo : lo + width], order)
            d[i, lo : lo + width] = w[:, order]
        return d

    def _interval_weights(self) -> np.ndarray:
        """(ns-1, ns) weights: row j integrates the piecewise cubic over
        [s_j, s_{j+1}] from the 4 surrounding nodal values (exact, degree 3)."""
        v = np.zeros((self.ns - 1, self.ns))
        gl_x, gl_w = np.polynomial.legendre.leggauss(3)
        for j in range(self.ns - 1):
            lo = min(max(j - 1, 0), self.ns - 4)
            xs = self.nodes[lo : lo + 4]
            a, b = self.nodes[j], self.nodes[j + 1]
            x = 0.5 * (b - a) * gl_x + 0.5 * (a + b)
            for k in range(4):
                basis = np.ones_like(x)
                for m in range(4):
                    if m != k:
                        basis *= (x - xs[m]) / (xs[k] - xs[m])
                v[j, lo + k] = 0.5 * (b - a) * np.dot(gl_w, basis)
        return v

    def _quad_weights(self) -> np.ndarray:
        return self._interval_weights().sum(axis=0)

    def _cumulative_weights(self) -> np.ndarray:
        """(ns, ns) matrix mapping samples to their running integral from 0."""
        v = self._interval_weights()
        w = np.zeros((self.ns, self.ns))
        np.cumsum(v, axis=0, out=w[1:])
        return w

    def _matapply(self, mat, f):
        lead = f.shape[:-3]
        ns, ny, nx = f.shape[-3:]
        flat = f.reshape(lead + (ns, ny * nx))
        return (mat @ flat).reshape(f.shape)

    def ds(self, f):
        return self._matapply(self.d1, f)

    def dss(self, f):
        return self._matapply(self.d2, f)

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """integral over s in [0,2] of (..., ns, ny, nx) -> (..., ny, nx)."""
        return np.tensordot(np.moveaxis(f, -3, -1), self.weights, axes=([-1], [0]))

    def cumint(self, f: np.ndarray) -> np.ndarray:
        """p(s) = integral_0^s f ds' by piecewise-cubic cumulative quadrature."""
        return self._matapply(self._cum_matrix, f)

    def interp_to(self, values: np.ndarray, targets: np.ndarray) -> np.ndarray:
        return interp_columns(self.nodes, values, targets, fill="edge")

    def chi(self):
        return chi_val(self.nodes)[:, None, None]

    def chi1(self):
        return chi_d1(self.nodes)[:, None, None]

    def chi2(self):
        return chi_d2(self.nodes)[:, None, None]


class TerrainOps:
    """Exact-at-fixed-z derivatives of (..., ns, ny, nx) slab fields."""

    def __init__(self, geom: SurfaceGeometry, sgrid: SGrid):
        self.geom = geom
        self.sgrid = sgrid
        self.grid = geom.grid

    def dx(self, f):
        """d/dx at fixed z."""
        return deriv(self.grid, f, "x") - self.geom.bx * self.sgrid.ds(f)

    def dy(self, f):
        return deriv(self.grid, f, "y") - self.geom.by * self.sgrid.ds(f)

    def dz(self, f):
        return self.sgrid.ds(f)

    def grad3(self, f):
        """(..., 3, ns, ny, nx) stack of the fixed-z gradient."""
        fs = self.sgrid.ds(f)
        gx = deriv(self.grid, f, "x") - self.geom.bx * fs
        gy = deriv(self.grid, f, "y") - self.geom.by * fs
        return np.stack([gx, gy, fs], axis=-4)

    def div3(self, u):
        """Divergence of a (..., 3, ns, ny, nx) stack at fixed z."""
        ux, uy, uz = u[..., 0, :, :, :], u[..., 1, :, :, :], u[..., 2, :, :, :]
        return (
            deriv(self.grid, ux, "x")
            + deriv(self.grid, uy, "y")
            + self.sgrid.ds(uz - self.geom.bx * ux - self.geom.by * uy)
        )

    def lap3(self, f):
        """3D Laplacian at fixed z via the terrain chain rule."""
        bx, by = self.geom.bx, self.geom.by
        fs = self.sgrid.ds(f)
        fss = self.sgrid.dss(f)
        lap_h = deriv(self.grid, f, "x", 2) + deriv(self.grid, f, "y", 2)
        cross = deriv(self.grid, fs, "x") * bx + deriv(self.grid, fs, "y") * by
        return (
            lap_h
            - 2.0 * cross
            + (1.0 + bx**2 + by**2) * fss
            - self.geom.lapB * fs
        )

    def advect3(self, v, f):
        """(v . grad) f for a 3-component v and scalar f (both slab-sampled)."""
        g = self.grad3(f)
        return (
            v[..., 0, :, :, :] * g[..., 0, :, :, :]
            + v[..., 1, :, :, :] * g[..., 1, :, :, :]
            + v[..., 2, :, :, :] * g[..., 2, :, :, :]
        )

    def l2_volume(self, *components) -> float:
        """L2(Omega) norm by terrain quadrature (Jacobian 1)."""
        total = 0.0
        for comp in components:
            total += float(
                np.tensordot(np.sum(comp**2, axis=(-2, -1)), self.sgrid.weights, axes=([-1], [0]))
            )
        return float(np.sqrt(total * self.grid.cell_area))
