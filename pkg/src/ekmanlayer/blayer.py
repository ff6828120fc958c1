"""Stretched-layer grids, scaled operators, and the Ekman layer solves.

The layer coordinate Z lives on [0, Z_max] with geometrically graded nodes,
finer near the wall.  Bottom and top layers share the grid; a side only
changes signs in the operators:

    bottom: Z = (z - B)/delta,      grad(delta Z) = (-Bx, -By, +1)
    top:    Z = (B + 2 - z)/delta,  grad(delta Z) = (+Bx, +By, -1)

The order-delta^0 parts of grad and lap in layer coordinates carry the
geometry through q = grad(cos g)/cos g and the drift coefficient (see
`geometry`); all Z-derivatives are 4th-order finite differences on the
graded grid, all horizontal derivatives are spectral.

Layer profiles of order >= 1 solve the two-point problem

    d2u/dZ2 + S u = g,   u(0) = -(interior trace),   u(inf) = 0,

with S = cos(g) E1 H0 (S @ S = -E).  The homogeneous decaying solution with
the right trace is exactly M(Z/sqrt2) bv with the Ekman matrix M; the
particular part is computed in the basis Q that diagonalizes S to (i, -i),
using the decaying kernels exp(-sqrt(-i) .) and exp(-sqrt(i) .) as half-line
Green's kernels.  The kernel convolutions use an exponential-integrator
recurrence that is exact for piecewise-linear sources, so the construction
is unconditionally stable on the graded grid.
"""

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .geometry import SurfaceGeometry
from .spectral import Grid2D, deriv, deriv_both

SQRT_MINUS_I = (1.0 - 1.0j) / np.sqrt(2.0)  # principal branch of sqrt(-i)
SQRT_PLUS_I = (1.0 + 1.0j) / np.sqrt(2.0)   # principal branch of sqrt(i)
DECAY = 1.0 / np.sqrt(2.0)                  # slowest layer decay rate e^{-Z/sqrt2}


def fornberg_weights(x0: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights at x0 for derivatives 0..m on nodes xs."""
    n = len(xs)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = 1.0, c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


class BLGrid:
    """Graded layer grid on [0, Z_max] with derivative/quadrature operators."""

    def __init__(self, nz: int = 192, z_max: float = 24.0, ratio: float = 1.02):
        if z_max < 20.0:
            raise ValueError("Z_max must be at least 20 so e^(-Z_max/sqrt2) < 1e-6")
        if not 1.0 < ratio <= 1.05:
            raise ValueError("grading ratio must lie in (1, 1.05]")
        steps = nz - 1
        h0 = z_max * (ratio - 1.0) / (ratio**steps - 1.0)
        h = h0 * ratio ** np.arange(steps)
        self.nodes = np.concatenate([[0.0], np.cumsum(h)])
        self.nodes[-1] = z_max
        self.nz = nz
        self.z_max = z_max
        self.d1 = self._fd_matrix(1)
        self.d2 = self._fd_matrix(2)
        # anti-derivative from the top: solve dw/dZ = -f with w(Z_max) given
        a = self.d1.copy()
        a[-1, :] = 0.0
        a[-1, -1] = 1.0
        self._tail_lu = lu_factor(a)

    def _fd_matrix(self, order: int, width: int = 5) -> np.ndarray:
        d = np.zeros((self.nz, self.nz))
        for i in range(self.nz):
            lo = min(max(i - width // 2, 0), self.nz - width)
            w = fornberg_weights(self.nodes[i], self.nodes[lo : lo + width], order)
            d[i, lo : lo + width] = w[:, order]
        return d

    def _matapply(self, mat: np.ndarray, f: np.ndarray) -> np.ndarray:
        lead = f.shape[:-3]
        nz, ny, nx = f.shape[-3:]
        flat = f.reshape(lead + (nz, ny * nx))
        return (mat @ flat).reshape(f.shape)

    def dz(self, f: np.ndarray) -> np.ndarray:
        return self._matapply(self.d1, f)

    def dzz(self, f: np.ndarray) -> np.ndarray:
        return self._matapply(self.d2, f)

    def integrate_tail(self, f: np.ndarray) -> np.ndarray:
        """w(Z) = integral_Z^inf f, truncated at Z_max with exponential tail.

        Solves the 4th-order system dw/dZ = -f with w(Z_max) = sqrt(2) f(Z_max)
        (the exact tail for an e^{-Z/sqrt2} integrand), so differentiating the
        result reproduces -f to solver roundoff.
        """
        lead = f.shape[:-3]
        nz, ny, nx = f.shape[-3:]
        rhs = (-f).reshape(lead + (nz, ny * nx)).copy()
        rhs[..., -1, :] = np.sqrt(2.0) * f.reshape(lead + (nz, ny * nx))[..., -1, :]
        flat = np.moveaxis(rhs.reshape(-1, nz, ny * nx), 1, 0).reshape(nz, -1)
        sol = lu_solve(self._tail_lu, flat)
        sol = np.moveaxis(sol.reshape(nz, -1, ny * nx), 0, 1).reshape(lead + (nz, ny * nx))
        return sol.reshape(f.shape)

    def tail_bound(self, f: np.ndarray) -> float:
        """Analytic bound on the discarded integral beyond Z_max."""
        return float(np.sqrt(2.0) * np.max(np.abs(f[..., -1, :, :])))

    def interp_to(self, values: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Quintic-Hermite interpolation of (..., nz, ny, nx) layer samples.

        Uses nodal values plus finite-difference first and second derivatives,
        so the interpolant is globally C^2 (no derivative kinks at the nodes,
        which matters because terrain-grid finite differences act on the
        result).  `targets` has shape (nt, ny, nx); values beyond Z_max or
        below 0 evaluate to zero (decay / outside the channel).
        """
        t = np.asarray(targets, dtype=float)
        d1 = self.dz(values)
        d2 = self.dzz(values)
        idx = np.clip(np.searchsorted(self.nodes, t) - 1, 0, self.nz - 2)
        x0 = self.nodes[idx]
        h = self.nodes[idx + 1] - x0
        tau = np.clip((t - x0) / h, 0.0, 1.0)
        t2 = tau * tau
        t3 = t2 * tau
        t4 = t3 * tau
        t5 = t4 * tau
        h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5
        h1 = h * (tau - 6.0 * t3 + 8.0 * t4 - 3.0 * t5)
        h2 = h * h * (0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5)
        h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5
        h4 = h * (-4.0 * t3 + 7.0 * t4 - 3.0 * t5)
        h5 = h * h * (0.5 * t3 - t4 + 0.5 * t5)
        ny, nx = t.shape[-2:]
        iy = np.arange(ny)[None, :, None]
        ix = np.arange(nx)[None, None, :]
        lo = (idx, iy, ix)
        hi = (idx + 1, iy, ix)
        out = (
            h0 * values[(..., *lo)]
            + h1 * d1[(..., *lo)]
            + h2 * d2[(..., *lo)]
            + h3 * values[(..., *hi)]
            + h4 * d1[(..., *hi)]
            + h5 * d2[(..., *hi)]
        )
        inside = (t >= 0.0) & (t <= self.z_max)
        return out * inside


def _exp_moments(mu: complex, h: np.ndarray, reversed_kernel: bool):
    """Moments M_p = int_0^h K(s) s^p ds, p = 0..3, per interval.

    K(s) = e^{-mu (h-s)} for the causal kernel, e^{-mu s} for the anticausal
    one.  A Taylor series handles |mu h| < 0.5 where the integration-by-parts
    recurrence loses digits to cancellation.
    """
    h = np.asarray(h, dtype=float)
    e = np.exp(-mu * h)
    m = np.zeros((4,) + h.shape, dtype=complex)
    small = np.abs(mu * h) < 0.5
    big = ~small
    if np.any(big):
        hb, eb = h[big], e[big]
        m0 = -np.expm1(-mu * hb) / mu
        cur = m0
        ms = [m0]
        for p in range(1, 4):
            if reversed_kernel:
                cur = (-(hb**p) * eb + p * cur) / mu
            else:
                cur = (hb**p - p * cur) / mu
            ms.append(cur)
        for p in range(4):
            m[p][big] = ms[p]
    if np.any(small):
        hs = h[small]
        import math as _math

        for p in range(4):
            acc = np.zeros(hs.shape, dtype=complex)
            term_pow = np.ones(hs.shape, dtype=complex)
            for k in range(22):
                if reversed_kernel:
                    coef = 1.0 / (_math.factorial(k) * (k + p + 1))
                else:
                    coef = _math.factorial(p) / _math.factorial(k + p + 1)
                acc += coef * term_pow
                term_pow = term_pow * (-mu * hs)
            m[p][small] = acc * hs ** (p + 1)
    return e, m


def _hermite_exp_weights(mu: complex, h: np.ndarray, reversed_kernel: bool):
    """Exponential-kernel weights exact for Hermite-cubic integrands.

    Returns (e, w_val0, w_der0, w_val1, w_der1): the integral over one
    interval of kernel times the cubic with values/derivatives (S0, S0', S1,
    S1') at the endpoints.
    """
    e, m = _exp_moments(mu, h, reversed_kernel)
    m0, m1, m2, m3 = m
    w_val0 = m0 - 3.0 * m2 / h**2 + 2.0 * m3 / h**3
    w_der0 = m1 - 2.0 * m2 / h + m3 / h**2
    w_val1 = 3.0 * m2 / h**2 - 2.0 * m3 / h**3
    w_der1 = -(m2 / h) + m3 / h**2
    return e, w_val0, w_der0, w_val1, w_der1


def causal_conv(blgrid: BLGrid, mu: complex, s: np.ndarray, s_dz=None) -> np.ndarray:
    """I(Z_i) = int_0^{Z_i} e^{-mu (Z_i - tau)} S(tau) dtau on the layer grid.

    Exponential-integrator recurrence, exact for piecewise-cubic S (Hermite
    reconstruction from nodal values and finite-difference slopes).
    """
    if s_dz is None:
        s_dz = blgrid.dz(s)
    h = np.diff(blgrid.nodes)
    e, w0, wd0, w1, wd1 = _hermite_exp_weights(mu, h, reversed_kernel=False)
    out = np.zeros(s.shape, dtype=complex)
    for j in range(blgrid.nz - 1):
        out[..., j + 1, :, :] = (
            e[j] * out[..., j, :, :]
            + w0[j] * s[..., j, :, :]
            + wd0[j] * s_dz[..., j, :, :]
            + w1[j] * s[..., j + 1, :, :]
            + wd1[j] * s_dz[..., j + 1, :, :]
        )
    return out


def anticausal_conv(blgrid: BLGrid, mu: complex, s: np.ndarray, s_dz=None) -> np.ndarray:
    """I(Z_i) = int_{Z_i}^inf e^{-mu (tau - Z_i)} S(tau) dtau, exponential tail."""
    if s_dz is None:
        s_dz = blgrid.dz(s)
    h = np.diff(blgrid.nodes)
    e, w0, wd0, w1, wd1 = _hermite_exp_weights(mu, h, reversed_kernel=True)
    out = np.zeros(s.shape, dtype=complex)
    out[..., -1, :, :] = s[..., -1, :, :] / (mu + DECAY)
    for j in range(blgrid.nz - 2, -1, -1):
        out[..., j, :, :] = (
            e[j] * out[..., j + 1, :, :]
            + w0[j] * s[..., j, :, :]
            + wd0[j] * s_dz[..., j, :, :]
            + w1[j] * s[..., j + 1, :, :]
            + wd1[j] * s_dz[..., j + 1, :, :]
        )
    return out


def greens_solve(blgrid: BLGrid, mu: complex, s: np.ndarray) -> np.ndarray:
    """Decaying solution of w'' - mu^2 w = s on [0, inf) with w(0) = 0."""
    s_dz = blgrid.dz(s)
    i_causal = causal_conv(blgrid, mu, s, s_dz)
    i_anti = anticausal_conv(blgrid, mu, s, s_dz)
    ez = np.exp(-mu * blgrid.nodes)[:, None, None]
    w = i_causal + i_anti - ez * i_anti[..., :1, :, :] * np.ones_like(ez)
    return -w / (2.0 * mu)


def matvec2(m: np.ndarray, v: np.ndarray, comp_axis: int = -3) -> np.ndarray:
    """Apply a (2, 2, ny, nx) pointwise matrix along `comp_axis` of v.

    v has trailing (ny, nx) axes; comp_axis = -3 fits 2D stacks
    (..., 2, ny, nx), comp_axis = -4 fits layer stacks (..., 2, nz, ny, nx).
    """
    if comp_axis == -3:
        v0, v1 = v[..., 0, :, :], v[..., 1, :, :]
        mm = m
    elif comp_axis == -4:
        v0, v1 = v[..., 0, :, :, :], v[..., 1, :, :, :]
        mm = m[:, :, None]
    else:
        raise ValueError("comp_axis must be -3 or -4")
    a = mm[0, 0] * v0
    a += mm[0, 1] * v1
    b = mm[1, 0] * v0
    b += mm[1, 1] * v1
    shape = list(np.broadcast_shapes(a.shape, b.shape))
    shape.insert(len(shape) + comp_axis + 1, 2)
    out = np.empty(shape, dtype=np.result_type(a, b))
    if comp_axis == -3:
        out[..., 0, :, :] = a
        out[..., 1, :, :] = b
    else:
        out[..., 0, :, :, :] = a
        out[..., 1, :, :, :] = b
    return out


def ekman_matrix(geom: SurfaceGeometry, z: float) -> np.ndarray:
    """M(Z) = -e^(-Z) (cos Z E + sin Z cos(g) E1 H0), shape (2, 2, ny, nx)."""
    if np.any(np.asarray(z) < 0):
        raise ValueError("layer coordinate must be nonnegative")
    eye = np.zeros_like(geom.smat)
    eye[0, 0] = 1.0
    eye[1, 1] = 1.0
    return -np.exp(-z) * (np.cos(z) * eye + np.sin(z) * geom.smat)


class LayerOps:
    """Scaled differential operators for one side of the channel.

    Operates on arrays shaped (..., nz, ny, nx); leading axes (jets,
    components) broadcast through untouched.
    """

    def __init__(self, geom: SurfaceGeometry, blgrid: BLGrid, side: str):
        if side not in ("bottom", "top"):
            raise ValueError("side must be 'bottom' or 'top'")
        self.geom = geom
        self.blgrid = blgrid
        self.side = side
        self.sgn = 1.0 if side == "bottom" else -1.0
        self.grid = geom.grid
        self.zcol = blgrid.nodes[:, None, None]
        q = geom.q
        self.qx, self.qy = q[0], q[1]
        self.q_dot_gb = self.qx * geom.bx + self.qy * geom.by
        self.q_sq = self.qx**2 + self.qy**2
        self.drift = geom.drift
        self.lap_b = geom.lapB

    # horizontal spectral derivatives at fixed Z
    def dx(self, f):
        return deriv(self.grid, f, "x")

    def dy(self, f):
        return deriv(self.grid, f, "y")

    def dz(self, f):
        return self.blgrid.dz(f)

    def dzz(self, f):
        return self.blgrid.dzz(f)

    def nabla0(self, f: np.ndarray) -> np.ndarray:
        """Order-delta^0 gradient of a scalar: 3-stack on a new axis -4."""
        fz = self.dz(f)
        fx, fy = deriv_both(self.grid, f)
        gx = fx + 1.5 * self.zcol * self.qx * fz
        gy = fy + 1.5 * self.zcol * self.qy * fz
        return np.stack([gx, gy, np.zeros_like(f)], axis=-4)

    def advect0(self, vx: np.ndarray, vy: np.ndarray, f: np.ndarray) -> np.ndarray:
        """(v . nabla0) f for time-constant horizontal coefficients (vx, vy)."""
        fz = self.dz(f)
        fx, fy = deriv_both(self.grid, f)
        return vx * (fx + 1.5 * self.zcol * self.qx * fz) + vy * (
            fy + 1.5 * self.zcol * self.qy * fz
        )

    def div0(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        """nabla0 . u; only horizontal components enter (3rd op-component is 0)."""
        return (
            self.dx(ux)
            + self.dy(uy)
            + 1.5 * self.zcol * (self.qx * self.dz(ux) + self.qy * self.dz(uy))
        )

    def lap0(self, f: np.ndarray) -> np.ndarray:
        fz = self.dz(f)
        fzz = self.dzz(f)
        lap_h = deriv(self.grid, f, "x", 2) + deriv(self.grid, f, "y", 2)
        fzx, fzy = deriv_both(self.grid, fz)
        cross = 3.0 * self.zcol * (self.qx * fzx + self.qy * fzy)
        return (
            lap_h
            + 2.25 * self.zcol**2 * self.q_sq * fzz
            + cross
            + self.drift * self.zcol * fz
        )

    def lapm1(self, f: np.ndarray) -> np.ndarray:
        bx, by = self.geom.bx, self.geom.by
        fz = self.dz(f)
        fzz = self.dzz(f)
        fzx, fzy = deriv_both(self.grid, fz)
        out = (
            -2.0 * (bx * fzx + by * fzy)
            - 3.0 * self.zcol * self.q_dot_gb * fzz
            - (self.lap_b + 3.0 * self.q_dot_gb) * fz
        )
        return self.sgn * out

    def lapm2(self, f: np.ndarray) -> np.ndarray:
        return self.dzz(f) / self.geom.cg**2

    def nablam1(self, f: np.ndarray) -> np.ndarray:
        """Order-delta^-1 gradient: grad(delta Z) dZ, 3-stack on axis -4."""
        fz = self.dz(f)
        return np.stack(
            [-self.sgn * self.geom.bx * fz, -self.sgn * self.geom.by * fz, self.sgn * fz],
            axis=-4,
        )

    # coordinates of the own and opposite layer at this side's nodes
    def s_of_z(self, delta: np.ndarray) -> np.ndarray:
        """Terrain coordinate s at the layer nodes: (nz, ny, nx)."""
        s = delta * self.zcol
        return s if self.side == "bottom" else 2.0 - s

    def opposite_coord(self, delta: np.ndarray) -> np.ndarray:
        """Opposite side's layer coordinate at this side's nodes."""
        return 2.0 / delta - self.zcol
