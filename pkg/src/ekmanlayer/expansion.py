"""Order-by-order construction of the near-wall approximate solution.

Builds, for one limiting-state snapshot and one eps, the full stack

    order 0:  u^{B,0}, u^{T,0} (closed-form Ekman response), p^{B,1}, p^{T,1}
    order 1:  interior u^{I,1}, layer sources D/G, Duhamel profiles u^{B,1},
              u^{T,1}, vertical parts from the incompressibility displays,
              layer pressures p^{B,2}, p^{T,2}
    order 2:  interior p^{I,2}, u^{I,2} (z-dependent through the cutoff),
              second-order sources and profiles, p^{B,3}, p^{T,3}

Every time-dependent object is carried as a truncated time jet (see `jets`),
so d/dt of anything constructed here is a slice, never a finite difference.
Jet orders decrease with construction depth: the limiting field carries 4
derivatives, order-0 profiles 4, order-1 profiles 3, order-2 profiles 2.

Side conventions (sgn = +1 bottom, -1 top) and the regularized geometry
fields are documented in `blayer` and `geometry`.  The vertical parts of the
order-1 profiles use the closed-form incompressibility displays; their third
cosine power is cos^3(g) on both sides by default ("consistent", which is
what integrating the layer divergence actually produces, and what keeps the
assembled field divergence-correctable); the transcription with cos^2(g) on
the bottom appears verbatim in the source material and stays available
behind `rhs_display_power = "verbatim"`.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .blayer import (
    BLGrid,
    LayerOps,
    SQRT_MINUS_I,
    SQRT_PLUS_I,
    greens_solve,
    matvec2,
)
from .channel import SGrid, TerrainOps, ZCutoff, interp_columns
from .geometry import SurfaceGeometry, bl_depth_values
from .jets import jconst, jmul, jshift, jtrunc
from .limiting import LimitState, tendency_jet
from .spectral import Grid2D, deriv, deriv_both, inv_laplacian_values, laplacian

JET_ORDERS = (4, 3, 2)  # jets carried by the order-0/1/2 profiles


@dataclass
class ExpansionConfig:
    rhs_display_power: str = "consistent"  # or "verbatim"
    jet_order: int = 2  # jets on the assembled fields

    def cos_powers(self):
        if self.rhs_display_power == "consistent":
            return 3.0, 3.0
        if self.rhs_display_power == "verbatim":
            return 2.0, 3.0
        raise ValueError(f"unknown rhs_display_power {self.rhs_display_power!r}")


# ---------------------------------------------------------------------------
# closed-form order-0 evaluators (valid at arbitrary layer coordinates)
# ---------------------------------------------------------------------------

def _trig_factors(z):
    """e^(-Z/sqrt2), cos(Z/sqrt2), sin(Z/sqrt2) with Z < 0 evaluating to 0."""
    z = np.asarray(z, dtype=float)
    valid = z >= 0.0
    zc = np.where(valid, z, 0.0) / np.sqrt(2.0)
    damp = np.where(valid, np.exp(-zc), 0.0)
    return damp, np.cos(zc), np.sin(zc)


def ekman_horizontal(geom: SurfaceGeometry, ujet: np.ndarray, z) -> np.ndarray:
    """u_h = M(Z/sqrt2) u for a (K+1, 2, ny, nx) jet; z shaped (nlev, ny, nx)."""
    su = matvec2(geom.smat, ujet)
    damp, c, s = _trig_factors(z)
    return -damp * (c * ujet[:, :, None] + s * su[:, :, None])


def ekman_horizontal_dz(geom: SurfaceGeometry, ujet: np.ndarray, z) -> np.ndarray:
    su = matvec2(geom.smat, ujet)
    damp, c, s = _trig_factors(z)
    return (
        damp / np.sqrt(2.0) * ((c + s) * ujet[:, :, None] + (s - c) * su[:, :, None])
    )


def order0_profiles(geom: SurfaceGeometry, ujet: np.ndarray, z, side: str) -> Dict:
    """Order-0 layer stack (u_h, u3, p1 and their Z-derivatives) at coords z."""
    sgn = 1.0 if side == "bottom" else -1.0
    su = matvec2(geom.smat, ujet)
    damp, c_, s_ = _trig_factors(z)
    gb = geom.grad_b
    kk = ujet.shape[0]
    zshape = np.broadcast_shapes(np.shape(z), geom.grid.shape)
    u = np.empty((kk, 3) + zshape)
    u_dz = np.empty((kk, 3) + zshape)
    dc = damp * c_
    ds = damp * s_
    for i in range(2):
        u[:, i] = -(dc * ujet[:, i, None] + ds * su[:, i, None])
        u_dz[:, i] = ((dc + ds) * ujet[:, i, None] + (ds - dc) * su[:, i, None]) / np.sqrt(2.0)
    u[:, 2] = gb[0] * u[:, 0] + gb[1] * u[:, 1]
    u_dz[:, 2] = gb[0] * u_dz[:, 0] + gb[1] * u_dz[:, 1]
    cosm = (dc + ds) / np.sqrt(2.0)  # damp * cos(Z/sqrt2 - pi/4)
    sinm = (ds - dc) / np.sqrt(2.0)  # damp * sin(Z/sqrt2 - pi/4)
    gdotu = gb[0] * ujet[:, 0] + gb[1] * ujet[:, 1]
    pdotu = -gb[1] * ujet[:, 0] + gb[0] * ujet[:, 1]  # perp-grad(B) . u
    c = geom.cg
    p1 = sgn * c * (cosm * gdotu[:, None] + c * sinm * pdotu[:, None])
    p1_dz = sgn * c * (-ds * gdotu[:, None] + c * dc * pdotu[:, None])
    return {"u": u, "u_dz": u_dz, "p1": p1, "p1_dz": p1_dz}


def incompressibility_display(
    geom: SurfaceGeometry, ujet: np.ndarray, z, side: str, cos_power: float
) -> np.ndarray:
    """The closed-form tail integral R(Z) = int_Z^inf D0^(side,1).

    R is exactly u3^(side,1) - gradB . u_h^(side,1); the bottom display
    carries sgn = +1 and the top the mirror sign.
    """
    sgn = 1.0 if side == "bottom" else -1.0
    c = geom.cg
    su = matvec2(geom.smat, ujet)
    hgb = np.stack(
        [
            geom.Hxx.values * geom.bx + geom.Hxy.values * geom.by,
            geom.Hxy.values * geom.bx + geom.Hyy.values * geom.by,
        ]
    )
    a_u = hgb[0] * ujet[:, 0] + hgb[1] * ujet[:, 1]  # gradB^T H u
    a_su = hgb[0] * su[:, 0] + hgb[1] * su[:, 1]     # gradB^T H S u
    div_su = deriv(geom.grid, su[:, 0], "x") + deriv(geom.grid, su[:, 1], "y")
    damp, c_, s_ = _trig_factors(z)
    cosm = (c_ + s_) / np.sqrt(2.0)
    sinm = (s_ - c_) / np.sqrt(2.0)
    z = np.asarray(z, dtype=float)
    zpos = np.where(z >= 0.0, z, 0.0)
    uh = -damp * (c_ * ujet[:, :, None] + s_ * su[:, :, None])
    a_uh = hgb[0] * uh[:, 0] + hgb[1] * uh[:, 1]
    out = (
        1.5 * c**2 * (damp * sinm * a_u[:, None] + zpos * a_uh)
        - damp * cosm * div_su[:, None]
        - 1.5 * c**cos_power / c * damp * cosm * a_su[:, None]
    )
    return sgn * out


# ---------------------------------------------------------------------------
# Duhamel solve for the order >= 1 horizontal profiles
# ---------------------------------------------------------------------------

def duhamel_solve(
    ops: LayerOps, bv_jet: np.ndarray, g_jet: np.ndarray
) -> np.ndarray:
    """Solve d2u/dZ2 + S u = g with u(0) = -bv, decay at infinity.

    bv_jet: (K+1, 2, ny, nx) interior trace; g_jet: (K+1, 2, nz, ny, nx).
    The homogeneous part is the closed-form Ekman response M(Z/sqrt2) bv;
    the particular part is solved in the diagonalizing basis Q with the
    decaying kernels exp(-sqrt(-i) .) and exp(-sqrt(i) .).  For real g the
    two diagonal components are conjugates, so only the sqrt(-i) branch is
    solved and the result doubled: u_p = 2 Re(Q[:,0] w_1).
    """
    geom = ops.geom
    zcol = ops.blgrid.nodes[:, None, None]
    hom = ekman_horizontal(geom, bv_jet, zcol)
    qinv_row = geom.qmat_inv[0]  # (2, ny, nx) complex
    w_src = qinv_row[0] * g_jet[:, 0] + qinv_row[1] * g_jet[:, 1]
    w1 = greens_solve(ops.blgrid, SQRT_MINUS_I, w_src)
    qcol = geom.qmat[:, 0]  # (2, ny, nx) complex
    hom[:, 0] += 2.0 * (qcol[0].real * w1.real - qcol[0].imag * w1.imag)
    hom[:, 1] += 2.0 * (qcol[1].real * w1.real - qcol[1].imag * w1.imag)
    return hom


def advect0_jet(ops: LayerOps, vx: np.ndarray, vy: np.ndarray, f: np.ndarray, k: int) -> np.ndarray:
    """(v . nabla0) f with jet-valued coefficients (Leibniz products)."""
    fz = ops.dz(f)
    fx, fy = deriv_both(ops.grid, f)
    gx = fx + 1.5 * ops.zcol * ops.qx * fz
    gy = fy + 1.5 * ops.zcol * ops.qy * fz
    return jmul(vx, gx, k) + jmul(vy, gy, k)


def reduce_sources(geom: SurfaceGeometry, ops: LayerOps, dvec: np.ndarray, d0: np.ndarray):
    """(G1, G2) = H0^{-1} [ (E | gradB) D + dZ(D0) gradB ], shape (K+1,2,nz,ny,nx)."""
    d0_dz = ops.dz(d0)
    r0 = dvec[:, 0] + geom.bx * dvec[:, 2] + geom.bx * d0_dz
    r1 = dvec[:, 1] + geom.by * dvec[:, 2] + geom.by * d0_dz
    return matvec2(geom.h0_inv, np.stack([r0, r1], axis=1), comp_axis=-4)


# ---------------------------------------------------------------------------
# the full construction
# ---------------------------------------------------------------------------

@dataclass
class SideStack:
    ops: LayerOps
    s_own: np.ndarray        # terrain coordinate at the layer nodes
    chi_own: np.ndarray
    z_opp: np.ndarray        # opposite side's layer coordinate at the nodes
    u0: np.ndarray           # (5, 3, nz, ny, nx)
    u0_dz: np.ndarray
    p1: np.ndarray           # (4, nz, ny, nx)
    p1_dz: np.ndarray
    r_disp: np.ndarray       # (4, nz, ny, nx): int_Z^inf D0^1 (display)
    u1: Optional[np.ndarray] = None    # (4, 3, nz, ny, nx)
    p2: Optional[np.ndarray] = None    # (3, nz, ny, nx)
    d0_2: Optional[np.ndarray] = None  # (3, nz, ny, nx)
    w2: Optional[np.ndarray] = None    # (3, nz, ny, nx): int_Z^inf D0^2
    u2: Optional[np.ndarray] = None    # (3, 3, nz, ny, nx)
    p3: Optional[np.ndarray] = None    # (2, nz, ny, nx)
    d03: Optional[np.ndarray] = None   # (2, nz, ny, nx): delta^-2 nabla0.(delta^2 u2)
    tail_report: Dict = field(default_factory=dict)

    @property
    def sgn(self):
        return self.ops.sgn


class Expansion:
    """All interior and layer terms of the construction for one (state, eps)."""

    def __init__(
        self,
        state: LimitState,
        eps: float,
        blgrid: Optional[BLGrid] = None,
        sgrid: Optional[SGrid] = None,
        config: Optional[ExpansionConfig] = None,
    ):
        self.state = state
        self.geom = state.geom
        self.grid = state.grid
        self.nu = state.nu
        self.eps = eps
        self.blgrid = blgrid or BLGrid()
        self.sgrid = sgrid or SGrid()
        self.config = config or ExpansionConfig()
        self.terrain = TerrainOps(self.geom, self.sgrid)
        self.delta = bl_depth_values(self.geom, eps, self.nu)
        self.cut = ZCutoff(self.geom.B.values)
        self.sides: Dict[str, SideStack] = {}
        self._build()

    # -- helpers --------------------------------------------------------

    def _blend_trace(self, chi, low_jet, high_jet, sign=1.0):
        """sign * ((1 - chi) low + chi high) broadcast over a level axis."""
        return sign * (
            (1.0 - chi) * low_jet[:, None] + chi * high_jet[:, None]
        )

    def chi_at_s(self, s) -> np.ndarray:
        """z-only cutoff evaluated at terrain coordinate s (z = s + B)."""
        return self.cut.val(np.asarray(s) + self.geom.B.values)

    def dchi_at_s(self, s) -> np.ndarray:
        return self.cut.d1(np.asarray(s) + self.geom.B.values)

    def d2chi_at_s(self, s) -> np.ndarray:
        return self.cut.d2(np.asarray(s) + self.geom.B.values)

    def u3_i1_at(self, s) -> np.ndarray:
        """u3^{I,1} = -(1-chi) u3^{B,1}|_0 - chi u3^{T,1}|_0 at coordinates s."""
        return self._blend_trace(self.chi_at_s(s), self.a_trace, self.b_trace, sign=-1.0)

    def u3_i2_at(self, s) -> np.ndarray:
        return self._blend_trace(self.chi_at_s(s), self.A_bot, self.A_top, sign=1.0)

    def grad_u3_i1_at(self, s):
        """Fixed-z horizontal gradient of u3^{I,1} at coordinates s: (K,2,...).

        chi depends on z alone, so at fixed z only the trace fields vary.
        """
        chi = self.chi_at_s(s)
        ga = np.stack([deriv(self.grid, self.a_trace, "x"), deriv(self.grid, self.a_trace, "y")], axis=1)
        gb_ = np.stack([deriv(self.grid, self.b_trace, "x"), deriv(self.grid, self.b_trace, "y")], axis=1)
        return -(1.0 - chi) * ga[:, :, None] - chi * gb_[:, :, None]

    # -- construction ---------------------------------------------------

    def _build(self):
        geom, grid, nu = self.geom, self.grid, self.nu
        k0, k1, k2 = JET_ORDERS
        jets = tendency_jet(self.state, k0)
        self.ujet = np.stack(jets)  # (5, 2, ny, nx)
        gb = geom.grad_b
        u3bar = gb[0] * self.ujet[:, 0] + gb[1] * self.ujet[:, 1]
        self.uI0 = np.concatenate([self.ujet, u3bar[:, None]], axis=1)  # (5,3,ny,nx)
        self.duI0 = np.stack(
            [deriv(grid, self.uI0, "x"), deriv(grid, self.uI0, "y")], axis=2
        )  # (5, 3, 2, ny, nx)

        c = geom.cg
        su = matvec2(geom.smat, self.ujet)
        self.uI1h = jtrunc(
            (c**0.5 * su + c**1.5 * self.ujet) / np.sqrt(2.0), k1
        )  # (4, 2, ny, nx)

        # interior pressures (gauge-fixed, zero-mean)
        vort = deriv(grid, self.ujet[:, 1], "x") - deriv(grid, self.ujet[:, 0], "y")
        self.pI0 = inv_laplacian_values(grid, vort)
        pbar = self._pbar_jet()
        self.pI1 = c**1.5 * pbar / np.sqrt(nu)

        p_bot, p_top = self.config.cos_powers()
        for side, power in (("bottom", p_bot), ("top", p_top)):
            self._build_side_order0(side, power)

        a0 = incompressibility_display(geom, self.ujet, np.zeros((1, 1, 1)), "bottom", p_bot)[:, 0]
        b0 = incompressibility_display(geom, self.ujet, np.zeros((1, 1, 1)), "top", p_top)[:, 0]
        gdot_ui1 = gb[0] * self.uI1h[:, 0] + gb[1] * self.uI1h[:, 1]
        self.a_trace = jtrunc(-gdot_ui1 + jtrunc(a0, k1), k1)  # u3^{B,1}|_{Z=0}
        self.b_trace = jtrunc(-gdot_ui1 + jtrunc(b0, k1), k1)  # u3^{T,1}|_{Z=0}
        self.duI1 = np.stack(
            [deriv(grid, self.uI1h, "x"), deriv(grid, self.uI1h, "y")], axis=2
        )  # (4, 2, 2, ny, nx)

        for side in ("bottom", "top"):
            self._build_side_order1(side)

        self._build_interior_order2()

        for side in ("bottom", "top"):
            self._build_side_order2(side)

    def _pbar_jet(self):
        """Jet of the limiting pressure: -invlap div[(u.grad)u + damping u]."""
        grid, geom, nu = self.grid, self.geom, self.nu
        k = 2
        uj = jtrunc(self.ujet, 4)
        adv_x = jmul(uj[:, 0], deriv(grid, uj[:, 0], "x"), k) + jmul(
            uj[:, 1], deriv(grid, uj[:, 0], "y"), k
        )
        adv_y = jmul(uj[:, 0], deriv(grid, uj[:, 1], "x"), k) + jmul(
            uj[:, 1], deriv(grid, uj[:, 1], "y"), k
        )
        coef = np.sqrt(nu / 2.0)
        bx, by = geom.bx, geom.by
        dx_ = coef * ((1.0 + bx * bx) * uj[: k + 1, 0] + bx * by * uj[: k + 1, 1] - uj[: k + 1, 1])
        dy_ = coef * (bx * by * uj[: k + 1, 0] + (1.0 + by * by) * uj[: k + 1, 1] + uj[: k + 1, 0])
        div = deriv(grid, adv_x + dx_, "x") + deriv(grid, adv_y + dy_, "y")
        return -inv_laplacian_values(grid, div)

    def _build_side_order0(self, side: str, cos_power: float):
        ops = LayerOps(self.geom, self.blgrid, side)
        zcol = self.blgrid.nodes[:, None, None]
        prof = order0_profiles(self.geom, self.ujet, zcol, side)
        r_disp = incompressibility_display(
            self.geom, jtrunc(self.ujet, JET_ORDERS[1]), zcol, side, cos_power
        )
        s_own = ops.s_of_z(self.delta)
        self.sides[side] = SideStack(
            ops=ops,
            s_own=s_own,
            chi_own=self.cut.val(s_own + self.geom.B.values),
            z_opp=ops.opposite_coord(self.delta),
            u0=prof["u"],
            u0_dz=prof["u_dz"],
            p1=jtrunc(prof["p1"], JET_ORDERS[1]),
            p1_dz=jtrunc(prof["p1_dz"], JET_ORDERS[1]),
            r_disp=r_disp,
        )

    # total fields of a given order at one side's nodes -----------------

    def _u_total_order0(self, stack: SideStack, order_cap: int):
        """u^0 = u^{I,0} + (1-chi) u^{B,0} + chi u^{T,0} at the side's nodes."""
        k = order_cap
        chi = stack.chi_own
        own_w = (1.0 - chi) if stack.ops.side == "bottom" else chi
        opp_w = chi if stack.ops.side == "bottom" else (1.0 - chi)
        opp_side = "top" if stack.ops.side == "bottom" else "bottom"
        opp = order0_profiles(self.geom, jtrunc(self.ujet, k), stack.z_opp, opp_side)
        total = (
            jtrunc(self.uI0, k)[:, :, None]
            + own_w * jtrunc(stack.u0, k)
            + opp_w * opp["u"]
        )
        return total

    def _u_total_order1(self, stack: SideStack, order_cap: int):
        """u^1 = u^{I,1} + (1-chi) u^{B,1} + chi u^{T,1} at the side's nodes."""
        k = order_cap
        chi = stack.chi_own
        own_w = (1.0 - chi) if stack.ops.side == "bottom" else chi
        opp_w = chi if stack.ops.side == "bottom" else (1.0 - chi)
        opp_side = "top" if stack.ops.side == "bottom" else "bottom"
        opp_u1 = self.blgrid.interp_to(jtrunc(self.sides[opp_side].u1, k), stack.z_opp)
        ui1 = np.concatenate(
            [
                np.repeat(jtrunc(self.uI1h, k)[:, :, None], stack.s_own.shape[0], axis=2),
                jtrunc(self.u3_i1_at(stack.s_own), k)[:, None],
            ],
            axis=1,
        )
        return ui1 + own_w * jtrunc(stack.u1, k) + opp_w * opp_u1

    def _ucoef1(self, stack: SideStack, order_cap: int):
        """u^1 . grad(delta Z_side) at the side's nodes (scalar jet)."""
        k = order_cap
        p_bot, p_top = self.config.cos_powers()
        uj = jtrunc(self.ujet, k)
        if stack.ops.side == "bottom":
            r_own = jtrunc(stack.r_disp, k)
            r_opp = incompressibility_display(self.geom, uj, stack.z_opp, "top", p_top)
        else:
            r_own = jtrunc(stack.r_disp, k)
            r_opp = incompressibility_display(self.geom, uj, stack.z_opp, "bottom", p_bot)
        chi = stack.chi_own
        bot_part = r_own if stack.ops.side == "bottom" else r_opp
        top_part = r_opp if stack.ops.side == "bottom" else r_own
        gb = self.geom.grad_b
        gdot_ui1 = gb[0] * self.uI1h[: k + 1, 0] + gb[1] * self.uI1h[: k + 1, 1]
        interior = jtrunc(self.u3_i1_at(stack.s_own), k) - gdot_ui1[:, None]
        return stack.sgn * (interior + (1.0 - chi) * bot_part + chi * top_part)

    def _build_side_order1(self, side: str):
        geom, nu = self.geom, self.nu
        k1 = JET_ORDERS[1]
        stack = self.sides[side]
        ops = stack.ops
        c = geom.cg
        q = geom.q
        grid = self.grid
        nz = self.blgrid.nz

        u0 = jtrunc(stack.u0, k1 + 1)
        dvec = np.zeros((k1 + 1, 3) + (nz,) + grid.shape)
        # (cos(g) delta)^{-1} nabla0(delta p1) = c^{-1}[nabla0 p1 - 1.5 (q, 0) p1]
        p1 = stack.p1
        p1z = ops.dz(p1)
        p1x, p1y = deriv_both(grid, p1)
        dvec[:, 0] = (p1x + 1.5 * ops.zcol * q[0] * p1z - 1.5 * q[0] * p1) / c
        dvec[:, 1] = (p1y + 1.5 * ops.zcol * q[1] * p1z - 1.5 * q[1] * p1) / c
        del p1z, p1x, p1y
        # -cos^2(g) lap_{delta^-1} u^{side,0}
        dvec -= (c**2) * ops.lapm1(u0)[: k1 + 1]

        u_tot0 = self._u_total_order0(stack, k1)
        rootc = np.sqrt(c / nu)
        # d/dt u^{side,0} + (u^0 . nabla0) u^{side,0}
        dvec += rootc * jshift(u0)[: k1 + 1]
        for i in range(3):
            dvec[:, i] += rootc * advect0_jet(ops, u_tot0[:, 0], u_tot0[:, 1], u0[: k1 + 1, i], k1)
        del u_tot0
        # (u_h^{side,0} . grad_h) u^{I,0}
        dvec += rootc * (
            jmul(u0[:, 0, None], self.duI0[:, :, 0, None], k1)
            + jmul(u0[:, 1, None], self.duI0[:, :, 1, None], k1)
        )
        # (u^1 . grad(delta Z)) dZ u^{side,0}
        ucoef1 = self._ucoef1(stack, k1)
        stack._ucoef1 = ucoef1
        dvec += rootc * jmul(ucoef1[:, None], jtrunc(stack.u0_dz, k1))
        d0 = ops.sgn * ops.div0(u0[: k1 + 1, 0], u0[: k1 + 1, 1])
        stack.d1src = dvec
        stack.d01 = d0

        g = reduce_sources(geom, ops, dvec, d0)
        u1h = duhamel_solve(ops, self.uI1h, g)
        u31 = (
            geom.grad_b[0] * u1h[:, 0]
            + geom.grad_b[1] * u1h[:, 1]
            + jtrunc(stack.r_disp, k1)
        )
        stack.u1 = np.concatenate([u1h, u31[:, None]], axis=1)
        d3 = dvec[:, 2]
        k1p = JET_ORDERS[2]
        tail = self.blgrid.integrate_tail(jtrunc(d3, k1p))
        stack.tail_report["p2"] = self.blgrid.tail_bound(jtrunc(d3, k1p))
        stack.p2 = stack.sgn * (c * ops.dz(jtrunc(u31, k1p)) + c * tail)

    def _build_interior_order2(self):
        """p^{I,2} and u^{I,2} on the terrain grid (z-dependent via chi)."""
        geom, grid, nu = self.geom, self.grid, self.nu
        k1, k2 = JET_ORDERS[1], JET_ORDERS[2]
        c = geom.cg
        sg = self.sgrid
        s_nodes = sg.nodes[:, None, None]
        coef = 1.0 / (np.sqrt(nu) * c**1.5)

        # D0^{side,2} first (needed for the u3^{I,2} traces)
        for side in ("bottom", "top"):
            stack = self.sides[side]
            u1 = stack.u1
            d0_2 = stack.ops.sgn * (
                stack.ops.div0(u1[:, 0], u1[:, 1])
                - 1.5 * (geom.q[0] * u1[:, 0] + geom.q[1] * u1[:, 1])
            )
            stack.d0_2 = jtrunc(d0_2, k2)
            stack.w2 = self.blgrid.integrate_tail(stack.d0_2)
            stack.tail_report["w2"] = self.blgrid.tail_bound(stack.d0_2)

        u3i1 = self.u3_i1_at(s_nodes)  # (4, ns, ny, nx)
        grad_u3i1 = self.grad_u3_i1_at(s_nodes)
        ds_u3i1 = self.dchi_at_s(s_nodes) * (self.a_trace - self.b_trace)[:, None]
        uj = self.ujet
        u3bar = self.uI0[:, 2]
        qdotu = geom.q[0] * uj[:, 0] + geom.q[1] * uj[:, 1]
        advect = (
            jmul(uj[:, 0, None], grad_u3i1[:, 0], k1)
            + jmul(uj[:, 1, None], grad_u3i1[:, 1], k1)
        )
        transport = (
            jshift(u3i1)
            + jtrunc(advect, k1 - 1)
            + jmul(u3bar[:, None], ds_u3i1, k1 - 1)
            - 1.5 * jmul(qdotu[:, None], u3i1, k1 - 1)
        )
        adv_u3bar = jmul(self.uI1h[:, 0], deriv(grid, u3bar, "x")[: k1 + 1], k2) + jmul(
            self.uI1h[:, 1], deriv(grid, u3bar, "y")[: k1 + 1], k2
        )
        integrand = (
            coef * adv_u3bar[:, None]
            + laplacian(grid, jtrunc(u3bar, k2))[:, None]
            + coef * jtrunc(transport, k2)
        )
        self.pI2 = -(c**3) * sg.cumint(integrand)
        self._pI2_integrand = integrand
        self.pI2_ds = -(c**3) * integrand  # exact d/ds of the quadrature

        # u_h^{I,2}: -(c^{3/2}/sqrt(nu)) E1 [F_h + sqrt(nu) c^{3/2} grad_z(c^-3 p^{I,2})]
        f_h = (
            jshift(self.uI1h)[: k2 + 1]
            - np.sqrt(nu) * c**1.5 * laplacian(grid, jtrunc(self.ujet, k2))
            + jmul(self.uI1h[:, 0, None], self.duI0[:, :2, 0], k2)
            + jmul(self.uI1h[:, 1, None], self.duI0[:, :2, 1], k2)
            + jmul(uj[:, 0, None], self.duI1[:, :, 0], k2)
            + jmul(uj[:, 1, None], self.duI1[:, :, 1], k2)
            - 1.5 * jmul(qdotu[:, None], self.uI1h, k2)
        )
        cp = self.pI2 / c**3
        grad_cp = np.stack(
            [
                deriv(grid, cp, "x") + geom.bx * integrand,
                deriv(grid, cp, "y") + geom.by * integrand,
            ],
            axis=1,
        )
        inner = f_h[:, :, None] + np.sqrt(nu) * c**1.5 * grad_cp
        self.uI2h = -(c**1.5) / np.sqrt(nu) * np.stack(
            [inner[:, 1], -inner[:, 0]], axis=1
        )  # E1 v = (v2, -v1)

        gb = geom.grad_b
        self.A_bot = (
            gb[0] * self.uI2h[:, 0, 0] + gb[1] * self.uI2h[:, 1, 0]
            - self.sides["bottom"].w2[:, 0]
        )
        self.A_top = (
            gb[0] * self.uI2h[:, 0, -1] + gb[1] * self.uI2h[:, 1, -1]
            - self.sides["top"].w2[:, 0]
        )
        self.duI2 = np.stack(
            [deriv(grid, self.uI2h, "x"), deriv(grid, self.uI2h, "y")], axis=2
        )  # (3, 2, 2, ns, ny, nx) fixed-s horizontal derivative
        self._duI2_ds = sg.ds(self.uI2h)

    def _uI2h_at(self, stack: SideStack, order_cap: int):
        return interp_columns(
            self.sgrid.nodes, jtrunc(self.uI2h, order_cap), stack.s_own, fill="edge"
        )

    def _ucoef2(self, stack: SideStack, order_cap: int):
        """u^2 . grad(delta Z_side) at the side's nodes (scalar jet)."""
        k = order_cap
        chi = stack.chi_own
        opp_side = "top" if stack.ops.side == "bottom" else "bottom"
        w_own = jtrunc(stack.w2, k)
        w_opp = self.blgrid.interp_to(jtrunc(self.sides[opp_side].w2, k), stack.z_opp)
        bot_part = w_own if stack.ops.side == "bottom" else w_opp
        top_part = w_opp if stack.ops.side == "bottom" else w_own
        ui2 = self._uI2h_at(stack, k)
        gb = self.geom.grad_b
        interior = jtrunc(self.u3_i2_at(stack.s_own), k) - (
            gb[0] * ui2[:, 0] + gb[1] * ui2[:, 1]
        )
        return stack.sgn * (interior + (1.0 - chi) * bot_part + chi * top_part)

    def _build_side_order2(self, side: str):
        geom, nu = self.geom, self.nu
        k2 = JET_ORDERS[2]
        stack = self.sides[side]
        ops = stack.ops
        c = geom.cg
        q = geom.q

        grid = self.grid
        nz = self.blgrid.nz
        u1 = jtrunc(stack.u1, k2 + 1)
        u0 = jtrunc(stack.u0, k2)
        dvec = np.zeros((k2 + 1, 3) + (nz,) + grid.shape)
        # cos^{-1}(g) nabla0 p2 + 2 (cos(g) delta)^{-1} p2 grad(delta)
        p2 = jtrunc(stack.p2, k2)
        p2z = ops.dz(p2)
        p2x, p2y = deriv_both(grid, p2)
        dvec[:, 0] = (p2x + 1.5 * ops.zcol * q[0] * p2z - 3.0 * q[0] * p2) / c
        dvec[:, 1] = (p2y + 1.5 * ops.zcol * q[1] * p2z - 3.0 * q[1] * p2) / c
        del p2z, p2x, p2y
        # -cos^2(g) (lap_{delta^-1} u^{side,1} + lap_{delta^0} u^{side,0})
        dvec -= (c**2) * ops.lapm1(u1)[: k2 + 1]
        dvec -= (c**2) * ops.lap0(u0)

        u_tot0 = self._u_total_order0(stack, k2)
        ui1_stack = np.concatenate(
            [
                np.repeat(jtrunc(self.uI1h, k2)[:, :, None], stack.s_own.shape[0], axis=2),
                jtrunc(self.u3_i1_at(stack.s_own), k2)[:, None],
            ],
            axis=1,
        )
        rootc = np.sqrt(c / nu)
        # d/dt u^{side,1} - 1.5 (q . u_h^{side,0}) u^{I,1} - 1.5 (q . u^0_h) u^{side,1}
        dvec += rootc * jshift(u1)[: k2 + 1]
        q_dot_u0h = q[0] * u0[:, 0] + q[1] * u0[:, 1]
        q_dot_tot0 = q[0] * u_tot0[:, 0] + q[1] * u_tot0[:, 1]
        dvec -= rootc * 1.5 * jmul(q_dot_u0h[:, None], ui1_stack, k2)
        dvec -= rootc * 1.5 * jmul(q_dot_tot0[:, None], u1[: k2 + 1], k2)

        # sum over i + j = 1 of the quadratic couplings
        for i in range(3):
            dvec[:, i] += rootc * advect0_jet(ops, u_tot0[:, 0], u_tot0[:, 1], u1[: k2 + 1, i], k2)
        del u_tot0
        u_tot1 = self._u_total_order1(stack, k2)
        for i in range(3):
            dvec[:, i] += rootc * advect0_jet(ops, u_tot1[:, 0], u_tot1[:, 1], u0[:, i], k2)
        del u_tot1
        ucoef1 = jtrunc(stack._ucoef1, k2)
        ucoef2 = self._ucoef2(stack, k2)
        dvec += rootc * jmul(ucoef1[:, None], ops.dz(u1[: k2 + 1]), k2)
        dvec += rootc * jmul(ucoef2[:, None], jtrunc(stack.u0_dz, k2), k2)
        # (u^{side,0}.grad) u^{I,1} + (u^{side,1}.grad) u^{I,0}
        grad_u3i1 = self.grad_u3_i1_at(stack.s_own)
        ds_u3i1 = self.dchi_at_s(stack.s_own) * (self.a_trace - self.b_trace)[:, None]
        dvec[:, :2] += rootc * (
            jmul(u0[:, 0, None], jtrunc(self.duI1, k2)[:, :, 0, None], k2)
            + jmul(u0[:, 1, None], jtrunc(self.duI1, k2)[:, :, 1, None], k2)
        )
        dvec[:, 2] += rootc * (
            jmul(u0[:, 0], jtrunc(grad_u3i1, k2)[:, 0], k2)
            + jmul(u0[:, 1], jtrunc(grad_u3i1, k2)[:, 1], k2)
            + jmul(u0[:, 2], jtrunc(ds_u3i1, k2), k2)
        )
        dvec += rootc * (
            jmul(u1[: k2 + 1, 0, None], jtrunc(self.duI0, k2)[:, :, 0, None], k2)
            + jmul(u1[: k2 + 1, 1, None], jtrunc(self.duI0, k2)[:, :, 1, None], k2)
        )
        stack.d2src = dvec

        g = reduce_sources(geom, ops, dvec, jtrunc(stack.d0_2, k2))
        bv = self.uI2h[:, :, 0] if side == "bottom" else self.uI2h[:, :, -1]
        u2h = duhamel_solve(ops, bv, g)
        u32 = (
            geom.grad_b[0] * u2h[:, 0]
            + geom.grad_b[1] * u2h[:, 1]
            + jtrunc(stack.w2, k2)
        )
        stack.u2 = np.concatenate([u2h, u32[:, None]], axis=1)
        d3 = dvec[:, 2]
        kp = k2 - 1
        tail = self.blgrid.integrate_tail(jtrunc(d3, kp))
        stack.tail_report["p3"] = self.blgrid.tail_bound(jtrunc(d3, kp))
        stack.p3 = stack.sgn * (c * ops.dz(jtrunc(u32, kp)) + c * tail)
        # raw operator divergence delta^-2 nabla0 . (delta^2 u^{side,2});
        # unlike the D0 family this carries no side sign (the corrector
        # right-hand side uses it verbatim)
        stack.d03 = jtrunc(
            ops.div0(stack.u2[:, 0], stack.u2[:, 1])
            - 3.0 * (q[0] * stack.u2[:, 0] + q[1] * stack.u2[:, 1]),
            k2,
        )

    # -- evaluation on the terrain grid ----------------------------------

    def z_targets(self, side: str) -> np.ndarray:
        """Layer coordinate of each terrain node for the given side."""
        s = self.sgrid.nodes[:, None, None]
        return s / self.delta if side == "bottom" else (2.0 - s) / self.delta

    def layer_velocity_at_s(self, side: str, order: int, order_cap: int) -> np.ndarray:
        """(K+1, 3, ns, ny, nx) layer velocity of the given order on s-nodes."""
        zt = self.z_targets(side)
        if order == 0:
            prof = order0_profiles(self.geom, jtrunc(self.ujet, order_cap), zt, side)
            return prof["u"]
        stack = self.sides[side]
        values = stack.u1 if order == 1 else stack.u2
        return self.blgrid.interp_to(jtrunc(values, order_cap), zt)

    def layer_pressure_at_s(self, side: str, order: int, order_cap: int) -> np.ndarray:
        """Layer pressure p^{side,order} (order in 1..3) on the terrain nodes."""
        zt = self.z_targets(side)
        if order == 1:
            prof = order0_profiles(self.geom, jtrunc(self.ujet, order_cap), zt, side)
            return prof["p1"]
        stack = self.sides[side]
        values = stack.p2 if order == 2 else stack.p3
        return self.blgrid.interp_to(jtrunc(values, order_cap), zt)

    def interior_velocity(self, order: int, order_cap: int) -> np.ndarray:
        """(K+1, 3, ns, ny, nx) interior velocity of the given order."""
        ns = self.sgrid.ns
        s_nodes = self.sgrid.nodes[:, None, None]
        if order == 0:
            return np.repeat(jtrunc(self.uI0, order_cap)[:, :, None], ns, axis=2)
        if order == 1:
            uh = np.repeat(jtrunc(self.uI1h, order_cap)[:, :, None], ns, axis=2)
            return np.concatenate(
                [uh, jtrunc(self.u3_i1_at(s_nodes), order_cap)[:, None]], axis=1
            )
        uh = jtrunc(self.uI2h, order_cap)
        return np.concatenate(
            [uh, jtrunc(self.u3_i2_at(s_nodes), order_cap)[:, None]], axis=1
        )
