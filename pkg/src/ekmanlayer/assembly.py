"""Assembled approximate solution, residual groups, and scaling studies.

`build_approx` runs the whole pipeline for one (state, eps): expansion,
divergence correctors, pressure-corrector gradients, and the assembled
velocity / pressure-gradient fields on the terrain grid.  The residual of
the rotating Navier-Stokes equations is then measured two independent ways:

  * `residual_formulas` evaluates the three analytic residual groups term by
    term (the parts the construction does not cancel), and
  * `residual_direct` applies the full PDE to the assembled fields with
    numerical 3D derivatives.

Their difference measures transcription plus discretization error and is one
of the acceptance gates.  `sweep` repeats the pipeline over a decreasing
list of eps and fits log-log slopes of the residual norms; `weighted_bl_norms`
computes the distance-weighted mixed norms of the layer stack.

Every residual field is carried as a jet [rho, d(rho)/dt], so the time
derivative of the residual is a slice, never a finite difference.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .blayer import BLGrid
from .channel import SGrid
from .corrector import bump_profile, coriolis3, solve_corrector, terrain_divergence
from .expansion import Expansion, ExpansionConfig, order0_profiles
from .jets import jmul, jshift, jtrunc
from .limiting import LimitState
from .spectral import deriv, deriv_both, laplacian

KR = 1  # jet order of the residual groups: [rho, d(rho)/dt]


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def _blend_lap3(exp: Expansion, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """3D Laplacian of (1-chi(z)) low + chi(z) high for 2D jets low/high.

    chi depends on z alone, so the horizontal Laplacian acts on the traces
    and the vertical part is chi'' times the jump; both exact.
    """
    grid = exp.grid
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    d2 = exp.d2chi_at_s(s)
    return (
        (1.0 - chi) * laplacian(grid, low)[:, None]
        + chi * laplacian(grid, high)[:, None]
        + d2 * (high - low)[:, None]
    )


def _normal_flux(geom, u):
    """u . grad(z - B) = u3 - gradB . u_h on a (..., 3, ns, ny, nx) stack."""
    return u[..., 2, :, :, :] - geom.bx * u[..., 0, :, :, :] - geom.by * u[..., 1, :, :, :]


def _advect3(exp: Expansion, v: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """(v . grad) u with terrain-exact 3D gradients and Leibniz products."""
    comps = []
    for i in range(u.shape[1]):
        g = exp.terrain.grad3(u[:, i])
        comps.append(
            jmul(v[:, 0], g[:, 0], k) + jmul(v[:, 1], g[:, 1], k) + jmul(v[:, 2], g[:, 2], k)
        )
    return np.stack(comps, axis=1)


def _lap3_stack(exp: Expansion, u: np.ndarray) -> np.ndarray:
    return np.stack([exp.terrain.lap3(u[:, i]) for i in range(u.shape[1])], axis=1)


def _total_velocity_at_s(exp: Expansion, order: int, cap: int) -> np.ndarray:
    """u^i = u^{I,i} + (1-chi) u^{B,i} + chi u^{T,i} on the terrain nodes."""
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    return (
        exp.interior_velocity(order, cap)
        + (1.0 - chi) * exp.layer_velocity_at_s("bottom", order, cap)
        + chi * exp.layer_velocity_at_s("top", order, cap)
    )


def _layer_dz_at_s(exp: Expansion, side: str, order: int, cap: int) -> np.ndarray:
    """d/dZ of the order-i layer velocity, evaluated on the terrain nodes."""
    zt = exp.z_targets(side)
    if order == 0:
        prof = order0_profiles(exp.geom, jtrunc(exp.ujet, cap), zt, side)
        return prof["u_dz"]
    stack = exp.sides[side]
    values = stack.u1 if order == 1 else stack.u2
    return exp.blgrid.interp_to(exp.sides[side].ops.dz(jtrunc(values, cap)), zt)


def _layer_grad0_at_s(exp: Expansion, side: str, values: np.ndarray, cap: int):
    """nabla0-gradient pieces (gx, gy) of layer samples, mapped to s-nodes."""
    ops = exp.sides[side].ops
    v = jtrunc(values, cap)
    vz = ops.dz(v)
    vx, vy = deriv_both(exp.grid, v)
    gx = vx + 1.5 * ops.zcol * exp.geom.q[0] * vz
    gy = vy + 1.5 * ops.zcol * exp.geom.q[1] * vz
    zt = exp.z_targets(side)
    return exp.blgrid.interp_to(gx, zt), exp.blgrid.interp_to(gy, zt)


def _dot_grad0_layer(exp, side, vh, values, jpow, cap):
    """v_h . nabla0(delta^j F) / delta^j at the terrain nodes, per component.

    values: layer samples (K+1, ncomp, nz, ny, nx); the delta-power
    conjugation contributes -1.5 j (v_h . q) F.
    """
    gx, gy = _layer_grad0_at_s(exp, side, values, cap)
    out = jmul(vh[:, 0, None], gx, cap) + jmul(vh[:, 1, None], gy, cap)
    if jpow:
        q = exp.geom.q
        vq = q[0] * vh[:, 0] + q[1] * vh[:, 1]
        fs = exp.blgrid.interp_to(jtrunc(values, cap), exp.z_targets(side))
        out -= 1.5 * jpow * jmul(vq[:, None], fs, cap)
    return out


# ---------------------------------------------------------------------------
# correctors
# ---------------------------------------------------------------------------

def corrector_rhs(exp: Expansion, order: int, cap: int) -> np.ndarray:
    """Right-hand side of the order-i divergence problem on the terrain grid."""
    s = exp.sgrid.nodes[:, None, None]
    dchi = exp.dchi_at_s(s)
    chi = exp.chi_at_s(s)
    delta = exp.delta
    grid = exp.grid
    u3b = exp.layer_velocity_at_s("bottom", order, cap)[:, 2]
    u3t = exp.layer_velocity_at_s("top", order, cap)[:, 2]
    rhs = dchi * delta**order * (u3b - u3t)
    if order == 1:
        div_h = deriv(grid, delta * exp.uI1h[: cap + 1, 0], "x") + deriv(
            grid, delta * exp.uI1h[: cap + 1, 1], "y"
        )
        rhs -= div_h[:, None] + delta * dchi * (exp.a_trace - exp.b_trace)[: cap + 1, None]
    elif order == 2:
        d2 = delta**2
        uh = jtrunc(exp.uI2h, cap)
        gx = deriv(grid, d2 * uh[:, 0], "x") - exp.geom.bx * exp.sgrid.ds(d2 * uh[:, 0])
        gy = deriv(grid, d2 * uh[:, 1], "y") - exp.geom.by * exp.sgrid.ds(d2 * uh[:, 1])
        dz3 = d2 * dchi * (exp.A_top - exp.A_bot)[: cap + 1, None]
        rhs -= gx + gy + dz3
        for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
            d03 = exp.blgrid.interp_to(
                jtrunc(exp.sides[side].d03, cap), exp.z_targets(side)
            )
            rhs -= weight * d2 * d03
    return rhs


def build_correctors(exp: Expansion, cap: int = 2):
    """Solve the three divergence problems; returns (fields, measured means).

    Each rhs is mean-freed before lifting so the corrector traces vanish
    identically; the removed means are reported and cancel across the three
    orders up to the accuracy of the layer incompressibility identities, so
    the assembled divergence is unaffected.
    """
    fields, means = [], []
    volume = exp.grid.cell_area
    for order in range(3):
        rhs = corrector_rhs(exp, order, cap)
        f2d = np.tensordot(np.moveaxis(rhs, -3, -1), exp.sgrid.weights, axes=([-1], [0]))
        means.append(float(np.sum(f2d[0]) * volume))
        mean_density = f2d.mean(axis=(-2, -1))[..., None, None, None] / 2.0
        fields.append(solve_corrector(rhs - mean_density, exp.geom, exp.sgrid, tol=np.inf))
    return fields, means


# ---------------------------------------------------------------------------
# pressure-corrector gradients (assembled verbatim, never integrated)
# ---------------------------------------------------------------------------

def pressure_corrector_grads(exp: Expansion, corr: List[np.ndarray]) -> List[np.ndarray]:
    """The fields grad(p^{c,0}), grad(delta p^{c,1}), grad(delta^2 p^{c,2}).

    `corr` holds the delta-weighted correctors d_i = delta^i u^{c,i}; several
    eps/delta factors collapse to c^{3/2}/sqrt(nu) in these units.
    """
    cap = KR
    geom, sgrid = exp.geom, exp.sgrid
    eps, nu = exp.eps, exp.nu
    delta = exp.delta
    s = sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    dchi = exp.dchi_at_s(s)
    d2chi = exp.d2chi_at_s(s)
    c = geom.cg
    eod = c**1.5 / np.sqrt(nu)  # eps / delta
    d0 = jtrunc(corr[0], cap + 1)
    d1 = jtrunc(corr[1], cap + 1)
    d2_ = jtrunc(corr[2], cap)

    u0s = _total_velocity_at_s(exp, 0, cap)
    ub0 = exp.layer_velocity_at_s("bottom", 0, cap)
    ut0 = exp.layer_velocity_at_s("top", 0, cap)
    dz_b0 = _layer_dz_at_s(exp, "bottom", 0, cap)
    dz_t0 = _layer_dz_at_s(exp, "top", 0, cap)
    mix0 = (1.0 - chi) * dz_b0 - chi * dz_t0
    w0 = _normal_flux(geom, d0)

    # --- grad p^{c,0} = eps * (2.39) --------------------------------------
    g0 = -coriolis3(jtrunc(d0, cap))
    g0 += nu * eps**2 * _lap3_stack(exp, jtrunc(d0, cap))
    g0 -= eod * jmul(w0[:, None], mix0, cap)
    # the chi'(0,0,p^{T,0}-p^{B,0}) term vanishes: both pressures are zero

    # --- grad (delta p^{c,1}) = eps * (2.40) -------------------------------
    p1b = exp.layer_pressure_at_s("bottom", 1, cap)
    p1t = exp.layer_pressure_at_s("top", 1, cap)
    dz_b1 = _layer_dz_at_s(exp, "bottom", 1, cap)
    dz_t1 = _layer_dz_at_s(exp, "top", 1, cap)
    mix1 = (1.0 - chi) * dz_b1 - chi * dz_t1
    w1 = _normal_flux(geom, d1)

    g1 = -eps * jshift(d0)[: cap + 1]
    g1 -= coriolis3(jtrunc(d1, cap))
    g1 += nu * eps**2 * _lap3_stack(exp, d1[: cap + 1])
    # (u_h^{c,0} . grad_h) u^{I,0}: the interior order-0 field is z-independent
    g1 -= eps * (
        jmul(d0[: cap + 1, 0], jtrunc(exp.duI0, cap)[:, :, 0, None], cap)
        + jmul(d0[: cap + 1, 1], jtrunc(exp.duI0, cap)[:, :, 1, None], cap)
    )
    g1 -= eps * _advect3(exp, u0s + jtrunc(d0, cap), jtrunc(d0, cap), cap)
    g1 += eps * dchi * np.sqrt(nu) * c**1.5 * (dz_t0 - dz_b0)
    g1[:, 2] -= eps * dchi * np.sqrt(nu) * c**-1.5 * (p1t - p1b)
    u3tot0 = u0s[:, 2] + d0[: cap + 1, 2]
    g1 -= eps * dchi * jmul(u3tot0[:, None], ut0 - ub0, cap)
    for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
        g1 -= eps * weight * _dot_grad0_layer(
            exp, side, d0[: cap + 1], exp.sides[side].u0, 0, cap
        )
    g1 -= eps * jmul(w0[:, None], mix1, cap)
    g1 -= eod * jmul(w1[: cap + 1, None], mix0, cap)

    # --- grad (delta^2 p^{c,2}) = eps * (2.41) -----------------------------
    p2b = exp.layer_pressure_at_s("bottom", 2, cap)
    p2t = exp.layer_pressure_at_s("top", 2, cap)
    ub1 = exp.layer_velocity_at_s("bottom", 1, cap)
    ut1 = exp.layer_velocity_at_s("top", 1, cap)
    dz_b2 = _layer_dz_at_s(exp, "bottom", 2, cap)
    dz_t2 = _layer_dz_at_s(exp, "top", 2, cap)
    mix2 = (1.0 - chi) * dz_b2 - chi * dz_t2
    w2 = _normal_flux(geom, d2_)
    u1s = _total_velocity_at_s(exp, 1, cap)

    g2 = -eps * jshift(d1)[: cap + 1]
    g2 -= coriolis3(d2_)
    g2[:, 2] -= nu * eps**2 * c**-3 * dchi * (p2t - p2b)
    g2 += nu * eps**2 * _lap3_stack(exp, d2_)
    g2 += nu * eps**2 * dchi * (dz_t1 - dz_b1)
    g2 -= nu * eps**2 * d2chi * (ub0 - ut0)
    # sum over i + j = 1: interior, corrector, jump, and layer-advection parts
    g2 -= eps * _advect3(exp, jtrunc(d0, cap), delta * exp.interior_velocity(1, cap), cap)
    g2 -= eps * _advect3(exp, d1[: cap + 1], exp.interior_velocity(0, cap), cap)
    g2 -= eps * _advect3(exp, u0s + jtrunc(d0, cap), d1[: cap + 1], cap)
    g2 -= eps * _advect3(exp, delta * u1s + d1[: cap + 1], jtrunc(d0, cap), cap)
    u3tot1 = delta * u1s[:, 2] + d1[: cap + 1, 2]
    g2 -= eps * dchi * (
        delta * jmul(u3tot0[:, None], ut1 - ub1, cap)
        + jmul(u3tot1[:, None], ut0 - ub0, cap)
    )
    for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
        stack = exp.sides[side]
        g2 -= eps * weight * delta * _dot_grad0_layer(
            exp, side, d0[: cap + 1], stack.u1, 1, cap
        )
        g2 -= eps * weight * _dot_grad0_layer(exp, side, d1[: cap + 1], stack.u0, 0, cap)
    # the i+j=2 flux sum enters with the same minus as its order-0/1
    # analogues; the displayed "+" cannot cancel the advection it pairs with
    g2 -= eps * delta * jmul(w0[:, None], mix2, cap)
    g2 -= eps * jmul(w1[: cap + 1, None], mix1, cap)
    g2 -= eod * jmul(w2[:, None], mix0, cap)
    return [g0, g1, g2]


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class ApproxSolution:
    """The assembled (u_app, grad p_app) on the terrain grid, with jets."""

    expansion: Expansion
    correctors: List[np.ndarray]
    corrector_means: List[float]
    pc_grads: List[np.ndarray]
    velocity: np.ndarray
    grad_p: np.ndarray
    tail_reports: Dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.expansion.eps

    @property
    def nu(self) -> float:
        return self.expansion.nu

    @property
    def t(self) -> float:
        return self.expansion.state.t

    def wall_trace_max(self) -> float:
        v = self.velocity[0]  # (3, ns, ny, nx); walls are the s-extremes
        return float(max(np.max(np.abs(v[:, 0])), np.max(np.abs(v[:, -1]))))

    def velocity_scale(self) -> float:
        return float(np.max(np.abs(self.velocity[0])))

    def divergence_l2(self) -> float:
        exp = self.expansion
        div = terrain_divergence(exp.geom, exp.sgrid, self.velocity[:1])
        return exp.terrain.l2_volume(div[0])

    def gradient_scale(self) -> float:
        exp = self.expansion
        comps = []
        for i in range(3):
            g = exp.terrain.grad3(self.velocity[:1, i])
            comps.extend(g[0, d] for d in range(3))
        return exp.terrain.l2_volume(*comps)


def assemble(exp: Expansion, correctors, pc_grads) -> ApproxSolution:
    """Sum the expansion orders, correctors, and pressure stack on the grid."""
    cap = 2
    delta = exp.delta
    velocity = np.zeros((cap + 1, 3, exp.sgrid.ns) + exp.grid.shape)
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    for order in range(3):
        dpow = delta**order
        velocity += dpow * exp.interior_velocity(order, cap)
        velocity += dpow * (1.0 - chi) * exp.layer_velocity_at_s("bottom", order, cap)
        velocity += dpow * chi * exp.layer_velocity_at_s("top", order, cap)
        # the corrector fields carry their delta powers already
        velocity += jtrunc(correctors[order], cap)

    grad_p = np.zeros((KR + 1, 3, exp.sgrid.ns) + exp.grid.shape)
    dchi = exp.dchi_at_s(s)
    q = exp.geom.q
    for order in range(3):
        # layer pressures delta^{i+1} p^{side,i+1}: gradient via the exact
        # layer-operator split, chi-weighted with the z-only cutoff
        for side, weight in (("bottom", (1.0 - chi)), ("top", chi)):
            stack = exp.sides[side]
            pvals = (
                jtrunc(stack.p1, KR)
                if order == 0
                else jtrunc(stack.p2, KR) if order == 1 else jtrunc(stack.p3, KR)
            )
            gx, gy = _layer_grad0_at_s(exp, side, pvals, KR)
            ps = exp.layer_pressure_at_s(side, order + 1, KR)
            dz_p = exp.blgrid.interp_to(stack.ops.dz(pvals), exp.z_targets(side))
            dpow = delta ** (order + 1)
            sgn = stack.sgn
            grad_p[:, 0] += weight * (
                dpow * (gx - 1.5 * (order + 1) * q[0] * ps) - sgn * delta**order * exp.geom.bx * dz_p
            )
            grad_p[:, 1] += weight * (
                dpow * (gy - 1.5 * (order + 1) * q[1] * ps) - sgn * delta**order * exp.geom.by * dz_p
            )
            grad_p[:, 2] += weight * sgn * delta**order * dz_p
            sign_jump = -1.0 if side == "bottom" else 1.0
            grad_p[:, 2] += sign_jump * dchi * dpow * ps
    # interior pressures: p^{I,0}, delta p^{I,1} (z-independent), delta^2 p^{I,2}
    pi0 = jtrunc(exp.pI0, KR)
    gx, gy = deriv_both(exp.grid, pi0)
    grad_p[:, 0] += gx[:, None]
    grad_p[:, 1] += gy[:, None]
    pi1 = delta * jtrunc(exp.pI1, KR)
    gx, gy = deriv_both(exp.grid, pi1)
    grad_p[:, 0] += gx[:, None]
    grad_p[:, 1] += gy[:, None]
    pi2 = delta**2 * jtrunc(exp.pI2, KR)
    ds_pi2 = delta**2 * jtrunc(exp.pI2_ds, KR)
    gx, gy = deriv_both(exp.grid, pi2)
    grad_p[:, 0] += gx - exp.geom.bx * ds_pi2
    grad_p[:, 1] += gy - exp.geom.by * ds_pi2
    grad_p[:, 2] += ds_pi2
    for g in pc_grads:
        grad_p += jtrunc(g, KR)

    tails = {side: dict(exp.sides[side].tail_report) for side in ("bottom", "top")}
    return ApproxSolution(
        expansion=exp,
        correctors=correctors,
        corrector_means=[],
        pc_grads=pc_grads,
        velocity=velocity,
        grad_p=grad_p,
        tail_reports=tails,
    )


def build_approx(
    state: LimitState,
    eps: float,
    blgrid: Optional[BLGrid] = None,
    sgrid: Optional[SGrid] = None,
    config: Optional[ExpansionConfig] = None,
) -> ApproxSolution:
    """Full pipeline: expansion, correctors, pressure gradients, assembly."""
    exp = Expansion(state, eps, blgrid=blgrid, sgrid=sgrid, config=config)
    correctors, means = build_correctors(exp)
    pc = pressure_corrector_grads(exp, correctors)
    sol = assemble(exp, correctors, pc)
    sol.corrector_means = means
    return sol


# ---------------------------------------------------------------------------
# residual groups (rho^{eps,1..3})
# ---------------------------------------------------------------------------

@dataclass
class ResidualBreakdown:
    rho1: np.ndarray  # (KR+1, 3, ns, ny, nx)
    rho2: np.ndarray
    rho3: np.ndarray
    l2_rho1: float
    l2_rho2: float
    l2_rho3: float
    l2_total: float
    l2_dt_total: float

    def total(self) -> np.ndarray:
        return self.rho1 + self.rho2 + self.rho3


def _rho1(sol: ApproxSolution) -> np.ndarray:
    """Layer-pressure order-3 gradient and viscous layer leftovers."""
    exp = sol.expansion
    eps, nu = sol.eps, sol.nu
    geom, delta = exp.geom, exp.delta
    q = geom.q
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    dchi = exp.dchi_at_s(s)
    d2chi = exp.d2chi_at_s(s)
    out = np.zeros((KR + 1, 3, exp.sgrid.ns) + exp.grid.shape)

    p3 = {}
    for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
        stack = exp.sides[side]
        gx, gy = _layer_grad0_at_s(exp, side, stack.p3, KR)
        ps = exp.layer_pressure_at_s(side, 3, KR)
        p3[side] = ps
        coef = weight * delta**3 / eps
        out[:, 0] += coef * (gx - 4.5 * q[0] * ps)
        out[:, 1] += coef * (gy - 4.5 * q[1] * ps)
    out[:, 2] += dchi * delta**3 / eps * (p3["top"] - p3["bottom"])

    # -nu eps sum_i [(1-chi) lap0(delta^i u^{B,i}) + chi lap0(delta^i u^{T,i})
    #               + chi'' delta^i (u^{T,i} - u^{B,i})]
    for order in (1, 2):
        m_i = laplacian(exp.grid, delta**order) / delta**order
        ui = {}
        for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
            stack = exp.sides[side]
            vals = jtrunc(stack.u1 if order == 1 else stack.u2, KR)
            ops = stack.ops
            vz = ops.dz(vals)
            conj = (
                ops.lap0(vals)
                - 3.0 * order * (q[0] * deriv(exp.grid, vals, "x") + q[1] * deriv(exp.grid, vals, "y"))
                + m_i * vals
                - 4.5 * order * ops.zcol * (q[0] ** 2 + q[1] ** 2) * vz
            )
            mapped = exp.blgrid.interp_to(conj, exp.z_targets(side))
            out -= nu * eps * weight * delta**order * mapped
            ui[side] = exp.layer_velocity_at_s(side, order, KR)
        out -= nu * eps * d2chi * delta**order * (ui["top"] - ui["bottom"])

    # -(1-chi) nu eps delta lapm1 u^{B,2} - chi nu eps delta lapm1 u^{T,2}
    #  - chi' nu eps delta (dZ u^{T,2} - dZ u^{B,2})
    for side, weight in (("bottom", 1.0 - chi), ("top", chi)):
        stack = exp.sides[side]
        lm1 = stack.ops.lapm1(jtrunc(stack.u2, KR))
        out -= nu * eps * delta * weight * exp.blgrid.interp_to(lm1, exp.z_targets(side))
    dz_b2 = _layer_dz_at_s(exp, "bottom", 2, KR)
    dz_t2 = _layer_dz_at_s(exp, "top", 2, KR)
    out -= nu * eps * delta * dchi * (dz_t2 - dz_b2)
    return out


def _rho2(sol: ApproxSolution) -> np.ndarray:
    """Vertical transport of the limit state, slow time derivatives, and the
    interior viscous terms."""
    exp = sol.expansion
    eps, nu = sol.eps, sol.nu
    delta = exp.delta
    grid = exp.grid
    out = np.zeros((KR + 1, 3, exp.sgrid.ns) + exp.grid.shape)

    # (0, 0, d/dt u3bar + u . grad u3bar)
    u3bar = exp.uI0[:, 2]
    transport = jshift(u3bar)[: KR + 1] + jmul(
        exp.ujet[:, 0], deriv(grid, u3bar, "x"), KR
    ) + jmul(exp.ujet[:, 1], deriv(grid, u3bar, "y"), KR)
    out[:, 2] += transport[:, None]

    # delta^2 d/dt (u^2 + u^{c,2}); the stored corrector is delta^2 u^{c,2}
    u2s = _total_velocity_at_s(exp, 2, KR + 1)
    out += delta**2 * jshift(u2s)[: KR + 1]
    out += jshift(jtrunc(sol.correctors[2], KR + 1))[: KR + 1]

    # -nu eps sum_i lap(delta^i u^{I,i}): semi-analytic for the chi-blended
    # vertical parts, spectral for the z-independent horizontal parts
    k = KR
    ui1h = delta * jtrunc(exp.uI1h, k)
    out[:, 0] -= nu * eps * laplacian(grid, ui1h[:, 0])[:, None]
    out[:, 1] -= nu * eps * laplacian(grid, ui1h[:, 1])[:, None]
    out[:, 2] -= nu * eps * _blend_lap3(
        exp, -delta * jtrunc(exp.a_trace, k), -delta * jtrunc(exp.b_trace, k)
    )
    d2 = delta**2
    for i in range(2):
        out[:, i] -= nu * eps * exp.terrain.lap3(d2 * jtrunc(exp.uI2h, k)[:, i])
    out[:, 2] -= nu * eps * _blend_lap3(
        exp, d2 * jtrunc(exp.A_bot, k), d2 * jtrunc(exp.A_top, k)
    )
    return out


def _rho3(sol: ApproxSolution) -> np.ndarray:
    """The quadratic coupling groups of orders 2 <= i+j <= 4."""
    exp = sol.expansion
    geom, delta = exp.geom, exp.delta
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    dchi = exp.dchi_at_s(s)
    out = np.zeros((KR + 1, 3, exp.sgrid.ns) + exp.grid.shape)
    k = KR

    # v[i] = delta^i u^i + delta^i u^{c,i} (the stored corrector is weighted)
    v = [
        delta**i * _total_velocity_at_s(exp, i, k) + jtrunc(sol.correctors[i], k)
        for i in range(3)
    ]
    layer = {
        (side, j): exp.layer_velocity_at_s(side, j, k)
        for side in ("bottom", "top")
        for j in range(3)
    }
    dzs = {
        (side, j): _layer_dz_at_s(exp, side, j, k)
        for side in ("bottom", "top")
        for j in range(3)
    }
    wflux = [_normal_flux(geom, vi) for vi in v]

    pairs = [(i, j) for i in range(3) for j in range(3) if 2 <= i + j <= 4]
    for i, j in pairs:
        # delta^i (u^i + u^{c,i}) . grad(delta^j (u^{I,j} + u^{c,j}))
        grad_arg = delta**j * exp.interior_velocity(j, k) + jtrunc(sol.correctors[j], k)
        out += _advect3(exp, v[i], grad_arg, k)
        # chi' delta^{i+j} (u3^i + u3^{c,i}) (u^{T,j} - u^{B,j})
        out += dchi * delta**j * jmul(
            v[i][:, 2, None], layer[("top", j)] - layer[("bottom", j)], k
        )
        # delta^i (u^i + u^{c,i}) . [chi nabla0(delta^j u^{T,j})
        #                             + (1-chi) nabla0(delta^j u^{B,j})]
        out += delta**j * (
            (1.0 - chi) * _dot_grad0_layer(exp, "bottom", v[i], _layer_vals(exp, "bottom", j), j, k)
            + chi * _dot_grad0_layer(exp, "top", v[i], _layer_vals(exp, "top", j), j, k)
        )
    for i, j in [(i, j) for i in range(3) for j in range(3) if 3 <= i + j <= 4]:
        mix = (1.0 - chi) * dzs[("bottom", j)] - chi * dzs[("top", j)]
        out += delta ** (j - 1) * jmul(wflux[i][:, None], mix, k)
    return out


def _layer_vals(exp: Expansion, side: str, order: int) -> np.ndarray:
    if order == 0:
        return exp.sides[side].u0
    return exp.sides[side].u1 if order == 1 else exp.sides[side].u2


def residual_formulas(sol: ApproxSolution) -> ResidualBreakdown:
    """Evaluate rho^{eps,1..3} from their displays and take volume norms."""
    exp = sol.expansion
    r1 = _rho1(sol)
    r2 = _rho2(sol)
    r3 = _rho3(sol)
    norm = lambda r: exp.terrain.l2_volume(r[0, 0], r[0, 1], r[0, 2])
    total = r1 + r2 + r3
    dt_norm = exp.terrain.l2_volume(total[1, 0], total[1, 1], total[1, 2])
    return ResidualBreakdown(
        rho1=r1,
        rho2=r2,
        rho3=r3,
        l2_rho1=norm(r1),
        l2_rho2=norm(r2),
        l2_rho3=norm(r3),
        l2_total=norm(total),
        l2_dt_total=dt_norm,
    )


def residual_direct(sol: ApproxSolution) -> np.ndarray:
    """Apply the rotating Navier-Stokes operator to the assembled fields.

    Independent oracle for the residual groups: 3D derivatives by the terrain
    chain rule, d/dt from the carried jets.
    """
    exp = sol.expansion
    eps, nu = sol.eps, sol.nu
    u = sol.velocity
    out = jshift(u)[:1].copy()
    adv = _advect3(exp, u[:1], u[:1], 0)
    out += adv
    for i in range(3):
        out[:, i] -= nu * eps * exp.terrain.lap3(u[:1, i])
    out += coriolis3(u[:1]) / eps
    out += sol.grad_p[:1] / eps
    return out[0]


# ---------------------------------------------------------------------------
# scaling studies
# ---------------------------------------------------------------------------

def fit_slope(eps_list, values) -> float:
    """Least-squares slope of log(value) against log(eps)."""
    x = np.log(np.asarray(eps_list, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class SweepRow:
    eps: float
    l2_rho1: float
    l2_rho2: float
    l2_rho3: float
    l2_total: float
    l2_dt_total: float


@dataclass
class SweepResult:
    rows: List[SweepRow]
    slope_rho: float
    slope_dt_rho: float
    degenerate: bool = False

    def write_csv(self, path):
        data = np.array(
            [
                [r.eps, r.l2_rho1, r.l2_rho2, r.l2_rho3, r.l2_total, r.l2_dt_total]
                for r in self.rows
            ]
        )
        np.savetxt(
            path,
            data,
            delimiter=",",
            header="eps,l2_rho1,l2_rho2,l2_rho3,l2_total,l2_dt_total",
            comments="",
        )


def sweep(
    state: LimitState,
    eps_list,
    blgrid: Optional[BLGrid] = None,
    sgrid: Optional[SGrid] = None,
    config: Optional[ExpansionConfig] = None,
) -> SweepResult:
    """Residual norms over a decreasing eps list, with fitted slopes."""
    eps_list = list(eps_list)
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be decreasing with at least 3 entries")
    blgrid = blgrid or BLGrid()
    sgrid = sgrid or SGrid()
    rows = []
    for eps in eps_list:
        sol = build_approx(state, eps, blgrid=blgrid, sgrid=sgrid, config=config)
        res = residual_formulas(sol)
        rows.append(
            SweepRow(eps, res.l2_rho1, res.l2_rho2, res.l2_rho3, res.l2_total, res.l2_dt_total)
        )
    totals = [r.l2_total for r in rows]
    if min(totals) <= 0.0:
        return SweepResult(rows, float("nan"), float("nan"), degenerate=True)
    return SweepResult(
        rows,
        fit_slope(eps_list, totals),
        fit_slope(eps_list, [r.l2_dt_total for r in rows]),
    )


def weighted_bl_norms(sol_or_exp, k: int, orders=(0, 1, 2)) -> float:
    """|| d(z)^{1/2} |grad^k u^{BL}| ||_{L2(z; Linf(x,y))}.

    u^{BL} is the chi-blended layer stack; d(z) = min(s, 2-s) is the wall
    distance; for k = 1 the full fixed-z gradient enters through the
    Frobenius norm.
    """
    exp = sol_or_exp.expansion if isinstance(sol_or_exp, ApproxSolution) else sol_or_exp
    s = exp.sgrid.nodes[:, None, None]
    chi = exp.chi_at_s(s)
    ubl = np.zeros((1, 3, exp.sgrid.ns) + exp.grid.shape)
    for order in orders:
        dpow = exp.delta**order
        ubl += dpow * (1.0 - chi) * exp.layer_velocity_at_s("bottom", order, 0)
        ubl += dpow * chi * exp.layer_velocity_at_s("top", order, 0)
    if k == 0:
        mag = np.sqrt(np.sum(ubl[0] ** 2, axis=0))
    elif k == 1:
        acc = 0.0
        for i in range(3):
            g = exp.terrain.grad3(ubl[:, i])
            acc = acc + np.sum(g[0] ** 2, axis=0)
        mag = np.sqrt(acc)
    else:
        raise ValueError("k must be 0 or 1")
    d = np.minimum(exp.sgrid.nodes, 2.0 - exp.sgrid.nodes)
    sup_xy = np.max(mag, axis=(-2, -1))
    return float(np.sqrt(np.dot(exp.sgrid.weights, d * sup_xy**2)))
