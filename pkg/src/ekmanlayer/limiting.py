"""The 2D damped-Euler limiting system and its decay diagnostics.

The interior flow solves

    du/dt + (u . grad) u + sqrt(nu/2) (H0 - E1) u + grad p = 0,
    div u = 0,

on the torus, with H0 = E + grad(B) (x) grad(B) and E1 = [[0,1],[-1,0]].
Time stepping is classical RK4 with re-projection; the advection term is
dealiased by the 2/3 rule.  A configuration switch exposes the
variable-coefficient damping variant sqrt(nu/(2 cos g)) (H0 - E1/cos g) for
comparison runs; the constant-coefficient form is the default.

Every time derivative consumed downstream comes from `tendency` /
`tendency_jet`, never from finite differencing in time.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import SurfaceGeometry
from .spectral import (
    Grid2D,
    ScalarField2D,
    VectorField2D,
    curl,
    dealias_values,
    deriv,
    hs_norm as _hs_norm_raw,
    inv_laplacian_values,
    l2_norm,
    leray_values,
)


def _damping_apply(geom: SurfaceGeometry, nu: float, u, v, variant: str):
    """Apply the damping matrix to (u, v) pointwise."""
    bx, by, c = geom.bx, geom.by, geom.cg
    if variant == "constant":
        coef = math.sqrt(nu / 2.0)
        du = coef * ((1.0 + bx * bx) * u + bx * by * v - v)
        dv = coef * (bx * by * u + (1.0 + by * by) * v + u)
    elif variant == "variable":
        coef = np.sqrt(nu / (2.0 * c))
        du = coef * ((1.0 + bx * bx) * u + bx * by * v - v / c)
        dv = coef * (bx * by * u + (1.0 + by * by) * v + u / c)
    else:
        raise ValueError(f"unknown damping variant {variant!r}")
    return du, dv


@dataclass
class LimitState:
    """Snapshot of the limiting system: horizontal velocity at time t."""

    t: float
    u: VectorField2D
    geom: SurfaceGeometry
    nu: float
    damping: str = "constant"

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    def projected(self) -> "LimitState":
        pu, pv = leray_values(self.grid, self.u.u, self.u.v)
        return LimitState(self.t, VectorField2D(self.grid, pu, pv), self.geom, self.nu, self.damping)


def _nonlinear(grid: Grid2D, au, av, bu, bv):
    """Dealiased advection (a . grad) b, raw components."""
    bux, buy = deriv(grid, bu, "x"), deriv(grid, bu, "y")
    bvx, bvy = deriv(grid, bv, "x"), deriv(grid, bv, "y")
    nu_ = dealias_values(grid, au * bux + av * buy)
    nv_ = dealias_values(grid, au * bvx + av * bvy)
    return nu_, nv_


def tendency(state: LimitState) -> VectorField2D:
    """Divergence-free du/dt = -P[(u.grad)u + sqrt(nu/2)(H0 - E1)u]."""
    g = state.grid
    uu, vv = state.u.u, state.u.v
    nu_, nv_ = _nonlinear(g, uu, vv, uu, vv)
    du, dv = _damping_apply(state.geom, state.nu, uu, vv, state.damping)
    pu, pv = leray_values(g, nu_ + du, nv_ + dv)
    return VectorField2D(g, -pu, -pv)


def tendency_jet(state: LimitState, order: int) -> List[np.ndarray]:
    """Time-derivative jet [u, du/dt, ..., d^order u/dt^order] of the solution.

    Each entry is a (2, ny, nx) stack.  Derived by repeated differentiation
    of the projected equation with Leibniz products, so no time differencing
    enters anywhere downstream.
    """
    g = state.grid
    jets = [np.stack([state.u.u, state.u.v])]
    for k in range(order):
        acc_u = np.zeros(g.shape)
        acc_v = np.zeros(g.shape)
        for j in range(k + 1):
            cjk = math.comb(k, j)
            aj = jets[j]
            bk = jets[k - j]
            nu_, nv_ = _nonlinear(g, aj[0], aj[1], bk[0], bk[1])
            acc_u += cjk * nu_
            acc_v += cjk * nv_
        du, dv = _damping_apply(state.geom, state.nu, jets[k][0], jets[k][1], state.damping)
        pu, pv = leray_values(g, acc_u + du, acc_v + dv)
        jets.append(np.stack([-pu, -pv]))
    return jets


def cfl_limit(state: LimitState) -> float:
    """Largest admissible dt: 0.5 * h / max|u| (inf if the flow is at rest)."""
    speed = float(np.max(np.hypot(state.u.u, state.u.v)))
    h = min(state.grid.hx, state.grid.hy)
    if speed == 0.0:
        return math.inf
    return 0.5 * h / speed


def step(state: LimitState, dt: float) -> LimitState:
    """One classical RK4 step; output re-projected; CFL enforced."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = cfl_limit(state)
    if dt > limit:
        raise ValueError(f"CFL violation: dt={dt} exceeds bound {limit:.6g}")
    g = state.grid

    def rhs(u, v):
        st = LimitState(state.t, VectorField2D(g, u, v), state.geom, state.nu, state.damping)
        ten = tendency(st)
        return ten.u, ten.v

    u0, v0 = state.u.u, state.u.v
    k1u, k1v = rhs(u0, v0)
    k2u, k2v = rhs(u0 + 0.5 * dt * k1u, v0 + 0.5 * dt * k1v)
    k3u, k3v = rhs(u0 + 0.5 * dt * k2u, v0 + 0.5 * dt * k2v)
    k4u, k4v = rhs(u0 + dt * k3u, v0 + dt * k3v)
    un = u0 + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    vn = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    un, vn = leray_values(g, un, vn)
    return LimitState(state.t + dt, VectorField2D(g, un, vn), state.geom, state.nu, state.damping)


def recover_pressure(state: LimitState) -> ScalarField2D:
    """Zero-mean p with  tendency + (u.grad)u + damping + grad p = 0."""
    g = state.grid
    uu, vv = state.u.u, state.u.v
    nu_, nv_ = _nonlinear(g, uu, vv, uu, vv)
    du, dv = _damping_apply(state.geom, state.nu, uu, vv, state.damping)
    fx, fy = nu_ + du, nv_ + dv
    div = deriv(g, fx, "x") + deriv(g, fy, "y")
    return ScalarField2D(g, -inv_laplacian_values(g, div))


def vertical_component(state: LimitState) -> ScalarField2D:
    """u3 = grad(B) . u_h, the surface-induced vertical velocity."""
    return ScalarField2D(
        state.grid, state.geom.bx * state.u.u + state.geom.by * state.u.v
    )


def vorticity(state: LimitState) -> ScalarField2D:
    return curl(state.u)


def tilde_fields(state: LimitState, u0: VectorField2D):
    """Deviation from pure exponential decay of the initial data.

    Returns (u_tilde, omega_tilde) with
    u_tilde = u(t) - exp(-sqrt(nu/2) t) u0 and the curl analogue.
    """
    decay = math.exp(-math.sqrt(state.nu / 2.0) * state.t)
    g = state.grid
    ut = VectorField2D(g, state.u.u - decay * u0.u, state.u.v - decay * u0.v)
    om = curl(state.u).values - decay * curl(u0).values
    return ut, ScalarField2D(g, om)


@dataclass
class CompatibilityResult:
    residual: float
    phi: ScalarField2D
    p0: ScalarField2D


def compatibility_residual(
    u0: VectorField2D, geom: SurfaceGeometry, nu: float
) -> CompatibilityResult:
    """L2 size of P[(u0.grad)u0 + sqrt(nu/2)(gradB (x) gradB) u0].

    Zero exactly when a pressure p0 closes the compatibility condition; the
    potential phi with E1 u0 = grad(phi) and the candidate p0 are returned
    alongside.
    """
    g = u0.grid
    nu_, nv_ = _nonlinear(g, u0.u, u0.v, u0.u, u0.v)
    coef = math.sqrt(nu / 2.0)
    bdot = geom.bx * u0.u + geom.by * u0.v
    fx = nu_ + coef * geom.bx * bdot
    fy = nv_ + coef * geom.by * bdot
    pu, pv = leray_values(g, fx, fy)
    res = l2_norm(g, pu, pv)
    # E1 u0 = (v, -u); div(E1 u0) equals the vorticity for solenoidal u0
    phi = inv_laplacian_values(g, deriv(g, u0.v, "x") - deriv(g, u0.u, "y"))
    p0 = -inv_laplacian_values(g, deriv(g, fx, "x") + deriv(g, fy, "y"))
    return CompatibilityResult(res, ScalarField2D(g, phi), ScalarField2D(g, p0))


def hs_norm(f: VectorField2D, s: float) -> float:
    """Spectral Sobolev norm with multiplier (1 + |k|^2)^(s/2)."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    return _hs_norm_raw(f.grid, [f.u, f.v], s)


@dataclass
class DecayTrace:
    """Time series of the decay diagnostics along a run."""

    times: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    enstrophy: List[float] = field(default_factory=list)
    tilde_energy: List[float] = field(default_factory=list)
    tilde_ens_h1: List[float] = field(default_factory=list)

    def append(self, state: LimitState, u0: VectorField2D):
        g = state.grid
        om = curl(state.u)
        ut, omt = tilde_fields(state, u0)
        self.times.append(state.t)
        self.energy.append(l2_norm(g, state.u.u, state.u.v) ** 2)
        self.enstrophy.append(l2_norm(g, om.values) ** 2)
        self.tilde_energy.append(l2_norm(g, ut.u, ut.v) ** 2)
        self.tilde_ens_h1.append(_hs_norm_raw(g, [omt.values], 1.0) ** 2)

    def write_csv(self, path):
        rows = np.column_stack(
            [self.times, self.energy, self.enstrophy, self.tilde_energy, self.tilde_ens_h1]
        )
        np.savetxt(
            path,
            rows,
            delimiter=",",
            header="t,energy,enstrophy,tilde_energy,tilde_ens_h1",
            comments="",
        )


def evolve(
    state: LimitState,
    t_end: float,
    dt: float,
    u0: Optional[VectorField2D] = None,
    trace_every: int = 10,
):
    """March to t_end with fixed dt; returns (final state, DecayTrace)."""
    if u0 is None:
        u0 = state.u
    trace = DecayTrace()
    trace.append(state, u0)
    nsteps = int(round((t_end - state.t) / dt))
    for i in range(nsteps):
        state = step(state, dt)
        if (i + 1) % trace_every == 0 or i == nsteps - 1:
            trace.append(state, u0)
    return state, trace
