"""Surface geometry of the bottom graph z = B(x, y) and admissibility checks.

All pointwise quantities the expansion needs are derived spectrally from B:
gradients, Hessian, direction cosines, det H0 = 1/cos^2(gamma), Gaussian
curvature, the layer-depth map, and the matrices

    H0 = E + grad(B) (x) grad(B),        E1 = [[0, 1], [-1, 0]],
    S  = cos(gamma) * E1 @ H0            (so S @ S = -E),
    Q  = eigenvector matrix diagonalizing cos(gamma)^-1 H0^-1 E1 to (i, -i).

Derivatives of powers of gamma are never formed through grad(gamma) itself
(0/0 at critical points of B); every expression that needs them uses the
regularized fields

    q = grad(cos gamma) / cos gamma       (= -tan(gamma) grad(gamma)),
    drift = (3/2) div(q) + (9/4) |q|^2,

which agree with the raw-angle formulas wherever sin(gamma) != 0 and stay
smooth at flat points.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spectral import Grid2D, ScalarField2D, VectorField2D, deriv, laplacian


@dataclass
class SurfaceGeometry:
    """Pointwise geometric data derived from the bottom surface B."""

    B: ScalarField2D
    Bx: ScalarField2D
    By: ScalarField2D
    Hxx: ScalarField2D
    Hxy: ScalarField2D
    Hyy: ScalarField2D
    cosA: ScalarField2D
    cosB_: ScalarField2D
    cosG: ScalarField2D
    detH0: ScalarField2D
    KG: ScalarField2D
    gradCosG: VectorField2D

    @property
    def grid(self) -> Grid2D:
        return self.B.grid

    # -- raw-array views used heavily by the expansion ------------------

    @property
    def bx(self):
        return self.Bx.values

    @property
    def by(self):
        return self.By.values

    @property
    def cg(self):
        return self.cosG.values

    @property
    def grad_b(self):
        """(2, ny, nx) stack of (Bx, By)."""
        return np.stack([self.Bx.values, self.By.values])

    @property
    def grad_perp_b(self):
        """(2, ny, nx) stack of (-By, Bx)."""
        return np.stack([-self.By.values, self.Bx.values])

    @property
    def q(self):
        """(2, ny, nx) regularized field grad(cos gamma)/cos gamma."""
        return np.stack([self.gradCosG.u / self.cg, self.gradCosG.v / self.cg])

    @property
    def drift(self):
        """Coefficient of Z d/dZ in the order-0 scaled Laplacian.

        Equals (3/4)(1 - 2 cot^2 g)|tan g grad g|^2 - (3/2) tan g lap(g),
        rewritten through cos(gamma) so the cot^2 singularity cancels:
        (3/2) lap(c)/c + (3/4) |grad c|^2 / c^2 with c = cos(gamma).
        """
        c = self.cg
        lap_c = laplacian(self.grid, c)
        g2 = self.gradCosG.u**2 + self.gradCosG.v**2
        return 1.5 * lap_c / c + 0.75 * g2 / c**2

    @property
    def lapB(self):
        return laplacian(self.grid, self.B.values)

    @property
    def h0(self):
        """(2, 2, ny, nx) matrix H0 = E + grad B (x) grad B."""
        bx, by = self.bx, self.by
        return np.stack(
            [
                np.stack([1.0 + bx * bx, bx * by]),
                np.stack([bx * by, 1.0 + by * by]),
            ]
        )

    @property
    def h0_inv(self):
        """(2, 2, ny, nx) inverse of H0 (= cos^2 g * adjugate)."""
        bx, by = self.bx, self.by
        c2 = self.cg**2
        return np.stack(
            [
                np.stack([c2 * (1.0 + by * by), -c2 * bx * by]),
                np.stack([-c2 * bx * by, c2 * (1.0 + bx * bx)]),
            ]
        )

    @property
    def smat(self):
        """(2, 2, ny, nx) matrix S = cos(g) E1 H0; satisfies S@S = -E."""
        bx, by = self.bx, self.by
        c = self.cg
        return np.stack(
            [
                np.stack([c * bx * by, c * (1.0 + by * by)]),
                np.stack([-c * (1.0 + bx * bx), -c * bx * by]),
            ]
        )

    @property
    def qmat(self):
        """(2, 2, ny, nx) complex eigenvector matrix Q of the layer ODE."""
        bx, by = self.bx, self.by
        c = self.cg
        top = c * (1.0 + by * by) + 0j
        return np.stack(
            [
                np.stack([top, top]),
                np.stack([1j - c * bx * by, -1j - c * bx * by]),
            ]
        )

    @property
    def qmat_inv(self):
        """(2, 2, ny, nx) inverse of Q."""
        bx, by = self.bx, self.by
        c = self.cg
        det = -2j * c * (1.0 + by * by)
        return (
            np.stack(
                [
                    np.stack([-1j - c * bx * by, -(c * (1.0 + by * by)) + 0j]),
                    np.stack([-1j + c * bx * by, c * (1.0 + by * by) + 0j]),
                ]
            )
            / det
        )

    def delta_powers(self, eps: float, nu: float, imax: int = 3):
        """Return [1, delta, delta^2, ..., delta^imax] as (ny, nx) arrays."""
        d = bl_depth_values(self, eps, nu)
        return [d**i for i in range(imax + 1)]


def build_geometry(B: ScalarField2D) -> SurfaceGeometry:
    """Derive all geometric fields from B via spectral differentiation."""
    if not np.all(np.isfinite(B.values)):
        raise ValueError("bottom surface B contains non-finite samples")
    grid = B.grid
    b = B.values
    bx = deriv(grid, b, "x")
    by = deriv(grid, b, "y")
    hxx = deriv(grid, b, "x", 2)
    hyy = deriv(grid, b, "y", 2)
    hxy = deriv(grid, bx, "y")
    det_h0 = 1.0 + bx**2 + by**2
    cg = det_h0**-0.5
    cos_a = -bx * cg
    cos_b = -by * cg
    kg = cg**4 * (hxx * hyy - hxy**2)
    grad_cg = VectorField2D(grid, deriv(grid, cg, "x"), deriv(grid, cg, "y"))
    wrap = lambda v: ScalarField2D(grid, v)
    return SurfaceGeometry(
        B=B,
        Bx=wrap(bx),
        By=wrap(by),
        Hxx=wrap(hxx),
        Hxy=wrap(hxy),
        Hyy=wrap(hyy),
        cosA=wrap(cos_a),
        cosB_=wrap(cos_b),
        cosG=wrap(cg),
        detH0=wrap(det_h0),
        KG=wrap(kg),
        gradCosG=grad_cg,
    )


@dataclass
class AdmissibilityReport:
    """Pointwise maxima against the slope/curvature/height/data constraints.

    The pass flags are exactly the comparisons

        max_ratio < 1/8,     max_curv_expr < 8/9,
        max_absB < 1/4,      max_grad_u0 <= sqrt(nu/3),

    the last only when initial data was supplied.
    """

    max_ratio: float
    max_curv_expr: float
    max_absB: float
    max_grad_u0: Optional[float]
    pass_ratio: bool
    pass_curv: bool
    pass_height: bool
    pass_data: Optional[bool]

    @property
    def all_pass(self) -> bool:
        flags = [self.pass_ratio, self.pass_curv, self.pass_height]
        if self.pass_data is not None:
            flags.append(self.pass_data)
        return all(flags)

    def rows(self):
        """(name, value, threshold, pass) tuples for CSV emission."""
        out = [
            ("slope_ratio", self.max_ratio, 1.0 / 8.0, self.pass_ratio),
            ("curvature_expr", self.max_curv_expr, 8.0 / 9.0, self.pass_curv),
            ("abs_height", self.max_absB, 0.25, self.pass_height),
        ]
        if self.max_grad_u0 is not None:
            out.append(("data_w1inf", self.max_grad_u0, None, self.pass_data))
        return out


def w1inf_norm(u0: VectorField2D) -> float:
    """max over the grid of |u| and of the Frobenius norm of grad(u)."""
    g = u0.grid
    mag = np.sqrt(u0.u**2 + u0.v**2)
    gsq = (
        deriv(g, u0.u, "x") ** 2
        + deriv(g, u0.u, "y") ** 2
        + deriv(g, u0.v, "x") ** 2
        + deriv(g, u0.v, "y") ** 2
    )
    return max(float(mag.max()), float(np.sqrt(gsq.max())))


def check_admissibility(
    geom: SurfaceGeometry, nu: float, u0: Optional[VectorField2D] = None
) -> AdmissibilityReport:
    """Evaluate the admissibility constraints by pointwise grid maxima.

    (cos^2 a + cos^2 b)/cos^2 g simplifies to |grad B|^2; both forms agree
    to roundoff and the simplified one is used here.
    """
    if nu <= 0:
        raise ValueError("viscosity scale nu must be positive")
    slope_sq = geom.bx**2 + geom.by**2
    max_ratio = float(slope_sq.max())
    curv = (1.0 + np.sqrt(2.0 / nu)) * np.sqrt(np.abs(geom.KG.values))
    max_curv = float(curv.max())
    max_abs_b = float(np.abs(geom.B.values).max())
    if u0 is not None:
        max_grad = w1inf_norm(u0)
        pass_data = bool(max_grad <= np.sqrt(nu / 3.0))
    else:
        max_grad, pass_data = None, None
    return AdmissibilityReport(
        max_ratio=max_ratio,
        max_curv_expr=max_curv,
        max_absB=max_abs_b,
        max_grad_u0=max_grad,
        pass_ratio=bool(max_ratio < 1.0 / 8.0),
        pass_curv=bool(max_curv < 8.0 / 9.0),
        pass_height=bool(max_abs_b < 0.25),
        pass_data=pass_data,
    )


def bl_depth_values(geom: SurfaceGeometry, eps: float, nu: float) -> np.ndarray:
    if eps <= 0 or nu <= 0:
        raise ValueError("eps and nu must be positive")
    return np.sqrt(nu) * eps * geom.cg**-1.5


def bl_depth(geom: SurfaceGeometry, eps: float, nu: float) -> ScalarField2D:
    """Layer-depth map delta = sqrt(nu) * eps * cos(gamma)^(-3/2)."""
    return ScalarField2D(geom.grid, bl_depth_values(geom, eps, nu))
