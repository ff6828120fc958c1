"""Geometry oracles: symbolic differentiation checks at sample points,
admissibility thresholds on catalog surfaces, depth-map arithmetic."""

import numpy as np
import pytest

from ekmanlayer.catalog import make_initial_data, make_surface, surface_geometry
from ekmanlayer.geometry import bl_depth, build_geometry, check_admissibility
from ekmanlayer.spectral import Grid2D, ScalarField2D, deriv


@pytest.fixture
def grid():
    return Grid2D(64, 64)


def nearest_index(grid, x, y):
    ix = int(round(x / grid.hx)) % grid.nx
    iy = int(round(y / grid.hy)) % grid.ny
    return iy, ix


class TestBuildGeometry:
    def test_flat(self, grid):
        geom = build_geometry(make_surface("flat", grid))
        assert np.allclose(geom.cg, 1.0, atol=1e-14)
        assert np.max(np.abs(geom.KG.values)) < 1e-13
        for h in (geom.Hxx, geom.Hxy, geom.Hyy):
            assert np.max(np.abs(h.values)) < 1e-13

    def test_eggcarton_critical_point(self, grid):
        # B = 0.2 sin x sin y at (pi/2, pi/2): grad B = 0, cos g = 1,
        # Hxx = Hyy = -0.2, Hxy = 0, K_G = 0.04
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        iy, ix = nearest_index(grid, np.pi / 2, np.pi / 2)
        assert abs(geom.bx[iy, ix]) < 1e-12
        assert abs(geom.by[iy, ix]) < 1e-12
        assert geom.cg[iy, ix] == pytest.approx(1.0, abs=1e-12)
        assert geom.Hxx.values[iy, ix] == pytest.approx(-0.2, abs=1e-12)
        assert geom.Hyy.values[iy, ix] == pytest.approx(-0.2, abs=1e-12)
        assert abs(geom.Hxy.values[iy, ix]) < 1e-12
        assert geom.KG.values[iy, ix] == pytest.approx(0.04, abs=1e-12)

    def test_ridge_at_origin(self, grid):
        # B = 0.2 sin x at x = 0: Bx = 0.2, cos g = 1/sqrt(1.04), K_G = 0
        geom = surface_geometry("ridge", grid, amp=0.2)
        iy, ix = nearest_index(grid, 0.0, 0.0)
        assert geom.bx[iy, ix] == pytest.approx(0.2, abs=1e-12)
        assert geom.cg[iy, ix] == pytest.approx(1.0 / np.sqrt(1.04), rel=1e-12)
        assert abs(geom.KG.values[iy, ix]) < 1e-12

    def test_rejects_nonfinite(self, grid):
        values = np.zeros(grid.shape)
        values[0, 0] = np.inf
        with pytest.raises(ValueError):
            ScalarField2D(grid, values)

    def test_normal_vector_identities(self, grid):
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        # cos a = -Bx cos g, cos b = -By cos g
        assert np.max(np.abs(geom.cosA.values + geom.bx * geom.cg)) < 1e-12
        assert np.max(np.abs(geom.cosB_.values + geom.by * geom.cg)) < 1e-12
        # det H0 * cos^2 g = 1
        assert np.max(np.abs(geom.detH0.values * geom.cg**2 - 1.0)) < 1e-10
        # K_G = cos^4 g * det H
        det_h = geom.Hxx.values * geom.Hyy.values - geom.Hxy.values**2
        assert np.max(np.abs(geom.KG.values - geom.cg**4 * det_h)) < 1e-10
        # 0 < cos g <= 1
        assert np.all(geom.cg > 0) and np.all(geom.cg <= 1.0 + 1e-15)

    def test_matrix_identities(self, grid):
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        s = geom.smat
        # S @ S = -E pointwise
        ss00 = s[0, 0] * s[0, 0] + s[0, 1] * s[1, 0]
        ss01 = s[0, 0] * s[0, 1] + s[0, 1] * s[1, 1]
        assert np.max(np.abs(ss00 + 1.0)) < 1e-12
        assert np.max(np.abs(ss01)) < 1e-12
        # H0 @ H0^{-1} = E pointwise
        h0, h0i = geom.h0, geom.h0_inv
        e00 = h0[0, 0] * h0i[0, 0] + h0[0, 1] * h0i[1, 0]
        e01 = h0[0, 0] * h0i[0, 1] + h0[0, 1] * h0i[1, 1]
        assert np.max(np.abs(e00 - 1.0)) < 1e-12
        assert np.max(np.abs(e01)) < 1e-12
        # Q diag(i,-i) Q^{-1} equals cos(g)^-1 H0^-1 E1 (= S)
        qm, qi = geom.qmat, geom.qmat_inv
        lam = np.array([1j, -1j])
        rec00 = qm[0, 0] * lam[0] * qi[0, 0] + qm[0, 1] * lam[1] * qi[1, 0]
        rec10 = qm[1, 0] * lam[0] * qi[0, 0] + qm[1, 1] * lam[1] * qi[1, 0]
        rec01 = qm[0, 0] * lam[0] * qi[0, 1] + qm[0, 1] * lam[1] * qi[1, 1]
        assert np.max(np.abs(rec00 - s[0, 0])) < 1e-11
        assert np.max(np.abs(rec10 - s[1, 0])) < 1e-11
        assert np.max(np.abs(rec01 - s[0, 1])) < 1e-11

    def test_grad_log_cos_matches_angle_formula_away_from_flat_points(self, grid):
        # q = grad(cos g)/cos g must equal -tan(g) grad(g)
        # = -cos^2(g) H gradB wherever sin g != 0 (and everywhere by continuity)
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        q = geom.q
        hgb_x = geom.Hxx.values * geom.bx + geom.Hxy.values * geom.by
        hgb_y = geom.Hxy.values * geom.bx + geom.Hyy.values * geom.by
        assert np.max(np.abs(q[0] + geom.cg**2 * hgb_x)) < 1e-10
        assert np.max(np.abs(q[1] + geom.cg**2 * hgb_y)) < 1e-10

    def test_gradcosg_matches_finite_differences(self):
        grid = Grid2D(128, 128)
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        c = geom.cg
        fd = (
            -np.roll(c, -2, axis=1)
            + 8 * np.roll(c, -1, axis=1)
            - 8 * np.roll(c, 1, axis=1)
            + np.roll(c, 2, axis=1)
        ) / (12 * grid.hx)
        assert np.max(np.abs(fd - geom.gradCosG.u)) < 5 * grid.hx**4


class TestAdmissibility:
    def test_flat_passes(self, grid):
        geom = surface_geometry("flat", grid)
        rep = check_admissibility(geom, nu=1.0)
        assert rep.max_ratio == 0.0
        assert rep.max_curv_expr < 1e-12
        assert rep.all_pass

    def test_eggcarton_02(self, grid):
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        rep = check_admissibility(geom, nu=1.0)
        assert rep.max_ratio == pytest.approx(0.04, abs=1e-10)
        # max curvature expression (1+sqrt2) * max sqrt|K_G| = (1+sqrt2)*0.2
        assert rep.max_curv_expr == pytest.approx((1 + np.sqrt(2)) * 0.2, abs=1e-8)
        assert rep.all_pass

    def test_eggcarton_05_fails_slope(self, grid):
        geom = surface_geometry("eggcarton", grid, amp=0.5)
        rep = check_admissibility(geom, nu=1.0)
        assert rep.max_ratio == pytest.approx(0.25, abs=1e-10)
        assert not rep.pass_ratio
        assert not rep.all_pass

    def test_ratio_two_ways(self, grid):
        # via direction cosines vs via |grad B|^2
        geom = surface_geometry("eggcarton", grid, amp=0.3)
        via_cos = (geom.cosA.values**2 + geom.cosB_.values**2) / geom.cg**2
        via_grad = geom.bx**2 + geom.by**2
        assert np.max(np.abs(via_cos - via_grad)) < 1e-10 * max(1.0, via_grad.max())

    def test_data_constraint(self, grid):
        geom = surface_geometry("flat", grid)
        u0 = make_initial_data("shear", geom, amp=0.5)
        rep = check_admissibility(geom, nu=1.0, u0=u0)
        assert rep.max_grad_u0 == pytest.approx(0.5, rel=1e-10)
        assert rep.pass_data  # 0.5 <= sqrt(1/3) = 0.577...
        rep2 = check_admissibility(geom, nu=0.5, u0=u0)
        assert not rep2.pass_data  # 0.5 > sqrt(0.5/3)


class TestDepth:
    def test_flat(self, grid):
        geom = surface_geometry("flat", grid)
        d = bl_depth(geom, eps=0.05, nu=1.0)
        assert np.allclose(d.values, 0.05, atol=1e-14)

    def test_ridge_point_value(self, grid):
        geom = surface_geometry("ridge", grid, amp=0.2)
        d = bl_depth(geom, eps=0.05, nu=1.0)
        iy, ix = nearest_index(grid, 0.0, 0.0)
        assert d.values[iy, ix] == pytest.approx(0.05 * 1.04**0.75, rel=1e-10)

    def test_sqrt_nu_factor(self, grid):
        geom = surface_geometry("flat", grid)
        d = bl_depth(geom, eps=0.1, nu=4.0)
        assert np.allclose(d.values, 0.2, atol=1e-14)

    def test_invariant_under_constant_shift(self, grid):
        b1 = make_surface("eggcarton", grid, amp=0.2)
        b2 = ScalarField2D(grid, b1.values + 0.03)
        d1 = bl_depth(build_geometry(b1), 0.05, 1.0)
        d2 = bl_depth(build_geometry(b2), 0.05, 1.0)
        assert np.max(np.abs(d1.values - d2.values)) < 1e-13

    def test_positive(self, grid):
        geom = surface_geometry("eggcarton", grid, amp=0.2)
        assert np.all(bl_depth(geom, 0.025, 1.0).values > 0)
