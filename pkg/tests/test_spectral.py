"""Spectral-core oracles: exact trig derivatives, eigenfunction solves,
Helmholtz splitting, dealiasing against a fine-grid reference, Parseval."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ekmanlayer.spectral import (
    Grid2D,
    ScalarField2D,
    VectorField2D,
    curl,
    ddx,
    dealias_values,
    deriv,
    divergence,
    hs_norm,
    inv_laplacian,
    l2_norm,
    laplacian,
    leray_project,
)


@pytest.fixture
def grid():
    return Grid2D(64, 64)


def field(grid, fn):
    X, Y = grid.xy()
    return ScalarField2D(grid, fn(X, Y))


class TestGrid:
    def test_invariants(self):
        with pytest.raises(ValueError):
            Grid2D(8, 64)
        with pytest.raises(ValueError):
            Grid2D(63, 64)
        with pytest.raises(ValueError):
            Grid2D(64, 64, Lx=-1.0)
        g = Grid2D(32, 64, Lx=np.pi)
        assert g.hx == pytest.approx(np.pi / 32)
        assert g.shape == (64, 32)

    def test_nonfinite_rejected(self, grid):
        bad = np.zeros(grid.shape)
        bad[3, 5] = np.nan
        with pytest.raises(ValueError):
            ScalarField2D(grid, bad)


class TestDdx:
    def test_sin_x(self, grid):
        f = field(grid, lambda X, Y: np.sin(X))
        X, Y = grid.xy()
        assert np.max(np.abs(ddx(f, "x").values - np.cos(X))) < 1e-12

    def test_constant(self, grid):
        f = field(grid, lambda X, Y: 3.0 + 0.0 * X)
        assert np.max(np.abs(ddx(f, "x").values)) < 1e-13
        assert np.max(np.abs(ddx(f, "y").values)) < 1e-13

    def test_product_mode_y(self, grid):
        # d/dy sin(3x)cos(2y) = -2 sin(3x) sin(2y)
        f = field(grid, lambda X, Y: np.sin(3 * X) * np.cos(2 * Y))
        X, Y = grid.xy()
        exact = -2.0 * np.sin(3 * X) * np.sin(2 * Y)
        assert np.max(np.abs(ddx(f, "y").values - exact)) < 1e-12

    @given(
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, a, b, seed):
        g = Grid2D(32, 32)
        rng = np.random.default_rng(seed)
        f1 = dealias_values(g, rng.standard_normal(g.shape))
        f2 = dealias_values(g, rng.standard_normal(g.shape))
        lhs = deriv(g, a * f1 + b * f2, "x")
        rhs = a * deriv(g, f1, "x") + b * deriv(g, f2, "x")
        scale = max(1.0, np.max(np.abs(rhs)))
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * scale


class TestInvLaplacian:
    def test_eigenfunction(self, grid):
        X, Y = grid.xy()
        f = ScalarField2D(grid, -np.sin(X))
        assert np.max(np.abs(inv_laplacian(f).values - np.sin(X))) < 1e-12

    def test_constant_is_gauge(self, grid):
        f = field(grid, lambda X, Y: np.ones_like(X))
        assert np.max(np.abs(inv_laplacian(f).values)) < 1e-13

    def test_mixed_mode(self, grid):
        # lap sin(2x)cos(3y) = -(4+9) sin(2x)cos(3y)
        X, Y = grid.xy()
        f = ScalarField2D(grid, -13.0 * np.sin(2 * X) * np.cos(3 * Y))
        exact = np.sin(2 * X) * np.cos(3 * Y)
        assert np.max(np.abs(inv_laplacian(f).values - exact)) < 1e-12

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_roundtrip_identity_minus_mean(self, seed):
        g = Grid2D(32, 32)
        rng = np.random.default_rng(seed)
        f = dealias_values(g, rng.standard_normal(g.shape))
        f -= f.mean()
        back = inv_laplacian(ScalarField2D(g, laplacian(g, f))).values
        assert np.max(np.abs(back - f)) < 1e-10 * max(1.0, np.max(np.abs(f)))


class TestLeray:
    def test_pure_gradient_annihilated(self, grid):
        X, Y = grid.xy()
        w = VectorField2D(grid, np.zeros(grid.shape), -np.sin(Y))  # grad(cos y)
        p = leray_project(w)
        assert np.max(np.abs(p.u)) < 1e-12
        assert np.max(np.abs(p.v)) < 1e-12

    def test_solenoidal_unchanged(self, grid):
        X, Y = grid.xy()
        w = VectorField2D(grid, np.sin(Y), np.zeros(grid.shape))
        p = leray_project(w)
        assert np.max(np.abs(p.u - w.u)) < 1e-12
        assert np.max(np.abs(p.v - w.v)) < 1e-12

    def test_siny_sinx_is_divergence_free(self, grid):
        # div (sin y, sin x) = 0, so the projection is the identity on it
        X, Y = grid.xy()
        w = VectorField2D(grid, np.sin(Y), np.sin(X))
        p = leray_project(w)
        assert np.max(np.abs(p.u - w.u)) < 1e-12
        assert np.max(np.abs(p.v - w.v)) < 1e-12

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_idempotent_and_solenoidal(self, seed):
        g = Grid2D(32, 32)
        rng = np.random.default_rng(seed)
        w = VectorField2D(g, rng.standard_normal(g.shape), rng.standard_normal(g.shape))
        p = leray_project(w)
        pp = leray_project(p)
        norm = l2_norm(g, w.u, w.v)
        assert np.max(np.abs(pp.u - p.u)) < 1e-12 * max(1.0, norm)
        div = divergence(p).values
        assert l2_norm(g, div) <= 1e-12 * max(1.0, norm)
        # the removed part is a gradient: its curl vanishes
        ru, rv = w.u - p.u, w.v - p.v
        assert l2_norm(g, curl(VectorField2D(g, ru, rv)).values) < 1e-10 * max(1.0, norm)


class TestDealias:
    def test_band_limited_unchanged(self, grid):
        X, Y = grid.xy()
        f = np.sin(5 * X) * np.cos(7 * Y)
        assert np.max(np.abs(dealias_values(grid, f) - f)) < 1e-12

    def test_nyquist_zeroed(self, grid):
        X, Y = grid.xy()
        f = np.cos((grid.nx // 2) * X)
        assert np.max(np.abs(dealias_values(grid, f))) < 1e-12

    def test_product_vs_fine_grid(self):
        # sin(20x)^2 on 64 points aliases; the dealiased pipeline must match
        # the exact product restricted to the coarse grid's kept modes.
        coarse = Grid2D(64, 64)
        fine = Grid2D(256, 256)
        Xc, _ = coarse.xy()
        Xf, _ = fine.xy()
        prod_c = dealias_values(coarse, np.sin(20 * Xc) ** 2)
        # exact: (1 - cos 40x)/2; mode 40 is beyond the 2/3 cutoff (|k|<21.33)
        exact = 0.5 * np.ones_like(Xc)
        assert np.max(np.abs(prod_c - exact)) < 1e-12


class TestNorms:
    def test_parseval(self, grid):
        rng = np.random.default_rng(7)
        f = rng.standard_normal(grid.shape)
        grid_norm = l2_norm(grid, f)
        spec_norm = hs_norm(grid, [f], 0.0)
        assert abs(grid_norm - spec_norm) < 1e-12 * grid_norm

    def test_h2_multiplier_on_siny(self, grid):
        # |k|^2 = 1 on the sin(y) mode, so Hs multiplies L2 by 2^(s/2)
        X, Y = grid.xy()
        f = np.sin(Y)
        base = l2_norm(grid, f)
        assert hs_norm(grid, [f], 2.0) == pytest.approx(2.0 * base, rel=1e-12)
        assert base == pytest.approx(np.sqrt(2.0 * np.pi**2), rel=1e-12)
