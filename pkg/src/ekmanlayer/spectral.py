"""Periodic-grid field types and FFT-based spectral calculus.

Everything downstream (geometry, the 2D limiting solver, the boundary-layer
expansion) runs on a doubly-periodic torus sampled on a uniform grid.  This
module provides the grid/field containers plus spectrally exact derivatives,
the inverse Laplacian (zero mode treated as gauge), the Leray projection,
2/3-rule dealiasing, and grid/Sobolev norms.

Array convention: samples are row-major ``(ny, nx)`` with x along axis 1 and
y along axis 0.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid2D:
    """Uniform torus grid, periods (Lx, Ly), at least 16 points per axis."""

    nx: int
    ny: int
    Lx: float = 2.0 * np.pi
    Ly: float = 2.0 * np.pi

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise ValueError(f"grid must have nx, ny >= 16, got {self.nx}x{self.ny}")
        if self.nx % 2 or self.ny % 2:
            raise ValueError(f"grid sizes must be even, got {self.nx}x{self.ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("torus periods must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def xy(self):
        """Return (X, Y) coordinate arrays of shape (ny, nx)."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="xy")

    def wavenumbers(self):
        """Return (KX, KY) wavenumber arrays of shape (ny, nx)."""
        kx = 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.hx)
        ky = 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.hy)
        return np.meshgrid(kx, ky, indexing="xy")

    def k_squared(self):
        kx, ky = self.wavenumbers()
        return kx**2 + ky**2

    def dealias_mask(self):
        """2/3-rule mask: True on modes kept for quadratic products."""
        kx, ky = self.wavenumbers()
        kx_max = np.pi * self.nx / self.Lx
        ky_max = np.pi * self.ny / self.Ly
        return (np.abs(kx) < (2.0 / 3.0) * kx_max) & (np.abs(ky) < (2.0 / 3.0) * ky_max)


def _check_finite(values, what: str):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite samples")


@dataclass
class ScalarField2D:
    """Real scalar samples on a Grid2D, shape (ny, nx)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        _check_finite(self.values, "ScalarField2D")


@dataclass
class VectorField2D:
    """Real 2-component samples (u, v) on a Grid2D."""

    grid: Grid2D
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        for comp in (self.u, self.v):
            if comp.shape != self.grid.shape:
                raise ValueError("component shape does not match grid")
        _check_finite(self.u, "VectorField2D.u")
        _check_finite(self.v, "VectorField2D.v")

    def stack(self) -> np.ndarray:
        return np.stack([self.u, self.v])


# ---------------------------------------------------------------------------
# raw-array spectral operators
#
# The low-level functions operate on plain (..., ny, nx) arrays so the
# boundary-layer modules can reuse them on stacked (component, level) data.
# The trailing two axes are always (y, x).
# ---------------------------------------------------------------------------

from functools import lru_cache


@lru_cache(maxsize=8)
def _spectral_tables(nx: int, ny: int, Lx: float, Ly: float):
    """Cached wavenumber tables for the half-spectrum (rfft2) layout.

    The Nyquist mode is zeroed: odd derivatives of it are not representable
    on a real grid, and keeping it breaks the projector algebra on noise.
    """
    kx = 2.0 * np.pi * np.fft.rfftfreq(nx, d=Lx / nx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=Ly / ny)
    kx_max = np.pi * nx / Lx
    ky_max = np.pi * ny / Ly
    mask = (np.abs(kx[None, :]) < (2.0 / 3.0) * kx_max) & (
        np.abs(ky[:, None]) < (2.0 / 3.0) * ky_max
    )
    kx[-1] = 0.0
    ky[ny // 2] = 0.0
    kxg, kyg = kx[None, :], ky[:, None]
    k2 = kxg**2 + kyg**2
    gauge = k2 == 0.0
    k2safe = np.where(gauge, 1.0, k2)
    return kxg, kyg, k2, gauge, k2safe, mask


def _tables(grid: Grid2D):
    return _spectral_tables(grid.nx, grid.ny, grid.Lx, grid.Ly)


def _kx_ky(grid: Grid2D):
    kxg, kyg, *_ = _tables(grid)
    return kxg, kyg


def _to_half_spec(grid: Grid2D, values: np.ndarray):
    """rfft2 for real data, with a full-fft fallback for complex input."""
    if np.iscomplexobj(values):
        return None  # caller falls back to full transforms
    return np.fft.rfft2(values, axes=(-2, -1))


def deriv(grid: Grid2D, values: np.ndarray, axis: str, order: int = 1) -> np.ndarray:
    """Spectral d^order/d{axis}^order of (..., ny, nx) samples."""
    kx, ky = _kx_ky(grid)
    k = kx if axis == "x" else ky if axis == "y" else None
    if k is None:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    if np.iscomplexobj(values):
        re = deriv(grid, np.ascontiguousarray(values.real), axis, order)
        im = deriv(grid, np.ascontiguousarray(values.imag), axis, order)
        return re + 1j * im
    spec = np.fft.rfft2(values, axes=(-2, -1))
    spec *= (1j * k) ** order
    return np.fft.irfft2(spec, s=values.shape[-2:], axes=(-2, -1))


def deriv_both(grid: Grid2D, values: np.ndarray):
    """(d/dx f, d/dy f) sharing one forward transform."""
    kx, ky = _kx_ky(grid)
    spec = np.fft.rfft2(values, axes=(-2, -1))
    shape = values.shape[-2:]
    fx = np.fft.irfft2(spec * (1j * kx), s=shape, axes=(-2, -1))
    fy = np.fft.irfft2(spec * (1j * ky), s=shape, axes=(-2, -1))
    return fx, fy


def laplacian(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """Spectral horizontal Laplacian of (..., ny, nx) samples."""
    _, _, k2, *_ = _tables(grid)
    spec = np.fft.rfft2(values, axes=(-2, -1))
    spec *= -k2
    return np.fft.irfft2(spec, s=values.shape[-2:], axes=(-2, -1))


def inv_laplacian_values(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """Solve lap(g) = f - mean(f) with mean(g) = 0, on raw samples.

    Modes with vanishing (Nyquist-zeroed) wavenumber are gauge and removed.
    """
    _, _, k2, gauge, k2safe, _ = _tables(grid)
    spec = np.fft.rfft2(values, axes=(-2, -1))
    spec = np.where(gauge, 0.0, -spec / k2safe)
    return np.fft.irfft2(spec, s=values.shape[-2:], axes=(-2, -1))


def dealias_values(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """Zero all modes at or above 2/3 of Nyquist (raw samples in, out)."""
    *_, mask = _tables(grid)
    spec = np.fft.rfft2(values, axes=(-2, -1)) * mask
    return np.fft.irfft2(spec, s=values.shape[-2:], axes=(-2, -1))


def dealiased_product(grid: Grid2D, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise product with 2/3-rule dealiasing applied to the result."""
    return dealias_values(grid, a * b)


def leray_values(grid: Grid2D, u: np.ndarray, v: np.ndarray):
    """Leray projection of raw (u, v) samples onto divergence-free fields."""
    div = deriv(grid, u, "x") + deriv(grid, v, "y")
    phi = inv_laplacian_values(grid, div)
    return u - deriv(grid, phi, "x"), v - deriv(grid, phi, "y")


# ---------------------------------------------------------------------------
# field-level wrappers
# ---------------------------------------------------------------------------

def ddx(f: ScalarField2D, axis: str) -> ScalarField2D:
    """Spectral derivative of f along 'x' or 'y'; exact for band-limited f."""
    return ScalarField2D(f.grid, deriv(f.grid, f.values, axis))


def inv_laplacian(f: ScalarField2D) -> ScalarField2D:
    """Zero-mean g with lap(g) = f - mean(f); the zero mode is gauge."""
    return ScalarField2D(f.grid, inv_laplacian_values(f.grid, f.values))


def leray_project(w: VectorField2D) -> VectorField2D:
    """Project onto divergence-free fields; w minus the result is a gradient."""
    u, v = leray_values(w.grid, w.u, w.v)
    return VectorField2D(w.grid, u, v)


def dealias(spec: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Apply the 2/3-rule mask to a (..., ny, nx) spectrum."""
    return spec * grid.dealias_mask()


def divergence(w: VectorField2D) -> ScalarField2D:
    return ScalarField2D(w.grid, deriv(w.grid, w.u, "x") + deriv(w.grid, w.v, "y"))


def curl(w: VectorField2D) -> ScalarField2D:
    """Scalar vorticity: dv/dx - du/dy (= perp-grad dot w)."""
    return ScalarField2D(w.grid, deriv(w.grid, w.v, "x") - deriv(w.grid, w.u, "y"))


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def l2_norm(grid: Grid2D, *components: np.ndarray) -> float:
    """Grid L2 norm sqrt(sum over components of integral comp^2 dx dy)."""
    total = 0.0
    for comp in components:
        total += float(np.sum(np.square(comp)))
    return np.sqrt(total * grid.cell_area)


def linf_norm(*components: np.ndarray) -> float:
    return max(float(np.max(np.abs(c))) for c in components)


def hs_norm(grid: Grid2D, components, s: float) -> float:
    """Sobolev norm via the multiplier (1 + |k|^2)^(s/2), Parseval-consistent.

    `components` is an iterable of (ny, nx) arrays; their squared norms add.
    For s = 0 this reproduces `l2_norm` to roundoff.
    """
    if np.isscalar(components) or getattr(components, "ndim", 0) == 2:
        components = [components]
    k2 = grid.k_squared()
    weight = (1.0 + k2) ** s
    scale = grid.cell_area / (grid.nx * grid.ny)
    total = 0.0
    for comp in components:
        spec = np.fft.fft2(np.asarray(comp))
        total += float(np.sum(weight * np.abs(spec) ** 2)) * scale
    return np.sqrt(total)


def mean(grid: Grid2D, values: np.ndarray) -> float:
    return float(np.mean(values))
