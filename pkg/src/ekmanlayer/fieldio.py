"""Binary field dumps and CSV export.

Dump layout (little-endian):

  2D: magic "EKA1", u32 nx, u32 ny, f64 Lx, f64 Ly, then row-major f64
      payload of shape (ny, nx).
  3D: same header extended by u32 nlev and the f64 level-node array (layer
      coordinate Z or terrain coordinate s), then f64 payload of shape
      (nlev, ny, nx).

CSV export writes one row per grid point: ``x,y,value``.
"""

import struct

import numpy as np

from .spectral import Grid2D, ScalarField2D

MAGIC = b"EKA1"


def write_field2d(path, field: ScalarField2D) -> None:
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", g.nx, g.ny))
        fh.write(struct.pack("<dd", g.Lx, g.Ly))
        fh.write(field.values.astype("<f8").tobytes())


def read_field2d(path) -> ScalarField2D:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        nx, ny = struct.unpack("<II", fh.read(8))
        Lx, Ly = struct.unpack("<dd", fh.read(16))
        payload = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8")
    grid = Grid2D(nx=nx, ny=ny, Lx=Lx, Ly=Ly)
    return ScalarField2D(grid, payload.reshape(ny, nx).copy())


def write_field3d(path, grid: Grid2D, levels: np.ndarray, values: np.ndarray) -> None:
    """Dump a (nlev, ny, nx) array with its level-node coordinates."""
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (levels.size, grid.ny, grid.nx):
        raise ValueError(f"3D payload shape {values.shape} inconsistent with header")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", grid.nx, grid.ny))
        fh.write(struct.pack("<dd", grid.Lx, grid.Ly))
        fh.write(struct.pack("<I", levels.size))
        fh.write(levels.astype("<f8").tobytes())
        fh.write(values.astype("<f8").tobytes())


def read_field3d(path):
    """Return (grid, levels, values) from a 3D dump."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        nx, ny = struct.unpack("<II", fh.read(8))
        Lx, Ly = struct.unpack("<dd", fh.read(16))
        (nlev,) = struct.unpack("<I", fh.read(4))
        levels = np.frombuffer(fh.read(8 * nlev), dtype="<f8").copy()
        values = np.frombuffer(fh.read(8 * nlev * nx * ny), dtype="<f8")
    grid = Grid2D(nx=nx, ny=ny, Lx=Lx, Ly=Ly)
    return grid, levels, values.reshape(nlev, ny, nx).copy()


def write_csv(path, field: ScalarField2D) -> None:
    X, Y = field.grid.xy()
    rows = np.column_stack([X.ravel(), Y.ravel(), field.values.ravel()])
    np.savetxt(path, rows, delimiter=",", header="x,y,value", comments="")
