"""Steady Darcy flow -div(c grad u) = f on the unit square, u = 0 on the boundary.

Values live on the cell-count lattice x_i = i/N (i = 0..N-1); the extra
vertex row at x = 1 is boundary and carries u = 0. Five-point finite
differences with harmonic face averages of c, direct sparse solve.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import GridMismatchError, SolverError
from ..grids import DiscretizedFunction, GridSpec, downsample


def threshold_grf_coefficient(z: DiscretizedFunction, high: float = 12.0, low: float = 4.0,
                              level: float = 0.0) -> DiscretizedFunction:
    return z.with_values(np.where(z.values >= level, high, low))


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def solve_darcy(c: DiscretizedFunction, grid: GridSpec | None = None,
                forcing: float = 1.0) -> DiscretizedFunction:
    if grid is not None and grid != c.grid:
        c = downsample(c, grid)
    g = c.grid
    if g.dims != 2 or g.align != ("left", "left") or c.channels != 1:
        raise GridMismatchError("Darcy needs a single-channel 2D periodic-style lattice")
    coef = c.values[..., 0]
    if np.any(coef <= 0):
        raise ValueError("Darcy coefficient must be positive")
    nx, ny = g.shape
    hx, hy = g.spacing(0), g.spacing(1)
    # c at vertex N wraps to vertex 0 (the input lattice is periodic)
    cw = np.pad(coef, ((0, 1), (0, 1)), mode="wrap")
    cx = _harmonic(cw[:-1, :], cw[1:, :])  # face (i+1/2, j), shape (nx, ny+1)
    cy = _harmonic(cw[:, :-1], cw[:, 1:])  # face (i, j+1/2), shape (nx+1, ny)
    mx, my = nx - 1, ny - 1  # interior unknowns i = 1..nx-1
    idx = np.arange(mx * my).reshape(mx, my)
    I, J = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
    west, east = cx[I - 1, J] / hx**2, cx[I, J] / hx**2
    south, north = cy[I, J - 1] / hy**2, cy[I, J] / hy**2
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [(west + east + south + north).ravel()]
    for coeff, di, dj in ((west, -1, 0), (east, 1, 0), (south, 0, -1), (north, 0, 1)):
        ii, jj = I - 1 + di, J - 1 + dj
        inside = (ii >= 0) & (ii < mx) & (jj >= 0) & (jj < my)
        rows.append(idx[inside])
        cols.append(idx[ii[inside], jj[inside]])
        vals.append(-coeff[inside])
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(mx * my, mx * my))
    rhs = np.full(mx * my, float(forcing))
    try:
        sol = spla.spsolve(A, rhs)
    except RuntimeError as exc:
        raise SolverError(f"Darcy linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError("Darcy linear solve returned non-finite values")
    u = np.zeros((nx, ny))
    u[1:, 1:] = sol.reshape(mx, my)
    return DiscretizedFunction(g, u, c.resolution_index)

