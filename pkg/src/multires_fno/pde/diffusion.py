"""Nonlinear diffusion u_t = D u_xx + k u^2 + f(x), u(0,t) = u(1,t) = 0, u(x,0) = 0.

The output lives on a space x time grid: space uses the cell-count lattice
x_i = i/N (x = 0 is a boundary node), time the right-aligned nodes
t_j = (j+1)/N_t. Crank-Nicolson for diffusion, second-order
Adams-Bashforth for the reaction and forcing.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import GridMismatchError, SolverInstabilityError
from ..grids import DiscretizedFunction, GridSpec, downsample

DIFFUSIVITY = 0.01
REACTION = 0.01
BLOWUP = 1e6


def space_time_grid(n_space: int, n_time: int | None = None) -> GridSpec:
    n_time = n_space if n_time is None else n_time
    return GridSpec((n_space, n_time), ((0.0, 1.0), (0.0, 1.0)), ("left", "right"))


def replicate_forcing(f: np.ndarray, grid: GridSpec) -> DiscretizedFunction:
    """Lay a spatial forcing profile out along the time axis of ``grid``."""
    f = np.asarray(f, dtype=float)
    return DiscretizedFunction(grid, np.repeat(f[:, None], grid.shape[1], axis=1))


def solve_diffusion(f: DiscretizedFunction, grid: GridSpec | None = None,
                    substeps: int | None = None, diffusivity: float = DIFFUSIVITY,
                    reaction: float = REACTION) -> DiscretizedFunction:
    if grid is not None and grid != f.grid:
        f = downsample(f, grid)
    g = f.grid
    if g.dims != 2 or g.align != ("left", "right") or f.channels != 1:
        raise GridMismatchError("diffusion needs a single-channel (space, time) grid")
    nx, nt = g.shape
    h = g.spacing(0)
    interval = g.spacing(1)
    if substeps is None:
        substeps = max(1, int(np.ceil(interval / 2e-3)))
    dt = interval / substeps
    forcing = f.values[1:, 0, 0]  # replicated along time; interior nodes only
    m = nx - 1
    lap = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    eye = sp.identity(m)
    lhs = spla.splu(sp.csc_matrix(eye - 0.5 * dt * diffusivity * lap))
    rhs_op = sp.csr_matrix(eye + 0.5 * dt * diffusivity * lap)

    def explicit(u):
        return reaction * u * u + forcing

    u = np.zeros(m)
    prev = explicit(u)
    out = np.zeros((nx, nt))
    for j in range(nt):
        for _ in range(substeps):
            cur = explicit(u)
            u = lhs.solve(rhs_op @ u + dt * (1.5 * cur - 0.5 * prev))
            prev = cur
        if not np.all(np.isfinite(u)) or np.abs(u).max() > BLOWUP:
            raise SolverInstabilityError(
                f"diffusion solve blew up before t = {g.axis_nodes(1)[j]:.3f}",
                suggested_dt=dt / 2)
        out[1:, j] = u
    return DiscretizedFunction(g, out, f.resolution_index)
