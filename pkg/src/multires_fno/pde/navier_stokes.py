"""2D incompressible Navier-Stokes in vorticity form on the periodic unit square.

    w_t + u . grad w = nu Lap w + forcing,   u = (psi_y, -psi_x),  -Lap psi = w

Pseudo-spectral with 2/3 dealiasing; Crank-Nicolson on the viscous term and
Heun's method on advection and forcing. Vorticity trajectories are stored
with time slices as channels (channels-last).
"""
from __future__ import annotations

import numpy as np

from ..errors import GridMismatchError, SolverInstabilityError
from ..grids import DiscretizedFunction, GridSpec, downsample

VISCOSITY = 1e-3
RECORD_INTERVAL = 1.25  # 40 slices over t in [0, 50]
N_INPUT_SLICES = 20
N_OUTPUT_SLICES = 20
CFL = 0.5


def default_forcing(grid: GridSpec) -> np.ndarray:
    xy = grid.coordinates()
    s = xy[..., 0] + xy[..., 1]
    return 0.1 * (np.sin(2 * np.pi * s) + np.cos(2 * np.pi * s))


class _Spectral:
    def __init__(self, n: int):
        k = np.fft.fftfreq(n, d=1.0 / n)
        kr = np.fft.rfftfreq(n, d=1.0 / n)
        kx, ky = np.meshgrid(k, kr, indexing="ij")
        self.n = n
        self.kx = 2 * np.pi * kx
        self.ky = 2 * np.pi * ky
        self.lap = -(self.kx**2 + self.ky**2)
        inv = np.zeros_like(self.lap)
        inv[self.lap != 0] = -1.0 / self.lap[self.lap != 0]
        self.inv_neg_lap = inv
        cut = (2.0 / 3.0) * (n // 2)
        self.dealias = (np.abs(kx) <= cut) & (np.abs(ky) <= cut)

    def velocity(self, w_hat):
        psi = self.inv_neg_lap * w_hat
        u = np.fft.irfft2(1j * self.ky * psi, s=(self.n, self.n))
        v = np.fft.irfft2(-1j * self.kx * psi, s=(self.n, self.n))
        return u, v

    def advection(self, w_hat):
        u, v = self.velocity(w_hat)
        wx = np.fft.irfft2(1j * self.kx * w_hat, s=(self.n, self.n))
        wy = np.fft.irfft2(1j * self.ky * w_hat, s=(self.n, self.n))
        adv = np.fft.rfft2(u * wx + v * wy) * self.dealias
        adv[0, 0] = 0.0  # periodic transport has no mean
        return adv


def ns_trajectory(w0: np.ndarray, n_records: int, nu: float = VISCOSITY,
                  interval: float = RECORD_INTERVAL, forcing: np.ndarray | None = None,
                  max_dt: float = 0.05) -> np.ndarray:
    """Integrate from ``w0`` and return ``(n, n, n_records)`` slices at t = k*interval."""
    n = w0.shape[0]
    if w0.shape != (n, n):
        raise GridMismatchError("NS needs a square vorticity field")
    sp = _Spectral(n)
    f_hat = np.zeros_like(sp.lap, dtype=complex) if forcing is None else np.fft.rfft2(forcing)
    w_hat = np.fft.rfft2(w0)
    out = np.empty((n, n, n_records))
    for rec in range(n_records):
        u, v = sp.velocity(w_hat)
        umax = max(np.abs(u).max(), np.abs(v).max(), 1e-12)
        dt = min(max_dt, CFL / (n * umax), interval)
        steps = int(np.ceil(interval / dt - 1e-12))
        dt = interval / steps
        num = 1.0 + 0.5 * dt * nu * sp.lap
        den = 1.0 - 0.5 * dt * nu * sp.lap
        for _ in range(steps):
            rhs1 = f_hat - sp.advection(w_hat)
            pred = (num * w_hat + dt * rhs1) / den
            rhs2 = f_hat - sp.advection(pred)
            w_hat = (num * w_hat + 0.5 * dt * (rhs1 + rhs2)) / den
        w = np.fft.irfft2(w_hat, s=(n, n))
        if not np.all(np.isfinite(w)):
            raise SolverInstabilityError(f"NS solve diverged at record {rec + 1}",
                                         suggested_dt=dt / 2)
        out[..., rec] = w
    return out


def ns_grid(n: int) -> GridSpec:
    return GridSpec((n, n), align="left")


def ns_input_from_initial(w0: DiscretizedFunction, nu: float = VISCOSITY,
                          forcing: bool = True, n_slices: int = N_INPUT_SLICES) -> DiscretizedFunction:
    """Solve the first ``n_slices`` records from an initial vorticity field."""
    f = default_forcing(w0.grid) if forcing else None
    traj = ns_trajectory(w0.values[..., 0], n_slices, nu=nu, forcing=f)
    return DiscretizedFunction(w0.grid, traj, w0.resolution_index)


def solve_ns(w_input: DiscretizedFunction, nu: float = VISCOSITY, grid: GridSpec | None = None,
             forcing: bool = True, n_out: int = N_OUTPUT_SLICES) -> DiscretizedFunction:
    """Continue a recorded vorticity history for ``n_out`` more slices on ``grid``.

    ``w_input`` carries the first slices as channels; integration restarts from
    its last channel on the requested grid.
    """
    if grid is not None and grid != w_input.grid:
        w_input = downsample(w_input, grid)
    g = w_input.grid
    if g.dims != 2 or g.align != ("left", "left"):
        raise GridMismatchError("NS needs a 2D periodic lattice")
    f = default_forcing(g) if forcing else None
    traj = ns_trajectory(w_input.values[..., -1], n_out, nu=nu, forcing=f)
    return DiscretizedFunction(g, traj, w_input.resolution_index)
