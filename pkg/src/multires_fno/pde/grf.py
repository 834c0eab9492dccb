"""Gaussian random field samplers for input functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SamplingError
from ..grids import DiscretizedFunction, GridSpec


@dataclass(frozen=True)
class GRFConfig:
    """Prior over input functions.

    ``kernel="rbf"`` uses a dense squared-exponential covariance with
    ``length_scale``; ``kernel="inverse-laplacian"`` uses the spectral
    covariance ``sigma^2 (4 pi^2 |k|^2 + tau^2)^(-alpha)`` on a periodic lattice.
    """

    grid: GridSpec
    kernel: str = "inverse-laplacian"
    length_scale: float = 0.2
    tau: float = 3.0
    alpha: float = 2.0
    variance: float = 1.0
    jitter: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in ("rbf", "inverse-laplacian"):
            raise ValueError(f"unknown GRF kernel {self.kernel!r}")
        if self.kernel == "rbf" and self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.kernel == "inverse-laplacian":
            if self.tau <= 0:
                raise ValueError("tau must be positive")
            if self.alpha <= self.grid.dims / 2:
                raise ValueError("alpha must exceed dims/2 for a continuous field")


def rbf_cholesky(config: GRFConfig) -> np.ndarray:
    x = config.grid.coordinates().reshape(-1, config.grid.dims)
    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    K = config.variance * np.exp(-0.5 * sq / config.length_scale**2)
    K[np.diag_indices_from(K)] += config.jitter * config.variance
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise SamplingError(
            f"RBF covariance not positive definite with jitter {config.jitter}") from exc


def spectral_amplitudes(config: GRFConfig) -> np.ndarray:
    grid = config.grid
    if any(a != "left" for a in grid.align):
        raise SamplingError("the spectral sampler needs periodic ('left') lattices")
    freqs = []
    for axis, n in enumerate(grid.shape):
        length = grid.extents[axis][1] - grid.extents[axis][0]
        freqs.append(np.fft.fftfreq(n, d=1.0 / n) / length)
    kk = sum(k**2 for k in np.meshgrid(*freqs, indexing="ij"))
    d = grid.dims
    sigma = np.sqrt(config.variance) * config.tau ** (config.alpha - d / 2)
    amp = sigma * (4 * np.pi**2 * kk + config.tau**2) ** (-config.alpha / 2)
    amp[(0,) * d] = 0.0
    return amp


def sample_grf_batch(config: GRFConfig, n: int, seed: int | None = None) -> np.ndarray:
    """Draw ``n`` fields at once; returns ``(n,) + grid.shape``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    grid = config.grid
    if config.kernel == "rbf":
        L = rbf_cholesky(config)
        z = rng.standard_normal((n, grid.size))
        return (z @ L.T).reshape((n,) + grid.shape)
    amp = spectral_amplitudes(config)
    z = rng.standard_normal((n,) + grid.shape)
    axes = tuple(range(1, grid.dims + 1))
    out = np.fft.ifftn(np.fft.fftn(z, axes=axes) * amp, axes=axes).real
    return out * np.sqrt(grid.size)


def sample_grf(config: GRFConfig) -> DiscretizedFunction:
    values = sample_grf_batch(config, 1)[0]
    return DiscretizedFunction(config.grid, values)
