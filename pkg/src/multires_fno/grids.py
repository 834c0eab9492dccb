"""Discretized functions on evenly spaced grids.

Three node conventions are supported per axis:

``"both"``
    ``n`` nodes including both endpoints (``linspace(lo, hi, n)``). Used for
    the 1D Burgers grids (33 and 129 nodes).
``"left"``
    ``n`` cell-count nodes ``lo + i*h`` with ``h = (hi - lo)/n``; the right
    endpoint is the periodic image of the left one. Used for 2D spatial
    lattices (32, 64, 128 nest by integer strides).
``"right"``
    ``lo + (i+1)*h``; used for time axes that exclude the initial instant.

Values are stored channels-last: ``values.shape == grid.shape + (channels,)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, InvalidResolutionError, UndefinedMetricError

ALIGNMENTS = ("both", "left", "right")


@dataclass(frozen=True)
class GridSpec:
    shape: tuple[int, ...]
    extents: tuple[tuple[float, float], ...] = None
    align: tuple[str, ...] = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        extents = self.extents
        if extents is None:
            extents = tuple((0.0, 1.0) for _ in shape)
        extents = tuple((float(lo), float(hi)) for lo, hi in extents)
        align = self.align
        if align is None:
            align = ("both",) * len(shape)
        elif isinstance(align, str):
            align = (align,) * len(shape)
        align = tuple(align)
        if not shape:
            raise ValueError("grid needs at least one axis")
        if len(extents) != len(shape) or len(align) != len(shape):
            raise ValueError("shape, extents and align must have one entry per axis")
        for n, (lo, hi), a in zip(shape, extents, align):
            if n < 2:
                raise ValueError(f"every axis needs >= 2 nodes, got {n}")
            if not lo < hi:
                raise ValueError(f"extent lo < hi violated: [{lo}, {hi}]")
            if a not in ALIGNMENTS:
                raise ValueError(f"unknown alignment {a!r}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "align", align)

    @property
    def dims(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def spacing(self, axis: int) -> float:
        n, (lo, hi), a = self.shape[axis], self.extents[axis], self.align[axis]
        return (hi - lo) / (n - 1) if a == "both" else (hi - lo) / n

    def axis_nodes(self, axis: int) -> np.ndarray:
        n, (lo, _), a = self.shape[axis], self.extents[axis], self.align[axis]
        h = self.spacing(axis)
        idx = np.arange(n, dtype=float)
        if a == "right":
            idx = idx + 1.0
        return lo + idx * h

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (dims,)``."""
        axes = [self.axis_nodes(k) for k in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def with_shape(self, shape: Sequence[int]) -> "GridSpec":
        return GridSpec(tuple(shape), self.extents, self.align)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "extents": [list(e) for e in self.extents],
                "align": list(self.align)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["shape"]), tuple(tuple(e) for e in d["extents"]), tuple(d["align"]))


@dataclass(frozen=True, eq=False)
class DiscretizedFunction:
    grid: GridSpec
    values: np.ndarray
    resolution_index: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape == self.grid.shape:
            values = values[..., None]
        if values.shape[:-1] != self.grid.shape or values.ndim != self.grid.dims + 1:
            raise GridMismatchError(
                f"values of shape {values.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("function values must be finite")
        values = np.array(values, copy=True)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values, resolution_index=None) -> "DiscretizedFunction":
        r = self.resolution_index if resolution_index is None else resolution_index
        return DiscretizedFunction(self.grid, values, r)

    def save(self, path) -> None:
        """Write ``<path>.npz`` plus a ``<path>.json`` sidecar."""
        path = Path(path)
        np.savez(path.with_suffix(".npz"), values=self.values,
                 shape=np.asarray(self.grid.shape), extents=np.asarray(self.grid.extents),
                 align=np.asarray(self.grid.align))
        meta = {"resolution_index": self.resolution_index, "grid": self.grid.to_dict(),
                "channels": self.channels}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "DiscretizedFunction":
        path = Path(path)
        with np.load(path.with_suffix(".npz")) as z:
            grid = GridSpec(tuple(int(n) for n in z["shape"]),
                            tuple(tuple(float(v) for v in e) for e in z["extents"]),
                            tuple(str(a) for a in z["align"]))
            values = z["values"]
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(grid, values, meta.get("resolution_index"))


@dataclass(frozen=True)
class ResolutionSpec:
    index: int
    grid: GridSpec
    cost: float
    n_resolutions: int
    embedding: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.cost <= 1.0:
            raise ValueError(f"normalized cost must lie in (0, 1], got {self.cost}")
        object.__setattr__(self, "embedding", one_hot_embedding(self.index, self.n_resolutions))


def one_hot_embedding(r: int, R: int) -> np.ndarray:
    if not 1 <= r <= R:
        raise InvalidResolutionError(f"resolution index {r} outside [1, {R}]")
    e = np.zeros(R)
    e[r - 1] = 1.0
    return e


def _coincident_indices(src: GridSpec, tgt: GridSpec, axis: int) -> np.ndarray:
    xs, xt = src.axis_nodes(axis), tgt.axis_nodes(axis)
    h = src.spacing(axis)
    idx = np.rint((xt - xs[0]) / h).astype(int)
    if idx.min() < 0 or idx.max() >= xs.size:
        raise GridMismatchError(f"axis {axis}: target nodes fall outside the source grid")
    if np.max(np.abs(xs[idx] - xt)) > 1e-9 * max(1.0, abs(h)):
        raise GridMismatchError(
            f"axis {axis}: {tgt.shape[axis]} nodes are not nested in {src.shape[axis]}")
    return idx


def _check_compatible(src: GridSpec, tgt: GridSpec) -> None:
    if src.dims != tgt.dims:
        raise GridMismatchError(f"dimension mismatch {src.dims} vs {tgt.dims}")
    if src.extents != tgt.extents or src.align != tgt.align:
        raise GridMismatchError("grids differ in extents or node alignment")


def downsample(f: DiscretizedFunction, target: GridSpec) -> DiscretizedFunction:
    """Pick the source values at the nodes that coincide with ``target``."""
    _check_compatible(f.grid, target)
    if f.grid.shape == target.shape:
        return f
    values = f.values
    for axis in range(target.dims):
        if target.shape[axis] > f.grid.shape[axis]:
            raise GridMismatchError("downsample target is finer than the source")
        values = np.take(values, _coincident_indices(f.grid, target, axis), axis=axis)
    return DiscretizedFunction(target, values, f.resolution_index)


def _interp_axis(values: np.ndarray, src: GridSpec, tgt: GridSpec, axis: int) -> np.ndarray:
    xs, xt = src.axis_nodes(axis), tgt.axis_nodes(axis)
    if src.align[axis] == "left":
        # periodic lattice: the wrap node at hi carries the value of node 0
        xs = np.append(xs, src.extents[axis][1])
        values = np.concatenate([values, np.take(values, [0], axis=axis)], axis=axis)
    i = np.clip(np.searchsorted(xs, xt, side="right") - 1, 0, xs.size - 2)
    w = (xt - xs[i]) / (xs[i + 1] - xs[i])
    shape = [1] * values.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    lo = np.take(values, i, axis=axis)
    hi = np.take(values, i + 1, axis=axis)
    return lo + w * (hi - lo)


def interpolate_up(f: DiscretizedFunction, target: GridSpec) -> DiscretizedFunction:
    """Multilinear interpolation of ``f`` onto an equal or finer grid."""
    _check_compatible(f.grid, target)
    if any(t < s for t, s in zip(target.shape, f.grid.shape)):
        raise GridMismatchError(f"target {target.shape} is coarser than source {f.grid.shape}")
    if f.grid.shape == target.shape:
        return f
    values = f.values
    for axis in range(target.dims):
        values = _interp_axis(values, f.grid, target, axis)
    return DiscretizedFunction(target, values, f.resolution_index)


def relative_l2(pred: DiscretizedFunction, truth: DiscretizedFunction) -> float:
    if pred.grid.shape != truth.grid.shape or pred.values.shape != truth.values.shape:
        raise GridMismatchError("relative_l2 needs matching grids")
    denom = np.linalg.norm(truth.values)
    if denom == 0.0:
        raise UndefinedMetricError("relative L2 undefined for a zero-norm truth")
    return float(np.linalg.norm(pred.values - truth.values) / denom)
