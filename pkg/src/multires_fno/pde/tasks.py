"""Benchmark tasks: resolutions, costs, input generators and simulator queries."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError, InvalidResolutionError
from ..grids import DiscretizedFunction, GridSpec, ResolutionSpec, downsample
from ..seeding import derive_seed
from . import burgers, darcy, diffusion, navier_stokes
from .grf import GRFConfig, sample_grf_batch

# measured solver-time ratios, lowest resolution first
COST_RATIOS = {
    "burgers": (1.0, 41.2),
    "darcy": (1.0, 38.3),
    "darcy3": (1.0, 21.3, 38.3),
    "diffusion": (1.0, 17.6),
    "ns": (1.0, 7.0),
}

TASK_NAMES = tuple(COST_RATIOS)


def normalize_costs(ratios) -> np.ndarray:
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios <= 0) or np.any(np.diff(ratios) <= 0):
        raise ConfigError("costs must be positive and strictly increasing")
    return ratios / ratios.sum()


@dataclass(frozen=True)
class TaskSpec:
    name: str
    resolutions: tuple[ResolutionSpec, ...]
    in_channels: int = 1
    out_channels: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        costs = [r.cost for r in self.resolutions]
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise ConfigError("resolutions must be sorted by increasing cost")
        if not np.isclose(sum(costs), 1.0):
            raise ConfigError("resolution costs must sum to 1")

    @property
    def R(self) -> int:
        return len(self.resolutions)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.resolutions])

    @property
    def dims(self) -> int:
        return self.resolutions[0].grid.dims

    def grid(self, r: int) -> GridSpec:
        if not 1 <= r <= self.R:
            raise InvalidResolutionError(f"resolution {r} outside [1, {self.R}]")
        return self.resolutions[r - 1].grid

    @property
    def top_grid(self) -> GridSpec:
        return self.resolutions[-1].grid

    def solve(self, f: DiscretizedFunction) -> DiscretizedFunction:
        return _SOLVERS[self.name](f, self.params)

    def sample_inputs(self, n: int, seed: int) -> list[DiscretizedFunction]:
        return _GENERATORS[self.name](self, n, seed)

    def to_dict(self) -> dict:
        return {"name": self.name, "grids": [r.grid.to_dict() for r in self.resolutions],
                "costs": self.costs.tolist(), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "params": dict(self.params)}


@dataclass(frozen=True, eq=False)
class LabeledExample:
    input: DiscretizedFunction
    output: DiscretizedFunction
    resolution_index: int
    cost_paid: float
    input_id: int | None = None


class MultiResDataset:
    """Labeled (input, output, resolution) triples plus the cost ledger."""

    def __init__(self, examples=()):
        self.examples: list[LabeledExample] = []
        self.ledger: list[float] = []
        for ex in examples:
            self.add(ex)

    def add(self, example: LabeledExample) -> None:
        self.examples.append(example)
        self.ledger.append(example.cost_paid)

    @property
    def total_cost(self) -> float:
        return float(sum(self.ledger))

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def buckets(self) -> dict[int, list[LabeledExample]]:
        out: dict[int, list[LabeledExample]] = {}
        for ex in self.examples:
            out.setdefault(ex.resolution_index, []).append(ex)
        return dict(sorted(out.items()))

    def resolution_counts(self, R: int) -> list[int]:
        counts = [0] * R
        for ex in self.examples:
            counts[ex.resolution_index - 1] += 1
        return counts


# ---------------------------------------------------------------- task presets

def _res_specs(grids, ratios) -> tuple[ResolutionSpec, ...]:
    costs = normalize_costs(ratios)
    R = len(grids)
    return tuple(ResolutionSpec(i + 1, g, float(c), R) for i, (g, c) in enumerate(zip(grids, costs)))


def make_task(name: str, **params) -> TaskSpec:
    """Build a benchmark task; ``params`` override the PDE/generator defaults."""
    if name not in COST_RATIOS:
        raise ConfigError(f"unknown task {name!r}; expected one of {TASK_NAMES}")
    ratios = params.pop("cost_ratios", COST_RATIOS[name])
    if name == "burgers":
        sizes = params.pop("sizes", (33, 129))
        grids = [GridSpec((n,), align="both") for n in sizes]
        defaults = {"nu": 0.002, "a_range": (1.0, 6.0), "b_range": (1.0, 6.0)}
        channels = (1, 1)
    elif name in ("darcy", "darcy3"):
        sizes = params.pop("sizes", (32, 128) if name == "darcy" else (32, 64, 128))
        grids = [GridSpec((n, n), align="left") for n in sizes]
        defaults = {"tau": 3.0, "alpha": 2.0, "low": 4.0, "high": 12.0, "forcing": 1.0}
        channels = (1, 1)
    elif name == "diffusion":
        sizes = params.pop("sizes", (32, 128))
        grids = [diffusion.space_time_grid(n) for n in sizes]
        defaults = {"length_scale": 0.2, "jitter": 1e-8}
        channels = (1, 1)
    else:
        sizes = params.pop("sizes", (16, 64))
        grids = [navier_stokes.ns_grid(n) for n in sizes]
        defaults = {"nu": navier_stokes.VISCOSITY, "tau": 3.0, "alpha": 2.0, "forcing": True}
        channels = (navier_stokes.N_INPUT_SLICES, navier_stokes.N_OUTPUT_SLICES)
    if len(ratios) != len(grids):
        raise ConfigError("need one cost ratio per resolution")
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    defaults.update(params)
    return TaskSpec(name, _res_specs(grids, ratios), channels[0], channels[1], defaults)


def _solve_burgers(f, p):
    return burgers.solve_burgers(f, nu=p["nu"])


def _solve_darcy(f, p):
    return darcy.solve_darcy(f, forcing=p["forcing"])


def _solve_diffusion(f, p):
    return diffusion.solve_diffusion(f)


def _solve_ns(f, p):
    return navier_stokes.solve_ns(f, nu=p["nu"], forcing=p["forcing"])


_SOLVERS: dict[str, Callable] = {
    "burgers": _solve_burgers, "darcy": _solve_darcy, "darcy3": _solve_darcy,
    "diffusion": _solve_diffusion, "ns": _solve_ns,
}


def _gen_burgers(task, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(*task.params["a_range"], size=n)
    b = rng.uniform(*task.params["b_range"], size=n)
    return [burgers.burgers_initial(ai, bi, task.top_grid) for ai, bi in zip(a, b)]


def _gen_darcy(task, n, seed):
    p = task.params
    cfg = GRFConfig(task.top_grid, "inverse-laplacian", tau=p["tau"], alpha=p["alpha"])
    z = sample_grf_batch(cfg, n, seed)
    return [DiscretizedFunction(task.top_grid, np.where(zi >= 0, p["high"], p["low"])) for zi in z]


def _gen_diffusion(task, n, seed):
    grid = task.top_grid
    space = GridSpec((grid.shape[0],), (grid.extents[0],), ("left",))
    cfg = GRFConfig(space, "rbf", length_scale=task.params["length_scale"],
                    jitter=task.params["jitter"])
    f = sample_grf_batch(cfg, n, seed)
    return [diffusion.replicate_forcing(fi, grid) for fi in f]


def _gen_ns(task, n, seed):
    p = task.params
    cfg = GRFConfig(task.top_grid, "inverse-laplacian", tau=p["tau"], alpha=p["alpha"])
    w0 = sample_grf_batch(cfg, n, seed)
    return [navier_stokes.ns_input_from_initial(DiscretizedFunction(task.top_grid, w), nu=p["nu"],
                                                forcing=p["forcing"]) for w in w0]


_GENERATORS: dict[str, Callable] = {
    "burgers": _gen_burgers, "darcy": _gen_darcy, "darcy3": _gen_darcy,
    "diffusion": _gen_diffusion, "ns": _gen_ns,
}


# ------------------------------------------------------------------ operations

def make_pool(task: TaskSpec, n: int, seed: int) -> list[DiscretizedFunction]:
    """``n`` candidate input functions on the highest-resolution grid."""
    if n < 1:
        raise ValueError("pool size must be >= 1")
    return task.sample_inputs(n, derive_seed(seed, task.name, "inputs"))


def query_simulator(h: DiscretizedFunction, r: int, task: TaskSpec,
                    input_id: int | None = None) -> LabeledExample:
    f = downsample(h, task.grid(r))
    f = f.with_values(f.values, resolution_index=r)
    g = task.solve(f)
    g = g.with_values(g.values, resolution_index=r)
    return LabeledExample(f, g, r, float(task.resolutions[r - 1].cost), input_id)


def make_test_set(task: TaskSpec, n: int, seed: int) -> list[LabeledExample]:
    inputs = make_pool(task, n, seed)
    return [query_simulator(h, task.R, task, i) for i, h in enumerate(inputs)]


# ----------------------------------------------------------------- persistence

def save_functions(path, functions: list[DiscretizedFunction]) -> None:
    path = Path(path)
    grid = functions[0].grid
    if any(f.grid != grid for f in functions):
        raise ValueError("save_functions expects functions on one grid")
    np.savez(path.with_suffix(".npz"), values=np.stack([f.values for f in functions]),
             resolution=np.array([-1 if f.resolution_index is None else f.resolution_index
                                  for f in functions]))
    path.with_suffix(".json").write_text(json.dumps({"grid": grid.to_dict(), "count": len(functions)}))


def load_functions(path) -> list[DiscretizedFunction]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = GridSpec.from_dict(meta["grid"])
    with np.load(path.with_suffix(".npz")) as z:
        values, res = z["values"], z["resolution"]
    return [DiscretizedFunction(grid, v, None if r < 0 else int(r)) for v, r in zip(values, res)]


def write_dataset_archive(out_dir, task: TaskSpec, pool_size: int, test_size: int, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = make_pool(task, pool_size, seed)
    test = make_test_set(task, test_size, seed + 1)
    save_functions(out / "pool_inputs", pool)
    save_functions(out / "test_inputs", [ex.input for ex in test])
    save_functions(out / "test_outputs", [ex.output for ex in test])
    manifest = {"task": task.to_dict(), "pool_size": pool_size, "test_size": test_size,
                "seeds": {"pool": seed, "test": seed + 1}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def read_dataset_archive(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    pool = load_functions(path / "pool_inputs")
    test_in = load_functions(path / "test_inputs")
    test_out = load_functions(path / "test_outputs")
    R = len(manifest["task"]["costs"])
    test = [LabeledExample(f, g, R, manifest["task"]["costs"][-1], i)
            for i, (f, g) in enumerate(zip(test_in, test_out))]
    return manifest, pool, test
