"""Comparison acquisition policies: random, k-center coreset and predictive variance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CampaignExhaustedError, ConfigError
from .grids import DiscretizedFunction, downsample, interpolate_up
from .model import features_values
from .utility import mean_predictive_variance

POLICY_NAMES = ("mra-u1", "mra-u2", "random-low", "random-high", "random-mix",
                "coreset-low", "coreset-high", "coreset-mix", "predvar")
KINDS = ("random", "coreset", "predvar", "mra-u1", "mra-u2")
MODES = ("low", "high", "mix")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    mode: str = "mix"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown resolution mode {self.mode!r}")
        if self.annealed and self.mode != "mix":
            # these policies choose r themselves
            object.__setattr__(self, "mode", "mix")

    @property
    def annealed(self) -> bool:
        return self.kind in ("mra-u1", "mra-u2", "predvar")

    @property
    def needs_model(self) -> bool:
        return self.kind != "random"

    @property
    def name(self) -> str:
        return self.kind if self.annealed else f"{self.kind}-{self.mode}"

    @classmethod
    def from_name(cls, name: str, **options) -> "PolicySpec":
        if name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
        if name.startswith(("random-", "coreset-")):
            kind, mode = name.split("-")
            return cls(kind, mode, options)
        return cls(name, "mix", options)

    def resolutions(self, R: int) -> list[int]:
        return {"low": [1], "high": [R], "mix": list(range(1, R + 1))}[self.mode]


def random_select(pool_size: int, mode: str, R: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform pool row; r pinned to 1 / R or uniform over [1, R]."""
    if pool_size < 1:
        raise CampaignExhaustedError("empty pool")
    i = int(rng.integers(pool_size))
    if mode == "low":
        r = 1
    elif mode == "high":
        r = R
    elif mode == "mix":
        r = int(rng.integers(1, R + 1))
    else:
        raise ConfigError(f"unknown resolution mode {mode!r}")
    return i, r


def _representations(model, functions, r, task, chunk=25) -> np.ndarray:
    """Last Fourier layer output of member 0, interpolated to the top grid and flattened."""
    grid, top = task.grid(r), task.top_grid
    out = []
    for s in range(0, len(functions), chunk):
        X = np.stack([downsample(h, grid).values for h in functions[s:s + chunk]])
        feats = features_values(model, X, grid, r)[0]
        for v in feats:
            out.append(interpolate_up(DiscretizedFunction(grid, v), top).flat())
    return np.stack(out) if out else np.zeros((0, top.size * model.config.width))


def coreset_representation(ensemble, h, r: int, task) -> np.ndarray:
    return _representations(ensemble.model.member(0), [h], r, task)[0]


def labeled_representations(ensemble, dataset, task) -> np.ndarray:
    """Representations of the labeled inputs at the resolution they were queried at."""
    model = ensemble.model.member(0)
    rows = []
    for r, exs in dataset.buckets().items():
        # labeled inputs already live on grid r; downsample is the identity there
        rows.append(_representations(model, [ex.input for ex in exs], r, task))
    return np.concatenate(rows) if rows else np.zeros((0, 0))


def min_distances(candidates: np.ndarray, labeled: np.ndarray) -> np.ndarray:
    sq = (np.sum(candidates**2, axis=1)[:, None] + np.sum(labeled**2, axis=1)[None, :]
          - 2.0 * candidates @ labeled.T)
    return np.sqrt(np.maximum(sq, 0.0).min(axis=1))


def coreset_select(pool_reps: dict, labeled_reps: np.ndarray) -> tuple[int, int, float]:
    """k-center greedy step over ``pool_reps[r]`` (rows = pool items).

    Returns ``(row, r, max-min distance)``; ties go to the lower r, then the
    smaller row.
    """
    if not pool_reps or next(iter(pool_reps.values())).shape[0] == 0:
        raise CampaignExhaustedError("empty pool")
    if labeled_reps.shape[0] == 0:
        raise ValueError("empty labeled set")
    best = None
    for r in sorted(pool_reps):
        dist = min_distances(pool_reps[r], labeled_reps)
        i = int(np.argmax(dist))
        if best is None or dist[i] > best[2]:
            best = (i, r, float(dist[i]))
    return best


def predvar_utility(ensemble, h, r: int, task) -> float:
    """Mean over output nodes of the (M - 1)-spread matched predictive variance."""
    from .ensemble import predictive_mixture
    return mean_predictive_variance(predictive_mixture(ensemble, downsample(h, task.grid(r)), r))
