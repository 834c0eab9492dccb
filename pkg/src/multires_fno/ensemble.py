"""Deep-ensemble posterior over probabilistic FNOs and its Gaussian-mixture predictive."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InsufficientEnsembleError
from .grids import DiscretizedFunction, GridSpec
from .model import (ModelConfig, ProbabilisticFNO, TrainConfig, load_checkpoint, predict_values,
                    save_checkpoint, select_members, stack_members, train_members)

DEFAULT_MEMBERS = 5


@dataclass(frozen=True, eq=False)
class Ensemble:
    """M point estimates held as one member-stacked network."""

    model: ProbabilisticFNO

    @property
    def M(self) -> int:
        return self.model.E

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    @property
    def seeds(self) -> list[int]:
        return list(self.model.seeds)

    @property
    def members(self) -> list[ProbabilisticFNO]:
        return [self.model.member(m) for m in range(self.M)]

    def subset(self, idx: Sequence[int]) -> "Ensemble":
        return Ensemble(select_members(self.model, list(idx)))

    @classmethod
    def from_members(cls, members: Sequence[ProbabilisticFNO]) -> "Ensemble":
        return cls(stack_members(list(members)))

    # -- predictions
    def predict_values(self, values: np.ndarray, grid: GridSpec, r: int):
        return predict_values(self.model, values, grid, r)

    def mixtures(self, values: np.ndarray, grid: GridSpec, r: int) -> list["PredictiveMixture"]:
        """One mixture per input row of ``values`` (shape ``(B, *grid, C)``)."""
        mean, eta = self.predict_values(values, grid, r)
        E, B = eta.shape
        flat = mean.reshape(E, B, -1)
        return [PredictiveMixture(flat[:, b], np.exp(eta[:, b]), grid) for b in range(B)]


def fit_ensemble(dataset, M: int = DEFAULT_MEMBERS, mconfig: ModelConfig | None = None,
                 tconfig: TrainConfig | None = None, base_seed: int = 0,
                 init: Ensemble | None = None) -> Ensemble:
    """Train members with seeds ``base_seed, ..., base_seed + M - 1``."""
    if M < 2:
        raise InsufficientEnsembleError(f"an ensemble needs M >= 2 members, got {M}")
    mconfig = mconfig or ModelConfig()
    tconfig = tconfig or TrainConfig()
    seeds = [base_seed + m for m in range(M)]
    model = train_members(dataset, mconfig, tconfig, seeds,
                          init=None if init is None else init.model)
    return Ensemble(model)


def member_mean(a: np.ndarray) -> np.ndarray:
    """Mean over the leading (member) axis, exact when all members agree."""
    a = np.asarray(a, dtype=float)
    return a[0] + np.mean(a - a[0], axis=0)


@dataclass(frozen=True, eq=False)
class PredictiveMixture:
    """(1/M) sum_m N(rho_m, sigma2_m I) over a flattened output of dimension d."""

    means: np.ndarray
    variances: np.ndarray
    grid: GridSpec | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.asarray(self.variances, dtype=float).reshape(-1)
        if var.shape[0] != means.shape[0]:
            raise ValueError("need one variance per member")
        if not np.all(np.isfinite(means)):
            raise ValueError("mixture means must be finite")
        if not np.all(var > 0):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)

    @property
    def M(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return member_mean(self.means)

    def variance(self) -> np.ndarray:
        """Exact pointwise mixture variance (law of total variance, 1/M spread)."""
        spread = np.mean((self.means - self.mean()) ** 2, axis=0)
        return member_mean(self.variances) + spread

    def log_pdf(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        sq = np.sum((self.means - y) ** 2, axis=1)
        comp = -0.5 * self.d * np.log(2 * np.pi * self.variances) - 0.5 * sq / self.variances
        return float(logsumexp(comp) - np.log(self.M))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(self.M, size=n)
        noise = rng.standard_normal((n, self.d)) * np.sqrt(self.variances[comp])[:, None]
        return self.means[comp] + noise

    def permuted(self, perm) -> "PredictiveMixture":
        perm = np.asarray(perm)
        return PredictiveMixture(self.means[perm], self.variances[perm], self.grid)


def predictive_mixture(ensemble: Ensemble, f: DiscretizedFunction, r: int) -> PredictiveMixture:
    return ensemble.mixtures(np.array(f.values)[None], f.grid, r)[0]


def _test_arrays(test):
    X = np.stack([ex.input.values for ex in test])
    Y = np.stack([ex.output.values for ex in test])
    rs = {ex.resolution_index for ex in test}
    if len(rs) != 1:
        raise ValueError("test examples must share one resolution")
    return X, Y, rs.pop(), test[0].input.grid


def mixture_nll(ensemble: Ensemble, test) -> float:
    """Average negative log predictive density of the test outputs."""
    X, Y, r, grid = _test_arrays(test)
    mixes = ensemble.mixtures(X, grid, r)
    return float(-np.mean([m.log_pdf(y) for m, y in zip(mixes, Y)]))


def evaluate(ensemble: Ensemble, test) -> dict:
    """Relative L2 of the mixture mean and the mixture NLL over a test set."""
    X, Y, r, grid = _test_arrays(test)
    mixes = ensemble.mixtures(X, grid, r)
    y = Y.reshape(len(test), -1)
    errs = [np.linalg.norm(m.mean() - yi) / np.linalg.norm(yi) for m, yi in zip(mixes, y)]
    nll = -np.mean([m.log_pdf(yi) for m, yi in zip(mixes, y)])
    return {"rel_l2": float(np.mean(errs)), "nll": float(nll)}


def save_ensemble(ensemble: Ensemble, path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for m, member in enumerate(ensemble.members):
        name = f"member_{m}.pt"
        save_checkpoint(member, out / name)
        names.append(name)
    (out / "manifest.json").write_text(json.dumps(
        {"M": ensemble.M, "seeds": ensemble.seeds, "members": names}, indent=2))
    return out


def load_ensemble(path) -> Ensemble:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    return Ensemble.from_members([load_checkpoint(path / n) for n in manifest["members"]])
