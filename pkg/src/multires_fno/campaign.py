"""The active-learning loop: retrain, score, anneal costs, select, query, repeat."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .annealing import CostSchedule, scheduled_costs, select
from .baselines import (PolicySpec, coreset_select, labeled_representations, random_select,
                        _representations)
from .ensemble import DEFAULT_MEMBERS, Ensemble, evaluate, fit_ensemble
from .errors import ConfigError, NumericalError
from .model import ModelConfig, TrainConfig
from .pde.tasks import MultiResDataset, TaskSpec, make_pool, make_task, make_test_set, query_simulator
from .seeding import derive_seed, rng
from .utility import score_pool

log = logging.getLogger(__name__)

DEFAULT_MODES = {1: 16, 2: 12}


def default_model_config(task: TaskSpec, width: int = 32, n_layers: int = 4, n_modes=None,
                         hidden: int = 64) -> ModelConfig:
    """Mode counts are capped so the coarsest grid still holds them."""
    if n_modes is None:
        n_modes = DEFAULT_MODES[task.dims]
    if isinstance(n_modes, int):
        n_modes = (n_modes,) * task.dims
    coarse = task.grid(1).shape
    n_modes = tuple(min(m, n // 2) for m, n in zip(n_modes, coarse))
    return ModelConfig(dims=task.dims, in_channels=task.in_channels, out_channels=task.out_channels,
                       n_resolutions=task.R, n_modes=n_modes, width=width, n_layers=n_layers,
                       lift_hidden=hidden, proj_hidden=hidden)


@dataclass
class CampaignConfig:
    task: str = "burgers"
    task_params: dict = field(default_factory=dict)
    policy: str = "mra-u1"
    pool_size: int = 100
    n_initial: int = 10
    steps: int = 60
    test_size: int = 50
    decay: str = "exp"
    alpha: float = 0.01
    renormalize: bool = True
    n_probes: int = 5
    n_members: int = DEFAULT_MEMBERS
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=lambda: {"epochs": 100})
    seed: int = 0
    eval_every: int = 5
    warm_start: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.pool_size < self.steps:
            raise ConfigError("pool_size must be >= steps")
        if self.n_initial < 1 or self.test_size < 1 or self.eval_every < 1:
            raise ConfigError("n_initial, test_size and eval_every must be >= 1")
        PolicySpec.from_name(self.policy)

    def build_task(self) -> TaskSpec:
        return make_task(self.task, **dict(self.task_params))

    def policy_spec(self) -> PolicySpec:
        return PolicySpec.from_name(self.policy)

    def model_config(self, task: TaskSpec) -> ModelConfig:
        opts = dict(self.model)
        return default_model_config(task, **opts)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def schedule(self, task: TaskSpec) -> CostSchedule:
        return CostSchedule(tuple(task.costs), self.decay, self.alpha, self.renormalize)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown campaign fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class CampaignData:
    """Seed-pinned initial set, pool and test set shared by every policy."""
    initial: list
    pool: list
    test: list


def build_campaign_data(config: CampaignConfig, task: TaskSpec | None = None) -> CampaignData:
    task = task or config.build_task()
    seed = config.seed
    inputs = make_pool(task, config.n_initial * task.R, derive_seed(seed, "initial"))
    initial = [query_simulator(h, 1 + i // config.n_initial, task, -1 - i) for i, h in enumerate(inputs)]
    pool = make_pool(task, config.pool_size, derive_seed(seed, "pool"))
    test = make_test_set(task, config.test_size, derive_seed(seed, "test"))
    return CampaignData(initial, pool, test)


COLUMNS = ("step", "input_id", "resolution", "utility", "scheduled_cost", "cost_paid",
           "cumulative_cost", "query_cost", "test_rel_l2", "test_nll")


@dataclass
class QueryRecord:
    step: int
    input_id: int
    resolution: int
    utility: float
    scheduled_cost: float
    cost_paid: float
    cumulative_cost: float
    query_cost: float
    test_rel_l2: float = math.nan
    test_nll: float = math.nan

    def row(self) -> list[str]:
        return [str(getattr(self, c)) if isinstance(getattr(self, c), int) else repr(float(getattr(self, c)))
                for c in COLUMNS]

    @classmethod
    def from_row(cls, row: dict) -> "QueryRecord":
        ints = ("step", "input_id", "resolution")
        return cls(**{c: int(row[c]) if c in ints else float(row[c]) for c in COLUMNS})


@dataclass
class CampaignHistory:
    config: dict
    records: list = field(default_factory=list)
    initial_cost: float = 0.0
    initial_metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    complete: bool = False
    final_ensemble: Ensemble | None = field(default=None, repr=False, compare=False)
    test: list | None = field(default=None, repr=False, compare=False)

    @property
    def policy(self) -> str:
        return self.config["policy"]

    def resolutions(self) -> np.ndarray:
        return np.array([r.resolution for r in self.records], dtype=int)

    def curve(self) -> tuple[np.ndarray, np.ndarray]:
        """(cumulative cost, test rel L2) at every evaluated point, initial data first."""
        cost = [self.initial_cost] + [r.cumulative_cost for r in self.records]
        err = [self.initial_metrics.get("rel_l2", math.nan)] + [r.test_rel_l2 for r in self.records]
        cost, err = np.array(cost), np.array(err)
        keep = np.isfinite(err)
        return cost[keep], err[keep]

    def error_at_cost(self, budget: float) -> float:
        """Error of the last evaluation whose cumulative cost does not exceed ``budget``."""
        cost, err = self.curve()
        ok = cost <= budget + 1e-12
        return float(err[ok][-1]) if ok.any() else math.nan

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for rec in self.records:
                w.writerow(rec.row())
        manifest = {"config": self.config, "initial_cost": self.initial_cost,
                    "initial_metrics": self.initial_metrics, "failures": self.failures,
                    "complete": self.complete, "n_records": len(self.records)}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, out_dir) -> "CampaignHistory":
        out = Path(out_dir)
        manifest = json.loads((out / "manifest.json").read_text())
        with open(out / "history.csv", newline="") as fh:
            records = [QueryRecord.from_row(row) for row in csv.DictReader(fh)]
        return cls(manifest["config"], records, manifest["initial_cost"], manifest["initial_metrics"],
                   manifest["failures"], manifest["complete"])


class _Campaign:
    """Mutable loop state; one instance per run_campaign call."""

    def __init__(self, config: CampaignConfig, data: CampaignData | None):
        self.cfg = config
        self.task = config.build_task()
        self.policy = config.policy_spec()
        self.schedule = config.schedule(self.task)
        self.mconfig = config.model_config(self.task)
        self.tconfig = config.train_config()
        data = data or build_campaign_data(config, self.task)
        self.test = data.test
        self.dataset = MultiResDataset(data.initial)
        self.pool_ids = list(range(len(data.pool)))
        self.pool = list(data.pool)
        self._cache: tuple | None = None
        self.failures: list = []

    # -- ensembles are a function of (number of queries k, attempt) only
    def ensemble(self, k: int, attempt: int = 0) -> Ensemble:
        if self._cache is not None and self._cache[:2] == (k, attempt):
            return self._cache[2]
        base = derive_seed(self.cfg.seed, "ensemble", k, attempt) % (2**31)
        init = None
        if self.cfg.warm_start and self._cache is not None:
            init = self._cache[2]
        ens = fit_ensemble(self.dataset, self.cfg.n_members, self.mconfig, self.tconfig, base,
                           init=init)
        self._cache = (k, attempt, ens)
        return ens

    def choose(self, t: int, attempt: int):
        R = self.task.R
        p = self.policy
        if p.kind == "random":
            row, r = random_select(len(self.pool), p.mode, R, rng(self.cfg.seed, "policy", t))
            return row, r, math.nan, math.nan
        ens = self.ensemble(t, attempt)
        if p.kind == "coreset":
            reps = {r: _representations(ens.model.member(0), self.pool, r, self.task)
                    for r in p.resolutions(R)}
            row, r, dist = coreset_select(reps, labeled_representations(ens, self.dataset, self.task))
            return row, r, dist, math.nan
        kind = {"mra-u1": "u1", "mra-u2": "u2", "predvar": "predvar"}[p.kind]
        probes = ()
        if kind == "u2":
            probes = self.task.sample_inputs(self.cfg.n_probes, derive_seed(self.cfg.seed, "probes", t))
        table = score_pool(ens, self.pool, self.task, kind, probes, pool_ids=self.pool_ids)
        lam = scheduled_costs(t, self.schedule)
        row, r, _ = select(table.values, lam)
        return row, r, float(table.values[row, r - 1]), float(lam[r - 1])

    def query(self, row: int, r: int):
        ex = query_simulator(self.pool[row], r, self.task, self.pool_ids[row])
        self.dataset.add(ex)
        del self.pool[row]
        del self.pool_ids[row]
        return ex

    def evaluate(self, k: int) -> dict:
        for attempt in (0, 1):
            try:
                return evaluate(self.ensemble(k, attempt), self.test)
            except NumericalError as exc:
                self.failures.append({"step": k - 1, "stage": "evaluate", "attempt": attempt,
                                      "error": repr(exc)})
                if attempt == 1:
                    raise
        raise AssertionError("unreachable")


def run_campaign(config: CampaignConfig, out_dir=None, resume: bool = False,
                 data: CampaignData | None = None) -> CampaignHistory:
    """Run ``config.steps`` acquisition steps and return the query history.

    Test metrics of record ``t`` belong to the ensemble retrained after query
    ``t``; they are filled every ``eval_every`` steps and at the last step.
    With ``resume`` and an existing history in ``out_dir``, completed steps
    are replayed (re-simulated) and the loop continues where it stopped.
    """
    run = _Campaign(config, data)
    history = CampaignHistory(config.to_dict(), initial_cost=run.dataset.total_cost)
    start = 0
    if resume and out_dir is not None and (Path(out_dir) / "manifest.json").exists():
        prev = CampaignHistory.load(out_dir)
        if prev.config != history.config:
            raise ConfigError("existing campaign in out_dir was run with a different config")
        for rec in prev.records:
            run.query(run.pool_ids.index(rec.input_id), rec.resolution)
        history = prev
        run.failures = list(prev.failures)
        start = len(prev.records)
    if start == 0:
        history.initial_metrics = run.evaluate(0)
    for t in range(start, config.steps):
        for attempt in (0, 1):
            try:
                row, r, util, lam_hat = run.choose(t, attempt)
                ex = run.query(row, r)
                break
            except NumericalError as exc:
                log.warning("step %d attempt %d failed: %r", t, attempt, exc)
                run.failures.append({"step": t, "stage": "select/query", "attempt": attempt,
                                     "error": repr(exc)})
                if attempt == 1:
                    history.failures = run.failures
                    if out_dir is not None:
                        history.save(out_dir)
                    raise
        k = t + 1
        rec = QueryRecord(t, int(ex.input_id), r, util, lam_hat, ex.cost_paid,
                          run.dataset.total_cost, run.dataset.total_cost - history.initial_cost)
        if k % config.eval_every == 0 or k == config.steps:
            m = run.evaluate(k)
            rec.test_rel_l2, rec.test_nll = m["rel_l2"], m["nll"]
        history.records.append(rec)
        history.failures = run.failures
        history.complete = k == config.steps
        log.info("%s step %d: r=%d cost=%.4f err=%s", config.policy, t, r, rec.cumulative_cost,
                 rec.test_rel_l2)
        if out_dir is not None:
            history.save(out_dir)
    history.complete = True
    # the last step is always evaluated, so this is a cache hit unless resumed
    history.final_ensemble = run.ensemble(config.steps)
    history.test = run.test
    if out_dir is not None:
        history.save(out_dir)
    return history
