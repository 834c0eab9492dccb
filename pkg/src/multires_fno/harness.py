"""Experiment configuration, the fixed-data benchmark and campaign suites.

An experiment is described by one YAML file (see ``configs/``). Outputs go
under ``output_dir``; relative paths are resolved against the output root,
which defaults to the working directory and can be moved with the
``MULTIRES_FNO_OUTPUT_ROOT`` environment variable.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .annealing import ALPHA_GRID
from .baselines import POLICY_NAMES
from .campaign import CampaignConfig, CampaignData, CampaignHistory, build_campaign_data, run_campaign
from .ensemble import fit_ensemble, evaluate
from .errors import ConfigError, MultiResError
from .pde.tasks import (MultiResDataset, make_pool, make_task, make_test_set, query_simulator,
                        read_dataset_archive)
from .seeding import derive_seed, rng

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MULTIRES_FNO_OUTPUT_ROOT"
KINDS = ("fixed-data", "campaign", "suite")
N_FIGURE_CASES = 6

# desk-scale sizes fit a laptop CPU; full-scale sizes match the reference experiments
PRESETS = {
    "desk": {"pool_size": 100, "steps": 60, "test_size": 50,
             "model": {"width": 16, "hidden": 32},
             "train": {"epochs": 50, "batch_size": 5, "learning_rate": 3e-3}},
    "full": {"pool_size": 990, "steps": 500, "test_size": 200,
             "model": {"width": 32, "hidden": 64},
             "train": {"epochs": 100, "batch_size": 20, "learning_rate": 1e-3}},
}
FULL_STEPS = {"ns": 300}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")


def resolve_output(path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else output_root() / path


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list
    task: str = "burgers"
    task_params: dict = field(default_factory=dict)
    preset: str = "desk"
    policies: list = field(default_factory=lambda: ["mra-u1"])
    campaign: dict = field(default_factory=dict)
    alpha_grid: list | str | None = None  # "default" runs the standard grid
    ablation_seeds: list | None = None
    fixed: dict = field(default_factory=dict)
    data_dir: str | None = None
    output_dir: str = "runs/experiment"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool)
                                     for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {p!r}; expected one of {POLICY_NAMES}")
        if self.kind == "campaign" and len(self.policies) != 1:
            raise ConfigError("a campaign experiment runs exactly one policy")
        if self.data_dir is not None and not (Path(self.data_dir) / "manifest.json").exists():
            raise ConfigError(f"data_dir {self.data_dir!r} is not a dataset archive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        make_task(self.task, **dict(self.task_params))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields {sorted(unknown)}")
        if "seeds" not in d:
            raise ConfigError("seeds must be given explicitly")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def output_path(self) -> Path:
        return resolve_output(self.output_dir)

    def campaign_config(self, policy: str, seed: int, **overrides) -> CampaignConfig:
        """Preset values, then the ``campaign`` block, then ``overrides``."""
        base = {k: (dict(v) if isinstance(v, dict) else v) for k, v in PRESETS[self.preset].items()}
        if self.preset == "full" and self.task in FULL_STEPS:
            base["steps"] = FULL_STEPS[self.task]
        for k, v in self.campaign.items():
            if k in ("model", "train"):
                base[k] = {**base.get(k, {}), **v}
            else:
                base[k] = v
        base.update(task=self.task, task_params=dict(self.task_params), policy=policy, seed=seed)
        base.update(overrides)
        for k in ("task", "policy", "seed"):
            if k in self.campaign:
                raise ConfigError(f"set {k!r} at the top level, not inside campaign")
        try:
            cfg = CampaignConfig.from_dict(base)
            task = cfg.build_task()
            cfg.model_config(task), cfg.train_config(), cfg.schedule(task)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


# ----------------------------------------------------------- fixed-data benchmark

def _mean_std(xs) -> dict:
    xs = np.asarray(xs, dtype=float)
    return {"mean": float(xs.mean()), "std": float(xs.std())}


def run_fixed_data_benchmark(config: ExperimentConfig, write: bool = True) -> dict:
    """Mixed-resolution training set against an equal-size low-resolution one.

    Each seed draws ``R * n_per_resolution`` inputs. The mixed set queries
    consecutive blocks of them at resolutions 1..R; the low-only set queries
    all of them at resolution 1, so the two sets differ only in fidelity. Both
    ensembles share member seeds and are scored on a highest-resolution test
    set drawn from the same seed.
    """
    if config.task not in ("burgers", "darcy"):
        raise ConfigError("the fixed-data benchmark supports burgers and darcy")
    fx = {"n_per_resolution": 50, "test_size": None, "n_members": 5, **config.fixed}
    cc = config.campaign_config("random-mix", config.seeds[0])
    task = cc.build_task()
    mconfig, tconfig = cc.model_config(task), cc.train_config()
    n = int(fx["n_per_resolution"])
    test_size = int(fx["test_size"] or cc.test_size)
    runs = []
    for s in config.seeds:
        inputs = make_pool(task, task.R * n, derive_seed(s, "fixed", "inputs"))
        test = make_test_set(task, test_size, derive_seed(s, "fixed", "test"))
        mixed = MultiResDataset(query_simulator(h, 1 + i // n, task, i) for i, h in enumerate(inputs))
        low = MultiResDataset(query_simulator(h, 1, task, i) for i, h in enumerate(inputs))
        base = derive_seed(s, "fixed", "ensemble") % (2**31)
        row = {"seed": s}
        for name, ds in (("mixed", mixed), ("low_only", low)):
            ens = fit_ensemble(ds, int(fx["n_members"]), mconfig, tconfig, base)
            row[name] = {**evaluate(ens, test), "cost": ds.total_cost, "size": len(ds)}
        row["error_increase_pct"] = 100.0 * (row["low_only"]["rel_l2"] / row["mixed"]["rel_l2"] - 1.0)
        log.info("fixed-data seed %d: %s", s, row)
        runs.append(row)
    summary = {name: {m: _mean_std([r[name][m] for r in runs]) for m in ("rel_l2", "nll")}
               for name in ("mixed", "low_only")}
    mean_mixed = summary["mixed"]["rel_l2"]["mean"]
    report = {
        "task": config.task, "seeds": list(config.seeds), "n_per_resolution": n,
        "test_size": test_size, "model": asdict(mconfig), "train": asdict(tconfig),
        "runs": runs, "summary": summary,
        "error_increase_pct": {
            **_mean_std([r["error_increase_pct"] for r in runs]),
            "of_means": 100.0 * (summary["low_only"]["rel_l2"]["mean"] / mean_mixed - 1.0)},
    }
    if write:
        _write_json(config.output_path() / "fixed_data_report.json", report)
    return report


# ------------------------------------------------------------------ campaign suites

@dataclass
class RunSpec:
    label: str
    group: str
    config: CampaignConfig

    @property
    def subdir(self) -> str:
        return f"runs/{self.group}/seed_{self.config.seed}"


def suite_runs(config: ExperimentConfig) -> list[RunSpec]:
    """Policy runs for every seed, then the decay-rate sub-suite if requested.

    A sub-suite run whose campaign config equals a main run is not repeated;
    the bundle points both labels at one history.
    """
    runs = [RunSpec(f"{p}/seed{s}", p, config.campaign_config(p, s))
            for s in config.seeds for p in config.policies]
    if config.alpha_grid:
        seeds = config.ablation_seeds or config.seeds
        grid = ALPHA_GRID if config.alpha_grid == "default" else config.alpha_grid
        for a in grid:
            for s in seeds:
                runs.append(RunSpec(f"alpha={a:g}/seed{s}", f"alpha-{a:g}",
                                    config.campaign_config("mra-u1", s, alpha=float(a))))
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate runs in suite")
    return runs


def _data_key(cfg: CampaignConfig) -> str:
    keys = ("task", "task_params", "seed", "n_initial", "pool_size", "test_size")
    return json.dumps({k: getattr(cfg, k) for k in keys}, sort_keys=True)


def campaign_data(cfg: CampaignConfig, data_dir=None) -> CampaignData:
    data = build_campaign_data(cfg)
    if data_dir is not None:
        _, pool, test = read_dataset_archive(data_dir)
        if len(pool) < cfg.pool_size or len(test) < cfg.test_size:
            raise ConfigError("dataset archive is smaller than the configured pool/test sizes")
        data = CampaignData(data.initial, pool[:cfg.pool_size], test[:cfg.test_size])
    return data


def pointwise_errors(history: CampaignHistory, n_cases: int = N_FIGURE_CASES) -> dict:
    """|mixture mean - truth| on ``n_cases`` test inputs picked from the run seed."""
    ens, test = history.final_ensemble, history.test
    seed = history.config["seed"]
    idx = np.sort(rng(seed, "figure-cases").choice(len(test), size=min(n_cases, len(test)),
                                                    replace=False))
    X = np.stack([test[i].input.values for i in idx])
    Y = np.stack([test[i].output.values for i in idx])
    r = test[0].resolution_index
    grid = test[0].input.grid
    mixes = ens.mixtures(X, grid, r)
    mean = np.stack([m.mean().reshape(Y.shape[1:]) for m in mixes])
    return {"indices": idx, "error": np.abs(mean - Y), "truth": Y, "grid": grid.to_dict()}


def save_pointwise(path: Path, pw: dict) -> None:
    np.savez(path / "pointwise.npz", indices=pw["indices"], error=pw["error"], truth=pw["truth"])
    _write_json(path / "pointwise.json", {"grid": pw["grid"]})


def load_pointwise(path: Path) -> dict | None:
    if not (path / "pointwise.npz").exists():
        return None
    with np.load(path / "pointwise.npz") as z:
        out = {k: z[k] for k in z.files}
    out["grid"] = json.loads((path / "pointwise.json").read_text())["grid"]
    return out


def _execute(cfg_dict: dict, out_dir: str, data_dir=None, data: CampaignData | None = None):
    """Run one campaign and write its sidecars; returns an error string or None."""
    cfg = CampaignConfig.from_dict(cfg_dict)
    out = Path(out_dir)
    try:
        hist = run_campaign(cfg, out, data=data if data is not None else campaign_data(cfg, data_dir))
        save_pointwise(out, pointwise_errors(hist))
    except (MultiResError, ArithmeticError, ValueError, RuntimeError) as exc:
        log.error("run in %s failed: %r", out_dir, exc)
        return repr(exc)
    return None


@dataclass
class SuiteBundle:
    """Loaded suite outputs: histories by label plus what failed."""
    task: str
    R: int
    histories: dict
    groups: dict
    missing: dict
    pointwise: dict = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir) -> "SuiteBundle":
        out = Path(out_dir)
        manifest = json.loads((out / "suite_manifest.json").read_text())
        hist, groups, pw = {}, {}, {}
        for run in manifest["runs"]:
            label = run["label"]
            groups[label] = {"group": run["group"], "seed": run["config"]["seed"],
                             "alpha": run["config"]["alpha"], "policy": run["config"]["policy"]}
            if label in manifest["missing"]:
                continue
            d = out / run["dir"]
            hist[label] = CampaignHistory.load(d)
            p = load_pointwise(d)
            if p is not None:
                pw[label] = p
        return cls(manifest["task"], manifest["R"], hist, groups, dict(manifest["missing"]), pw)

    def by_group(self, group: str) -> list[CampaignHistory]:
        return [h for lab, h in self.histories.items() if self.groups[lab]["group"] == group]


def run_campaign_suite(config: ExperimentConfig, out_dir=None) -> SuiteBundle:
    """Run every policy (and the decay-rate grid) on shared, seed-pinned data.

    Failures are isolated per run and listed under ``missing`` in the suite
    manifest. With ``workers > 1`` runs go to a process pool; the data are
    rebuilt in each worker from the same seeds, so outputs do not depend on
    the worker count.
    """
    out = Path(out_dir) if out_dir is not None else config.output_path()
    runs = suite_runs(config)
    task = make_task(config.task, **dict(config.task_params))
    # identical campaign configs share one directory
    dirs, unique = {}, {}
    for run in runs:
        key = json.dumps(run.config.to_dict(), sort_keys=True)
        if key not in unique:
            unique[key] = run
        dirs[run.label] = unique[key].subdir
    errors: dict = {}
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futs = {run.label: pool.submit(_execute, run.config.to_dict(), str(out / run.subdir),
                                           config.data_dir)
                    for run in unique.values()}
            for label, fut in futs.items():
                errors[label] = fut.result()
    else:
        cache: dict = {}
        for run in unique.values():
            key = _data_key(run.config)
            if key not in cache:
                cache[key] = campaign_data(run.config, config.data_dir)
            errors[run.label] = _execute(run.config.to_dict(), str(out / run.subdir),
                                         config.data_dir, cache[key])
    missing = {}
    for run in runs:
        err = errors[unique[json.dumps(run.config.to_dict(), sort_keys=True)].label]
        if err is not None:
            missing[run.label] = err
    manifest = {
        "experiment": config.to_dict(), "task": config.task, "R": task.R,
        "runs": [{"label": r.label, "group": r.group, "dir": dirs[r.label],
                  "config": r.config.to_dict()} for r in runs],
        "missing": missing,
    }
    _write_json(out / "suite_manifest.json", manifest)
    bundle = SuiteBundle.load(out)
    write_bundle_tables(bundle, out)
    return bundle


def rerun_from_manifest(manifest_path, out_dir) -> SuiteBundle:
    manifest = json.loads(Path(manifest_path).read_text())
    return run_campaign_suite(ExperimentConfig.from_dict(manifest["experiment"]), out_dir)


# ----------------------------------------------------------------- bundle tables

def stage_counts(history: CampaignHistory, R: int, n_stages: int = 4) -> np.ndarray:
    """(n_stages, R) query counts per resolution over equal splits of the steps."""
    res = history.resolutions()
    out = np.zeros((n_stages, R), dtype=int)
    for q, chunk in enumerate(np.array_split(res, n_stages)):
        for r in chunk:
            out[q, r - 1] += 1
    return out


def low_fraction(history: CampaignHistory) -> float:
    res = history.resolutions()
    return float(np.mean(res == 1)) if len(res) else float("nan")


def write_bundle_tables(bundle: SuiteBundle, out_dir) -> dict:
    """Curve and stage-count tables for every finished run (``bundle.json``)."""
    curves, stages = {}, {}
    for label, h in bundle.histories.items():
        cost, err = h.curve()
        nll = np.array([h.initial_metrics.get("nll", np.nan)] + [r.test_nll for r in h.records])
        nll = nll[np.isfinite(nll)]
        curves[label] = {**bundle.groups[label], "cost": cost.tolist(), "rel_l2": err.tolist(),
                         "nll": nll.tolist()}
        stages[label] = stage_counts(h, bundle.R).tolist()
    tables = {"task": bundle.task, "R": bundle.R, "curves": curves, "stage_counts": stages,
              "missing": bundle.missing}
    _write_json(Path(out_dir) / "bundle.json", tables)
    return tables


def matched_cost_comparison(a: list[CampaignHistory], b: list[CampaignHistory]) -> dict:
    """Seed-paired errors of two run groups at the cheaper run's final cost.

    For each seed present in both groups the budget is the smaller of the two
    final cumulative costs; each run contributes its last evaluation within
    that budget. Medians over seeds are reported alongside the per-seed rows.
    """
    ka = {h.config["seed"]: h for h in a}
    kb = {h.config["seed"]: h for h in b}
    rows = []
    for s in sorted(set(ka) & set(kb)):
        budget = min(ka[s].curve()[0][-1], kb[s].curve()[0][-1])
        rows.append({"seed": s, "budget": float(budget), "a": ka[s].error_at_cost(budget),
                     "b": kb[s].error_at_cost(budget)})
    if not rows:
        raise ValueError("no common seeds")
    return {"rows": rows, "a": float(np.median([r["a"] for r in rows])),
            "b": float(np.median([r["b"] for r in rows]))}
