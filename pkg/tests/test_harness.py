import json
import shutil

import numpy as np
import pytest
import yaml

from multires_fno import campaign as campaign_mod
from multires_fno import cli
from multires_fno.annealing import ALPHA_GRID
from multires_fno.errors import ConfigError, NumericalError
from multires_fno.figures import emit_figures, median_curve, render_all
from multires_fno.harness import (ExperimentConfig, SuiteBundle, load_config, matched_cost_comparison,
                                  rerun_from_manifest, run_campaign_suite, run_fixed_data_benchmark,
                                  stage_counts, suite_runs)

TINY = {"pool_size": 8, "steps": 4, "test_size": 3, "n_initial": 2, "n_members": 2,
        "eval_every": 2, "model": {"width": 4, "hidden": 8, "n_modes": 8, "n_layers": 2},
        "train": {"epochs": 2}}


def suite_cfg(tmp_path, **kw):
    d = {"kind": "suite", "seeds": [0], "policies": ["mra-u1", "random-low", "coreset-mix"],
         "campaign": dict(TINY), "output_dir": str(tmp_path / "suite")}
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def test_config_requires_explicit_seeds(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"kind": "suite", "policies": ["mra-u1"]}))
    with pytest.raises(ConfigError, match="seeds"):
        load_config(p)
    for bad in ({"kind": "nope", "seeds": [0]}, {"kind": "suite", "seeds": [0], "extra": 1},
                {"kind": "suite", "seeds": [0], "policies": ["mr-dropout"]},
                {"kind": "suite", "seeds": [0, 0]},
                {"kind": "suite", "seeds": [0], "data_dir": str(tmp_path / "absent")},
                {"kind": "campaign", "seeds": [0], "policies": ["mra-u1", "random-low"]}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_presets_and_overrides():
    cfg = ExperimentConfig.from_dict({"kind": "suite", "seeds": [3], "campaign": {"train": {"epochs": 7}}})
    cc = cfg.campaign_config("random-mix", 3)
    assert (cc.pool_size, cc.steps, cc.test_size) == (100, 60, 50)
    assert cc.model == {"width": 16, "hidden": 32}
    assert cc.train == {"epochs": 7, "batch_size": 5, "learning_rate": 3e-3}
    full = ExperimentConfig.from_dict({"kind": "suite", "seeds": [0], "preset": "full", "task": "ns"})
    assert full.campaign_config("mra-u1", 0).steps == 300
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "suite", "seeds": [0],
                                    "campaign": {"train": {"batch_size": 0}}}).campaign_config("mra-u1", 0)


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("MULTIRES_FNO_OUTPUT_ROOT", str(tmp_path))
    cfg = ExperimentConfig.from_dict({"kind": "suite", "seeds": [0], "output_dir": "runs/x"})
    assert cfg.output_path() == tmp_path / "runs" / "x"


def test_alpha_subsuite_grid_and_dedupe(tmp_path):
    cfg = suite_cfg(tmp_path, alpha_grid="default", ablation_seeds=[0])
    runs = suite_runs(cfg)
    alphas = [r.config.alpha for r in runs if r.group.startswith("alpha-")]
    assert tuple(alphas) == ALPHA_GRID == (0.002, 0.005, 0.01, 0.02, 0.5, 1.0)
    assert all(r.config.task == "burgers" for r in runs)
    main = next(r for r in runs if r.label == "mra-u1/seed0")
    dup = next(r for r in runs if r.label == "alpha=0.01/seed0")
    assert main.config == dup.config


def test_fixed_benchmark_schema_and_determinism(tmp_path):
    d = {"kind": "fixed-data", "seeds": [0, 1], "campaign": {"model": TINY["model"], "train": {"epochs": 2}},
         "fixed": {"n_per_resolution": 3, "test_size": 3, "n_members": 2},
         "output_dir": str(tmp_path / "fx")}
    a = run_fixed_data_benchmark(ExperimentConfig.from_dict(d))
    b = run_fixed_data_benchmark(ExperimentConfig.from_dict(d), write=False)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    for name in ("mixed", "low_only"):
        for m in ("rel_l2", "nll"):
            assert set(a["summary"][name][m]) == {"mean", "std"}
    assert a["runs"][0]["mixed"]["size"] == a["runs"][0]["low_only"]["size"] == 6
    assert a["runs"][0]["low_only"]["cost"] < a["runs"][0]["mixed"]["cost"]
    assert np.isfinite(a["error_increase_pct"]["mean"])
    assert (tmp_path / "fx" / "fixed_data_report.json").exists()
    with pytest.raises(ConfigError):
        run_fixed_data_benchmark(ExperimentConfig.from_dict({**d, "task": "ns"}))


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("suite")
    cfg = suite_cfg(tmp)
    return cfg, run_campaign_suite(cfg)


def test_suite_shares_data_and_writes_tables(suite):
    cfg, bundle = suite
    assert not bundle.missing and len(bundle.histories) == 3
    costs = {h.initial_cost for h in bundle.histories.values()}
    assert len(costs) == 1
    truths = [pw["truth"] for pw in bundle.pointwise.values()]
    assert all(np.array_equal(t, truths[0]) for t in truths)
    tables = json.loads((cfg.output_path() / "bundle.json").read_text())
    for curve in tables["curves"].values():
        assert np.all(np.diff(curve["cost"]) >= 0)
    for label, h in bundle.histories.items():
        counts = np.array(tables["stage_counts"][label])
        assert counts.sum() == len(h.records) and counts.shape == (4, 2)
        assert bundle.pointwise[label]["error"].shape[0] == 3  # test set smaller than 6


def test_suite_rerun_from_manifest_is_exact(suite, tmp_path):
    cfg, bundle = suite
    rerun_from_manifest(cfg.output_path() / "suite_manifest.json", tmp_path / "again")
    for p in sorted(cfg.output_path().glob("runs/*/seed_*/*")):
        if p.suffix in (".csv", ".json", ".npz"):
            q = tmp_path / "again" / p.relative_to(cfg.output_path())
            assert p.read_bytes() == q.read_bytes(), p


def test_parallel_workers_match_serial(suite, tmp_path):
    cfg, _ = suite
    par = ExperimentConfig.from_dict({**cfg.to_dict(), "workers": 2, "output_dir": str(tmp_path / "par")})
    run_campaign_suite(par)
    for p in sorted(cfg.output_path().glob("runs/*/seed_*/history.csv")):
        q = tmp_path / "par" / p.relative_to(cfg.output_path())
        assert p.read_bytes() == q.read_bytes()


def test_policy_failures_are_isolated(tmp_path, monkeypatch):
    def broken(*a, **kw):
        raise NumericalError("injected")

    monkeypatch.setattr(campaign_mod, "score_pool", broken)
    bundle = run_campaign_suite(suite_cfg(tmp_path, policies=["mra-u1", "random-low"]))
    assert list(bundle.missing) == ["mra-u1/seed0"]
    assert list(bundle.histories) == ["random-low/seed0"]
    manifest = json.loads((tmp_path / "suite" / "suite_manifest.json").read_text())
    assert "injected" in manifest["missing"]["mra-u1/seed0"]


def test_figures_regenerate_from_sidecars(suite, tmp_path):
    _, bundle = suite
    paths = emit_figures(bundle, tmp_path / "fig")
    assert sorted(p.name for p in paths) == ["error_vs_cost_burgers.png", "pointwise_error_burgers.png",
                                             "resolution_counts_burgers.png"]
    copy = tmp_path / "copy"
    shutil.copytree(tmp_path / "fig", copy)
    for p in copy.glob("*.png"):
        p.unlink()
    again = render_all(copy)
    assert all(p.exists() and p.stat().st_size > 0 for p in again)
    with pytest.raises(ValueError):
        emit_figures(SuiteBundle("burgers", 2, {}, {}, {}), tmp_path / "empty")


def test_stage_counts_and_matched_cost(suite):
    _, bundle = suite
    h = bundle.histories["random-low/seed0"]
    assert stage_counts(h, 2).tolist() == [[1, 0], [1, 0], [1, 0], [1, 0]]
    cmp = matched_cost_comparison(bundle.by_group("random-low"), bundle.by_group("mra-u1"))
    row = cmp["rows"][0]
    assert row["budget"] == pytest.approx(h.curve()[0][-1])
    assert cmp["b"] == bundle.histories["mra-u1/seed0"].error_at_cost(row["budget"])


def test_median_curve_steps():
    a = (np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.4, 0.3]))
    b = (np.array([1.0, 2.5]), np.array([0.6, 0.2]))
    x, y = median_curve([a, b])
    assert x.tolist() == [1.0, 2.0, 2.5]
    assert y.tolist() == pytest.approx([0.55, 0.5, 0.3])


# ------------------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["suite", "--config", str(tmp_path / "none.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unclosed")
    assert cli.main(["suite", "--config", str(bad)]) == 2
    assert cli.main(["campaign", "--config", str(bad), "--policy", "mr-dropout"]) == 2
    assert cli.main(["figures", "--bundle", str(tmp_path)]) == 2

    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"kind": "campaign", "seeds": [0], "policies": ["mra-u1"],
                                   "campaign": TINY, "output_dir": "camp"}))

    def broken(*a, **kw):
        raise NumericalError("injected")

    monkeypatch.setenv("MULTIRES_FNO_OUTPUT_ROOT", str(tmp_path / "root"))
    monkeypatch.setattr(campaign_mod, "score_pool", broken)
    assert cli.main(["campaign", "--config", str(cfg)]) == 3
    monkeypatch.undo()
    monkeypatch.setenv("MULTIRES_FNO_OUTPUT_ROOT", str(tmp_path / "root"))
    assert cli.main(["campaign", "--config", str(cfg), "--policy", "random-low"]) == 0
    assert (tmp_path / "root" / "camp" / "history.csv").exists()
    assert cli.main(["campaign", "--config", str(cfg), "--policy", "random-low", "--resume"]) == 0


def test_cli_generate_data_and_suite(tmp_path, monkeypatch):
    monkeypatch.setenv("MULTIRES_FNO_OUTPUT_ROOT", str(tmp_path))
    assert cli.main(["generate-data", "--task", "burgers", "--pool", "8", "--test", "3",
                     "--seed", "0", "--out", "data"]) == 0
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert manifest["pool_size"] == 8 and manifest["task"]["name"] == "burgers"
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"kind": "suite", "seeds": [0], "policies": ["random-low", "random-mix"],
                                   "campaign": TINY, "data_dir": str(tmp_path / "data"),
                                   "output_dir": "suite"}))
    assert cli.main(["suite", "--config", str(cfg), "--policy", "random-low"]) == 0
    manifest = json.loads((tmp_path / "suite" / "suite_manifest.json").read_text())
    assert [r["label"] for r in manifest["runs"]] == ["random-low/seed0"]
    assert (tmp_path / "suite" / "figures" / "error_vs_cost_burgers.png").exists()
    assert cli.main(["figures", "--bundle", "suite/figures"]) == 0
    assert cli.main(["fixed-bench", "--config", str(cfg)]) == 2
