import math

import numpy as np
import pytest

from multires_fno import campaign as campaign_mod
from multires_fno.campaign import (CampaignConfig, CampaignHistory, build_campaign_data,
                                   run_campaign)
from multires_fno.errors import ConfigError, NumericalError
from multires_fno.pde import make_task

TINY = dict(pool_size=6, steps=3, test_size=3, n_initial=2, n_members=2, eval_every=1,
            model={"width": 4, "hidden": 8, "n_modes": 8, "n_layers": 2},
            train={"epochs": 2, "batch_size": 5})


def tiny(**kw):
    return CampaignConfig(**{**TINY, **kw})


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny(policy="mr-dropout")
    with pytest.raises(ConfigError):
        tiny(pool_size=2, steps=3)
    with pytest.raises(ConfigError):
        CampaignConfig.from_dict({**TINY, "bogus": 1})
    cfg = tiny()
    assert CampaignConfig.from_dict(cfg.to_dict()) == cfg


def test_shared_data_is_seed_pinned():
    a, b = build_campaign_data(tiny(policy="random-low")), build_campaign_data(tiny(policy="mra-u1"))
    for xa, xb in zip(a.initial + a.test, b.initial + b.test):
        assert np.array_equal(xa.output.values, xb.output.values)
    assert [ex.resolution_index for ex in a.initial] == [1, 1, 2, 2]
    assert all(ex.resolution_index == 2 for ex in a.test)
    c = build_campaign_data(tiny(seed=1))
    assert not np.array_equal(a.pool[0].values, c.pool[0].values)


@pytest.mark.parametrize("policy", ["mra-u1", "mra-u2", "coreset-mix", "predvar", "random-mix"])
def test_campaign_ledger(policy, tmp_path):
    cfg = tiny(policy=policy)
    hist = run_campaign(cfg, tmp_path)
    task = make_task("burgers")
    assert len(hist.records) == cfg.steps
    ids = [r.input_id for r in hist.records]
    assert len(set(ids)) == len(ids)  # each pool item is queried at most once
    paid = [task.costs[r.resolution - 1] for r in hist.records]
    assert [r.cost_paid for r in hist.records] == pytest.approx(paid, abs=0)
    cum = np.array([r.cumulative_cost for r in hist.records])
    assert np.all(np.diff(cum) > 0)
    assert cum[-1] == pytest.approx(hist.initial_cost + sum(paid), rel=1e-12)
    assert hist.records[-1].query_cost == pytest.approx(sum(paid), rel=1e-12)
    assert all(math.isfinite(r.test_rel_l2) for r in hist.records)
    if policy.startswith(("mra", "predvar")):
        assert hist.records[0].scheduled_cost == pytest.approx(0.5, abs=1e-12)
        assert all(math.isfinite(r.utility) for r in hist.records)
    loaded = CampaignHistory.load(tmp_path)
    assert [r.row() for r in loaded.records] == [r.row() for r in hist.records]
    assert loaded.initial_metrics == hist.initial_metrics and loaded.complete


def test_random_low_cost_is_exact(tmp_path):
    cfg = tiny(policy="random-low", eval_every=2)
    hist = run_campaign(cfg, tmp_path)
    lam = make_task("burgers").costs
    assert hist.initial_cost == pytest.approx(2 * (lam[0] + lam[1]), rel=1e-12)
    assert hist.records[-1].cumulative_cost == pytest.approx(hist.initial_cost + 3 * lam[0], rel=1e-12)
    # evaluated at step 2 and at the last step only
    evaluated = [math.isfinite(r.test_rel_l2) for r in hist.records]
    assert evaluated == [False, True, True]


def test_replay_is_identical(tmp_path):
    cfg = tiny(policy="mra-u1")
    run_campaign(cfg, tmp_path / "a")
    run_campaign(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_resume_matches_uninterrupted(tmp_path, monkeypatch):
    cfg = tiny(policy="mra-u1")
    full = run_campaign(cfg, tmp_path / "full")
    # interrupted after two steps
    part = tmp_path / "part"
    run_campaign(CampaignConfig(**{**cfg.to_dict(), "steps": 2}), part)
    hist = CampaignHistory.load(part)
    hist.config = cfg.to_dict()
    hist.complete = False
    hist.records[-1].test_rel_l2 = hist.records[-1].test_nll = math.nan
    hist.save(part)
    resumed = run_campaign(cfg, part, resume=True)
    assert [r.input_id for r in resumed.records] == [r.input_id for r in full.records]
    assert [r.resolution for r in resumed.records] == [r.resolution for r in full.records]
    assert resumed.records[-1].test_rel_l2 == full.records[-1].test_rel_l2
    with pytest.raises(ConfigError):
        run_campaign(tiny(policy="mra-u1", alpha=0.5), part, resume=True)


def test_numerical_failure_is_retried_once(tmp_path, monkeypatch):
    real = campaign_mod.score_pool
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericalError("injected")
        return real(*a, **kw)

    monkeypatch.setattr(campaign_mod, "score_pool", flaky)
    hist = run_campaign(tiny(policy="mra-u1", steps=2), tmp_path)
    assert len(hist.records) == 2
    assert [f["step"] for f in hist.failures] == [1]

    def broken(*a, **kw):
        raise NumericalError("always")

    monkeypatch.setattr(campaign_mod, "score_pool", broken)
    with pytest.raises(NumericalError):
        run_campaign(tiny(policy="mra-u1", steps=2), tmp_path / "b")
    saved = CampaignHistory.load(tmp_path / "b")
    assert not saved.complete and len(saved.failures) == 2


def test_error_at_cost_uses_last_evaluation_within_budget():
    h = CampaignHistory({"policy": "x"}, initial_cost=1.0, initial_metrics={"rel_l2": 0.5})
    for t, (c, e) in enumerate([(1.5, math.nan), (2.0, 0.4), (3.0, 0.3)]):
        h.records.append(campaign_mod.QueryRecord(t, t, 1, 0.0, 0.0, 0.0, c, c - 1, e))
    assert h.error_at_cost(0.9) != h.error_at_cost(0.9)  # nan before any data
    assert h.error_at_cost(1.7) == 0.5
    assert h.error_at_cost(2.0) == 0.4
    assert h.error_at_cost(10.0) == 0.3
