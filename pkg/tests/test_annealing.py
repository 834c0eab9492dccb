import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multires_fno.annealing import ALPHA_GRID, CostSchedule, decay_c, scheduled_costs, select
from multires_fno.errors import CampaignExhaustedError, ConfigError
from multires_fno.pde import COST_RATIOS, make_task


def test_decay_examples():
    for alpha in ALPHA_GRID:
        assert decay_c(0, "exp", alpha) == 1.0
        assert decay_c(0, "sigmoid", alpha) == 1.0
    assert decay_c(100, "exp", 0.01) == pytest.approx(np.exp(-1), rel=1e-15)
    assert decay_c(100, "exp", 0.01) == pytest.approx(0.36788, abs=1e-5)
    t = np.linspace(0, 2000, 1000)
    for kind in ("exp", "sigmoid"):
        c = decay_c(t, kind, 0.02)
        assert np.all(np.diff(c) < 0) and c[-1] < 1e-15
    with pytest.raises(ValueError):
        decay_c(-1.0)


@pytest.mark.parametrize("name", sorted(COST_RATIOS))
@pytest.mark.parametrize("renorm", [True, False])
def test_schedule_start_limit_and_monotone(name, renorm):
    lam = make_task(name).costs
    s = CostSchedule(tuple(lam), "exp", 0.01, renorm)
    np.testing.assert_array_equal(scheduled_costs(0, s), np.full(len(lam), 1 / len(lam)))
    t_late = -np.log(1e-7 / 2) / 0.01
    assert decay_c(t_late, "exp", 0.01) < 1e-7
    assert np.max(np.abs(scheduled_costs(t_late, s) - lam)) < 1e-6
    if not renorm:
        grid = np.linspace(0, 3000, 1000)
        traj = np.stack([scheduled_costs(t, s) for t in grid])
        for r, l in enumerate(lam):
            step = np.diff(traj[:, r])
            assert np.all(step >= 0) if l > 1 / len(lam) else np.all(step <= 0)
    else:
        for t in np.linspace(0, 500, 50):
            assert scheduled_costs(t, s).sum() == pytest.approx(1.0, abs=1e-15)


def test_uniform_fixed_point():
    s = CostSchedule((0.25, 0.25, 0.25, 0.25), "sigmoid", 0.5)
    for t in (0, 1, 10, 1e4):
        np.testing.assert_array_equal(scheduled_costs(t, s), np.full(4, 0.25))


def test_schedule_validation():
    with pytest.raises(ConfigError):
        CostSchedule((0.6, 0.4))
    with pytest.raises(ConfigError):
        CostSchedule((0.5, 0.6))
    with pytest.raises(ConfigError):
        CostSchedule((0.5, 0.5), alpha=0.0)
    with pytest.raises(ConfigError):
        CostSchedule((0.5, 0.5), kind="linear")


def test_select_examples():
    assert select(np.array([[-3.0, -5.0]]), np.array([0.5, 0.5]))[:2] == (0, 1)
    assert select(np.array([[0.2]]), np.array([1.0]))[:2] == (0, 1)
    scores = np.array([[1.0, 0.5], [0.2, 2.0]])
    assert select(scores, np.array([0.5, 0.5]))[:2] == (1, 2)
    assert select(scores, np.array([0.1, 0.9]))[:2] == (0, 1)
    with pytest.raises(CampaignExhaustedError):
        select(np.zeros((0, 2)), np.array([0.5, 0.5]))


def test_select_tie_breaking():
    # equal ratios everywhere: lower r first, then the smaller pool row
    assert select(np.ones((3, 2)), np.ones(2))[:2] == (0, 1)
    scores = np.array([[0.0, 2.0], [1.0, 2.0], [1.0, 0.0]])
    assert select(scores, np.array([0.5, 1.0]))[:2] == (1, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.floats(1e-3, 1e3), st.integers(0, 2**31),
       st.floats(0, 400))
def test_select_scale_and_renormalisation_invariance(P, R, c, seed, t):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0, 5, size=(P, R))
    lam = np.sort(rng.uniform(0.1, 1, size=R))
    lam = lam / lam.sum()
    if np.any(np.diff(lam) <= 0):
        return
    a = CostSchedule(tuple(lam), alpha=0.05, renormalize=True)
    b = CostSchedule(tuple(lam), alpha=0.05, renormalize=False)
    pick = select(scores, scheduled_costs(t, a))[:2]
    assert select(c * scores, scheduled_costs(t, a))[:2] == pick
    assert select(scores, scheduled_costs(t, b))[:2] == pick
