import math

import numpy as np
import pytest
import torch

from multires_fno.errors import GridMismatchError, ModeTruncationError
from multires_fno.grids import DiscretizedFunction, GridSpec
from multires_fno.model import (FourierLayer, ModelConfig, TrainConfig, TrainReport, build_model,
                                bucket_schedule, gaussian_nll, lift, load_checkpoint, nll_terms,
                                predict, predict_values, save_checkpoint, train, train_members,
                                VARIANCE_FLOOR, _generators)
from multires_fno.pde import MultiResDataset, make_pool, make_task, query_simulator

LOG_2PI = math.log(2 * math.pi)


def tiny_config(**kw):
    base = dict(dims=1, n_modes=4, width=4, n_layers=2, lift_hidden=8, proj_hidden=8)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def burgers_data():
    task = make_task("burgers")
    pool = make_pool(task, 20, seed=11)
    return task, MultiResDataset([query_simulator(h, 1 + i % 2, task, i) for i, h in enumerate(pool)])


def test_lift_shape_embedding_and_permutation():
    cfg = tiny_config()
    model = build_model(cfg, 3).double()
    g = GridSpec((16,))
    f = DiscretizedFunction(g, np.sin(2 * np.pi * g.axis_nodes(0)))
    a, b = lift(model, f, 1), lift(model, f, 2)
    assert a.values.shape == (16, cfg.width)
    assert np.linalg.norm(a.values - b.values) > 0
    with pytest.raises(GridMismatchError):
        lift(model, f, np.ones(3))
    # pointwise FFN: permuting nodes together with coordinates permutes the output
    perm = np.random.default_rng(0).permutation(16)
    x = torch.as_tensor(np.array(f.values))[None]
    coords = torch.as_tensor(g.coordinates())
    emb = torch.tensor([1.0, 0.0], dtype=torch.float64)
    with torch.no_grad():
        base = model.lift_fields(x, coords, emb)
        moved = model.lift_fields(x[:, perm], coords[perm], emb)
    torch.testing.assert_close(moved, base[..., perm])


def _layer(width, modes, act="identity"):
    return FourierLayer(_generators([0]), width, modes, act).double()


def test_fourier_layer_degenerate_identity():
    layer = _layer(3, (4,))
    with torch.no_grad():
        layer.spectral.weights.zero_()
        layer.pointwise.weight.copy_(torch.eye(3)[..., None])
        layer.pointwise.bias.zero_()
    v = torch.randn(2, 3, 16, dtype=torch.float64)
    torch.testing.assert_close(layer(v), v)


@pytest.mark.parametrize("shape,modes", [((16,), (4,)), ((12, 10), (3, 4))])
def test_spectral_path_is_low_pass(shape, modes):
    W = 2
    layer = _layer(W, modes)
    with torch.no_grad():
        w = torch.zeros_like(layer.spectral.weights)
        for i in range(W):
            w[0, :, i, i, ..., 0] = 1.0
        layer.spectral.weights.copy_(w)
        layer.pointwise.weight.zero_()
        layer.pointwise.bias.zero_()
    v = torch.randn(1, W, *shape, dtype=torch.float64)
    with torch.no_grad():
        got = layer(v).numpy()
    # oracle: rfft, keep retained modes (both signs on the leading axis in 2D), irfft
    vh = np.fft.rfftn(v.numpy(), axes=tuple(range(2, 2 + len(shape))))
    mask = np.zeros(vh.shape[2:], dtype=bool)
    if len(shape) == 1:
        mask[:modes[0]] = True
    else:
        mask[:modes[0], :modes[1]] = True
        mask[-modes[0]:, :modes[1]] = True
    want = np.fft.irfftn(vh * mask, s=shape, axes=tuple(range(2, 2 + len(shape))))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_fourier_layer_resolution_transfer():
    layer = _layer(2, (4,), "gelu")
    field = lambda x: np.stack([np.sin(2 * np.pi * x), np.cos(4 * np.pi * x)])
    coarse, fine = GridSpec((33,)), GridSpec((129,))
    with torch.no_grad():
        a = layer(torch.as_tensor(field(coarse.axis_nodes(0)))[None]).numpy()[0]
        b = layer(torch.as_tensor(field(fine.axis_nodes(0)))[None]).numpy()[0][:, ::4]
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 5e-2


def test_mode_truncation_error():
    cfg = tiny_config(n_modes=8)
    model = build_model(cfg)
    g = GridSpec((12,))
    with pytest.raises(ModeTruncationError):
        predict(model, DiscretizedFunction(g, np.zeros(12)), 1)


def test_predict_shapes_determinism_and_floor():
    model = build_model(tiny_config(), [0, 1])
    for n in (9, 17, 33):
        g = GridSpec((n,))
        f = DiscretizedFunction(g, np.cos(np.pi * g.axis_nodes(0)))
        mu, eta = predict(model, f, 2)
        mu2, eta2 = predict(model, f, 2)
        assert mu.grid == g
        np.testing.assert_array_equal(mu.values, mu2.values)
        assert eta == eta2 and math.isfinite(eta) and math.exp(eta) >= VARIANCE_FLOOR * (1 - 1e-6)
    mean, eta = predict_values(model, np.zeros((3, 9, 1)), GridSpec((9,)), 1)
    assert mean.shape == (2, 3, 9, 1) and eta.shape == (2, 3)


def test_nll_examples():
    d = 7
    g = torch.randn(1, d, 1, dtype=torch.float64)
    nll = nll_terms(g.clone(), torch.zeros(1, dtype=torch.float64), g)
    assert float(nll) == pytest.approx(0.5 * d * LOG_2PI)
    one = nll_terms(torch.ones(1, 1), torch.zeros(1), torch.zeros(1, 1))
    assert float(one) == pytest.approx(0.5 * LOG_2PI + 0.5, abs=1e-6)
    assert 0.5 * LOG_2PI + 0.5 == pytest.approx(1.4189, abs=1e-4)


def test_nll_variance_stationarity():
    rng = np.random.default_rng(0)
    mu = torch.as_tensor(rng.normal(size=(1, 30, 1)))
    y = torch.as_tensor(rng.normal(size=(1, 30, 1)))
    etas = np.linspace(-3, 3, 6001)
    vals = [float(nll_terms(mu, torch.tensor([e], dtype=torch.float64), y)) for e in etas]
    best = etas[int(np.argmin(vals))]
    msr = float(((y - mu) ** 2).mean())
    assert math.exp(best) == pytest.approx(msr, rel=2e-3)


def test_nll_reduces_to_l2_at_unit_variance():
    rng = np.random.default_rng(1)
    mu, y = (torch.as_tensor(rng.normal(size=(2, 5, 1))) for _ in range(2))
    got = nll_terms(mu, torch.zeros(2, dtype=torch.float64), y)
    want = 0.5 * ((y - mu) ** 2).sum(dim=(1, 2)) + 0.5 * 5 * LOG_2PI
    torch.testing.assert_close(got, want)


def test_gaussian_nll_rejects_mixed_resolutions(burgers_data):
    task, data = burgers_data
    model = build_model(tiny_config())
    exs = data.examples[:2]
    with pytest.raises(GridMismatchError):
        gaussian_nll(model, [(e.input, e.output, e.resolution_index) for e in exs])


def test_bucket_schedule_covers_everything():
    plan = bucket_schedule([7, 30], 5)
    assert sorted((k, s) for k, s, _ in plan) == [(0, 0), (0, 5)] + [(1, s) for s in range(0, 30, 5)]
    # batch j of a bucket with n batches sits at (j + 0.5) / n; ties go to the lower bucket
    assert [k for k, _, _ in plan] == [1, 0, 1, 1, 1, 0, 1, 1]


def test_training_reduces_nll_and_is_seeded(burgers_data):
    _, data = burgers_data
    cfg = tiny_config(n_modes=8)
    tc = TrainConfig(batch_size=5, epochs=15, seed=4)
    rep = TrainReport()
    a = train(data, cfg, tc, report=rep)
    assert rep.epoch_losses[-1][0] < rep.epoch_losses[0][0]
    b = train(data, cfg, tc)
    for (n, p), q in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(p, q), n
    # works at both resolutions
    for r, n in ((1, 33), (2, 129)):
        mu, _ = predict(a, DiscretizedFunction(GridSpec((n,)), np.zeros(n)), r)
        assert mu.grid.shape == (n,)


def test_stacked_members_match_independent_runs(burgers_data):
    _, data = burgers_data
    cfg = tiny_config(n_modes=8)
    tc = TrainConfig(batch_size=5, epochs=3, seed=7)
    stacked = train_members(data, cfg, tc, [6, 7])
    single = train(data, cfg, tc)
    x = np.array(data.examples[1].input.values)[None]
    g = data.examples[1].input.grid
    ms, es = predict_values(stacked, x, g, 2)
    m1, e1 = predict_values(single, x, g, 2)
    # identical arithmetic up to float32 summation order inside grouped kernels
    np.testing.assert_allclose(ms[1], m1[0], rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(es[1], e1[0], rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(predict_values(stacked.member(1), x, g, 2)[0][0], ms[1])


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(tiny_config(), [3, 4])
    save_checkpoint(model, tmp_path / "m.pt")
    back = load_checkpoint(tmp_path / "m.pt")
    assert back.config == model.config and back.seeds == [3, 4]
    for p, q in zip(model.state_dict().values(), back.state_dict().values()):
        assert torch.equal(p, q)
