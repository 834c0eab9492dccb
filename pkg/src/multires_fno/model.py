"""Probabilistic multi-resolution Fourier neural operator.

Per-node lifting FFN over (input values, coordinates, resolution one-hot),
a stack of Fourier layers, then two heads: a channel-wise FFN for the
predictive mean and a convolution + FFN whose spatial mean is the scalar
log-variance eta. The likelihood is N(g | mu, exp(eta) I).
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import GridMismatchError, ModeTruncationError, NumericalError, TrainingError
from .grids import DiscretizedFunction, GridSpec, one_hot_embedding

VARIANCE_FLOOR = 1e-8
LOG_2PI = math.log(2 * math.pi)

_ACTIVATIONS = {"gelu": F.gelu, "relu": F.relu, "tanh": torch.tanh, "identity": lambda x: x}


@dataclass
class ModelConfig:
    dims: int = 1
    in_channels: int = 1
    out_channels: int = 1
    n_resolutions: int = 2
    n_modes: int | tuple = 16
    width: int = 32
    n_layers: int = 4
    lift_hidden: int = 64
    proj_hidden: int = 64
    activation: str = "gelu"

    def __post_init__(self):
        if self.width < 1 or self.n_layers < 1:
            raise ValueError("width and n_layers must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        modes = self.n_modes
        if isinstance(modes, int):
            modes = (modes,) * self.dims
        self.n_modes = tuple(int(m) for m in modes)
        if len(self.n_modes) != self.dims:
            raise ValueError("need one mode count per spatial axis")

    def validate_grid(self, shape: Sequence[int]) -> None:
        for m, n in zip(self.n_modes, shape):
            if n < 2 * m:
                raise ModeTruncationError(
                    f"grid axis of {n} nodes cannot hold {m} retained modes (needs {2 * m})")


@dataclass
class TrainConfig:
    batch_size: int = 20
    learning_rate: float = 1e-3
    epochs: int = 500
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@functools.lru_cache(maxsize=64)
def _dft_bases(n: int, modes: tuple[int, ...], dtype: torch.dtype):
    """Forward/inverse bases for the retained modes of a length-``n`` axis.

    ``modes`` lists the integer frequencies kept. The inverse basis folds in
    the Hermitian doubling of a real inverse FFT, so ``Re(coef @ inv)`` equals
    ``irfft`` of the zero-padded spectrum (frequency 0 counted once).
    """
    j = np.arange(n)
    k = np.asarray(modes)
    phase = 2 * np.pi * np.outer(j, k) / n
    fwd = np.exp(-1j * phase)
    ctype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return torch.as_tensor(fwd, dtype=ctype), torch.as_tensor(np.exp(1j * phase).T / n, dtype=ctype)


def _uniform(gens, shape, bound):
    return torch.stack([(2 * torch.rand(shape, generator=g) - 1) * bound for g in gens])


class _GroupedConv(nn.Module):
    """One conv per ensemble member, realised as a grouped convolution.

    Activations are laid out ``(B, E*C, *grid)`` with member-major channels.
    """

    def __init__(self, gens, dims: int, c_in: int, c_out: int, kernel: int = 1):
        super().__init__()
        self.E, self.dims, self.kernel = len(gens), dims, kernel
        bound = 1.0 / math.sqrt(c_in * kernel**dims)
        w = _uniform(gens, (c_out, c_in) + (kernel,) * dims, bound)
        self.weight = nn.Parameter(w.reshape(self.E * c_out, c_in, *(kernel,) * dims))
        self.bias = nn.Parameter(_uniform(gens, (c_out,), bound).reshape(-1))

    def forward(self, v):
        conv = F.conv1d if self.dims == 1 else F.conv2d
        return conv(v, self.weight, self.bias, padding=self.kernel // 2, groups=self.E)


def _ffn(gens, dims, c_in, hidden, c_out):
    return nn.ModuleList([_GroupedConv(gens, dims, c_in, hidden), _GroupedConv(gens, dims, hidden, c_out)])


def _run_ffn(ffn, v):
    return ffn[1](F.gelu(ffn[0](v)))


class SpectralConv(nn.Module):
    """Truncated Fourier multiplier per member, layout ``(B, E, W, *grid)``.

    Equivalent to rfft -> multiply retained modes -> irfft, evaluated with
    explicit DFT matrices over the retained modes only.
    """

    def __init__(self, gens, width: int, modes: tuple[int, ...]):
        super().__init__()
        self.modes = modes
        scale = 1.0 / (width * width)
        n_blocks = 1 if len(modes) == 1 else 2
        w = torch.stack([scale * torch.rand((n_blocks, width, width) + modes + (2,), generator=g)
                         for g in gens])
        # real/imag stored as a trailing axis so every parameter is real
        self.weights = nn.Parameter(w)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        w = torch.view_as_complex(self.weights)
        if len(self.modes) == 1:
            (m,) = self.modes
            fwd, inv = _dft_bases(v.shape[-1], tuple(range(m)), v.dtype)
            double = torch.full((m,), 2.0, dtype=v.dtype)
            double[0] = 1.0
            vf = v.to(fwd.dtype) @ fwd
            out = torch.einsum("beik,eiok->beok", vf, w[:, 0]) * double
            return (out @ inv).real
        m1, m2 = self.modes
        nx, ny = v.shape[-2:]
        fx, ix = _dft_bases(nx, tuple(range(m1)) + tuple(range(-m1, 0)), v.dtype)
        fy, iy = _dft_bases(ny, tuple(range(m2)), v.dtype)
        double = torch.full((m2,), 2.0, dtype=v.dtype)
        double[0] = 1.0
        vf = torch.einsum("beixy,xk,yl->beikl", v.to(fx.dtype), fx, fy)
        wk = torch.cat([w[:, 0], w[:, 1]], dim=3)
        out = torch.einsum("beikl,eiokl->beokl", vf, wk) * double
        return torch.einsum("beokl,kx,ly->beoxy", out, ix, iy).real


class FourierLayer(nn.Module):
    """v <- act(W v + K v), W pointwise linear, K the spectral convolution."""

    def __init__(self, gens, width: int, modes: tuple[int, ...], activation: str = "gelu"):
        super().__init__()
        self.E, self.width, self.modes = len(gens), width, modes
        self.spectral = SpectralConv(gens, width, modes)
        self.pointwise = _GroupedConv(gens, len(modes), width, width)
        self.activation = activation

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        """``v`` is ``(B, E*W, *grid)``."""
        for m, n in zip(self.modes, v.shape[2:]):
            if n < 2 * m:
                raise ModeTruncationError(f"grid of {n} nodes cannot hold {m} modes")
        B, grid = v.shape[0], v.shape[2:]
        spec = self.spectral(v.reshape(B, self.E, self.width, *grid)).reshape(v.shape)
        return _ACTIVATIONS[self.activation](self.pointwise(v) + spec)


def _generators(seeds) -> list[torch.Generator]:
    return [torch.Generator().manual_seed(int(s)) for s in seeds]


class ProbabilisticFNO(nn.Module):
    """``n_members`` independent networks evaluated side by side.

    Member ``m`` is initialised from ``seeds[m]`` alone, so a member of a
    stacked model equals the single model built from the same seed.
    """

    def __init__(self, config: ModelConfig, seeds: Sequence[int] = (0,)):
        super().__init__()
        c = config
        self.config = c
        self.seeds = [int(s) for s in seeds]
        gens = _generators(self.seeds)
        self.E = len(gens)
        d = c.dims
        self.lift = _ffn(gens, d, c.in_channels + d + c.n_resolutions, c.lift_hidden, c.width)
        acts = [c.activation] * (c.n_layers - 1) + ["identity"]
        self.layers = nn.ModuleList(FourierLayer(gens, c.width, c.n_modes, a) for a in acts)
        self.mean_head = _ffn(gens, d, c.width, c.proj_hidden, c.out_channels)
        self.var_conv = _GroupedConv(gens, d, c.width, c.width, kernel=3)
        self.var_head = _ffn(gens, d, c.width, c.proj_hidden, 1)
        # per-member, per-channel affine normalisation fitted from training data
        self.register_buffer("x_shift", torch.zeros(self.E, c.in_channels))
        self.register_buffer("x_scale", torch.ones(self.E, c.in_channels))
        self.register_buffer("y_shift", torch.zeros(self.E, c.out_channels))
        self.register_buffer("y_scale", torch.ones(self.E, c.out_channels))

    def _member_input(self, x):
        # accepts (B, *grid, C) shared by all members or (E, B, *grid, C)
        if x.dim() == self.config.dims + 2:
            x = x.unsqueeze(0).expand(self.E, *x.shape)
        return x

    def lift_fields(self, x, coords, emb):
        """Lifted channels, layout ``(B, E*W, *grid)``."""
        x = self._member_input(x)
        E, B = x.shape[:2]
        grid = x.shape[2:-1]
        bshape = (E, 1) + (1,) * len(grid) + (-1,)
        xn = (x - self.x_shift.reshape(bshape)) / self.x_scale.reshape(bshape)
        feats = torch.cat([xn, coords.expand(E, B, *grid, coords.shape[-1]),
                           emb.expand(E, B, *grid, emb.shape[-1])], dim=-1)
        # (E, B, *grid, C) -> (B, E*C, *grid)
        feats = torch.movedim(feats, -1, 2).transpose(0, 1).reshape(B, -1, *grid)
        return _run_ffn(self.lift, feats)

    def _trunk(self, x, coords, emb):
        self.config.validate_grid(x.shape[-len(coords.shape[:-1]) - 1:-1])
        v = self.lift_fields(x, coords, emb)
        for layer in self.layers:
            v = layer(v)
        return v

    def _to_member_last(self, v, channels):
        B, grid = v.shape[0], v.shape[2:]
        v = v.reshape(B, self.E, channels, *grid).transpose(0, 1)
        return torch.movedim(v, 2, -1)

    def features(self, x, coords, emb):
        """Output of the last Fourier layer, ``(E, B, *grid, width)``."""
        return self._to_member_last(self._trunk(x, coords, emb), self.config.width)

    def forward(self, x, coords, emb):
        """Return ``mean (E, B, *grid, C_out)`` and ``eta (E, B)`` in data units."""
        v = self._trunk(x, coords, emb)
        c = self.config
        grid_rank = c.dims
        mean = self._to_member_last(_run_ffn(self.mean_head, v), c.out_channels)
        bshape = (self.E, 1) + (1,) * grid_rank + (-1,)
        mean = mean * self.y_scale.reshape(bshape) + self.y_shift.reshape(bshape)
        hv = _run_ffn(self.var_head, F.gelu(self.var_conv(v)))
        eta = hv.reshape(v.shape[0], self.E, -1).mean(dim=2).transpose(0, 1)
        # eta is learned in normalised units; shift to data units, then floor the variance
        eta = eta + 2.0 * torch.log(self.y_scale).mean(dim=1, keepdim=True)
        return mean, torch.clamp(eta, min=math.log(VARIANCE_FLOOR))

    def member(self, m: int) -> "ProbabilisticFNO":
        """Standalone copy of member ``m``."""
        return select_members(self, [m])


def select_members(model: ProbabilisticFNO, members: Sequence[int]) -> "ProbabilisticFNO":
    return stack_members([_split(model, m) for m in members])


def _split(model, m):
    E = model.E
    out = {}
    for name, t in model.state_dict().items():
        out[name] = t.reshape(E, t.shape[0] // E, *t.shape[1:])[m] if _grouped(name) else t[m]
    return model.config, model.seeds[m], out


def _grouped(name: str) -> bool:
    return not (name.endswith("_shift") or name.endswith("_scale") or "spectral" in name)


def stack_members(parts) -> "ProbabilisticFNO":
    """Combine ``(config, seed, per-member state)`` triples or single models."""
    triples = []
    for p in parts:
        if isinstance(p, ProbabilisticFNO):
            triples += [_split(p, m) for m in range(p.E)]
        else:
            triples.append(p)
    config = triples[0][0]
    model = ProbabilisticFNO(config, [t[1] for t in triples])
    state = {}
    for name in triples[0][2]:
        ts = [t[2][name] for t in triples]
        state[name] = torch.cat(ts, dim=0) if _grouped(name) else torch.stack(ts)
    model.load_state_dict(state)
    model.to(triples[0][2][next(iter(triples[0][2]))].dtype)
    model.eval()
    return model


# ------------------------------------------------------------------ helpers

def _coords(grid: GridSpec, dtype) -> torch.Tensor:
    return torch.as_tensor(grid.coordinates(), dtype=dtype)


def _embedding(e_r, R: int, dtype) -> torch.Tensor:
    if isinstance(e_r, (int, np.integer)):
        e_r = one_hot_embedding(int(e_r), R)
    e = np.asarray(e_r, dtype=float)
    if e.shape != (R,):
        raise GridMismatchError(f"embedding of length {e.size} for a model over {R} resolutions")
    return torch.as_tensor(e, dtype=dtype)


def _dtype(model: nn.Module):
    return next(model.parameters()).dtype


def build_model(config: ModelConfig, seed: int | Sequence[int] = 0) -> ProbabilisticFNO:
    seeds = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    return ProbabilisticFNO(config, seeds)


def lift(model: ProbabilisticFNO, f: DiscretizedFunction, e_r) -> DiscretizedFunction:
    """Lifted field of the first member, channels-last on ``f``'s grid."""
    dt = _dtype(model)
    with torch.no_grad():
        x = torch.as_tensor(np.array(f.values), dtype=dt)[None]
        v = model.lift_fields(x, _coords(f.grid, dt), _embedding(e_r, model.config.n_resolutions, dt))
        v = model._to_member_last(v, model.config.width)
    return DiscretizedFunction(f.grid, v[0, 0].double().numpy())


def predict_values(model: ProbabilisticFNO, values: np.ndarray, grid: GridSpec, e_r):
    """Batched prediction for every member.

    ``values`` is ``(B, *grid, C_in)``; returns ``mean (E, B, *grid, C_out)``
    and ``eta (E, B)`` as float64 arrays.
    """
    dt = _dtype(model)
    with torch.no_grad():
        x = torch.as_tensor(np.array(values), dtype=dt)
        mean, eta = model(x, _coords(grid, dt), _embedding(e_r, model.config.n_resolutions, dt))
    mean, eta = mean.double().numpy(), eta.double().numpy()
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(eta))):
        norm = math.sqrt(sum(float(p.detach().double().pow(2).sum()) for p in model.parameters()))
        raise NumericalError(f"non-finite prediction (parameter norm {norm:.3g})")
    return mean, eta


def predict(model: ProbabilisticFNO, f: DiscretizedFunction, e_r, member: int = 0):
    """``(mu, eta)`` of one member for a single input function."""
    mean, eta = predict_values(model, f.values[None], f.grid, e_r)
    return DiscretizedFunction(f.grid, mean[member, 0], f.resolution_index), float(eta[member, 0])


def features_values(model: ProbabilisticFNO, values: np.ndarray, grid: GridSpec, e_r) -> np.ndarray:
    dt = _dtype(model)
    with torch.no_grad():
        x = torch.as_tensor(np.array(values), dtype=dt)
        v = model.features(x, _coords(grid, dt), _embedding(e_r, model.config.n_resolutions, dt))
    return v.double().numpy()


def nll_terms(mean: torch.Tensor, eta: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """-log N(target | mean, exp(eta) I) for every leading (member, example) index."""
    lead = eta.dim()
    d = mean[(0,) * lead].numel()
    sq = (target - mean).flatten(lead).pow(2).sum(dim=-1)
    return 0.5 * d * (eta + LOG_2PI) + 0.5 * sq * torch.exp(-eta)


def gaussian_nll(model: ProbabilisticFNO, batch) -> torch.Tensor:
    """Summed NLL of ``(f, g, r)`` triples sharing one resolution (differentiable).

    Returns one value per member.
    """
    rs = {r for _, _, r in batch}
    if len(rs) != 1:
        raise GridMismatchError("gaussian_nll batches must share one resolution")
    (r,) = rs
    dt = _dtype(model)
    grid = batch[0][0].grid
    x = torch.as_tensor(np.stack([f.values for f, _, _ in batch]), dtype=dt)
    y = torch.as_tensor(np.stack([g.values for _, g, _ in batch]), dtype=dt)
    mean, eta = model(x, _coords(grid, dt), _embedding(r, model.config.n_resolutions, dt))
    return nll_terms(mean, eta, y).sum(dim=1)


# ----------------------------------------------------------------- training

@dataclass
class _Bucket:
    r: int
    x: torch.Tensor
    y: torch.Tensor
    coords: torch.Tensor
    emb: torch.Tensor


def _fit_normaliser(model: ProbabilisticFNO, dataset) -> None:
    xs = np.concatenate([ex.input.values.reshape(-1, ex.input.channels) for ex in dataset])
    ys = np.concatenate([ex.output.values.reshape(-1, ex.output.channels) for ex in dataset])
    dt = _dtype(model)
    for name, arr in (("x", xs), ("y", ys)):
        scale = arr.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        getattr(model, f"{name}_shift").copy_(torch.as_tensor(arr.mean(axis=0), dtype=dt).expand(model.E, -1))
        getattr(model, f"{name}_scale").copy_(torch.as_tensor(scale, dtype=dt).expand(model.E, -1))


def _buckets(dataset, R: int, dtype) -> list[_Bucket]:
    groups: dict[int, list] = {}
    for ex in dataset:
        groups.setdefault(ex.resolution_index, []).append(ex)
    out = []
    for r in sorted(groups):
        exs = groups[r]
        out.append(_Bucket(
            r,
            torch.as_tensor(np.stack([ex.input.values for ex in exs]), dtype=dtype),
            torch.as_tensor(np.stack([ex.output.values for ex in exs]), dtype=dtype),
            _coords(exs[0].input.grid, dtype), _embedding(r, R, dtype)))
    return out


def bucket_schedule(sizes: Sequence[int], batch_size: int) -> list[tuple[int, int, int]]:
    """Deterministic proportional interleaving of per-bucket minibatches.

    Returns ``(bucket, start, stop)`` slices; batch ``j`` of a bucket with
    ``n_k`` batches is placed at fractional position ``(j + 0.5) / n_k``.
    """
    items = []
    for k, n in enumerate(sizes):
        starts = list(range(0, n, batch_size))
        for j, s in enumerate(starts):
            items.append(((j + 0.5) / len(starts), k, s, min(n, s + batch_size)))
    items.sort()
    return [(k, s, e) for _, k, s, e in items]


@dataclass
class TrainReport:
    """Per-epoch mean NLL per example, one list per member."""
    epoch_losses: list = field(default_factory=list)


def train_members(dataset, mconfig: ModelConfig, tconfig: TrainConfig, seeds: Sequence[int],
                  init: ProbabilisticFNO | None = None,
                  report: TrainReport | None = None) -> ProbabilisticFNO:
    """Fit one maximum-likelihood point estimate per seed, side by side.

    Member ``m`` uses ``seeds[m]`` for its initialisation and its minibatch
    shuffles; members share only the (deterministic) bucket schedule, so the
    result matches independent runs of :func:`train`.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    for ex in dataset:
        mconfig.validate_grid(ex.input.grid.shape)
    model = build_model(mconfig, seeds)
    if init is not None:
        model.load_state_dict(init.state_dict())
    with torch.no_grad():
        _fit_normaliser(model, dataset)
    buckets = _buckets(dataset, mconfig.n_resolutions, _dtype(model))
    rngs = [np.random.default_rng(s) for s in seeds]
    opt = torch.optim.Adam(model.parameters(), lr=tconfig.learning_rate,
                           weight_decay=tconfig.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, tconfig.epochs))
    plan = bucket_schedule([b.x.shape[0] for b in buckets], tconfig.batch_size)
    step = 0
    model.train()
    for epoch in range(tconfig.epochs):
        perms = [[torch.as_tensor(g.permutation(b.x.shape[0])) for b in buckets] for g in rngs]
        total = torch.zeros(model.E, dtype=torch.float64)
        for k, s, e in plan:
            b = buckets[k]
            idx = torch.stack([perms[m][k][s:e] for m in range(model.E)])
            mean, eta = model(b.x[idx], b.coords, b.emb)
            terms = nll_terms(mean, eta, b.y[idx])
            loss = terms.mean(dim=1).sum()
            if not torch.isfinite(loss):
                bad = int(torch.nonzero(~torch.isfinite(terms.sum(dim=1)))[0, 0])
                raise TrainingError(f"non-finite loss at optimisation step {step}", step=step, member=bad)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            total += terms.detach().sum(dim=1).double()
        sched.step()
        if report is not None:
            report.epoch_losses.append((total / len(dataset)).tolist())
    model.eval()
    return model


def train(dataset, mconfig: ModelConfig, tconfig: TrainConfig, init: ProbabilisticFNO | None = None,
          report: TrainReport | None = None) -> ProbabilisticFNO:
    """One point estimate seeded by ``tconfig.seed`` (``init`` warm-starts)."""
    return train_members(dataset, mconfig, tconfig, [tconfig.seed], init=init, report=report)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: ProbabilisticFNO, path, extra: dict | None = None) -> None:
    cfg = asdict(model.config)
    cfg["n_modes"] = list(model.config.n_modes)
    torch.save({"config": cfg, "seeds": model.seeds, "state_dict": model.state_dict(),
                "extra": extra or {}}, Path(path))


def load_checkpoint(path) -> ProbabilisticFNO:
    blob = torch.load(Path(path), weights_only=False)
    cfg = ModelConfig(**{**blob["config"], "n_modes": tuple(blob["config"]["n_modes"])})
    model = ProbabilisticFNO(cfg, blob["seeds"])
    model.to(next(iter(blob["state_dict"].values())).dtype)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
