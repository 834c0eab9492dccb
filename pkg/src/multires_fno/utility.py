"""Mutual-information utilities under moment-matched ensemble predictives.

The ensemble predictive is replaced by the Gaussian with the same first two
moments, whose covariance has the diagonal-plus-low-rank form
``Lambda + B B^T`` with ``B = [rho_1 - mean, ..., rho_M - mean] / sqrt(M - 1)``.
All log-determinants go through the determinant lemma, so the only dense
factorisations are M x M.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InsufficientEnsembleError, NumericalError
from .grids import downsample

JITTER = 1e-10
LOG_2PI = np.log(2 * np.pi)
UTILITY_KINDS = ("u1", "u2", "predvar")


@dataclass(frozen=True, eq=False)
class LowRankGaussian:
    mean: np.ndarray
    diag: np.ndarray
    factor: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        diag = np.asarray(self.diag, dtype=float).reshape(-1)
        factor = np.asarray(self.factor, dtype=float)
        if factor.ndim != 2 or factor.shape[0] != mean.size or diag.size != mean.size:
            raise ValueError("mean, diag and factor rows must share the dimension d")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "factor", factor)

    @property
    def d(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        """Dense ``Lambda + B B^T``; for checks on small d only."""
        return np.diag(self.diag) + self.factor @ self.factor.T


def _member_mean(a):
    # exact when all members agree, so a degenerate ensemble has B = 0 exactly
    return a[0] + np.mean(a - a[0], axis=0)


def _check_members(*mixtures):
    M = mixtures[0].M
    if any(p.M != M for p in mixtures):
        raise ValueError("mixtures are not member-aligned (different M)")
    if M < 2:
        raise InsufficientEnsembleError(f"moment matching needs M >= 2 members, got {M}")
    return M


def moment_match(pred1, pred2=None) -> LowRankGaussian:
    """Matched Gaussian of one mixture, or the joint of two member-aligned ones."""
    preds = [pred1] if pred2 is None else [pred1, pred2]
    M = _check_members(*preds)
    rho = np.concatenate([p.means for p in preds], axis=1)
    diag = np.concatenate([np.full(p.d, _member_mean(p.variances)) for p in preds])
    mean = _member_mean(rho)
    B = (rho - mean).T / np.sqrt(M - 1)
    return LowRankGaussian(mean, diag, B)


def _chol_logdet(A: np.ndarray) -> np.ndarray:
    """Batched log-determinant of SPD matrices of the form I + C, C PSD.

    Their eigenvalues are >= 1, so the jitter is only a fallback for
    factorisations broken by round-off; adding it unconditionally would bias
    small MIs by about M * JITTER.
    """
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(A + JITTER * np.eye(A.shape[-1]))
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def logdet_lowrank(g: LowRankGaussian) -> float:
    """log det(Lambda + B B^T) = sum log diag + log det(I + B^T Lambda^-1 B)."""
    if np.any(g.diag <= 0):
        raise ValueError("diagonal entries must be positive")
    B = g.factor
    inner = np.eye(B.shape[1]) + (B / g.diag[:, None]).T @ B
    return float(np.sum(np.log(g.diag)) + _chol_logdet(inner))


def entropy(g: LowRankGaussian) -> float:
    return 0.5 * logdet_lowrank(g) + 0.5 * g.d * (1.0 + LOG_2PI)


def spread_gram(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """``B^T Lambda^-1 B`` for stacked mixtures.

    ``means`` is ``(..., M, d)`` and ``variances`` ``(..., M)``; returns
    ``(..., M, M)``. The cost is O(M^2 d) per mixture.
    """
    M = means.shape[-2]
    ref = means[..., :1, :]
    centred = means - (ref + np.mean(means - ref, axis=-2, keepdims=True))
    gram = centred @ np.swapaxes(centred, -1, -2)
    return gram / ((M - 1) * variances.mean(axis=-1)[..., None, None])


def mi_from_grams(C1: np.ndarray, C2: np.ndarray) -> np.ndarray:
    """MI of a joint whose blocks have inner matrices C1 and C2.

    The diagonal log terms of the three log-determinants cancel, and the
    joint's inner matrix is ``C1 + C2`` because Lambda is block diagonal.
    """
    eye = np.eye(C1.shape[-1])
    return 0.5 * (_chol_logdet(eye + C1) + _chol_logdet(eye + C2) - _chol_logdet(eye + C1 + C2))


def _gram(p) -> np.ndarray:
    return spread_gram(p.means, p.variances)


def mutual_information(pred1, pred2) -> float:
    _check_members(pred1, pred2)
    return float(mi_from_grams(_gram(pred1), _gram(pred2)))


def mean_predictive_variance(p) -> float:
    """Average over outputs of the matched pointwise variance (M - 1 spread)."""
    spread = np.sum((p.means - _member_mean(p.means)) ** 2, axis=0) / (p.M - 1)
    return float(_member_mean(p.variances) + spread.mean())


# -------------------------------------------------------------- pool utilities

def _mixture_at(ensemble, h, r, task):
    from .ensemble import predictive_mixture
    return predictive_mixture(ensemble, downsample(h, task.grid(r)), r)


def utility_u1(ensemble, h, r: int, task) -> float:
    """MI between the prediction at (h^r, e_r) and at (h^R, e_R)."""
    p_r = _mixture_at(ensemble, h, r, task)
    p_top = _mixture_at(ensemble, h, task.R, task)
    return mutual_information(p_r, p_top)


def utility_u2(ensemble, h, r: int, probes: Sequence, task) -> float:
    """Monte-Carlo average of MI against top-resolution predictions at the probes."""
    if len(probes) < 1:
        raise ValueError("u2 needs at least one probe function")
    p_r = _mixture_at(ensemble, h, r, task)
    return float(np.mean([mutual_information(p_r, _mixture_at(ensemble, q, task.R, task))
                          for q in probes]))


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Utilities for every (pool item, resolution); ``values[i, r - 1]``."""
    values: np.ndarray
    pool_ids: np.ndarray
    kind: str

    def write(self, path, scheduled_costs=None) -> None:
        P, R = self.values.shape
        lam = np.ones(R) if scheduled_costs is None else np.asarray(scheduled_costs)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pool_id", "r", "utility", "scheduled_cost", "ratio"])
            for i in range(P):
                for r in range(R):
                    u = self.values[i, r]
                    w.writerow([int(self.pool_ids[i]), r + 1, repr(float(u)), repr(float(lam[r])),
                                repr(float(u / lam[r]))])


def _stacked_predictions(ensemble, functions, r, task, chunk):
    """Member means ``(P, M, d)`` and variances ``(P, M)`` at resolution r."""
    grid = task.grid(r)
    means, variances = [], []
    for s in range(0, len(functions), chunk):
        X = np.stack([downsample(h, grid).values for h in functions[s:s + chunk]])
        mean, eta = ensemble.predict_values(X, grid, r)
        E, B = eta.shape
        means.append(np.swapaxes(mean.reshape(E, B, -1), 0, 1))
        variances.append(np.exp(eta).T)
    return np.concatenate(means), np.concatenate(variances)


def score_pool(ensemble, pool: Sequence, task, kind: str = "u1", probes: Sequence = (),
               resolutions: Sequence[int] | None = None, pool_ids=None,
               chunk: int = 25) -> ScoreTable:
    """Score every candidate at every resolution in O(|P| R M^2 d).

    Resolutions outside ``resolutions`` get ``-inf`` so they are never selected.
    """
    if len(pool) == 0:
        raise ValueError("cannot score an empty pool")
    if kind not in UTILITY_KINDS:
        raise ValueError(f"unknown utility kind {kind!r}")
    if ensemble.M < 2:
        raise InsufficientEnsembleError("scoring needs an ensemble with M >= 2")
    R = task.R
    active = list(range(1, R + 1)) if resolutions is None else sorted(set(resolutions))
    table = np.full((len(pool), R), -np.inf)
    need_top = kind == "u1"
    grams = {}
    for r in sorted(set(active) | ({R} if need_top else set())):
        means, variances = _stacked_predictions(ensemble, pool, r, task, chunk)
        if kind == "predvar":
            ref = means[:, :1]
            centred = means - (ref + np.mean(means - ref, axis=1, keepdims=True))
            spread = np.sum(centred**2, axis=1) / (means.shape[1] - 1)
            table[:, r - 1] = variances.mean(axis=1) + spread.mean(axis=1)
        else:
            grams[r] = spread_gram(means, variances)
    if kind == "u1":
        for r in active:
            table[:, r - 1] = mi_from_grams(grams[r], grams[R])
    elif kind == "u2":
        if len(probes) < 1:
            raise ValueError("u2 needs at least one probe function")
        pm, pv = _stacked_predictions(ensemble, probes, R, task, chunk)
        probe_grams = spread_gram(pm, pv)
        for r in active:
            mi = mi_from_grams(grams[r][:, None], probe_grams[None])
            table[:, r - 1] = mi.mean(axis=1)
    if not np.all(np.isfinite(table[:, [r - 1 for r in active]])):
        raise NumericalError("non-finite utility in score table")
    ids = np.arange(len(pool)) if pool_ids is None else np.asarray(pool_ids)
    return ScoreTable(table, ids, kind)
