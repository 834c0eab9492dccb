"""Annealed resolution costs and utility/cost selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CampaignExhaustedError, ConfigError

DECAY_KINDS = ("exp", "sigmoid")
ALPHA_GRID = (0.002, 0.005, 0.01, 0.02, 0.5, 1.0)


@dataclass(frozen=True)
class CostSchedule:
    costs: tuple
    kind: str = "exp"
    alpha: float = 0.01
    renormalize: bool = True

    def __post_init__(self):
        lam = np.asarray(self.costs, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ConfigError("costs must be a non-empty vector")
        if np.any(lam <= 0) or not np.isclose(lam.sum(), 1.0):
            raise ConfigError("costs must be positive and sum to 1")
        if np.any(np.diff(lam) < 0):
            raise ConfigError("costs must be non-decreasing in the resolution index")
        if self.kind not in DECAY_KINDS:
            raise ConfigError(f"unknown decay kind {self.kind!r}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        object.__setattr__(self, "costs", tuple(float(c) for c in lam))

    @property
    def R(self) -> int:
        return len(self.costs)


def decay_c(t, kind: str = "exp", alpha: float = 0.01):
    """c(t) = exp(-alpha t) or 2 (1 - sigmoid(alpha t)); 1 at t = 0, 0 at infinity."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    x = alpha * t
    if kind == "exp":
        c = np.exp(-x)
    elif kind == "sigmoid":
        # 2 (1 - s(x)) = 2 s(-x), written to avoid cancellation for large x
        c = 2.0 * np.exp(-np.logaddexp(0.0, x))
    else:
        raise ValueError(f"unknown decay kind {kind!r}")
    return float(c) if c.ndim == 0 else c


def scheduled_costs(t, schedule: CostSchedule) -> np.ndarray:
    lam = np.asarray(schedule.costs)
    c = decay_c(t, schedule.kind, schedule.alpha)
    if c == 1.0:
        # lambda / (R lambda) = 1/R, returned exactly rather than through rounding
        return np.full(schedule.R, 1.0 / schedule.R)
    out = lam / (1.0 + (schedule.R * lam - 1.0) * c)
    if schedule.renormalize:
        out = out / out.sum()
    return out


def select(scores: np.ndarray, costs: np.ndarray) -> tuple[int, int, float]:
    """Argmax of utility / scheduled cost over (pool row, resolution column).

    Ties go to the lower resolution, then the smaller pool row. Returns
    ``(row, r, ratio)`` with ``r`` 1-based.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise CampaignExhaustedError("no candidates left to select from")
    ratio = scores / np.asarray(costs, dtype=float)[None, :]
    # resolution-major ravel: np.argmax keeps the first maximum
    flat = ratio.T.ravel()
    k = int(np.argmax(flat))
    r, row = divmod(k, scores.shape[0])
    return row, r + 1, float(flat[k])
