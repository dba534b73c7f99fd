"""Diebold-Mariano test for equal predictive accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDifferential, InsufficientData, LengthMismatch

LOSSES = ("squared", "absolute")
MIN_LENGTH = 10


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    n: int
    h: int
    loss: str
    mean_differential: float


def _loss(e, loss):
    if loss == "squared":
        return e * e
    if loss == "absolute":
        return np.abs(e)
    raise ValueError(f"loss must be one of {LOSSES}")


def long_run_variance(d: np.ndarray, max_lag: int) -> float:
    """Bartlett-weighted long-run variance (population autocovariances)."""
    d = np.asarray(d, dtype=np.float64)
    n = len(d)
    c = d - d.mean()
    lrv = float(c @ c) / n
    for lag in range(1, min(max_lag, n - 1) + 1):
        gamma = float(c[lag:] @ c[:-lag]) / n
        lrv += 2.0 * (1.0 - lag / (max_lag + 1)) * gamma
    return lrv


def normal_two_sided_p(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def diebold_mariano(e1, e2, h: int = 1, loss: str = "squared") -> DmResult:
    """Test whether two aligned forecast-error series have equal expected loss.

    A positive statistic means ``e1`` has the larger loss. The p-value is
    two-sided against the standard normal.
    """
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    if len(e1) != len(e2):
        raise LengthMismatch(f"error series have lengths {len(e1)} and {len(e2)}")
    if h < 1:
        raise ValueError("h must be >= 1")
    n = len(e1)
    if n < MIN_LENGTH:
        raise InsufficientData(f"need at least {MIN_LENGTH} paired errors, got {n}")
    if not (np.isfinite(e1).all() and np.isfinite(e2).all()):
        raise ValueError("error series must not contain missing values")
    d = _loss(e1, loss) - _loss(e2, loss)
    mean = float(d.mean())
    if d.min() == d.max():
        if mean == 0.0:
            return DmResult(0.0, 1.0, n, h, loss, 0.0)
        raise DegenerateDifferential("loss differential is a non-zero constant")
    lrv = long_run_variance(d, h - 1)
    if lrv <= 0.0:
        raise DegenerateDifferential("non-positive long-run variance")
    stat = mean / math.sqrt(lrv / n)
    return DmResult(stat, normal_two_sided_p(stat), n, h, loss, mean)
