"""Per-series data profiling and the window rule derived from it."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .panel import PanelFrame

Z_OUT = 4.0
ACF_MIN = 0.3
MIN_LAG, MAX_LAG = 2, 400
CADENCE_CUT_DAYS = 20
HIGH_FREQ_WINDOWS = (5, 10, 21, 63)
LOW_FREQ_WINDOWS = (63, 126, 252)
MAX_SEASONAL_WINDOW = 252


@dataclass(frozen=True)
class SeriesProfile:
    variable: str
    entity: str
    n_obs: int
    missing_fraction: float
    mean: float
    median: float
    std: float
    skewness: float
    outlier_count: int
    inferred_step: int | None
    update_cadence: int | None
    seasonality_lag: int | None


@dataclass(frozen=True)
class DataProfile:
    records: tuple

    def get(self, variable: str, entity: str) -> SeriesProfile:
        for r in self.records:
            if r.variable == variable and r.entity == entity:
                return r
        raise KeyError((variable, entity))

    def for_variable(self, variable: str) -> list:
        return [r for r in self.records if r.variable == variable]

    @property
    def variables(self) -> tuple:
        return tuple(dict.fromkeys(r.variable for r in self.records))

    def to_text(self) -> str:
        """One ``key=value`` block per (variable, entity), blank-line separated."""
        blocks = []
        for r in self.records:
            lines = [f"{k}={_text(v)}" for k, v in asdict(r).items()]
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def _text(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _mode(values):
    """Most common value; ties go to the smallest."""
    if not values:
        return None
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def skewness(x: np.ndarray) -> float:
    """Adjusted Fisher-Pearson sample skewness; 0 for n < 3 or a constant series."""
    n = len(x)
    if n < 3 or x.min() == x.max():
        return 0.0
    c = x - x.mean()
    m2 = float(np.mean(c * c))
    m3 = float(np.mean(c * c * c))
    g1 = m3 / m2 ** 1.5
    return float(np.sqrt(n * (n - 1)) / (n - 2) * g1)


def autocorrelation(series: np.ndarray, lags) -> np.ndarray:
    """Sample ACF with missing cells skipped pairwise; the variance uses all valid cells."""
    valid = ~np.isnan(series)
    x = series[valid]
    out = np.full(len(lags), np.nan)
    if len(x) < 2 or x.min() == x.max():
        return out
    c = np.where(valid, series - x.mean(), 0.0)
    denom = float(c @ c)
    for i, k in enumerate(lags):
        if 0 < k < len(series):
            out[i] = float(c[k:] @ c[:-k]) / denom
    return out


def seasonality_lag(series: np.ndarray, acf_min: float = ACF_MIN) -> int | None:
    """Lag in [2, 400] with the highest ACF peak, considering only lags with 3*lag usable points.

    Only local maxima of the ACF count, so the monotone decay of a merely
    persistent series is not mistaken for a season at lag 2.
    """
    n_valid = int((~np.isnan(series)).sum())
    top = min(MAX_LAG, n_valid // 3)
    if top < MIN_LAG:
        return None
    lags = np.arange(MIN_LAG - 1, top + 2)
    acf = autocorrelation(series, lags)
    if np.isnan(acf).all():
        return None
    best, best_acf = None, -np.inf
    for i in range(1, len(lags) - 1):
        a = acf[i]
        if np.isnan(a) or a < acf_min:
            continue
        left, right = acf[i - 1], acf[i + 1]
        peak = a > left and (lags[i] == top or np.isnan(right) or a >= right)
        if peak and a > best_acf:
            best, best_acf = int(lags[i]), a
    return best


def _day_gaps(dates):
    return [(b - a).days for a, b in zip(dates, dates[1:])]


def update_cadence(series: np.ndarray, timestamps) -> int | None:
    """Modal gap in days between consecutive value changes; ``None`` with fewer than two changes."""
    idx = np.flatnonzero(~np.isnan(series))
    if len(idx) < 2:
        return None
    vals = series[idx]
    change = idx[1:][vals[1:] != vals[:-1]]
    if len(change) < 2:
        return None
    return _mode(_day_gaps([timestamps[i] for i in change]))


def profile_series(series: np.ndarray, timestamps, variable="", entity="",
                   z_out: float = Z_OUT, acf_min: float = ACF_MIN) -> SeriesProfile:
    series = np.asarray(series, dtype=np.float64)
    valid = ~np.isnan(series)
    x = series[valid]
    n = len(x)
    missing = 1.0 - n / len(series) if len(series) else 0.0
    if n == 0:
        mean = median = std = float("nan")
        outliers = 0
    else:
        mean = float(x.mean())
        median = float(np.median(x))
        std = float(x.std(ddof=1)) if n > 1 and x.min() != x.max() else 0.0
        outliers = int((np.abs(x - mean) > z_out * std).sum()) if std > 0 else 0
    return SeriesProfile(
        variable=variable, entity=entity, n_obs=n,
        missing_fraction=missing, mean=mean, median=median, std=std,
        skewness=skewness(x), outlier_count=outliers,
        inferred_step=_mode(_day_gaps(list(timestamps))),
        update_cadence=update_cadence(series, timestamps),
        seasonality_lag=seasonality_lag(series, acf_min),
    )


def profile(frame: PanelFrame, z_out: float = Z_OUT, acf_min: float = ACF_MIN) -> DataProfile:
    """Profile every (variable, entity) series of ``frame``."""
    if frame.n_times == 0:
        raise ValueError("cannot profile an empty frame")
    records = []
    for v in frame.variables:
        col = frame.column(v)
        for j, e in enumerate(frame.entities):
            records.append(profile_series(col[:, j], frame.timestamps, v, e, z_out, acf_min))
    return DataProfile(tuple(records))


def windows_for(update_cadence: int | None, seasonality: int | None) -> tuple:
    if update_cadence is not None and update_cadence >= CADENCE_CUT_DAYS:
        out = set(LOW_FREQ_WINDOWS)
    else:
        out = set(HIGH_FREQ_WINDOWS)
    if seasonality is not None and MIN_LAG <= seasonality <= MAX_SEASONAL_WINDOW:
        out.add(seasonality)
    return tuple(sorted(out))


def suggest_windows(prof: DataProfile) -> dict:
    """Window set per variable.

    Entities are pooled by taking the median cadence and the most common
    seasonality lag among the entities that report one.
    """
    out = {}
    for v in prof.variables:
        recs = prof.for_variable(v)
        cadences = [r.update_cadence for r in recs if r.update_cadence is not None]
        cadence = int(np.median(cadences)) if cadences else None
        lag = _mode([r.seasonality_lag for r in recs if r.seasonality_lag is not None])
        out[v] = windows_for(cadence, lag)
    return out
