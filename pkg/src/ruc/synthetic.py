"""Synthetic panels with a known (planted) predictive feature."""

from __future__ import annotations

import datetime as dt

import numpy as np

from .evaluator import evaluate
from .grammar import Grammar, parse
from .panel import PanelFrame

PLANTED_PROGRAM = "mul(cs_rank(x),ts_mean(y,10))"


def business_days(n: int, start=dt.date(2000, 1, 3)) -> list:
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def ar1(rng, n_times, n_entities, phi, scale=1.0):
    out = np.empty((n_times, n_entities))
    out[0] = rng.normal(scale=scale / np.sqrt(1 - phi ** 2), size=n_entities)
    shocks = rng.normal(scale=scale, size=(n_times, n_entities))
    for t in range(1, n_times):
        out[t] = phi * out[t - 1] + shocks[t]
    return out


def planted_panel(seed: int, n_entities: int = 5, n_times: int = 1500, snr: float = 3.0,
                  program: str = PLANTED_PROGRAM, horizon: int = 1) -> PanelFrame:
    """Panel whose ``target`` at ``t + horizon`` is ``program`` at ``t`` plus noise.

    Inputs ``x, y, z, w`` are independent AR(1) panels; ``z`` and ``w`` are
    distractors. ``snr`` is the variance ratio signal : noise, so the planted
    program's population R^2 is ``snr / (1 + snr)``.
    """
    rng = np.random.default_rng(seed)
    inputs = {
        "x": ar1(rng, n_times, n_entities, 0.9),
        "y": ar1(rng, n_times, n_entities, 0.5),
        "z": ar1(rng, n_times, n_entities, 0.9),
        "w": ar1(rng, n_times, n_entities, 0.5),
    }
    entities = [f"e{i}" for i in range(n_entities)]
    base = PanelFrame(business_days(n_times), entities, list(inputs),
                      np.stack(list(inputs.values()), axis=2))
    signal = evaluate(parse(program, Grammar.default(list(inputs))), base).values
    valid = ~np.isnan(signal)
    noise_sd = np.sqrt(np.var(signal[valid]) / snr)
    target = rng.normal(scale=noise_sd, size=(n_times, n_entities))
    target[horizon:] += np.where(valid[:-horizon], signal[:-horizon], 0.0)
    return base.with_variables({"target": target})
