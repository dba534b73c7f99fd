import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ruc.panel import PanelFrame
from ruc.profiler import (DataProfile, SeriesProfile, autocorrelation, profile,
                          profile_series, seasonality_lag, skewness, suggest_windows)


def _days(n, step=1):
    return [dt.date(2010, 1, 1) + dt.timedelta(days=int(i) * step) for i in range(n)]


def test_simple_series():
    p = profile_series(np.arange(1.0, 11.0), _days(10))
    assert p.missing_fraction == 0.0
    assert p.inferred_step == 1
    assert p.mean == 5.5


def test_one_missing_in_ten():
    s = np.arange(10.0)
    s[4] = np.nan
    assert profile_series(s, _days(10)).missing_fraction == pytest.approx(0.1)


def test_constant_series_is_degenerate_but_defined():
    p = profile_series(np.full(50, 3.0), _days(50))
    assert p.std == 0.0 and p.skewness == 0.0 and p.outlier_count == 0
    assert p.update_cadence is None and p.seasonality_lag is None


def test_sine_seasonality_matches_brute_force_argmax():
    t = np.arange(240)
    s = np.sin(2 * np.pi * t / 12)
    assert seasonality_lag(s) == 12
    brute = max(range(2, 81), key=lambda k: oracles.acf(list(s), k))
    assert brute == 12


def test_acf_matches_loop_oracle(rng):
    s = rng.normal(size=300).cumsum()
    lags = [2, 5, 17, 60]
    np.testing.assert_allclose(autocorrelation(s, lags),
                               [oracles.acf(list(s), k) for k in lags], rtol=1e-10)


def test_persistent_series_has_no_season(rng):
    x = np.zeros(1500)
    for t in range(1, 1500):
        x[t] = 0.9 * x[t - 1] + rng.normal()
    assert seasonality_lag(x) is None


def test_short_series_never_reports_long_lag():
    t = np.arange(30)
    s = np.sin(2 * np.pi * t / 12)
    lag = seasonality_lag(s)
    assert lag is None or 3 * lag <= 30


def test_outliers_and_skewness(rng):
    x = rng.normal(size=2000)
    x[:3] = 50.0
    p = profile_series(x, _days(2000))
    assert p.outlier_count == 3
    assert p.skewness > 0


def test_skewness_estimator_against_formula(rng):
    x = rng.gamma(2.0, size=500)
    n = len(x)
    c = x - x.mean()
    g1 = np.mean(c ** 3) / np.mean(c ** 2) ** 1.5
    assert skewness(x) == pytest.approx(g1 * np.sqrt(n * (n - 1)) / (n - 2))


def test_quarterly_cadence_drives_low_frequency_windows():
    n = 800
    vals = np.repeat(np.arange(n // 63 + 1, dtype=float), 63)[:n]
    frame = PanelFrame(_days(n), ["a"], ["q"], vals[:, None, None])
    prof = profile(frame)
    assert prof.get("q", "a").update_cadence == 63
    assert suggest_windows(prof)["q"] == (63, 126, 252)


def _single(cadence, lag):
    rec = SeriesProfile("v", "e", 100, 0.0, 0.0, 0.0, 1.0, 0.0, 0, 1, cadence, lag)
    return DataProfile((rec,))


@pytest.mark.parametrize("cadence, lag, want", [
    (63, None, (63, 126, 252)),
    (1, None, (5, 10, 21, 63)),
    (1, 12, (5, 10, 12, 21, 63)),
    (1, 300, (5, 10, 21, 63)),
])
def test_window_rule(cadence, lag, want):
    assert suggest_windows(_single(cadence, lag))["v"] == want


def test_profile_is_permutation_invariant_over_entities(small_panel):
    a = profile(small_panel)
    b = profile(small_panel.select_entities(list(reversed(small_panel.entities))))
    assert sorted(a.records, key=lambda r: (r.variable, r.entity)) == \
        sorted(b.records, key=lambda r: (r.variable, r.entity))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=120))
def test_suggested_windows_are_bounded(values):
    x = np.array(values)
    frame = PanelFrame(_days(len(x)), ["a"], ["v"], x[:, None, None])
    ws = suggest_windows(profile(frame))["v"]
    assert ws and all(2 <= w <= 400 for w in ws)
