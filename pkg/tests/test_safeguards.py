import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ruc.errors import EmptySlice, InsufficientData
from ruc.evaluator import evaluate
from ruc.grammar import parse
from ruc.panel import PanelFrame
from ruc.safeguards import (NestedCvConfig, StressConfig, StressWindow, load_stress_windows,
                            nested_cv, stress_test, vif, vif_filter)
from ruc.synthetic import PLANTED_PROGRAM, business_days


def _cols(*cols):
    return [np.asarray(c, dtype=float).reshape(-1, 1) for c in cols]


def test_orthogonal_centered_features():
    a = np.array([1, -1, 1, -1] * 10, dtype=float)
    b = np.array([1, 1, -1, -1] * 10, dtype=float)
    np.testing.assert_allclose(vif(_cols(a, b)), [1.0, 1.0], atol=1e-8)


def test_duplicate_is_infinite(rng):
    a = rng.normal(size=100)
    assert np.isinf(vif(_cols(a, a, rng.normal(size=100)))[:2]).all()


def test_vif_matches_brute_force(rng):
    z = rng.normal(size=(300, 3))
    cols = [z[:, 0], z[:, 0] + 0.5 * z[:, 1], z[:, 1] - z[:, 2] + 0.3 * z[:, 0]]
    np.testing.assert_allclose(vif(_cols(*cols)),
                               oracles.vif_brute([list(c) for c in cols]), rtol=1e-8)


def test_vif_needs_rows():
    with pytest.raises(InsufficientData):
        vif(_cols(np.arange(11.0), np.arange(11.0) ** 2))


def test_vif_drops_missing_rows_listwise(rng):
    a, b = rng.normal(size=80), rng.normal(size=80)
    a2 = a.copy()
    a2[:5] = np.nan
    np.testing.assert_allclose(vif(_cols(a2, b)), vif(_cols(a[5:], b[5:])))


def test_filter_noop_and_duplicate_pair(rng):
    a, b, c = rng.normal(size=(3, 200))
    feats = _cols(a, b, c)
    assert vif_filter(feats) == feats
    kept = vif_filter(_cols(a, a, b), fitness=[0.2, 0.1, 0.0])
    assert len(kept) == 2
    np.testing.assert_array_equal(kept[0], a.reshape(-1, 1))


def _vif_exactly(target, rng):
    """Two features whose VIFs are both exactly ``target`` (corr^2 = 1 - 1/target)."""
    n = 400
    u = rng.normal(size=n)
    v = rng.normal(size=n)
    u -= u.mean()
    v -= v.mean()
    v -= (u @ v) / (u @ u) * u
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    r = np.sqrt(1.0 - 1.0 / target)
    return u, r * u + np.sqrt(1 - r * r) * v


def test_threshold_is_strict_at_five(rng):
    a, b = _vif_exactly(5.0, rng)
    values = vif(_cols(a, b))
    np.testing.assert_allclose(values, [5.0, 5.0], atol=1e-8)
    assert len(vif_filter(_cols(a, b), threshold=4.999)) == 1


def test_threshold_is_strict_for_exact_vif_values():
    feats = ["f0", "f1", "f2"]

    def exact(values):
        table = dict(zip(feats, values))
        return lambda fs, frame: [table[f] for f in fs]

    assert vif_filter(feats, vif_fn=exact([5.0, 5.0, 1.0])) == feats
    above = np.nextafter(5.0, 6.0)
    assert vif_filter(feats, vif_fn=exact([above, 5.0, 1.0])) == ["f1", "f2"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5))
def test_vif_permutation_equivariant_and_filter_sound(seed, k):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(150, k))
    mix = base @ rng.normal(size=(k, k)) * 0.7 + base
    cols = _cols(*mix.T)
    perm = rng.permutation(k)
    np.testing.assert_allclose(vif([cols[i] for i in perm]), vif(cols)[perm], rtol=1e-7)
    kept = vif_filter(cols)
    if len(kept) >= 2:
        assert (vif(kept) <= 5.0).all()


def test_nested_cv_planted_is_stable_and_leak_free(small_panel, grammar4):
    finalists = [parse(t, grammar4) for t in (PLANTED_PROGRAM, "ts_mean(y,10)", "x")]
    report = nested_cv(finalists, small_panel, "target")
    assert report.stability == 1.0
    assert report.modal_program == PLANTED_PROGRAM
    assert report.audit()
    ends = [f.outer_train_stop for f in report.folds]
    assert all(b > a for a, b in zip(ends, ends[1:]))
    for f in report.folds:
        assert f.outer_train_range[1] < f.outer_test_range[0]


def test_nested_cv_singleton(small_panel, grammar4):
    report = nested_cv([parse("ts_mean(y,10)", grammar4)], small_panel, "target",
                       NestedCvConfig(n_outer=2))
    assert report.stability == 1.0 and len(report.folds) == 2
    assert np.isfinite(report.mean_oos_r2)


def test_nested_cv_sparse_outer_fold_is_unscored(small_panel, grammar4):
    # x goes missing in the last outer block, so the pick cannot be scored there
    values = small_panel.values.copy()
    values[300:, :, small_panel.variables.index("x")] = np.nan
    frame = PanelFrame(small_panel.timestamps, small_panel.entities, small_panel.variables,
                       values)
    report = nested_cv([parse("x", grammar4)], frame, "target", NestedCvConfig(n_outer=2))
    last = report.folds[-1]
    assert np.isnan(last.oos_r2) and last.unscored_reason.startswith("InsufficientData")
    assert report.mean_oos_r2 == report.folds[0].oos_r2
    assert report.audit()


def _noise_inside(window_rows, n=600, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    noise = rng.normal(size=(n, 3))
    target = np.full((n, 3), np.nan)
    target[1:] = x[:-1] + 0.3 * rng.normal(size=(n - 1, 3))
    lo, hi = window_rows
    # the feature stops carrying signal inside the window
    x_feat = x.copy()
    x_feat[lo:hi] = noise[lo:hi]
    vals = np.stack([x_feat, target], axis=2)
    return PanelFrame(business_days(n), ["a", "b", "c"], ["x", "target"], vals)


def test_stress_identity_window_equals_overall(small_panel, grammar4):
    cfg = StressConfig()
    usable = small_panel.n_times - 1
    a0 = int(0.5 * usable)
    w = StressWindow("all", small_panel.timestamps[a0], small_panel.timestamps[-1])
    r = stress_test(parse(PLANTED_PROGRAM, grammar4), small_panel, "target", [w], cfg)
    assert r.windows[0].oos_r2 == r.overall_oos_r2
    assert r.windows[0].n_obs == r.overall_n_obs


def test_stress_window_before_data_is_skipped(small_panel, grammar4):
    windows = [StressWindow("early", dt.date(1990, 1, 1), dt.date(1990, 6, 1)),
               StressWindow("late", small_panel.timestamps[300], small_panel.timestamps[350])]
    with pytest.warns(UserWarning, match="early"):
        r = stress_test(parse("ts_mean(y,10)", grammar4), small_panel, "target", windows)
    assert [w.name for w in r.windows] == ["late"]
    assert r.skipped == (("early", "EmptySlice"),)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EmptySlice):
            stress_test(parse("ts_mean(y,10)", grammar4), small_panel, "target", windows[:1])


def test_stress_noise_window_fails():
    frame = _noise_inside((520, 560))
    from ruc.grammar import Grammar
    g = Grammar.default(["x"])
    w = StressWindow("broken", frame.timestamps[520], frame.timestamps[559])
    r = stress_test(parse("x", g), frame, "target", [w])
    assert r.overall_oos_r2 > 0.3
    assert not r.windows[0].passed


def test_default_stress_windows_ship_with_package():
    names = [w.name for w in load_stress_windows()]
    assert len(names) == 3
