import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ruc import kernels

BACKENDS = ["python"]
try:
    kernels.backend_module("compiled")
    BACKENDS.append("compiled")
except ImportError:
    pass

UNARY = {
    "rolling_mean": oracles.mean,
    "rolling_sum": sum,
    "rolling_std": oracles.std,
    "rolling_zscore": oracles.zscore,
    "rolling_min": min,
    "rolling_max": max,
    "rolling_argmax": oracles.arg_max,
    "rolling_rank": oracles.ts_rank,
    "rolling_median": oracles.median,
    "rolling_decay_linear": oracles.decay_linear,
}


def _panel(rng, T=60, N=3, nan_frac=0.05, ties=False):
    x = rng.normal(size=(T, N))
    if ties:
        x = np.round(x * 2) / 2
    x[rng.random((T, N)) < nan_frac] = np.nan
    x[20:28, 0] = 1.5  # a constant stretch
    return x


def _column_oracle(x, w, fn):
    return np.column_stack([oracles.rolling(list(x[:, j]), w, fn) for j in range(x.shape[1])])


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("w", [2, 3, 5, 10])
def test_unary_kernels_match_loop_oracle(backend, name, w, rng):
    mod = kernels.backend_module(backend)
    x = _panel(rng, ties=True)
    got = getattr(mod, name)(x, w)
    want = _column_oracle(x, w, UNARY[name])
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12, equal_nan=True)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("w", [3, 7])
def test_pair_kernels_match_loop_oracle(backend, w, rng):
    mod = kernels.backend_module(backend)
    x, y = _panel(rng), _panel(rng)
    for j in range(x.shape[1]):
        xs, ys = list(x[:, j]), list(y[:, j])
        np.testing.assert_allclose(mod.rolling_corr(x, y, w)[:, j],
                                   oracles.rolling_pair(xs, ys, w, oracles.corr),
                                   atol=1e-10, equal_nan=True)
        np.testing.assert_allclose(mod.rolling_regression(y, x, w)[:, j],
                                   oracles.rolling_pair(ys, xs, w,
                                                        oracles.regression_fitted),
                                   atol=1e-10, equal_nan=True)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cs_rank_matches_loop_oracle(backend, rng):
    mod = kernels.backend_module(backend)
    x = _panel(rng, N=6, nan_frac=0.2, ties=True)
    want = np.array([oracles.cs_rank(list(row)) for row in x])
    np.testing.assert_allclose(mod.cs_rank(x), want, atol=1e-12, equal_nan=True)


def test_hand_computed_rolling_mean():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    np.testing.assert_array_equal(kernels.rolling_mean(x, 3)[:, 0], [np.nan, np.nan, 2.0, 3.0])


def test_delta_leaves_first_w_rows_missing():
    x = np.arange(6.0)[:, None]
    out = kernels.rolling_delta(x, 2)
    assert np.isnan(out[:2]).all()
    np.testing.assert_array_equal(out[2:, 0], [2.0, 2.0, 2.0, 2.0])


def test_constant_window_conventions():
    x = np.full((6, 1), 3.0)
    assert (kernels.rolling_std(x, 3)[2:] == 0).all()
    for name in ("rolling_zscore", "rolling_ir", "rolling_skew"):
        assert np.isnan(getattr(kernels, name)(x, 3)).all()


def test_single_valid_entity_gives_missing_cross_section():
    x = np.array([[1.0, np.nan], [2.0, 3.0]])
    out = kernels.cs_rank(x)
    assert np.isnan(out[0]).all()
    np.testing.assert_array_equal(out[1], [0.0, 1.0])


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
@pytest.mark.parametrize("name", kernels.KERNEL_NAMES)
def test_compiled_and_fallback_agree(name, rng):
    py, c = kernels.backend_module("python"), kernels.backend_module("compiled")
    x = _panel(rng, T=120, N=5, nan_frac=0.03, ties=True)
    y = _panel(rng, T=120, N=5, nan_frac=0.03)
    for w in (2, 5, 21):
        if name.startswith("cs_"):
            args = (x,)
        elif name in ("rolling_corr", "rolling_cov", "rolling_regression"):
            args = (x, y, w)
        else:
            args = (x, w)
        a, b = getattr(py, name)(*args), getattr(c, name)(*args)
        assert np.array_equal(np.isnan(a), np.isnan(b)), (name, w)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-11, equal_nan=True)


def test_active_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40), st.integers(2, 12))
def test_rank_outputs_stay_in_unit_interval(values, w):
    x = np.array(values)[:, None]
    out = kernels.rolling_rank(x, w)
    valid = out[~np.isnan(out)]
    assert ((valid >= 0) & (valid <= 1)).all()
    assert np.isnan(out[:w - 1]).all()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=20))
def test_cs_rank_in_unit_interval_and_order_preserving(rows):
    x = np.array(rows)
    out = kernels.cs_rank(x)
    assert ((out >= 0) & (out <= 1)).all()
    for r, o in zip(x, out):
        i, j = np.argmax(r), np.argmin(r)
        assert o[i] >= o[j]


def test_benchmark_script_runs():
    import subprocess
    import sys
    from pathlib import Path
    script = Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"
    proc = subprocess.run([sys.executable, str(script), "--times", "120", "--repeat", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "program evaluation" in proc.stdout
