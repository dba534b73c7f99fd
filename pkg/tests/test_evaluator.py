import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruc.errors import DegenerateCrossSection
from ruc.evaluator import IMPLEMENTED, Evaluator, evaluate, warmup
from ruc.grammar import OPERATORS, Grammar, parse
from ruc.panel import PanelFrame
from ruc.search import random_program


def _frame(x, y=None, entities=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.ones_like(x) if y is None else np.asarray(y, dtype=float).reshape(x.shape)
    days = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(x.shape[0])]
    ents = entities or [f"e{i}" for i in range(x.shape[1])]
    return PanelFrame(days, ents, ["x", "y"], np.stack([x, y], axis=2))


G = Grammar.default(["x", "y"], windows=(2, 3, 5))


def test_every_operator_has_an_implementation():
    assert {op.name for op in OPERATORS} <= IMPLEMENTED


def test_ts_mean_hand_computed():
    out = evaluate(parse("ts_mean(x,3)", G), _frame([1, 2, 3, 4])).values[:, 0]
    np.testing.assert_array_equal(out, [np.nan, np.nan, 2.0, 3.0])


def test_division_by_zero_is_missing_only_there():
    out = evaluate(parse("div(x,y)", G), _frame([1, 2, 3], [1, 0, 2])).values[:, 0]
    np.testing.assert_array_equal(np.isnan(out), [False, True, False])
    assert out[2] == 1.5


def test_log_of_non_positive_is_missing():
    out = evaluate(parse("log_(x)", G), _frame([1.0, 0.0, -2.0])).values[:, 0]
    assert out[0] == 0.0 and np.isnan(out[1:]).all()


def test_cross_section_on_single_entity_warns_and_is_missing():
    with pytest.warns(DegenerateCrossSection):
        out = evaluate(parse("cs_zscore(x)", G), _frame([1.0, 2.0, 3.0])).values
    assert np.isnan(out).all()


def test_missing_propagates_through_arithmetic():
    out = evaluate(parse("add(x,y)", G), _frame([1.0, np.nan], [1.0, 1.0])).values[:, 0]
    assert out[0] == 2.0 and np.isnan(out[1])


def test_ts_regression_is_trailing_fitted_value():
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    y = 2.0 * x + 1.0
    out = evaluate(parse("ts_regression(y,x,3)", G), _frame(x, y)).values[:, 0]
    np.testing.assert_allclose(out[2:], y[2:])


def test_ts_arg_max_steps_since_max():
    out = evaluate(parse("ts_arg_max(x,3)", G), _frame([3.0, 1.0, 2.0, 5.0])).values[:, 0]
    np.testing.assert_array_equal(out[2:], [2.0, 0.0])


def test_evaluator_cache_matches_direct_evaluation(small_panel, grammar4):
    ev = Evaluator(small_panel, cache_size=8)
    rng = np.random.default_rng(0)
    for _ in range(40):
        p = random_program(grammar4, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = ev.evaluate(p).values
            b = evaluate(p, small_panel).values
        np.testing.assert_array_equal(a, b)


def test_provenance_is_program_text(small_panel, grammar4):
    fm = evaluate(parse("ts_rank(mul(x,y),63)", grammar4), small_panel)
    assert fm.provenance == "ts_rank(mul(x,y),63)"
    assert fm.values.shape == (small_panel.n_times, small_panel.n_entities)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_outputs_finite_or_missing_and_warmup_respected(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(80, 3))
    x[rng.random(x.shape) < 0.05] = np.nan
    frame = _frame(x, rng.normal(size=(80, 3)))
    p = random_program(Grammar.default(["x", "y"], windows=(2, 3, 5)), rng)
    out = evaluate(p, frame).values
    assert not np.isinf(out).any()
    assert np.isnan(out[:warmup(p)]).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rank_ops_land_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    frame = _frame(rng.normal(size=(40, 4)), rng.normal(size=(40, 4)))
    inner = random_program(Grammar.default(["x", "y"], windows=(2, 3, 5), max_depth=2), rng)
    from ruc.grammar import Node
    for name, windows in (("ts_rank", (3,)), ("cs_rank", ())):
        out = evaluate(Node(G.operator(name), (inner,), windows), frame).values
        v = out[~np.isnan(out)]
        assert ((v >= 0) & (v <= 1)).all()
