import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruc.errors import ConfigError, NoMutationPossible
from ruc.grammar import Grammar, Leaf, depth, parse, print_program
from ruc.search import (RunArtifact, SearchConfig, metropolis_accept, neighbors, perturb,
                        propose, random_program, random_search_baseline, replay_pool,
                        restructure, run_search, stream)


@pytest.fixture(scope="module")
def tiny_cfg():
    g = Grammar.default(["x", "y", "z", "w"])
    return SearchConfig(grammar=g, K=20, N=5, max_evaluations=120, seed=11)


@pytest.fixture(scope="module")
def tiny_run(small_panel, tiny_cfg):
    return run_search(tiny_cfg, small_panel, "target")


def test_random_program_validity_and_determinism(grammar4):
    a = [random_program(grammar4, stream(5, 0, i)) for i in range(200)]
    b = [random_program(grammar4, stream(5, 0, i)) for i in range(200)]
    assert a == b
    for p in a:
        grammar4.validate(p)


def test_depth_one_grammar_draws():
    g = Grammar.default(["x", "y"], max_depth=1)
    rng = np.random.default_rng(0)
    for _ in range(500):
        p = random_program(g, rng)
        assert depth(p) <= 1
        if depth(p) == 1:
            assert all(isinstance(c, Leaf) for c in p.children)


def test_operator_swap_on_add():
    g = Grammar.default(["x", "y"], families=("arithmetic",))
    rng = np.random.default_rng(1)
    seen = set()
    for _ in range(300):
        child = perturb(parse("add(x,y)", g), g, rng)
        seen.add(print_program(child))
    swaps = {t for t in seen if t.endswith("(x,y)")}
    assert swaps == {"sub(x,y)", "mul(x,y)", "div(x,y)"}


def test_window_change_excludes_current():
    g = Grammar.default(["x"], families=("statistical",), exclude=(
        "ts_std", "ts_skew", "ts_min", "ts_max", "ts_median", "ts_sum"))
    rng = np.random.default_rng(2)
    windows = {perturb(parse("ts_mean(x,21)", g), g, rng).windows[0] for _ in range(300)}
    assert windows == {5, 10, 63}


def test_bare_leaf_single_variable_has_no_mutation():
    g = Grammar.default(["x"])
    with pytest.raises(NoMutationPossible):
        perturb(Leaf("x"), g, np.random.default_rng(0))
    assert neighbors(Leaf("x"), g) == []


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_mutations_are_valid_and_different(seed):
    g = Grammar.default(["x", "y", "z"])
    rng = np.random.default_rng(seed)
    p = random_program(g, rng)
    for fn in (perturb, restructure):
        try:
            child = fn(p, g, rng)
        except NoMutationPossible:
            continue
        g.validate(child)
        assert print_program(child) != print_program(p)


def test_point_mutation_keeps_shape(grammar4):
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = random_program(grammar4, rng)
        try:
            c = perturb(p, grammar4, rng)
        except NoMutationPossible:
            continue
        assert depth(c) == depth(p)


def test_neighbors_enumerate_every_perturbation(grammar4):
    p = parse("mul(cs_rank(x),ts_mean(y,10))", grammar4)
    nbrs = {print_program(c) for c in neighbors(p, grammar4)}
    rng = np.random.default_rng(4)
    for _ in range(300):
        assert print_program(perturb(p, grammar4, rng)) in nbrs


def test_restructure_can_wrap_a_subtree(grammar4):
    p = parse("ts_mean(y,10)", grammar4)
    rng = np.random.default_rng(5)
    kids = [print_program(restructure(p, grammar4, rng)) for _ in range(300)]
    assert any(k != "ts_mean(y,10)" and "ts_mean(y,10)" in k for k in kids)


def test_propose_rate_zero_is_pure_perturbation(grammar4):
    p = parse("mul(cs_rank(x),ts_mean(y,10))", grammar4)
    nbrs = {print_program(c) for c in neighbors(p, grammar4)}
    rng = np.random.default_rng(6)
    for _ in range(100):
        assert print_program(propose(p, grammar4, rng, 0.0)) in nbrs


def test_metropolis_uphill_always_accepted():
    rng = np.random.default_rng(0)
    assert all(metropolis_accept(0.1, 0.2, 0.5, rng) for _ in range(1000))
    assert all(metropolis_accept(0.1, 0.1, 1e-9, rng) for _ in range(100))


def test_metropolis_monte_carlo():
    rng = np.random.default_rng(0)
    rate = np.mean([metropolis_accept(0.0, -0.1, 0.1, rng) for _ in range(100_000)])
    assert abs(rate - math.exp(-1.0)) < 0.01


def test_metropolis_cold_limit_and_minus_infinity():
    rng = np.random.default_rng(0)
    assert not any(metropolis_accept(0.5, 0.4, 1e-300, rng) for _ in range(100))
    assert not metropolis_accept(-math.inf, -math.inf, 1.0, rng)
    with pytest.raises(ValueError):
        metropolis_accept(0.0, 0.1, 0.0, rng)


def test_metropolis_binned_calibration():
    """Downhill acceptance matches exp(delta/T) per bin of predicted probability."""
    rng = np.random.default_rng(42)
    n = 200_000
    deltas = -rng.exponential(0.2, size=n)
    temps = 0.95 ** rng.integers(0, 80, size=n)
    p = np.exp(deltas / temps)
    acc = np.array([metropolis_accept(0.0, d, t, rng) for d, t in zip(deltas, temps)])
    bins = np.minimum((p * 10).astype(int), 9)
    for b in range(10):
        m = bins == b
        if m.sum() >= 5000:
            assert abs(acc[m].mean() - p[m].mean()) <= 0.02


def test_config_invariants(grammar4):
    for kwargs in ({"N": 0}, {"N": 30, "K": 20}, {"K": 300, "max_evaluations": 200},
                   {"cooling": 1.0}, {"cooling": 0.0}, {"T0": 0.0}, {"seed": -1},
                   {"structural_rate": 1.5}):
        with pytest.raises(ConfigError):
            SearchConfig(grammar=grammar4, **kwargs)


def test_budget_is_spent_exactly(tiny_run, tiny_cfg):
    proposals = [e for e in tiny_run.trace if e.event in ("init", "proposal")]
    assert len(proposals) == tiny_run.meta["evaluations_used"] == tiny_cfg.max_evaluations
    assert len({e.program for e in proposals}) == len(proposals)


def test_pool_size_and_grammar_invariants(tiny_run, tiny_cfg):
    assert len(tiny_run.ranked) == tiny_cfg.K
    for c in tiny_run.ranked:
        tiny_cfg.grammar.validate(c.program)
        assert c.fitness == c.report.fitness
    fits = [c.fitness for c in tiny_run.ranked]
    assert fits == sorted(fits, reverse=True)


def test_elitism_and_replay(tiny_run):
    pool = {}
    best_by_iteration = []
    for e in tiny_run.trace:
        if e.event == "init":
            pool[e.program] = e.fitness
        elif e.event == "proposal" and e.accepted:
            pool.pop(e.replaced)
            pool[e.program] = e.fitness
        best_by_iteration.append(max(pool.values()))
    assert all(b >= a for a, b in zip(best_by_iteration, best_by_iteration[1:]))
    assert replay_pool(tiny_run.trace) == {c.text for c in tiny_run.ranked}


def test_temperature_schedule(tiny_run, tiny_cfg):
    for e in tiny_run.trace:
        if e.event == "proposal":
            assert e.temperature == pytest.approx(tiny_cfg.T0 * tiny_cfg.cooling ** e.iteration)


def test_acceptance_in_trace_follows_metropolis(tiny_run):
    for e in tiny_run.trace:
        if e.event == "proposal" and e.fitness >= e.parent_fitness:
            assert e.accepted
        if e.event == "proposal" and e.fitness == -math.inf:
            assert not e.accepted


def test_determinism_across_threads(small_panel, tiny_cfg, tmp_path):
    from dataclasses import replace
    a = run_search(tiny_cfg, small_panel, "target").write(tmp_path / "a")
    b = run_search(replace(tiny_cfg, threads=3), small_panel, "target").write(tmp_path / "b")
    for name in ("ranked.csv", "trace.csv", "config.json", "reports.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_baseline_budget_and_determinism(small_panel, tiny_cfg):
    a = random_search_baseline(tiny_cfg, small_panel, "target")
    b = random_search_baseline(tiny_cfg, small_panel, "target")
    assert list(a.ranked_rows()) == list(b.ranked_rows())
    assert a.meta["evaluations_used"] == tiny_cfg.max_evaluations
    assert len(a.trace) == tiny_cfg.max_evaluations
    assert len(a.ranked) == tiny_cfg.K


def test_artifact_files(tiny_run, tmp_path):
    out = tiny_run.write(tmp_path / "run")
    header = (out / "ranked.csv").read_text().splitlines()[0]
    assert header == "rank,program,fitness,mean_oos_r2,mean_oos_mae,mean_aic,mean_bic"
    trace_header = (out / "trace.csv").read_text().splitlines()[0]
    assert trace_header.startswith("iteration,event,program,fitness,temperature,accepted")
    for name in ("config.json", "meta.json", "reports.json"):
        assert (out / name).exists()
    assert isinstance(tiny_run, RunArtifact)
