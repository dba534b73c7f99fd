"""Randomized uphill climbing over feature programs.

A pool of ``K`` random programs is scored once. Each iteration perturbs the
top ``N`` members, scores the children and lets each one into the pool by the
Metropolis rule against its parent, replacing the worst non-parent member.
Programs are never scored twice; a member whose entire one-mutation
neighbourhood has been scored is passed over when picking the top ``N``.
The temperature decays geometrically per iteration.

Proposals mix point mutations (:func:`perturb`, which never changes the tree
shape) with shape-changing ones (:func:`restructure`) at ``structural_rate``.
Without the latter a run can only refine the shapes present in its initial
pool.

Randomness is drawn from per-slot child streams of one root seed, so a run is
a pure function of (config, frame) regardless of how scoring is scheduled.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import ConfigError, NoMutationPossible
from .evaluator import Evaluator
from .grammar import (FeatureProgram, Grammar, Leaf, Node, depth, print_program, replace_at,
                      walk)
from .panel import PanelFrame
from .surrogate import ScoreReport, Scorer, SplitConfig, score_or_fail

# stream tags for SeedSequence spawn keys
_INIT, _ITER, _RANDOM = 0, 1, 2
_MAX_REDRAWS = 20


@dataclass(frozen=True)
class SearchConfig:
    grammar: Grammar
    K: int = 200
    N: int = 20
    max_evaluations: int = 5000
    T0: float = 1.0
    cooling: float = 0.95
    seed: int = 0
    split: SplitConfig = field(default_factory=SplitConfig)
    threads: int = 1
    structural_rate: float = 0.8

    def __post_init__(self):
        if not 1 <= self.N <= self.K <= self.max_evaluations:
            raise ConfigError("need 1 <= N <= K <= max_evaluations")
        if not 0.0 < self.cooling < 1.0:
            raise ConfigError("cooling must be in (0, 1)")
        if not self.T0 > 0.0:
            raise ConfigError("T0 must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0.0 <= self.structural_rate <= 1.0:
            raise ConfigError("structural_rate must be in [0, 1]")

    def echo(self) -> dict:
        """Everything that determines the run's output (threads excluded)."""
        g = self.grammar
        return {
            "K": self.K, "N": self.N, "max_evaluations": self.max_evaluations,
            "T0": self.T0, "cooling": self.cooling, "seed": self.seed,
            "structural_rate": self.structural_rate,
            "grammar": {"operators": [op.name for op in g.operators],
                        "variables": list(g.variables), "windows": list(g.windows),
                        "max_depth": g.max_depth},
            "split": asdict(self.split),
        }


@dataclass(frozen=True)
class Candidate:
    program: FeatureProgram
    report: ScoreReport
    birth_iteration: int

    @property
    def fitness(self) -> float:
        return self.report.fitness

    @property
    def text(self) -> str:
        return print_program(self.program)


@dataclass(frozen=True)
class TraceEvent:
    iteration: int
    event: str
    program: str
    fitness: float | None = None
    temperature: float | None = None
    accepted: bool | None = None
    parent: str = ""
    parent_fitness: float | None = None
    replaced: str = ""


TRACE_COLUMNS = ("iteration", "event", "program", "fitness", "temperature", "accepted",
                 "parent", "parent_fitness", "replaced")
RANKED_COLUMNS = ("rank", "program", "fitness", "mean_oos_r2", "mean_oos_mae", "mean_aic",
                  "mean_bic")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (purpose, index...) slot of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _grow(grammar, rng, d):
    if rng.random() < d / grammar.max_depth:
        return Leaf(grammar.variables[rng.integers(len(grammar.variables))])
    op = grammar.operators[rng.integers(len(grammar.operators))]
    children = tuple(_grow(grammar, rng, d + 1) for _ in range(op.series_arity))
    return Node(op, children, _random_windows(grammar, rng, op))


def _random_windows(grammar, rng, op):
    return tuple(int(grammar.windows[rng.integers(len(grammar.windows))])
                 for _ in range(op.window_params))


def random_program(grammar: Grammar, rng: np.random.Generator) -> FeatureProgram:
    """Grow a tree top-down; a node at depth d becomes a leaf with probability d/max_depth."""
    return _grow(grammar, rng, 0)


def _mutation_sites(program, grammar):
    swaps, windows, leaves = [], [], []
    for path, node in walk(program):
        if isinstance(node, Leaf):
            if len(grammar.variables) > 1:
                leaves.append(path)
            continue
        alternatives = [op for op in grammar.operators
                        if op.signature == node.op.signature and op.name != node.op.name]
        if alternatives:
            swaps.append((path, alternatives))
        if len(grammar.windows) > 1:
            windows.extend((path, slot) for slot in range(len(node.windows)))
    return {"operator": swaps, "window": windows, "leaf": leaves}


def perturb(program: FeatureProgram, grammar: Grammar, rng: np.random.Generator) -> FeatureProgram:
    """Apply exactly one operator swap, window change or leaf swap."""
    sites = _mutation_sites(program, grammar)
    kinds = [k for k in ("operator", "window", "leaf") if sites[k]]
    if not kinds:
        raise NoMutationPossible(print_program(program))
    kind = kinds[rng.integers(len(kinds))]
    options = sites[kind]
    pick = options[rng.integers(len(options))]
    if kind == "operator":
        path, alternatives = pick
        node = _at(program, path)
        op = alternatives[rng.integers(len(alternatives))]
        return replace_at(program, path, Node(op, node.children, node.windows))
    if kind == "window":
        path, slot = pick
        node = _at(program, path)
        choices = [w for w in grammar.windows if w != node.windows[slot]]
        windows = list(node.windows)
        windows[slot] = int(choices[rng.integers(len(choices))])
        return replace_at(program, path, Node(node.op, node.children, tuple(windows)))
    node = _at(program, pick)
    choices = [v for v in grammar.variables if v != node.variable]
    return replace_at(program, pick, Leaf(choices[rng.integers(len(choices))]))


def restructure(program: FeatureProgram, grammar: Grammar,
                rng: np.random.Generator) -> FeatureProgram:
    """Apply one shape-changing mutation at a random node.

    ``wrap`` makes the node an argument of a random operator (a binary one
    gets a freshly grown sibling), ``regrow`` replaces the subtree with a
    random one grown from the same depth and ``hoist`` replaces a node with
    one of its arguments. The kind is uniform among those applicable.
    """
    text = print_program(program)
    nodes = list(walk(program))
    sites = {
        "wrap": [(p, n) for p, n in nodes if len(p) + depth(n) < grammar.max_depth],
        "regrow": nodes,
        "hoist": [(p, n) for p, n in nodes if isinstance(n, Node)],
    }
    kinds = [k for k in ("wrap", "regrow", "hoist") if sites[k]]
    for _ in range(_MAX_REDRAWS):
        kind = kinds[rng.integers(len(kinds))]
        path, node = sites[kind][rng.integers(len(sites[kind]))]
        if kind == "wrap":
            op = grammar.operators[rng.integers(len(grammar.operators))]
            args = [node]
            if op.series_arity == 2:
                other = _grow(grammar, rng, len(path) + 1)
                args.insert(int(rng.integers(2)), other)
            new = Node(op, tuple(args), _random_windows(grammar, rng, op))
        elif kind == "regrow":
            new = _grow(grammar, rng, len(path))
        else:
            new = node.children[rng.integers(len(node.children))]
        child = replace_at(program, path, new)
        if print_program(child) != text:
            return child
    raise NoMutationPossible(text)


def propose(program: FeatureProgram, grammar: Grammar, rng: np.random.Generator,
            structural_rate: float) -> FeatureProgram:
    """One child: :func:`restructure` with probability ``structural_rate``, else :func:`perturb`."""
    if rng.random() < structural_rate:
        try:
            return restructure(program, grammar, rng)
        except NoMutationPossible:
            pass
    return perturb(program, grammar, rng)


def neighbors(program: FeatureProgram, grammar: Grammar) -> list:
    """Every program one mutation away from ``program``."""
    sites = _mutation_sites(program, grammar)
    out = []
    for path, alternatives in sites["operator"]:
        node = _at(program, path)
        out.extend(replace_at(program, path, Node(op, node.children, node.windows))
                   for op in alternatives)
    for path, slot in sites["window"]:
        node = _at(program, path)
        for w in grammar.windows:
            if w != node.windows[slot]:
                windows = list(node.windows)
                windows[slot] = int(w)
                out.append(replace_at(program, path, Node(node.op, node.children, tuple(windows))))
    for path in sites["leaf"]:
        node = _at(program, path)
        out.extend(replace_at(program, path, Leaf(v))
                   for v in grammar.variables if v != node.variable)
    return out


def _at(program, path):
    for i in path:
        program = program.children[i]
    return program


def metropolis_accept(old_fitness: float, new_fitness: float, temperature: float,
                      rng: np.random.Generator) -> bool:
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if new_fitness == -math.inf:
        return False
    # one uniform draw per decision keeps the stream layout independent of the outcome
    u = rng.random()
    if new_fitness >= old_fitness:
        return True
    delta = new_fitness - old_fitness
    return u < math.exp(delta / temperature)


@dataclass
class SearchState:
    pool: list
    temperature: float
    iteration: int = 0
    evaluations_used: int = 0
    trace: list = field(default_factory=list)

    def ranked(self):
        return sorted(self.pool, key=_rank_key)


def _rank_key(c: Candidate):
    f = c.fitness
    return (-f if not math.isnan(f) else math.inf, c.text)


def _worst_index(pool, exclude: Candidate):
    best, key = None, None
    for i, c in enumerate(pool):
        if c is exclude:
            continue
        k = (c.fitness, c.birth_iteration, c.text)
        if key is None or k < key:
            best, key = i, k
    return best


@dataclass
class RunArtifact:
    config: dict
    ranked: list
    trace: list
    meta: dict

    def best(self) -> Candidate:
        return self.ranked[0]

    def ranked_rows(self):
        for i, c in enumerate(self.ranked, start=1):
            r = c.report
            yield (i, c.text, _fmt(r.fitness), _fmt(r.mean_oos_r2), _fmt(r.mean_oos_mae),
                   _fmt(r.mean_aic), _fmt(r.mean_bic))

    def trace_rows(self):
        for e in self.trace:
            yield (e.iteration, e.event, e.program, _fmt(e.fitness), _fmt(e.temperature),
                   "" if e.accepted is None else int(e.accepted), e.parent,
                   _fmt(e.parent_fitness), e.replaced)

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ranked.csv", RANKED_COLUMNS, self.ranked_rows())
        _write_csv(out / "trace.csv", TRACE_COLUMNS, self.trace_rows())
        _write_json(out / "config.json", self.config)
        _write_json(out / "meta.json", self.meta)
        _write_json(out / "reports.json", [report_dict(c.report) for c in self.ranked])
        return out


def _fmt(value):
    if value is None:
        return ""
    return repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(float(v)) for v in value]
    if hasattr(value, "isoformat"):
        return value.isoformat()
    return value


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def report_dict(report: ScoreReport) -> dict:
    return {
        "program": report.program,
        "fitness": report.fitness,
        "mean_oos_r2": report.mean_oos_r2,
        "mean_oos_mae": report.mean_oos_mae,
        "mean_aic": report.mean_aic,
        "mean_bic": report.mean_bic,
        "n_splits": report.n_splits,
        "skipped_splits": report.skipped_splits,
        "n_dropped_rows": report.n_dropped_rows,
        "degenerate": report.degenerate,
        "splits": [{
            "train_range": list(s.train_range),
            "test_range": list(s.test_range),
            "train_target_end": s.train_target_end,
            "n_train": s.n_train,
            "n_test": s.n_test,
            "oos_r2": s.oos_r2,
            "oos_mae": s.oos_mae,
            "coefficients": s.train_fit.coefficients,
            "train_r2": s.train_fit.r2,
            "aic": s.train_fit.aic,
            "bic": s.train_fit.bic,
        } for s in report.splits],
    }


class _Runner:
    def __init__(self, config: SearchConfig, frame: PanelFrame, target: str):
        self.config = config
        self.scorer = Scorer(frame, target, config.split, Evaluator(frame))
        self.started = time.perf_counter()

    def score_all(self, programs):
        if self.config.threads > 1 and len(programs) > 1:
            with ThreadPoolExecutor(self.config.threads) as ex:
                return list(ex.map(self._score, programs))
        return [self._score(p) for p in programs]

    def _score(self, program):
        return score_or_fail(self.scorer, program)

    def unique_random(self, seen, *key):
        rng = stream(self.config.seed, *key)
        for _ in range(_MAX_REDRAWS):
            p = random_program(self.config.grammar, rng)
            text = print_program(p)
            if text not in seen:
                return p, text
        return None, None

    def artifact(self, state: SearchState, kind: str) -> RunArtifact:
        meta = {
            "kind": kind,
            "seed": self.config.seed,
            "target": self.scorer.target,
            "evaluations_used": state.evaluations_used,
            "iterations": state.iteration,
            "final_temperature": state.temperature,
            "threads": self.config.threads,
            "kernel_backend": kernels.BACKEND,
            "versions": {"ruc": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "wall_time_s": round(time.perf_counter() - self.started, 3),
        }
        return RunArtifact(self.config.echo(), state.ranked(), state.trace, meta)


def _fresh_child(program, grammar, rng, seen, structural_rate):
    """A proposal not in ``seen``; ``None`` if nothing unscored was found.

    Rejection-samples ``propose`` first, then falls back to a uniform draw over
    the enumerated unseen point-mutation neighbours.
    """
    for _ in range(_MAX_REDRAWS):
        child = propose(program, grammar, rng, structural_rate)
        if print_program(child) not in seen:
            return child
    fresh = [c for c in neighbors(program, grammar) if print_program(c) not in seen]
    if not fresh:
        return None
    return fresh[rng.integers(len(fresh))]


def run_search(config: SearchConfig, frame: PanelFrame, target: str) -> RunArtifact:
    runner = _Runner(config, frame, target)
    seen: set[str] = set()
    state = SearchState(pool=[], temperature=config.T0)

    init = []
    for k in range(config.K):
        program, text = runner.unique_random(seen, _INIT, k)
        if program is not None:
            seen.add(text)
            init.append(program)
    for program, report in zip(init, runner.score_all(init)):
        state.pool.append(Candidate(program, report, 0))
        state.trace.append(TraceEvent(0, "init", report.program, report.fitness,
                                      config.T0, True))
    state.evaluations_used = len(init)

    exhausted: set[str] = set()
    while state.evaluations_used < config.max_evaluations:
        T = config.T0 * config.cooling ** state.iteration
        state.temperature = T
        budget = min(config.N, config.max_evaluations - state.evaluations_used)
        proposals = []  # (parent, child, rng)
        # walk down the ranking; members with no unscored neighbour are skipped
        for rank, parent in enumerate(state.ranked()):
            if len(proposals) >= budget:
                break
            if parent.text in exhausted:
                continue
            rng = stream(config.seed, _ITER, state.iteration, rank)
            try:
                child = _fresh_child(parent.program, config.grammar, rng, seen,
                                     config.structural_rate)
            except NoMutationPossible:
                exhausted.add(parent.text)
                state.trace.append(TraceEvent(state.iteration, "no_mutation", parent.text,
                                              temperature=T))
                continue
            if child is None:
                exhausted.add(parent.text)
                state.trace.append(TraceEvent(state.iteration, "exhausted", parent.text,
                                              temperature=T))
                continue
            seen.add(print_program(child))
            proposals.append((parent, child, rng))
        if not proposals:
            break

        reports = runner.score_all([p[1] for p in proposals])
        state.evaluations_used += len(proposals)
        for (parent, child, rng), report in zip(proposals, reports):
            accepted = metropolis_accept(parent.fitness, report.fitness, T, rng)
            replaced = ""
            if accepted:
                newcomer = Candidate(child, report, state.iteration + 1)
                idx = _worst_index(state.pool, parent)
                if idx is None:
                    # single-member pool: the parent is the only slot
                    accepted = report.fitness >= parent.fitness
                    idx = state.pool.index(parent) if accepted else None
                if idx is not None:
                    replaced = state.pool[idx].text
                    state.pool[idx] = newcomer
            state.trace.append(TraceEvent(state.iteration, "proposal", report.program,
                                          report.fitness, T, accepted, parent.text,
                                          parent.fitness, replaced))
        state.iteration += 1
        state.temperature = config.T0 * config.cooling ** state.iteration
    return runner.artifact(state, "ruc")


def random_search_baseline(config: SearchConfig, frame: PanelFrame, target: str) -> RunArtifact:
    """Best-of-random control: same budget, no perturbation or acceptance."""
    runner = _Runner(config, frame, target)
    seen: set[str] = set()
    state = SearchState(pool=[], temperature=config.T0)
    programs = []
    k = 0
    misses = 0
    while len(programs) < config.max_evaluations and misses < _MAX_REDRAWS:
        program, text = runner.unique_random(seen, _RANDOM, k)
        k += 1
        if program is None:
            misses += 1
            continue
        misses = 0
        seen.add(text)
        programs.append(program)
    candidates = []
    batch = max(config.N, 1)
    for start in range(0, len(programs), batch):
        chunk = programs[start:start + batch]
        for program, report in zip(chunk, runner.score_all(chunk)):
            candidates.append(Candidate(program, report, 0))
            state.trace.append(TraceEvent(0, "random", report.program, report.fitness))
    state.evaluations_used = len(programs)
    state.pool = sorted(candidates, key=_rank_key)[:config.K]
    kept = {c.text for c in state.pool}
    state.trace = [TraceEvent(e.iteration, e.event, e.program, e.fitness,
                              accepted=e.program in kept) for e in state.trace]
    return runner.artifact(state, "random_baseline")


def replay_pool(trace) -> set[str]:
    """Reconstruct the final pool's program texts from a trace."""
    pool = set()
    for e in trace:
        if e.event == "init":
            pool.add(e.program)
        elif e.event == "proposal" and e.accepted:
            pool.discard(e.replaced)
            pool.add(e.program)
    return pool
