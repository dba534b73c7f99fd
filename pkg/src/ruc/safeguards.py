"""Overfitting controls: VIF filtering, nested expanding-window CV and stress windows."""

from __future__ import annotations

import datetime as dt
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .errors import EmptySlice, InsufficientData, RucError
from .evaluator import Evaluator, FeatureMatrix
from .grammar import FeatureProgram, print_program
from .panel import PanelFrame, slice_time
from .surrogate import Scorer, Split, SplitConfig, fit_ols, score_or_fail

VIF_THRESHOLD = 5.0
PERFECT_R2 = 1.0 - 1e-12
STRESS_RHO = 0.25


# -- VIF -----------------------------------------------------------------------

def _matrix(feature):
    return feature.values if isinstance(feature, FeatureMatrix) else np.asarray(feature, float)


def pooled_rows(features) -> np.ndarray:
    """(rows x k) design of pooled (time, entity) cells, listwise-complete."""
    cols = [_matrix(f).ravel() for f in features]
    if len({len(c) for c in cols}) != 1:
        raise ValueError("features must share one (time x entity) shape")
    X = np.column_stack(cols)
    return X[~np.isnan(X).any(axis=1)]


def vif_from_rows(X: np.ndarray) -> np.ndarray:
    n, k = X.shape
    if k < 2:
        raise ValueError("VIF needs at least two features")
    if n < k + 10:
        raise InsufficientData(f"need at least {k + 10} complete rows, got {n}")
    out = np.empty(k)
    ones = np.ones((n, 1))
    for j in range(k):
        others = np.delete(X, j, axis=1)
        r2 = fit_ols(np.hstack([ones, others]), X[:, j]).r2
        out[j] = np.inf if r2 >= PERFECT_R2 else 1.0 / (1.0 - r2)
    return out


def vif(features, frame: PanelFrame | None = None) -> np.ndarray:
    """Variance inflation factor of each feature against all the others."""
    if len(features) < 2:
        raise ValueError("VIF needs at least two features")
    if frame is not None:
        for f in features:
            if _matrix(f).shape != (frame.n_times, frame.n_entities):
                raise ValueError("feature shape does not match the frame")
    return vif_from_rows(pooled_rows(features))


def vif_filter(features, frame: PanelFrame | None = None, threshold: float = VIF_THRESHOLD,
               fitness=None, vif_fn=vif) -> list:
    """Greedily drop the highest-VIF feature until every VIF is ``<= threshold``.

    Ties on VIF drop the feature with the lower ``fitness`` (then the later
    one). Survivors keep their input order. ``vif_fn(features, frame)`` can
    supply precomputed VIFs.
    """
    features = list(features)
    fitness = list(fitness) if fitness is not None else [0.0] * len(features)
    if len(fitness) != len(features):
        raise ValueError("fitness must align with features")
    alive = list(range(len(features)))
    while len(alive) >= 2:
        v = np.asarray(vif_fn([features[i] for i in alive], frame), dtype=float)
        top = v.max()
        if not top > threshold:
            break
        tied = [alive[j] for j in range(len(alive)) if v[j] == top]
        drop = min(tied, key=lambda i: (fitness[i], -i))
        alive.remove(drop)
    return [features[i] for i in alive]


# -- nested CV -------------------------------------------------------------------

@dataclass(frozen=True)
class NestedCvConfig:
    n_outer: int = 4
    initial_train_fraction: float = 0.5
    inner: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self):
        if self.n_outer < 1:
            raise ValueError("n_outer must be >= 1")
        if not 0.0 < self.initial_train_fraction < 1.0:
            raise ValueError("initial_train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class CvFold:
    outer_train_range: tuple
    outer_test_range: tuple
    selected: str
    inner_fitness: dict
    oos_r2: float
    oos_mae: float
    # index audit: rows are positions in the full frame
    inner_last_row: int
    outer_train_stop: int
    outer_test_start: int
    outer_test_stop: int
    # set when the pick has too few usable rows in the outer block
    unscored_reason: str = ""

    @property
    def leak_free(self) -> bool:
        return self.inner_last_row < self.outer_test_start and \
            self.outer_train_stop <= self.outer_test_start


@dataclass(frozen=True)
class CvReport:
    folds: tuple
    stability: float
    modal_program: str
    mean_oos_r2: float
    mean_oos_mae: float

    def audit(self) -> bool:
        """Every fold keeps inner data strictly before its outer test block."""
        tests = [(f.outer_test_start, f.outer_test_stop) for f in self.folds]
        ordered = all(a[1] <= b[0] for a, b in zip(tests, tests[1:]))
        return ordered and all(f.leak_free for f in self.folds)


def outer_folds(n_times: int, cfg: NestedCvConfig, horizon: int = 1) -> list[Split]:
    """Expanding outer train, contiguous equal outer test blocks covering the tail."""
    usable = n_times - horizon
    start = int(cfg.initial_train_fraction * usable)
    block = (usable - start) // cfg.n_outer
    if block < 1 or start - horizon + 1 < 1:
        raise InsufficientData("too few rows for the requested outer folds")
    folds = []
    for i in range(cfg.n_outer):
        a = start + i * block
        b = usable if i == cfg.n_outer - 1 else a + block
        folds.append(Split(a - horizon + 1, a, b))
    return folds


def nested_cv(finalists, frame: PanelFrame, target: str,
              cfg: NestedCvConfig = NestedCvConfig()) -> CvReport:
    """Select among ``finalists`` on each outer-train block, then test the pick forward.

    Inner scoring only ever sees the frame truncated before the outer test
    block, so nothing from an outer test row can influence selection. A fold
    whose pick has too few usable outer rows keeps NaN metrics and a reason;
    the report means cover the scored folds.
    """
    finalists = list(finalists)
    if not finalists:
        raise ValueError("nested_cv needs at least one finalist")
    h = cfg.inner.horizon
    outer_scorer = Scorer(frame, target, cfg.inner)
    folds = []
    for sp in outer_folds(frame.n_times, cfg, h):
        inner_frame = _head(frame, sp.test_start)
        inner_scorer = Scorer(inner_frame, target, cfg.inner, Evaluator(inner_frame))
        scores = {}
        for p in finalists:
            scores[print_program(p)] = score_or_fail(inner_scorer, p).fitness
        best = max(range(len(finalists)),
                   key=lambda i: (scores[print_program(finalists[i])], -i))
        chosen = finalists[best]
        ts = frame.timestamps
        try:
            record = outer_scorer.split_record(outer_scorer.evaluator.values(chosen), sp)
            r2, mae, reason = record.oos_r2, record.oos_mae, ""
        except RucError as exc:
            r2 = mae = float("nan")
            reason = f"{type(exc).__name__}: {exc}"
        folds.append(CvFold(
            outer_train_range=(ts[0], ts[sp.train_stop - 1]),
            outer_test_range=(ts[sp.test_start], ts[sp.test_stop - 1]),
            selected=print_program(chosen),
            inner_fitness=scores,
            oos_r2=r2,
            oos_mae=mae,
            inner_last_row=inner_frame.n_times - 1,
            outer_train_stop=sp.train_stop,
            outer_test_start=sp.test_start,
            outer_test_stop=sp.test_stop,
            unscored_reason=reason,
        ))
    picks = Counter(f.selected for f in folds)
    top = max(picks.values())
    modal = next(f.selected for f in folds if picks[f.selected] == top)
    return CvReport(
        folds=tuple(folds),
        stability=top / len(folds),
        modal_program=modal,
        mean_oos_r2=_scored_mean([f.oos_r2 for f in folds]),
        mean_oos_mae=_scored_mean([f.oos_mae for f in folds]),
    )


def _scored_mean(values) -> float:
    """Mean over scored folds; NaN when none could be scored."""
    scored = [v for v in values if not np.isnan(v)]
    return float(np.mean(scored)) if scored else float("nan")


def _head(frame: PanelFrame, stop: int) -> PanelFrame:
    return PanelFrame(frame.timestamps[:stop], frame.entities, frame.variables,
                      frame.values[:stop])


# -- stress windows --------------------------------------------------------------

@dataclass(frozen=True)
class StressWindow:
    name: str
    start: dt.date
    end: dt.date


@dataclass(frozen=True)
class StressConfig:
    rho: float = STRESS_RHO
    split: SplitConfig = field(default_factory=SplitConfig)


@dataclass(frozen=True)
class StressResult:
    name: str
    date_range: tuple
    oos_r2: float
    oos_mae: float
    n_obs: int
    passed: bool


@dataclass(frozen=True)
class StressReport:
    program: str
    windows: tuple
    overall_oos_r2: float
    overall_oos_mae: float
    overall_n_obs: int
    rho: float
    skipped: tuple = ()

    @property
    def passed(self) -> bool:
        return all(w.passed for w in self.windows)


def load_stress_windows(path=None) -> list[StressWindow]:
    """Named windows from a YAML mapping ``name: [start, end]``; package defaults if no path."""
    if path is None:
        text = resources.files("ruc").joinpath("data", "stress_windows.yaml").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    data = yaml.safe_load(text) or {}
    return parse_stress_windows(data.get("stress_windows", data))


def parse_stress_windows(mapping) -> list[StressWindow]:
    out = []
    for name, bounds in mapping.items():
        start, end = (dt.date.fromisoformat(str(b)) for b in bounds)
        if start > end:
            raise ValueError(f"stress window {name!r} ends before it starts")
        out.append(StressWindow(str(name), start, end))
    return out


def stress_test(program: FeatureProgram, frame: PanelFrame, target: str, windows,
                cfg: StressConfig = StressConfig()) -> StressReport:
    """Score ``program`` inside each window after one fit on all earlier rows.

    The overall reference uses the same single-fit protocol over the whole
    test region of ``cfg.split``; a window passes when its R^2 is at least
    ``rho`` times the overall R^2. Windows with no usable rows are skipped
    with a warning.
    """
    scorer = Scorer(frame, target, cfg.split)
    F = scorer.evaluator.values(program)
    h = cfg.split.horizon
    usable = scorer.usable
    a0 = int(cfg.split.initial_train_fraction * usable)
    overall = scorer.split_record(F, Split(a0 - h + 1, a0, usable))

    results, skipped = [], []
    for w in windows:
        try:
            sub = slice_time(frame, w.start, w.end)
            lo = frame.timestamps.index(sub.timestamps[0])
            hi = min(lo + sub.n_times, usable)
            if hi <= lo:
                raise EmptySlice(f"window {w.name!r} has no rows with an observed target")
            if lo - h + 1 < 1:
                raise InsufficientData(f"window {w.name!r} has no earlier training rows")
            rec = scorer.split_record(F, Split(lo - h + 1, lo, hi))
        except RucError as exc:
            warnings.warn(f"stress window {w.name!r} skipped: {exc}", stacklevel=2)
            skipped.append((w.name, type(exc).__name__))
            continue
        results.append(StressResult(w.name, rec.test_range, rec.oos_r2, rec.oos_mae,
                                    rec.n_test, rec.oos_r2 >= cfg.rho * overall.oos_r2))
    if not results:
        raise EmptySlice("no stress window overlaps the usable data")
    return StressReport(print_program(program), tuple(results), overall.oos_r2,
                        overall.oos_mae, overall.n_test, cfg.rho, tuple(skipped))
