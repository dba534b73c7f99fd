"""Evaluate feature programs over a panel.

Every operator maps (time x entity) float arrays to a new array of the same
shape. NaN marks a missing cell; missing inputs give missing outputs and any
non-finite intermediate (x/0, log of x <= 0, overflow) becomes missing.
"""

from __future__ import annotations

import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateCrossSection, UnknownVariable
from .grammar import FeatureProgram, Leaf, Node, print_program
from .panel import PanelFrame


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray
    provenance: str
    timestamps: tuple
    entities: tuple


def _finite(a):
    a = np.asarray(a, dtype=np.float64)
    # + 0.0 folds negative zero into zero
    return np.where(np.isfinite(a), a, np.nan) + 0.0


def _div(a, b):
    with np.errstate(all="ignore"):
        return np.where(b == 0.0, np.nan, a / b)


def _log(a):
    with np.errstate(all="ignore"):
        return np.where(a > 0.0, np.log(np.where(a > 0.0, a, 1.0)), np.nan)


def _mean_diff(x, w1, w2):
    return kernels.rolling_mean(x, w1) - kernels.rolling_mean(x, w2)


# operator name -> kernel function name
_ROLL = {
    "ts_mean": "rolling_mean", "ts_std": "rolling_std", "ts_skew": "rolling_skew",
    "ts_min": "rolling_min", "ts_max": "rolling_max", "ts_median": "rolling_median",
    "ts_sum": "rolling_sum", "ts_rank": "rolling_rank", "ts_zscore": "rolling_zscore",
    "ts_ir": "rolling_ir", "ts_arg_max": "rolling_argmax", "ts_arg_min": "rolling_argmin",
    # quantile level is not parameterised; fixed to the median
    "ts_quantile": "rolling_median", "ts_delta": "rolling_delta",
    "ts_decay_linear": "rolling_decay_linear",
    "ts_corr": "rolling_corr", "ts_cov": "rolling_cov", "ts_regression": "rolling_regression",
}

_ELEMENTWISE = {
    "add": np.add, "sub": np.subtract, "mul": np.multiply, "div": _div,
    "neg": np.negative, "abs_": np.abs, "log_": _log, "sign": np.sign,
}

_CROSS = {"cs_rank": "cs_rank", "cs_zscore": "cs_zscore", "cs_demean": "cs_demean"}

IMPLEMENTED = frozenset(_ROLL) | frozenset(_ELEMENTWISE) | frozenset(_CROSS) | {"ts_mean_diff"}


def apply_operator(name: str, series, windows, n_entities: int | None = None) -> np.ndarray:
    """Apply one operator to already-evaluated argument arrays."""
    if name in _ELEMENTWISE:
        with np.errstate(all="ignore"):
            out = _ELEMENTWISE[name](*series)
    elif name in _ROLL:
        out = getattr(kernels, _ROLL[name])(*series, *windows)
    elif name in _CROSS:
        if (n_entities if n_entities is not None else series[0].shape[1]) < 2:
            warnings.warn(f"{name} on a single-entity panel yields only missing values",
                          DegenerateCrossSection, stacklevel=3)
            return np.full_like(series[0], np.nan)
        out = getattr(kernels, _CROSS[name])(*series)
    elif name == "ts_mean_diff":
        out = _mean_diff(*series, *windows)
    else:
        raise KeyError(f"no implementation for operator {name!r}")
    return _finite(out)


def warmup(program: FeatureProgram) -> int:
    """Leading rows guaranteed missing from window warm-up alone."""
    if isinstance(program, Leaf):
        return 0
    inner = max(warmup(c) for c in program.children)
    if not program.windows:
        return inner
    w = max(program.windows)
    return inner + (w if program.op.name == "ts_delta" else w - 1)


def _leaf(frame: PanelFrame, variable: str) -> np.ndarray:
    try:
        return frame.column(variable)
    except KeyError:
        raise UnknownVariable(variable) from None


def _eval(program, frame, lookup):
    if isinstance(program, Leaf):
        return _leaf(frame, program.variable)
    args = [lookup(c) for c in program.children]
    return apply_operator(program.op.name, args, program.windows, frame.n_entities)


def evaluate(program: FeatureProgram, frame: PanelFrame) -> FeatureMatrix:
    def lookup(p):
        return _eval(p, frame, lookup)

    values = lookup(program)
    if isinstance(program, Leaf):
        values = values.copy()
    return FeatureMatrix(values, print_program(program), frame.timestamps, frame.entities)


class Evaluator:
    """Evaluates programs over one frame, memoising subtrees by canonical text.

    Safe to share between threads; cached arrays are read-only.
    """

    def __init__(self, frame: PanelFrame, cache_size: int = 2048):
        self.frame = frame
        self.cache_size = cache_size
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def values(self, program: FeatureProgram) -> np.ndarray:
        if isinstance(program, Leaf):
            return _leaf(self.frame, program.variable)
        key = print_program(program)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        out = _eval(program, self.frame, self.values)
        out.setflags(write=False)
        with self._lock:
            self._cache[key] = out
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return out

    def evaluate(self, program: FeatureProgram) -> FeatureMatrix:
        return FeatureMatrix(self.values(program), print_program(program),
                             self.frame.timestamps, self.frame.entities)
