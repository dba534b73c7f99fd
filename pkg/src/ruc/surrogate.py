"""Cheap surrogate scoring: OLS / Poisson fits on expanding temporal splits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (InsufficientData, NegativeTarget, NonConvergence, NumericalFailure,
                     RucError, UnknownVariable)
from .evaluator import Evaluator
from .grammar import FeatureProgram, print_program
from .panel import PanelFrame

RIDGE = 1e-10
POISSON_TOL = 1e-8
POISSON_MAX_ITER = 50
OBJECTIVES = ("mean_oos_r2", "neg_mean_aic", "neg_mean_oos_mae")
MODELS = ("ols", "poisson")


@dataclass(frozen=True, eq=False)
class RegressionFit:
    coefficients: np.ndarray
    rss: float
    log_likelihood: float
    r2: float
    aic: float
    bic: float
    n_obs: int
    k_params: int
    model: str = "ols"
    deviance_path: tuple = ()

    def predict(self, design: np.ndarray) -> np.ndarray:
        eta = np.asarray(design, dtype=np.float64) @ self.coefficients
        if self.model == "poisson":
            with np.errstate(over="ignore"):
                return np.exp(eta)
        return eta


def _check_design(design, target):
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"design {X.shape} and target {y.shape} do not align")
    n, k = X.shape
    if k < 1 or n <= k:
        raise InsufficientData(f"need n > k >= 1, got n={n}, k={k}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("design and target must not contain missing values")
    return X, y


def _ridge_solve(gram, rhs):
    k = gram.shape[0]
    try:
        beta = np.linalg.solve(gram + RIDGE * np.eye(k), rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from None
    if not np.isfinite(beta).all():
        raise NumericalFailure("non-finite coefficients")
    return beta


def fit_ols(design, target) -> RegressionFit:
    """Least squares via ridge-stabilised normal equations.

    ``design`` must already contain the intercept column.
    """
    X, y = _check_design(design, target)
    n, k = X.shape
    beta = _ridge_solve(X.T @ X, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dev = y - y.mean()
    tss = float(dev @ dev)
    r2 = 0.0 if tss == 0.0 else 1.0 - rss / tss
    with np.errstate(divide="ignore"):
        log_sigma2 = float(np.log(rss / n))
    loglik = -0.5 * n * (math.log(2.0 * math.pi) + log_sigma2 + 1.0)
    aic = n * log_sigma2 + 2 * k
    bic = n * log_sigma2 + k * math.log(n)
    return RegressionFit(beta, rss, loglik, r2, aic, bic, n, k, "ols")


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def fit_poisson(design, target) -> RegressionFit:
    """Log-link Poisson GLM by IRLS with step halving.

    The recorded deviance path is non-increasing. The log-likelihood omits the
    constant ``sum(log(y!))``.
    """
    X, y = _check_design(design, target)
    if (y < 0).any():
        raise NegativeTarget("Poisson target has negative entries")
    if not np.array_equal(y, np.round(y)):
        raise ValueError("Poisson target must be integral counts")
    n, k = X.shape

    def deviance_at(beta):
        eta = X @ beta
        with np.errstate(over="ignore"):
            mu = np.exp(eta)
        if not np.isfinite(mu).all():
            return math.inf, eta, mu
        return _poisson_deviance(y, mu), eta, mu

    # first step from the usual mu = (y + mean(y)) / 2 start
    mu = (y + y.mean()) / 2.0
    eta = np.log(mu)
    beta = _ridge_solve(X.T @ (mu[:, None] * X), X.T @ (mu * (eta + (y - mu) / mu)))
    dev, eta, mu = deviance_at(beta)
    if not math.isfinite(dev):
        raise NumericalFailure("Poisson mean overflow")
    path = [dev]
    converged = False
    for _ in range(POISSON_MAX_ITER - 1):
        z = eta + (y - mu) / mu
        proposal = _ridge_solve(X.T @ (mu[:, None] * X), X.T @ (mu * z))
        new_dev, new_eta, new_mu = deviance_at(proposal)
        halvings = 0
        while new_dev > dev + POISSON_TOL and halvings < 30:
            proposal = 0.5 * (proposal + beta)
            new_dev, new_eta, new_mu = deviance_at(proposal)
            halvings += 1
        if abs(new_dev - dev) < POISSON_TOL:
            if new_dev <= dev:
                beta, dev, eta, mu = proposal, new_dev, new_eta, new_mu
                path.append(dev)
            converged = True
            break
        if new_dev > dev:
            raise NumericalFailure("step halving failed to reduce the deviance")
        beta, dev, eta, mu = proposal, new_dev, new_eta, new_mu
        path.append(dev)
    if not converged:
        raise NonConvergence(f"deviance still moving after {POISSON_MAX_ITER} iterations")

    loglik = float(np.sum(y * eta - mu))
    null_dev = _poisson_deviance(y, np.full_like(y, y.mean())) if y.mean() > 0 else 0.0
    r2 = 0.0 if null_dev == 0.0 else 1.0 - dev / null_dev
    resid = y - mu
    return RegressionFit(beta, float(resid @ resid), loglik, r2,
                         2 * k - 2 * loglik, k * math.log(n) - 2 * loglik, n, k,
                         "poisson", tuple(path))


def fit(model: str, design, target) -> RegressionFit:
    if model == "ols":
        return fit_ols(design, target)
    if model == "poisson":
        return fit_poisson(design, target)
    raise ValueError(f"unknown model {model!r}")


@dataclass(frozen=True)
class SplitConfig:
    initial_train_fraction: float = 0.5
    test_len: int | None = None
    step: int | None = None
    model: str = "ols"
    objective: str = "mean_oos_r2"
    horizon: int = 1
    min_rows: int = 30

    def __post_init__(self):
        if not 0.0 < self.initial_train_fraction < 1.0:
            raise ValueError("initial_train_fraction must be in (0, 1)")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.test_len is not None and self.test_len < 1:
            raise ValueError("test_len must be >= 1")
        if self.step is not None and self.step < 1:
            raise ValueError("step must be >= 1")


@dataclass(frozen=True)
class Split:
    """Row-index bounds in feature time; train rows are ``[0, train_stop)``."""
    train_stop: int
    test_start: int
    test_stop: int


def make_splits(n_times: int, cfg: SplitConfig) -> list[Split]:
    """Expanding-train / fixed-test splits over feature rows ``t`` with ``t + h < n_times``.

    Train rows end ``h - 1`` rows early so no training target is observed
    after the first test row's forecast time.
    """
    h = cfg.horizon
    usable = n_times - h
    test_len = cfg.test_len if cfg.test_len is not None else max(20, int(0.1 * n_times))
    step = cfg.step if cfg.step is not None else test_len
    start = int(cfg.initial_train_fraction * usable)
    splits = []
    a = start
    while a < usable:
        train_stop = a - h + 1
        if train_stop > 0:
            splits.append(Split(train_stop, a, min(a + test_len, usable)))
        a += step
    return splits


@dataclass(frozen=True)
class SplitRecord:
    train_range: tuple
    test_range: tuple
    train_fit: RegressionFit
    oos_r2: float
    oos_mae: float
    n_train: int
    n_test: int
    train_target_end: object = None


@dataclass(frozen=True)
class ScoreReport:
    program: str
    splits: tuple
    mean_oos_r2: float
    mean_oos_mae: float
    mean_aic: float
    mean_bic: float
    n_splits: int
    n_dropped_rows: int
    fitness: float
    skipped_splits: int = 0
    degenerate: bool = False


def _oos_r2(y, pred):
    resid = y - pred
    sse = float(resid @ resid)
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        return 0.0
    return 1.0 - sse / sst


def _fitness(objective, r2, mae, aic):
    value = {"mean_oos_r2": r2, "neg_mean_aic": -aic, "neg_mean_oos_mae": -mae}[objective]
    return value if not math.isnan(value) else -math.inf


class _Degenerate(Exception):
    pass


class Scorer:
    """Scores feature matrices against one target over fixed splits.

    Pairs feature row ``t`` with target row ``t + h`` within each entity and
    pools the (time, entity) rows of every split.
    """

    def __init__(self, frame: PanelFrame, target: str, cfg: SplitConfig = SplitConfig(),
                 evaluator: Evaluator | None = None):
        if target not in frame.variables:
            raise UnknownVariable(target)
        self.frame = frame
        self.target = target
        self.cfg = cfg
        self.evaluator = evaluator or Evaluator(frame)
        h = cfg.horizon
        T = frame.n_times
        shifted = np.full((T, frame.n_entities), np.nan)
        if T > h:
            shifted[:T - h] = frame.column(target)[h:]
        self.shifted_target = shifted
        self.splits = make_splits(T, cfg)
        self.usable = max(T - h, 0)

    def _rows(self, F, lo, hi):
        f = F[lo:hi].ravel()
        y = self.shifted_target[lo:hi].ravel()
        keep = ~(np.isnan(f) | np.isnan(y))
        return f[keep], y[keep]

    def _fit_split(self, F, sp):
        """``(fit, test_feature, test_target)`` for one split, ``None`` if too few rows.

        Raises ``_Degenerate`` when the training feature is constant.
        """
        f_tr, y_tr = self._rows(F, 0, sp.train_stop)
        f_te, y_te = self._rows(F, sp.test_start, sp.test_stop)
        if len(f_tr) < self.cfg.min_rows or len(f_te) < self.cfg.min_rows:
            return None
        if f_tr.min() == f_tr.max():
            raise _Degenerate
        train_fit = fit(self.cfg.model, np.column_stack([np.ones_like(f_tr), f_tr]), y_tr)
        return train_fit, f_te, y_te

    def _fitted_splits(self, F):
        """Yield ``(split, fit, test_feature, test_target)``; ``None`` marks a skipped split."""
        for sp in self.splits:
            item = self._fit_split(F, sp)
            yield None if item is None else (sp, *item)

    def split_record(self, F: np.ndarray, sp: Split) -> SplitRecord:
        """Fit on ``[0, sp.train_stop)`` and test on ``[sp.test_start, sp.test_stop)``."""
        try:
            item = self._fit_split(F, sp)
        except _Degenerate:
            raise InsufficientData("training feature is constant") from None
        if item is None:
            raise InsufficientData(f"fewer than {self.cfg.min_rows} usable train or test rows")
        return self._record(sp, *item)

    def _record(self, sp, train_fit, f_te, y_te):
        ts = self.frame.timestamps
        pred = train_fit.predict(np.column_stack([np.ones_like(f_te), f_te]))
        return SplitRecord(
            train_range=(ts[0], ts[sp.train_stop - 1]),
            test_range=(ts[sp.test_start], ts[sp.test_stop - 1]),
            train_fit=train_fit,
            oos_r2=_oos_r2(y_te, pred),
            oos_mae=float(np.mean(np.abs(y_te - pred))),
            n_train=train_fit.n_obs,
            n_test=len(f_te),
            train_target_end=ts[sp.train_stop - 1 + self.cfg.horizon],
        )

    def score_values(self, F: np.ndarray, program_text: str = "") -> ScoreReport:
        cfg = self.cfg
        block = F[:self.usable]
        dropped = int((np.isnan(block) | np.isnan(self.shifted_target[:self.usable])).sum())
        records = []
        skipped = 0
        try:
            for item in self._fitted_splits(F):
                if item is None:
                    skipped += 1
                    continue
                records.append(self._record(*item))
        except _Degenerate:
            nan = math.nan
            return ScoreReport(program_text, tuple(records), nan, nan, nan, nan,
                               len(records), dropped, -math.inf, skipped, True)
        if not records:
            raise InsufficientData(
                f"every split has fewer than {cfg.min_rows} usable rows ({program_text})")
        r2 = float(np.mean([r.oos_r2 for r in records]))
        mae = float(np.mean([r.oos_mae for r in records]))
        aic = float(np.mean([r.train_fit.aic for r in records]))
        bic = float(np.mean([r.train_fit.bic for r in records]))
        return ScoreReport(program_text, tuple(records), r2, mae, aic, bic, len(records),
                           dropped, _fitness(cfg.objective, r2, mae, aic), skipped, False)

    def score(self, program: FeatureProgram) -> ScoreReport:
        return self.score_values(self.evaluator.values(program), print_program(program))

    def oos_errors(self, F: np.ndarray) -> np.ndarray:
        """(time x entity) out-of-sample errors ``target - prediction``; NaN outside test rows."""
        out = np.full_like(self.shifted_target, np.nan)
        for item in self._fitted_splits(F):
            if item is None:
                continue
            sp, train_fit, _, _ = item
            f = F[sp.test_start:sp.test_stop]
            design = np.stack([np.ones_like(f), f], axis=-1)
            out[sp.test_start:sp.test_stop] = (self.shifted_target[sp.test_start:sp.test_stop]
                                               - train_fit.predict(design))
        return out


def rolling_score(program: FeatureProgram, frame: PanelFrame, target: str,
                  cfg: SplitConfig = SplitConfig()) -> ScoreReport:
    return Scorer(frame, target, cfg).score(program)


def score_or_fail(scorer: Scorer, program: FeatureProgram) -> ScoreReport:
    """Like ``scorer.score`` but domain/numerical errors become fitness -inf."""
    try:
        return scorer.score(program)
    except (RucError, FloatingPointError, ValueError, np.linalg.LinAlgError):
        nan = math.nan
        return ScoreReport(print_program(program), (), nan, nan, nan, nan, 0, 0, -math.inf,
                           0, True)
