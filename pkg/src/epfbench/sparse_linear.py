"""L1-penalized least squares by cyclic coordinate descent, and the
24-hour sparse autoregressive price model built on top of it.

Objective: (1/2n)||y - X beta - b||^2 + lambda * sum_j |beta_j| with an
unpenalized intercept b. The 1/n normalization gives the closed-form
grid anchor lambda_max = max_j |x_j^T (y - ybar)| / n and keeps lambda
comparable across calibration window lengths.
"""

from __future__ import annotations

import datetime as dt
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import feature_lab
from .errors import InsufficientHistory
from .feature_lab import DUMMY_COLUMNS, LAYOUT_VERSION, Standardizer, fit_standardizer
from .market_data import HOURS_PER_DAY, MarketDataset, window


@dataclass
class LassoConfig:
    """Penalty weight and convergence settings for one fit."""

    lambda_: float
    max_iters: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class LassoFit:
    """Solution of one penalized regression.

    ``converged`` is False when the sweep budget ran out; the fit is
    then the partial solution at the last sweep.
    """

    coefficients: np.ndarray
    intercept: float
    active_set: np.ndarray
    iterations_used: int
    converged: bool = True
    objective_trace: np.ndarray | None = None


@dataclass(frozen=True)
class WindowDescriptor:
    """Provenance of a calibration window: trailing slice ending at last_day."""

    last_day: dt.date
    n_days: int


def soft_threshold(z: float, gamma: float):
    """sign(z) * max(|z| - gamma, 0); the proximal map of the L1 penalty."""
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("gamma must be >= 0")
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


@njit(cache=True, nogil=True)
def _cd_sweeps(XT, y, lam, penalty, beta, b0, tol, max_sweeps):
    """Cyclic coordinate descent; mutates ``beta``, returns (b, sweeps, converged).

    XT is the (p, n) transposed design so each coordinate reads a
    contiguous row. One sweep is: intercept step, then coordinates
    0..p-1 in order; convergence when the largest single update in a
    sweep falls below tol.
    """
    p, n = XT.shape
    r = np.empty(n)
    for i in range(n):
        r[i] = y[i] - b0
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                r[i] -= XT[j, i] * bj
    colsq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += XT[j, i] * XT[j, i]
        colsq[j] = s / n
    b = b0
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        delta = 0.0
        m = 0.0
        for i in range(n):
            m += r[i]
        m /= n
        if m != 0.0:
            b += m
            for i in range(n):
                r[i] -= m
            if abs(m) > delta:
                delta = abs(m)
        for j in range(p):
            cj = colsq[j]
            if cj <= 0.0:
                continue  # empty column (e.g. weekday absent from window)
            old = beta[j]
            s = 0.0
            for i in range(n):
                s += XT[j, i] * r[i]
            z = s / n + cj * old
            thr = lam * penalty[j]
            if z > thr:
                new = (z - thr) / cj
            elif z < -thr:
                new = (z + thr) / cj
            else:
                new = 0.0
            if new != old:
                d = new - old
                for i in range(n):
                    r[i] -= XT[j, i] * d
                beta[j] = new
                if abs(d) > delta:
                    delta = abs(d)
        sweeps += 1
        if delta < tol:
            converged = True
            break
    return b, sweeps, converged


def _penalty_vector(p: int, penalty_mask=None) -> np.ndarray:
    if penalty_mask is None:
        return np.ones(p)
    penalty = np.asarray(penalty_mask, dtype=float)
    if penalty.shape != (p,):
        raise ValueError(f"penalty mask must have shape ({p},)")
    return penalty


def lasso_objective(X, y, coefficients, intercept, lambda_, penalty_mask=None) -> float:
    """(1/2n)||y - X beta - b||^2 + lambda * sum of penalized |beta_j|."""
    X = np.asarray(X, dtype=float)
    r = y - X @ coefficients - intercept
    penalty = _penalty_vector(X.shape[1], penalty_mask)
    return float(r @ r / (2 * len(y)) + lambda_ * np.sum(penalty * np.abs(coefficients)))


def lasso_fit(X: np.ndarray, y: np.ndarray, config: LassoConfig,
              penalty_mask=None, warm_start: LassoFit | None = None,
              track_objective: bool = False) -> LassoFit:
    """Fit the penalized regression on a standardized design matrix.

    ``penalty_mask`` gives a per-column penalty multiplier (0 exempts a
    column, e.g. the weekday dummies); the intercept is never penalized.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y) or len(y) < 1:
        raise ValueError(f"incompatible shapes X{X.shape}, y{y.shape}")
    n, p = X.shape
    penalty = _penalty_vector(p, penalty_mask)
    XT = np.ascontiguousarray(X.T)
    if warm_start is not None:
        beta = warm_start.coefficients.copy()
        b0 = warm_start.intercept
    else:
        beta = np.zeros(p)
        b0 = float(np.mean(y))

    if track_objective:
        trace = [lasso_objective(X, y, beta, b0, config.lambda_, penalty_mask)]
        sweeps_total = 0
        converged = False
        b = b0
        while sweeps_total < config.max_iters and not converged:
            b, sw, converged = _cd_sweeps(XT, y, config.lambda_, penalty, beta, b,
                                          config.tol, 1)
            sweeps_total += sw
            trace.append(lasso_objective(X, y, beta, b, config.lambda_, penalty_mask))
        objective_trace = np.asarray(trace)
        sweeps = sweeps_total
    else:
        b, sweeps, converged = _cd_sweeps(XT, y, config.lambda_, penalty, beta, b0,
                                          config.tol, config.max_iters)
        objective_trace = None
    return LassoFit(coefficients=beta, intercept=float(b),
                    active_set=np.flatnonzero(beta), iterations_used=int(sweeps),
                    converged=bool(converged), objective_trace=objective_trace)


def kkt_violation(X, y, fit: LassoFit, lambda_: float, penalty_mask=None) -> float:
    """Largest violation of the stationarity conditions at ``fit``.

    At an exact optimum: |x_j^T r / n| = lambda for active penalized
    columns, <= lambda for inactive ones, and the gradient vanishes on
    unpenalized columns and the intercept.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    penalty = _penalty_vector(p, penalty_mask)
    r = y - X @ fit.coefficients - fit.intercept
    g = X.T @ r / n
    worst = abs(float(np.mean(r)))  # intercept stationarity
    for j in range(p):
        lam_j = lambda_ * penalty[j]
        if fit.coefficients[j] != 0.0:
            worst = max(worst, abs(g[j] - lam_j * np.sign(fit.coefficients[j])))
        else:
            worst = max(worst, max(0.0, abs(g[j]) - lam_j))
    return worst


def lambda_max(X, y, penalty_mask=None) -> float:
    """Smallest penalty that zeroes every penalized coefficient."""
    X = np.asarray(X, dtype=float)
    penalty = _penalty_vector(X.shape[1], penalty_mask)
    g = X.T @ (y - np.mean(y)) / len(y)
    g = np.abs(g)[penalty > 0]
    return float(g.max()) if g.size else 0.0


def lambda_path(X, y, n_lambdas: int, ratio: float, penalty_mask=None) -> np.ndarray:
    """Descending geometric grid from lambda_max down to ratio * lambda_max."""
    if n_lambdas < 2:
        raise ValueError(f"n_lambdas must be >= 2, got {n_lambdas}")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    lam_max = lambda_max(X, y, penalty_mask)
    return lam_max * ratio ** (np.arange(n_lambdas) / (n_lambdas - 1))


def lasso_path(X, y, grid, config: LassoConfig | None = None,
               penalty_mask=None) -> list[LassoFit]:
    """Warm-started fits along a descending lambda grid."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be descending")
    base = config or LassoConfig(lambda_=0.0)
    fits = []
    warm = None
    for lam in grid:
        cfg = LassoConfig(lambda_=float(lam), max_iters=base.max_iters, tol=base.tol)
        warm = lasso_fit(X, y, cfg, penalty_mask=penalty_mask, warm_start=warm)
        fits.append(warm)
    return fits


@dataclass
class CvResult:
    """Chosen penalty plus the cross-validation curve behind it."""

    lambda_: float
    grid: np.ndarray
    mean_mse: np.ndarray  # per grid point
    fold_mse: np.ndarray  # (k_folds, n_lambdas)
    best_index: int


def cross_validate_lambda(X, y, grid, k_folds: int, seed=None,
                          config: LassoConfig | None = None,
                          penalty_mask=None) -> CvResult:
    """Pick the penalty minimizing mean validation MSE over time-blocked folds.

    Folds are contiguous blocks in row (= date) order; there is no
    shuffling, so ``seed`` is accepted only for interface uniformity.
    Ties break toward the larger lambda, i.e. the sparser model.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if k_folds < 2 or n < k_folds:
        raise ValueError(f"need 2 <= k_folds <= n rows, got k={k_folds}, n={n}")
    grid = np.asarray(grid, dtype=float)
    blocks = np.array_split(np.arange(n), k_folds)
    fold_mse = np.empty((k_folds, len(grid)))
    for k, block in enumerate(blocks):
        train = np.setdiff1d(np.arange(n), block)
        fits = lasso_path(X[train], y[train], grid, config, penalty_mask)
        for g, f in enumerate(fits):
            pred = X[block] @ f.coefficients + f.intercept
            fold_mse[k, g] = np.mean((y[block] - pred) ** 2)
    mean_mse = fold_mse.mean(axis=0)
    best = int(np.flatnonzero(mean_mse == mean_mse.min())[0])  # grid is descending
    return CvResult(lambda_=float(grid[best]), grid=grid, mean_mse=mean_mse,
                    fold_mse=fold_mse, best_index=best)


@dataclass
class CvSpec:
    """Cross-validation layout for tuning each per-hour penalty."""

    k_folds: int = 7
    n_lambdas: int = 20
    lambda_ratio: float = 1e-3


@dataclass
class LearModel:
    """24 per-hour penalized regressions sharing one standardization."""

    per_hour: list[LassoFit]
    standardizers: list[Standardizer]
    lambdas: np.ndarray
    layout_version: str = LAYOUT_VERSION
    window: WindowDescriptor | None = None
    price_transform: str = "none"

    def to_json(self) -> str:
        payload = {
            "schema": "epfbench-lear-model/1",
            "layout_version": self.layout_version,
            "price_transform": self.price_transform,
            "window": None if self.window is None else {
                "last_day": self.window.last_day.isoformat(),
                "n_days": self.window.n_days,
            },
            "lambdas": [float(v) for v in self.lambdas],
            "hours": [
                {
                    "coefficients": fit.coefficients.tolist(),
                    "intercept": fit.intercept,
                    "iterations_used": fit.iterations_used,
                    "converged": fit.converged,
                    "standardizer": std.to_dict(),
                }
                for fit, std in zip(self.per_hour, self.standardizers)
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LearModel":
        payload = json.loads(text)
        if payload.get("schema") != "epfbench-lear-model/1":
            raise ValueError(f"unsupported model schema {payload.get('schema')!r}")
        fits, stds = [], []
        for entry in payload["hours"]:
            coef = np.asarray(entry["coefficients"], dtype=float)
            fits.append(LassoFit(coefficients=coef, intercept=float(entry["intercept"]),
                                 active_set=np.flatnonzero(coef),
                                 iterations_used=int(entry["iterations_used"]),
                                 converged=bool(entry["converged"])))
            stds.append(Standardizer.from_dict(entry["standardizer"]))
        win = payload["window"]
        descriptor = None if win is None else WindowDescriptor(
            last_day=dt.date.fromisoformat(win["last_day"]), n_days=int(win["n_days"]))
        return cls(per_hour=fits, standardizers=stds,
                   lambdas=np.asarray(payload["lambdas"], dtype=float),
                   layout_version=payload["layout_version"], window=descriptor,
                   price_transform=payload["price_transform"])


@dataclass
class SelectionGrid:
    """How often each feature was active, per target hour."""

    counts: np.ndarray  # (247, 24) ints
    n_models: int = 0


def lear_penalty_mask(n_features: int = feature_lab.N_FEATURES) -> np.ndarray:
    """Per-column penalty multipliers: 1 everywhere, 0 on the weekday dummies."""
    penalty = np.ones(n_features)
    penalty[list(DUMMY_COLUMNS)] = 0.0
    return penalty


def fit_lear(dataset: MarketDataset, last_day: dt.date, calib_days: int,
             cv: CvSpec | None = None, lambdas=None,
             price_transform: str = "none", n_jobs: int = 1,
             config: LassoConfig | None = None) -> LearModel:
    """Fit the 24 per-hour models on the trailing window ending at ``last_day``.

    Targets are the window's own prices, so a model fitted with
    ``last_day = d - 1`` is safe for forecasting day ``d``. When
    ``lambdas`` (a 24-vector) is given the cross-validation step is
    skipped and those penalties are used directly.
    """
    win = window(dataset, last_day, calib_days)
    X, Y, _ = feature_lab.feature_matrix(win, price_transform)
    if len(Y) < 2:
        raise InsufficientHistory(f"window of {calib_days} days leaves {len(Y)} usable rows")
    standardizer = fit_standardizer(X, passthrough=DUMMY_COLUMNS)
    Xs = standardizer.apply(X)
    penalty = lear_penalty_mask()
    base = config or LassoConfig(lambda_=0.0)
    cv = cv or CvSpec()
    chosen = np.empty(HOURS_PER_DAY)
    fits: list[LassoFit | None] = [None] * HOURS_PER_DAY

    def fit_hour(h: int):
        y = Y[:, h]
        if lambdas is not None:
            cfg = LassoConfig(lambda_=float(lambdas[h]), max_iters=base.max_iters,
                              tol=base.tol)
            fits[h] = lasso_fit(Xs, y, cfg, penalty_mask=penalty)
            chosen[h] = lambdas[h]
            return
        grid = lambda_path(Xs, y, cv.n_lambdas, cv.lambda_ratio, penalty)
        result = cross_validate_lambda(Xs, y, grid, cv.k_folds, config=base,
                                       penalty_mask=penalty)
        full_path = lasso_path(Xs, y, grid, base, penalty)
        fits[h] = full_path[result.best_index]
        chosen[h] = result.lambda_

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(fit_hour, range(HOURS_PER_DAY)))
    else:
        for h in range(HOURS_PER_DAY):
            fit_hour(h)

    return LearModel(per_hour=fits, standardizers=[standardizer] * HOURS_PER_DAY,
                     lambdas=chosen, layout_version=LAYOUT_VERSION,
                     window=WindowDescriptor(last_day=last_day, n_days=calib_days),
                     price_transform=price_transform)


def predict_lear(model: LearModel, dataset: MarketDataset, day: dt.date) -> np.ndarray:
    """Forecast the 24 hourly prices of ``day`` (back in raw price units)."""
    fv = feature_lab.build_features(dataset, day, model.price_transform)
    out = np.empty(HOURS_PER_DAY)
    for h in range(HOURS_PER_DAY):
        xs = model.standardizers[h].apply(fv.values)
        fit = model.per_hour[h]
        out[h] = fit.coefficients @ xs + fit.intercept
    return feature_lab.invert_prices(out, model.price_transform)


def selection_grid(models) -> SelectionGrid:
    """Count how often each feature is active per hour across ``models``."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    counts = np.zeros((feature_lab.N_FEATURES, HOURS_PER_DAY), dtype=np.int64)
    for model in models:
        for h, fit in enumerate(model.per_hour):
            counts[fit.active_set, h] += 1
    return SelectionGrid(counts=counts, n_models=len(models))
