"""Design-matrix construction for the 247-feature autoregressive layout.

The regressor layout is a frozen contract shared by the sparse linear
model and the networks: lagged hourly prices (d-1, d-2, d-3, d-7),
hourly day-ahead forecasts of both exogenous series for d, d-1 and d-7,
and seven weekday dummies. Nothing in this module ever reads the target
day's price.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import ConstantColumn, InsufficientHistory
from .market_data import HOURS_PER_DAY, MarketDataset

LAYOUT_VERSION = "lear-247/1"

PRICE_LAGS = (1, 2, 3, 7)
EXOG_LAGS = (0, 1, 7)
WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

# (block name, mask label) in layout order; each price/exog block spans 24
# columns, the weekday block 7
FEATURE_BLOCKS = tuple(
    [f"price_lag{lag}" for lag in PRICE_LAGS]
    + [f"exog{i}_lag{lag}" for i in (1, 2) for lag in EXOG_LAGS]
    + ["weekday"]
)
N_BLOCKS = len(FEATURE_BLOCKS)  # 11
N_FEATURES = 4 * HOURS_PER_DAY + 2 * 3 * HOURS_PER_DAY + 7  # 247
DUMMY_SLICE = slice(N_FEATURES - 7, N_FEATURES)
DUMMY_COLUMNS = tuple(range(DUMMY_SLICE.start, DUMMY_SLICE.stop))


def block_slice(block: int) -> slice:
    """Column range of the given feature block (0..10)."""
    if block < N_BLOCKS - 1:
        return slice(block * HOURS_PER_DAY, (block + 1) * HOURS_PER_DAY)
    return DUMMY_SLICE


def feature_names() -> list[str]:
    """Human-readable name for each of the 247 columns, in layout order."""
    names = []
    for lag in PRICE_LAGS:
        names += [f"price[d-{lag}][h={h}]" for h in range(HOURS_PER_DAY)]
    for i in (1, 2):
        for lag in EXOG_LAGS:
            tag = "d" if lag == 0 else f"d-{lag}"
            names += [f"exog{i}[{tag}][h={h}]" for h in range(HOURS_PER_DAY)]
    names += [f"weekday[{w}]" for w in WEEKDAY_NAMES]
    return names


def layout_manifest() -> dict:
    """JSON-exportable index -> feature name manifest."""
    return {
        "schema": "epfbench-layout/1",
        "version": LAYOUT_VERSION,
        "features": feature_names(),
    }


def transform_prices(values: np.ndarray, mode: str) -> np.ndarray:
    """Optional variance-stabilizing transform applied to prices."""
    if mode == "none":
        return np.asarray(values, dtype=float)
    if mode == "asinh":
        return np.arcsinh(values)
    raise ValueError(f"unknown price transform {mode!r}")


def invert_prices(values: np.ndarray, mode: str) -> np.ndarray:
    """Inverse of :func:`transform_prices`."""
    if mode == "none":
        return np.asarray(values, dtype=float)
    if mode == "asinh":
        return np.sinh(values)
    raise ValueError(f"unknown price transform {mode!r}")


@dataclass
class FeatureVector:
    """One day's 247 regressors in the frozen layout."""

    values: np.ndarray  # (247,)
    layout_version: str = LAYOUT_VERSION


@dataclass
class DesignMatrix:
    """Stacked per-day feature rows with the target price of one hour."""

    X: np.ndarray  # (n_rows, 247)
    y: np.ndarray  # (n_rows,)
    target_hour: int
    dates: list[dt.date]


def weekday_dummies(day: dt.date) -> np.ndarray:
    """One-hot vector over Mon..Sun; D_Mon = 1 on Mondays and 0 otherwise."""
    out = np.zeros(7)
    out[day.weekday()] = 1.0
    return out


def build_features(dataset: MarketDataset, day: dt.date,
                   price_transform: str = "none") -> FeatureVector:
    """Regressors for forecasting day ``day``.

    Needs prices for d-1, d-2, d-3 and d-7 and exogenous values for d,
    d-1 and d-7; the price of ``day`` itself is never touched.
    """
    needed = {day} | {day - dt.timedelta(days=lag) for lag in PRICE_LAGS}
    for d in needed:
        if d not in dataset:
            raise InsufficientHistory(
                f"day {d.isoformat()} required for features of {day.isoformat()}")
    parts = []
    for lag in PRICE_LAGS:
        prices = dataset.records[day - dt.timedelta(days=lag)].prices
        parts.append(transform_prices(prices, price_transform))
    for i in range(2):
        for lag in EXOG_LAGS:
            parts.append(np.asarray(
                dataset.records[day - dt.timedelta(days=lag)].exog[i], dtype=float))
    parts.append(weekday_dummies(day))
    return FeatureVector(values=np.concatenate(parts))


def feature_matrix(window: MarketDataset, price_transform: str = "none"
                   ) -> tuple[np.ndarray, np.ndarray, list[dt.date]]:
    """All usable rows of a calibration window in one pass.

    Returns ``(X, Y, dates)`` where ``X`` is (n-7, 247), ``Y`` holds the
    24 (possibly transformed) target prices per row, and rows are the
    window's days from the 8th day on, in date order.
    """
    if window.n_days < 8:
        raise InsufficientHistory(
            f"need at least 8 days to assemble a design matrix, got {window.n_days}")
    dates = window.dates()
    n = len(dates)
    prices = transform_prices(
        np.stack([window.records[d].prices for d in dates]), price_transform)
    exog = np.stack([window.records[d].exog for d in dates])  # (n, 2, 24)
    rows = slice(7, n)
    blocks = [prices[rows.start - lag:n - lag] for lag in PRICE_LAGS]
    for i in range(2):
        for lag in EXOG_LAGS:
            blocks.append(exog[rows.start - lag:n - lag, i])
    blocks.append(np.stack([weekday_dummies(d) for d in dates[rows]]))
    X = np.concatenate(blocks, axis=1)
    return X, prices[rows], dates[rows]


def assemble(window: MarketDataset, hour: int,
             price_transform: str = "none") -> DesignMatrix:
    """Per-hour regression problem over a calibration window.

    The first seven days are consumed by the lags, so an ``n``-day
    window yields ``n - 7`` rows; ``y_t`` is day t's price at ``hour``.
    """
    if not 0 <= hour < HOURS_PER_DAY:
        raise ValueError(f"hour must be in 0..23, got {hour}")
    X, Y, dates = feature_matrix(window, price_transform)
    return DesignMatrix(X=X, y=Y[:, hour].copy(), target_hour=hour, dates=dates)


@dataclass
class Standardizer:
    """Column-wise location/scale for a feature matrix.

    Scales are population standard deviations; passthrough columns
    (e.g. the weekday dummies) keep mean 0 and scale 1 so they survive
    both directions untouched.
    """

    means: np.ndarray
    scales: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.scales

    def invert(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.scales + self.means

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "scales": self.scales.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(means=np.asarray(data["means"], dtype=float),
                   scales=np.asarray(data["scales"], dtype=float))


def fit_standardizer(X: np.ndarray, passthrough=()) -> Standardizer:
    """Fit column means and population stds; ``passthrough`` columns are exempt.

    Raises :class:`ConstantColumn` for a zero-variance column that is
    not passed through.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means = X.mean(axis=0)
    scales = X.std(axis=0)  # population std (ddof=0)
    skip = np.zeros(X.shape[1], dtype=bool)
    skip[list(passthrough)] = True
    for j in np.flatnonzero(~skip & (scales == 0.0)):
        raise ConstantColumn(int(j))
    means[skip] = 0.0
    scales[skip] = 1.0
    return Standardizer(means=means, scales=scales)
