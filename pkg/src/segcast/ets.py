"""Additive Holt-Winters smoothing for hourly count series.

Fitting runs the level/trend/seasonal recursion for every (alpha, beta,
gamma) combination on a 0.05-step grid simultaneously (vectorized across
combinations) and keeps the one with the smallest in-sample one-step-ahead
squared error.  Forecasts carry a per-step standard error that grows with
the square root of the step, derived from the in-sample residuals.

Series shorter than two full days fall back to seasonal-naive parameters
(repeat the last observed day) so downstream consumers always get a usable
forecast.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import HourlySeries, TimeWindow, WindowAlignmentError

SEASON = 24
_GRID = np.linspace(0.0, 1.0, 21)


class UndefinedMapeError(ValueError):
    """Every actual value was zero, so MAPE has no defined value."""


@dataclass(frozen=True)
class EtsParams:
    """Smoothing weights plus the state at the forecast origin.

    `seasonal` is indexed by UTC hour-of-day and sums to zero (the seasonal
    mean is folded into the level when fitting finishes).  `origin_hour` is
    the epoch-hour of forecast step 1, i.e. one past the training window.
    """

    alpha: float
    beta: float
    gamma: float
    level: float
    trend: float
    seasonal: np.ndarray = field(repr=False)
    resid_sigma: float
    origin_hour: int
    season_length: int = SEASON

    def __post_init__(self) -> None:
        seas = np.asarray(self.seasonal, dtype=np.float64)
        if seas.shape != (self.season_length,):
            raise ValueError(f"seasonal state must have length {self.season_length}")
        for name in ("alpha", "beta", "gamma"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name}={w} outside [0, 1]")
        if self.resid_sigma < 0:
            raise ValueError("resid_sigma must be non-negative")
        seas = seas.copy()
        seas.setflags(write=False)
        object.__setattr__(self, "seasonal", seas)


@dataclass(frozen=True)
class ForecastResult:
    """Point forecasts (clamped at zero for count semantics) with per-step
    standard errors; the pre-clamp values are kept for diagnostics."""

    horizon: int
    points: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    raw_points: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not (len(self.points) == len(self.sigma) == len(self.raw_points) == self.horizon):
            raise ValueError("forecast vectors must all have length == horizon")


def _initial_state(y: np.ndarray, start_hour: int) -> tuple[float, float, np.ndarray]:
    level = float(y[:SEASON].mean())
    trend = float((y[SEASON : 2 * SEASON].mean() - y[:SEASON].mean()) / SEASON)
    hods = (start_hour + np.arange(len(y))) % SEASON
    overall = y.mean()
    seasonal = np.zeros(SEASON)
    for hod in range(SEASON):
        sel = y[hods == hod]
        if len(sel):
            seasonal[hod] = sel.mean() - overall
    seasonal -= seasonal.mean()
    return level, trend, seasonal


def _run_recursion(
    y: np.ndarray,
    start_hour: int,
    alpha: np.ndarray,
    beta: np.ndarray,
    gamma: np.ndarray,
    level0: float,
    trend0: float,
    seasonal0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One pass of the smoothing recursion for all weight combinations at once.

    Returns (sse, level, trend, seasonal, residuals) where the first four are
    per-combination and residuals has shape (combos, T).
    """
    combos = len(alpha)
    lev = np.full(combos, level0)
    tr = np.full(combos, trend0)
    seas = np.tile(seasonal0, (combos, 1))
    sse = np.zeros(combos)
    residuals = np.empty((combos, len(y)))
    one_minus_a = 1.0 - alpha
    one_minus_b = 1.0 - beta
    one_minus_g = 1.0 - gamma
    for t, value in enumerate(y):
        hod = (start_hour + t) % SEASON
        s_t = seas[:, hod]
        err = value - (lev + tr + s_t)
        residuals[:, t] = err
        if t >= SEASON:  # first season is warmup while the prescribed
            sse += err * err  # seasonal initialization is still settling
        new_lev = alpha * (value - s_t) + one_minus_a * (lev + tr)
        tr = beta * (new_lev - lev) + one_minus_b * tr
        seas[:, hod] = gamma * (value - new_lev) + one_minus_g * s_t
        lev = new_lev
    return sse, lev, tr, seas, residuals


def _seasonal_naive_params(y: np.ndarray, start_hour: int) -> EtsParams:
    window = y[-SEASON:]
    hods = (start_hour + len(y) - len(window) + np.arange(len(window))) % SEASON
    level = float(window.mean())
    seasonal = np.zeros(SEASON)
    seasonal[hods] = window - level
    if len(y) > SEASON:
        resid = y[SEASON:] - y[: len(y) - SEASON]
        sigma = float(np.sqrt(np.mean(resid**2)))
    else:
        sigma = 0.0
    return EtsParams(0.0, 0.0, 0.0, level, 0.0, seasonal, sigma, start_hour + len(y))


def fit_ets(series: HourlySeries) -> EtsParams:
    """Grid-search the smoothing weights and return the fitted state.

    Weights alpha, beta, gamma each range over {0, 0.05, ..., 1}; the
    combination minimizing in-sample one-step-ahead squared error wins, with
    ties broken by grid order.  The first season is treated as warmup and
    excluded from the error (the prescribed seasonal initialization needs a
    pass over each hour before it is trustworthy).  Series shorter than two
    seasons get seasonal-naive parameters instead.
    """
    y = np.asarray(series.values, dtype=np.float64)
    if len(y) < 2 * SEASON:
        return _seasonal_naive_params(y, series.start_hour)

    level0, trend0, seasonal0 = _initial_state(y, series.start_hour)
    A, B, G = (g.ravel() for g in np.meshgrid(_GRID, _GRID, _GRID, indexing="ij"))
    sse, _, _, _, _ = _run_recursion(y, series.start_hour, A, B, G, level0, trend0, seasonal0)
    best = int(np.argmin(sse))
    alpha, beta, gamma = float(A[best]), float(B[best]), float(G[best])

    _, lev, tr, seas, residuals = _run_recursion(
        y,
        series.start_hour,
        np.array([alpha]),
        np.array([beta]),
        np.array([gamma]),
        level0,
        trend0,
        seasonal0,
    )
    seasonal = seas[0]
    # fold the seasonal mean into the level; forecasts are unchanged and the
    # stored seasonal state keeps its sum-to-zero normalization
    shift = float(seasonal.mean())
    seasonal = seasonal - shift
    resid_sigma = float(np.sqrt(np.mean(residuals[0, SEASON:] ** 2)))
    return EtsParams(
        alpha,
        beta,
        gamma,
        float(lev[0]) + shift,
        float(tr[0]),
        seasonal,
        resid_sigma,
        series.end_hour,
    )


def forecast(params: EtsParams, h: int) -> ForecastResult:
    """Forecast h hourly steps from the params' origin."""
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    steps = np.arange(1, h + 1)
    hods = (params.origin_hour + steps - 1) % params.season_length
    raw = params.level + steps * params.trend + params.seasonal[hods]
    sigma = params.resid_sigma * np.sqrt(steps)
    return ForecastResult(h, np.maximum(raw, 0.0), sigma, raw)


def forecast_window(params: EtsParams, window: TimeWindow) -> ForecastResult:
    """Forecast exactly the hours of an hour-aligned window at or after the origin."""
    offset = window.start_hour - params.origin_hour
    if offset < 0:
        raise WindowAlignmentError(
            f"window starts at hour {window.start_hour}, before the forecast "
            f"origin {params.origin_hour}"
        )
    full = forecast(params, offset + window.n_hours)
    return ForecastResult(
        window.n_hours,
        full.points[offset:],
        full.sigma[offset:],
        full.raw_points[offset:],
    )


def write_series_csv(series: HourlySeries, path: str | Path) -> None:
    """Serialize as `hour_index,count` rows for inspection and storage."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["hour_index", "count"])
        for offset, value in enumerate(series.values):
            writer.writerow([series.start_hour + offset, repr(float(value))])


def read_series_csv(path: str | Path) -> HourlySeries:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["hour_index", "count"]:
            raise ValueError(f"{path}: expected a 'hour_index,count' header, got {header}")
        hours = []
        values = []
        for row in reader:
            hours.append(int(row[0]))
            values.append(float(row[1]))
    if not hours:
        raise ValueError(f"{path}: empty series")
    if hours != list(range(hours[0], hours[0] + len(hours))):
        raise ValueError(f"{path}: hour indices must be contiguous")
    return HourlySeries(hours[0], np.asarray(values))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error; hours with zero actuals are excluded."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {p.shape}")
    include = a != 0
    if not include.any():
        raise UndefinedMapeError("all actual values are zero")
    return float(100.0 * np.mean(np.abs(a[include] - p[include]) / a[include]))
