"""Benchmark protocol: target sampling, the TS and FB baselines, and MAPE reports.

Frequent targets are sampled with probability proportional to support;
infrequent ones uniformly from a lowered-threshold mining pass.  Each
sampled target is then forecast three ways — the estimator, a per-target
time-series fit (TS, the infeasible-at-scale bound), and the naive feasible
baseline (FB: global forecast scaled by per-attribute share forecasts) —
and scored by hourly MAPE on the held-out window.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .dataset import (
    HOUR,
    HourlySeries,
    ItemCode,
    TargetDefinition,
    TimeWindow,
    TransactionLog,
    hourly_series,
)
from .estimator import Estimate, FISStore, UnivariateSet, build_store, estimate
from .ets import UndefinedMapeError, fit_ets, forecast_window, mape
from .mining import Itemset, iter_eclat

METHOD_ESTIMATOR = "estimator"
METHOD_TS = "ts"
METHOD_FB = "fb"


class BenchmarkError(ValueError):
    """The benchmark cannot run as configured (span, empty pools)."""


@dataclass(frozen=True)
class BenchmarkSet:
    """The sampled evaluation targets, by class."""

    fis_targets: tuple[TargetDefinition, ...]
    ifis_targets: tuple[TargetDefinition, ...]
    fis_seed: int
    ifis_seed: int


@dataclass(frozen=True)
class MapeRow:
    target: str
    target_class: str
    method: str
    mape: float | None  # None when every actual hour was zero


@dataclass(frozen=True)
class HourRow:
    target: str
    target_class: str
    method: str
    hour: int
    prediction: float
    actual: int
    multiplier: float | None = None
    univariate_forecast: float | None = None


@dataclass
class EvalReport:
    rows: list[MapeRow] = field(default_factory=list)
    hours: list[HourRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)
        self.hours.extend(other.hours)

    def defined_mapes(self, target_class: str, method: str) -> list[float]:
        return [
            r.mape
            for r in self.rows
            if r.target_class == target_class and r.method == method and r.mape is not None
        ]

    def undefined_count(self, target_class: str, method: str) -> int:
        return sum(
            1
            for r in self.rows
            if r.target_class == target_class and r.method == method and r.mape is None
        )

    def mean_mape(self, target_class: str, method: str) -> float:
        return statistics.fmean(self.defined_mapes(target_class, method))

    def median_mape(self, target_class: str, method: str) -> float:
        return statistics.median(self.defined_mapes(target_class, method))

    def classes(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.target_class)
        return list(seen)

    def methods(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.method)
        return list(seen)

    def summary_text(self) -> str:
        lines = [f"{'class':<8} {'method':<12} {'targets':>8} {'undef':>6} {'mean':>10} {'median':>10}"]
        for target_class in self.classes():
            for method in self.methods():
                defined = self.defined_mapes(target_class, method)
                if not defined and not self.undefined_count(target_class, method):
                    continue
                mean = f"{statistics.fmean(defined):10.3f}" if defined else " " * 10
                median = f"{statistics.median(defined):10.3f}" if defined else " " * 10
                lines.append(
                    f"{target_class:<8} {method:<12} {len(defined):>8} "
                    f"{self.undefined_count(target_class, method):>6} {mean} {median}"
                )
        return "\n".join(lines) + "\n"

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["target", "class", "method", "mape"])
            for r in self.rows:
                writer.writerow(
                    [r.target, r.target_class, r.method, "" if r.mape is None else repr(r.mape)]
                )

    def hours_to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["target", "class", "method", "hour", "prediction", "actual",
                 "multiplier", "univariate_forecast"]
            )
            for r in self.hours:
                writer.writerow(
                    [
                        r.target,
                        r.target_class,
                        r.method,
                        r.hour,
                        repr(r.prediction),
                        r.actual,
                        "" if r.multiplier is None else repr(r.multiplier),
                        "" if r.univariate_forecast is None else repr(r.univariate_forecast),
                    ]
                )


def sample_fis(store: FISStore, count: int, seed: int) -> list[TargetDefinition]:
    """Sample stored itemsets without replacement, probability proportional
    to support (exponential-keys method), in draw order."""
    records = store.records()
    if not records:
        raise BenchmarkError("the store is empty; nothing to sample")
    rng = np.random.default_rng(seed)
    weights = np.array([r.support for r in records], dtype=np.float64)
    keys = -np.log(rng.random(len(records))) / weights
    order = np.argsort(keys, kind="stable")[: min(count, len(records))]
    k = store.schema.k
    return [TargetDefinition.from_items(k, records[int(i)].itemset) for i in order]


def ifis_pool(
    db: TransactionLog, store: FISStore, kappa_prime: int
) -> Iterator[tuple[Itemset, int]]:
    """Stream the infrequent itemsets with support in [kappa_prime, kappa)."""
    sub = db.slice_window(store.window)
    for itemset, support in iter_eclat(sub, kappa_prime, check_cc=True):
        if support < store.kappa:
            yield itemset, support


def sample_ifis(
    db: TransactionLog,
    store: FISStore,
    count: int,
    seed: int,
    kappa_prime: int | None = None,
) -> list[TargetDefinition]:
    """Uniform sample of infrequent itemsets, mined at a lowered threshold.

    Uses reservoir sampling over the mining stream, so arbitrarily large
    pools cost O(count) memory.  kappa_prime defaults to kappa/10.
    """
    if kappa_prime is None:
        kappa_prime = max(1, store.kappa // 10)
    if not 1 <= kappa_prime < store.kappa:
        raise BenchmarkError(
            f"kappa_prime={kappa_prime} must be in [1, kappa={store.kappa})"
        )
    rng = np.random.default_rng(seed)
    reservoir: list[Itemset] = []
    seen = 0
    for itemset, _ in ifis_pool(db, store, kappa_prime):
        seen += 1
        if len(reservoir) < count:
            reservoir.append(itemset)
        else:
            j = int(rng.integers(0, seen))
            if j < count:
                reservoir[j] = itemset
    if seen == 0:
        raise BenchmarkError(
            f"no infrequent itemsets found at kappa_prime={kappa_prime}; lower it"
        )
    k = store.schema.k
    return [TargetDefinition.from_items(k, itemset) for itemset in reservoir]


def _check_windows(train_window: TimeWindow, test_window: TimeWindow) -> None:
    if test_window.start < train_window.end:
        raise BenchmarkError("test window must start at or after the training window ends")


def _score(
    report: EvalReport,
    db: TransactionLog,
    target: TargetDefinition,
    target_class: str,
    method: str,
    predictions: np.ndarray,
    test_window: TimeWindow,
    estimate_result: Estimate | None = None,
) -> None:
    actual = hourly_series(db, target, test_window).values
    name = target.render(db.schema)
    try:
        value = mape(actual, predictions)
    except UndefinedMapeError:
        value = None
    report.rows.append(MapeRow(name, target_class, method, value))
    base_hour = test_window.start // HOUR
    for i, (pred, act) in enumerate(zip(predictions, actual)):
        report.hours.append(
            HourRow(
                name,
                target_class,
                method,
                base_hour + i,
                float(pred),
                int(act),
                None if estimate_result is None else float(estimate_result.multiplier),
                None
                if estimate_result is None
                else float(estimate_result.univariate_hourly[i]),
            )
        )


def evaluate_estimator(
    db: TransactionLog,
    store: FISStore,
    uset: UnivariateSet,
    targets: Sequence[TargetDefinition],
    test_window: TimeWindow,
    target_class: str = "all",
) -> EvalReport:
    report = EvalReport()
    for target in targets:
        est = estimate(store, uset, target, test_window)
        _score(
            report, db, target, target_class, METHOD_ESTIMATOR, est.hourly, test_window, est
        )
    return report


def baseline_ts(
    db: TransactionLog,
    targets: Sequence[TargetDefinition],
    train_window: TimeWindow,
    test_window: TimeWindow,
    target_class: str = "all",
) -> EvalReport:
    """Fit a forecaster directly on each target's own training series."""
    _check_windows(train_window, test_window)
    report = EvalReport()
    for target in targets:
        params = fit_ets(hourly_series(db, target, train_window))
        fc = forecast_window(params, test_window)
        _score(report, db, target, target_class, METHOD_TS, fc.points, test_window)
    return report


def baseline_fb(
    db: TransactionLog,
    targets: Sequence[TargetDefinition],
    train_window: TimeWindow,
    test_window: TimeWindow,
    fb_threshold: float = 0.005,
    target_class: str = "all",
) -> EvalReport:
    """Global forecast scaled by forecast per-attribute value shares.

    Values whose training share never reached fb_threshold get the midpoint
    of [0, fb_threshold] as a constant share.
    """
    _check_windows(train_window, test_window)
    schema = db.schema
    train = db.slice_window(train_window)
    n_train = len(train)
    if n_train == 0:
        raise BenchmarkError("training window contains no transactions")

    global_target = TargetDefinition.all_wildcards(schema.k)
    global_train = hourly_series(db, global_target, train_window)
    global_fc = forecast_window(fit_ets(global_train), test_window).points
    n_hours = test_window.n_hours

    # share forecasts for every value above the threshold
    midpoint = fb_threshold / 2.0
    share_fc: dict[tuple[int, int], np.ndarray] = {}
    denominator = np.maximum(global_train.values.astype(np.float64), 1.0)
    for a in range(schema.k):
        counts = np.bincount(train.values[:, a], minlength=len(schema.values(a)))
        for v, c in enumerate(counts):
            if c / n_train >= fb_threshold:
                series = hourly_series(
                    db, TargetDefinition.from_items(schema.k, [ItemCode(a, v)]), train_window
                )
                fractions = HourlySeries(
                    global_train.start_hour, series.values / denominator
                )
                fc = forecast_window(fit_ets(fractions), test_window)
                share_fc[(a, v)] = np.clip(fc.points, 0.0, 1.0)

    report = EvalReport()
    for target in targets:
        factors = np.ones(n_hours)
        for code in target.items():
            factors *= share_fc.get((code.attr, code.value), midpoint)
        _score(
            report, db, target, target_class, METHOD_FB, factors * global_fc, test_window
        )
    return report


def derive_benchmark_windows(db: TransactionLog) -> tuple[TimeWindow, TimeWindow]:
    """Train on the first six days, test on day 7.

    Windows start at the hour boundary containing the first transaction, so
    the first hour may be partial; the log must reach at least into the last
    hour of day 7.
    """
    if len(db) == 0:
        raise BenchmarkError("empty log")
    start = int(db.timestamps[0])
    start -= start % HOUR
    train = TimeWindow(start, start + 144 * HOUR)
    test = TimeWindow(train.end, train.end + 24 * HOUR)
    if int(db.timestamps[-1]) < test.end - HOUR:
        raise BenchmarkError(
            f"log must span 7 days from {start}; it ends at {int(db.timestamps[-1])}"
        )
    return train, test


def run_benchmark(
    db: TransactionLog,
    threshold: int | float,
    train_window: TimeWindow | None = None,
    test_window: TimeWindow | None = None,
    fis_count: int = 500,
    ifis_count: int = 500,
    fis_seed: int = 1,
    ifis_seed: int = 2,
    fb_threshold: float = 0.005,
    ifis_kappa_prime: int | None = None,
) -> tuple[EvalReport, BenchmarkSet, FISStore, UnivariateSet]:
    """End-to-end protocol: build the store on the training days, sample both
    target classes, and score estimator vs TS vs FB on the test day."""
    if train_window is None or test_window is None:
        train_window, test_window = derive_benchmark_windows(db)
    _check_windows(train_window, test_window)

    started = time.perf_counter()
    store, uset = build_store(db, train_window, threshold)
    fis_targets = sample_fis(store, fis_count, fis_seed)
    ifis_targets = sample_ifis(db, store, ifis_count, ifis_seed, ifis_kappa_prime)
    bench = BenchmarkSet(tuple(fis_targets), tuple(ifis_targets), fis_seed, ifis_seed)

    report = EvalReport()
    for target_class, targets in (("fis", fis_targets), ("ifis", ifis_targets)):
        report.extend(
            evaluate_estimator(db, store, uset, targets, test_window, target_class)
        )
        report.extend(baseline_ts(db, targets, train_window, test_window, target_class))
        report.extend(
            baseline_fb(db, targets, train_window, test_window, fb_threshold, target_class)
        )
    report.meta = {
        "kappa": store.kappa,
        "n_train": store.n_train,
        "fis_count": len(fis_targets),
        "ifis_count": len(ifis_targets),
        "fis_seed": fis_seed,
        "ifis_seed": ifis_seed,
        "fb_threshold": fb_threshold,
        "wall_time": time.perf_counter() - started,
    }
    return report, bench, store, uset
