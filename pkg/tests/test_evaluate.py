from __future__ import annotations

import numpy as np
import pytest

from segcast.copula import ScenarioConfig, TimestampPlan, generate_scenario
from segcast.dataset import (
    HOUR,
    AttributeSchema,
    ItemCode,
    TargetDefinition,
    TimeWindow,
    TransactionLog,
)
from segcast.estimator import build_store
from segcast.evaluate import (
    BenchmarkError,
    EvalReport,
    MapeRow,
    baseline_fb,
    baseline_ts,
    derive_benchmark_windows,
    ifis_pool,
    run_benchmark,
    sample_fis,
    sample_ifis,
)
from segcast.ets import fit_ets, forecast_window
from segcast.dataset import hourly_series
from segcast.mining import brute_force_mine

from conftest import random_log

TRAIN = TimeWindow(0, 144 * HOUR)
TEST = TimeWindow(144 * HOUR, 168 * HOUR)


@pytest.fixture(scope="module")
def bench_log() -> TransactionLog:
    cfg = ScenarioConfig.create(8, "high", "steep", rows=200_000, seed=55, values=4)
    return generate_scenario(cfg, TimestampPlan.daily_sine(0, 7, 0.5))


@pytest.fixture(scope="module")
def bench_store(bench_log):
    return build_store(bench_log, TRAIN, 0.002)


class TestSampleFis:
    def test_single_itemset_store_returns_it(self, bench_store):
        from segcast.estimator import FISStore

        store, _ = bench_store
        only = store.records()[0]
        single = FISStore(
            schema=store.schema,
            kappa=store.kappa,
            window=store.window,
            n_train=store.n_train,
            supports={only.itemset: only.support},
        )
        targets = sample_fis(single, 5, seed=1)
        assert targets == [
            TargetDefinition.from_items(store.schema.k, only.itemset)
        ]

    def test_first_draw_probability_matches_weights(self, bench_store):
        store, _ = bench_store
        # analytic two-record check via repeated first draws on a reduced store
        from segcast.estimator import FISStore

        records = store.records()[:2]
        small = FISStore(
            schema=store.schema,
            kappa=store.kappa,
            window=store.window,
            n_train=store.n_train,
            supports={records[0].itemset: 900, records[1].itemset: 100},
        )
        first = [sample_fis(small, 1, seed=s)[0] for s in range(4000)]
        heavy = TargetDefinition.from_items(store.schema.k, records[0].itemset)
        share = sum(t == heavy for t in first) / 4000
        # binomial(4000, 0.9): 3 sigma is about 0.0142
        assert abs(share - 0.9) < 0.015

    def test_weighted_first_draw_over_larger_store(self, bench_store):
        store, _ = bench_store
        records = store.records()
        weights = np.array([r.support for r in records], dtype=float)
        weights /= weights.sum()
        draws = 4000
        counts: dict[tuple, int] = {}
        for s in range(draws):
            t = sample_fis(store, 1, seed=s)[0]
            counts[t.constraints] = counts.get(t.constraints, 0) + 1
        # check the heaviest record's empirical share within 3 sigma
        i = int(np.argmax(weights))
        heavy = TargetDefinition.from_items(store.schema.k, records[i].itemset)
        p = weights[i]
        sigma = (p * (1 - p) / draws) ** 0.5
        assert abs(counts.get(heavy.constraints, 0) / draws - p) <= 3 * sigma

    def test_deterministic_and_capped(self, bench_store):
        store, _ = bench_store
        a = sample_fis(store, 50, seed=9)
        b = sample_fis(store, 50, seed=9)
        assert a == b
        assert len(a) == 50
        everything = sample_fis(store, 10**9, seed=9)
        assert len(everything) == len(store)


class TestSampleIfis:
    def test_pool_matches_brute_force(self):
        cfg = ScenarioConfig.create(
            4, "high", "steep", rows=20_000, seed=3, values=3, allow_any_k=True
        )
        log = generate_scenario(cfg, TimestampPlan.uniform(0, 7 * 86400))
        store, _ = build_store(log, TRAIN, 0.02)
        train = log.slice_window(TRAIN)
        oracle = {
            r.itemset for r in brute_force_mine(train, 1) if r.support < store.kappa
        }
        pool = {itemset for itemset, _ in ifis_pool(log, store, kappa_prime=1)}
        assert pool == oracle

    def test_disjoint_from_store(self, bench_log, bench_store):
        store, _ = bench_store
        targets = sample_ifis(bench_log, store, 40, seed=4)
        for t in targets:
            assert store.lookup(tuple(t.items())) is None

    def test_deterministic_per_seed(self, bench_log, bench_store):
        store, _ = bench_store
        a = sample_ifis(bench_log, store, 40, seed=5)
        b = sample_ifis(bench_log, store, 40, seed=5)
        assert a == b

    def test_empty_pool_raises_with_hint(self):
        rng = np.random.default_rng(6)
        schema = AttributeSchema.from_lists([("a", ["x"])])
        n = 5000
        ts = np.linspace(0, 48 * HOUR - 1, n).astype(np.int64)
        log = TransactionLog(schema, ts, np.zeros((n, 1), dtype=np.uint16))
        store, _ = build_store(log, TRAIN, 10)
        with pytest.raises(BenchmarkError, match="kappa_prime"):
            sample_ifis(log, store, 10, seed=1, kappa_prime=n + 1)


class TestBaselineTs:
    def test_all_zero_actuals_listed_undefined(self):
        # value y never occurs, so its test-day actuals are all zero
        schema = AttributeSchema.from_lists([("a", ["x", "y"])])
        ts = np.arange(0, 168 * HOUR, 97, dtype=np.int64)
        log = TransactionLog(schema, ts, np.zeros((len(ts), 1), dtype=np.uint16))
        target = TargetDefinition.parse(schema, "a=y")
        report = baseline_ts(log, [target], TRAIN, TEST)
        assert report.rows[0].mape is None
        assert report.undefined_count("all", "ts") == 1

    def test_constant_target_near_zero_mape(self):
        schema = AttributeSchema.from_lists([("a", ["x", "y"])])
        per_hour = 20
        ts = np.concatenate(
            [h * HOUR + np.arange(per_hour) * 60 for h in range(168)]
        ).astype(np.int64)
        vals = np.zeros((len(ts), 1), dtype=np.uint16)
        log = TransactionLog(schema, ts, vals)
        target = TargetDefinition.parse(schema, "a=x")
        report = baseline_ts(log, [target], TRAIN, TEST)
        assert report.rows[0].mape == pytest.approx(0.0, abs=1e-9)

    def test_windows_must_be_ordered(self, bench_log):
        with pytest.raises(BenchmarkError):
            baseline_ts(bench_log, [], TEST, TRAIN)


class TestBaselineFb:
    def test_global_target_equals_global_forecast(self, bench_log):
        report = baseline_fb(
            bench_log, [TargetDefinition.all_wildcards(8)], TRAIN, TEST
        )
        params = fit_ets(
            hourly_series(bench_log, TargetDefinition.all_wildcards(8), TRAIN)
        )
        expected = forecast_window(params, TEST).points
        got = np.array([r.prediction for r in report.hours])
        assert np.array_equal(got, expected)

    def test_constant_share_target_scales_global(self):
        # attr value x present in a constant 30% of transactions each hour
        schema = AttributeSchema.from_lists([("a", ["x", "y"])])
        per_hour = 40
        ts, vals = [], []
        for h in range(168):
            for i in range(per_hour):
                ts.append(h * HOUR + i * 80)
                vals.append([0 if i < 12 else 1])  # 12/40 = 30%
        log = TransactionLog(
            schema, np.array(ts, dtype=np.int64), np.array(vals, dtype=np.uint16)
        )
        target = TargetDefinition.parse(schema, "a=x")
        report = baseline_fb(log, [target], TRAIN, TEST)
        preds = np.array([r.prediction for r in report.hours])
        assert np.allclose(preds, 0.3 * per_hour, rtol=1e-6)

    def test_subthreshold_value_uses_midpoint_factor(self, bench_log):
        schema = bench_log.schema
        # value 3 of a steep 4-value attribute sits under a 50% threshold
        target = TargetDefinition.from_items(schema.k, [ItemCode(0, 3)])
        fb_threshold = 0.5
        report = baseline_fb(
            bench_log, [target, TargetDefinition.all_wildcards(8)],
            TRAIN, TEST, fb_threshold=fb_threshold,
        )
        target_preds = np.array(
            [r.prediction for r in report.hours if r.target != "*"]
        )
        global_preds = np.array(
            [r.prediction for r in report.hours if r.target == "*"]
        )
        assert np.allclose(target_preds, global_preds * (fb_threshold / 2.0))


class TestRunBenchmark:
    def test_end_to_end_populates_all_cells(self, bench_log):
        report, bench, store, uset = run_benchmark(
            bench_log, 0.002, fis_count=25, ifis_count=25, fis_seed=3, ifis_seed=4
        )
        for target_class in ("fis", "ifis"):
            for method in ("estimator", "ts", "fb"):
                rows = [
                    r for r in report.rows
                    if r.target_class == target_class and r.method == method
                ]
                assert len(rows) == 25
        assert set(bench.fis_targets).isdisjoint(bench.ifis_targets)

    def test_repeat_runs_identical_reports(self, bench_log, tmp_path):
        blobs = []
        for i in range(2):
            report, _, _, _ = run_benchmark(
                bench_log, 0.002, fis_count=10, ifis_count=10
            )
            p = tmp_path / f"r{i}.csv"
            report.to_csv(p)
            h = tmp_path / f"h{i}.csv"
            report.hours_to_csv(h)
            blobs.append(p.read_bytes() + h.read_bytes())
        assert blobs[0] == blobs[1]

    def test_insufficient_span_rejected(self):
        rng = np.random.default_rng(9)
        log = random_log(rng, 500, (2, 2), t_max=3 * 86400)
        with pytest.raises(BenchmarkError):
            derive_benchmark_windows(log)

    def test_report_csv_round_trip_values(self, bench_log, tmp_path):
        report, _, _, _ = run_benchmark(bench_log, 0.002, fis_count=5, ifis_count=5)
        path = tmp_path / "report.csv"
        report.to_csv(path)
        import csv as csv_mod

        with path.open() as fh:
            rows = list(csv_mod.DictReader(fh))
        assert len(rows) == len(report.rows)
        for raw, row in zip(rows, report.rows):
            assert raw["method"] == row.method
            if row.mape is not None:
                assert float(raw["mape"]) == row.mape

    def test_mapes_reproducible_from_persisted_hours(self, bench_log, tmp_path):
        from segcast.ets import UndefinedMapeError, mape

        report, _, _, _ = run_benchmark(bench_log, 0.002, fis_count=12, ifis_count=12)
        report.to_csv(tmp_path / "report.csv")
        report.hours_to_csv(tmp_path / "hours.csv")
        import csv as csv_mod

        by_key: dict[tuple, list[tuple[float, float]]] = {}
        with (tmp_path / "hours.csv").open() as fh:
            for row in csv_mod.DictReader(fh):
                key = (row["target"], row["class"], row["method"])
                by_key.setdefault(key, []).append(
                    (float(row["actual"]), float(row["prediction"]))
                )
        with (tmp_path / "report.csv").open() as fh:
            for row in csv_mod.DictReader(fh):
                pairs = by_key[(row["target"], row["class"], row["method"])]
                actual = [a for a, _ in pairs]
                predicted = [p for _, p in pairs]
                if row["mape"] == "":
                    with pytest.raises(UndefinedMapeError):
                        mape(actual, predicted)
                else:
                    assert mape(actual, predicted) == float(row["mape"])

    def test_summary_contains_all_method_lines(self, bench_log):
        report, _, _, _ = run_benchmark(bench_log, 0.002, fis_count=5, ifis_count=5)
        text = report.summary_text()
        for token in ("estimator", "ts", "fb", "fis", "ifis"):
            assert token in text


class TestEvalReport:
    def test_mean_and_median(self):
        report = EvalReport(
            rows=[
                MapeRow("t1", "fis", "ts", 10.0),
                MapeRow("t2", "fis", "ts", 20.0),
                MapeRow("t3", "fis", "ts", 60.0),
                MapeRow("t4", "fis", "ts", None),
            ]
        )
        assert report.mean_mape("fis", "ts") == pytest.approx(30.0)
        assert report.median_mape("fis", "ts") == pytest.approx(20.0)
        assert report.undefined_count("fis", "ts") == 1
