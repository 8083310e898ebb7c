from __future__ import annotations

import math

import numpy as np
import pytest

from segcast.copula import ScenarioConfig, TimestampPlan, generate_scenario
from segcast.dataset import (
    AttributeSchema,
    HOUR,
    ItemCode,
    TargetDefinition,
    TimeWindow,
    TransactionLog,
    count_in_window,
)
from segcast.estimator import (
    METHOD_FREQUENT,
    METHOD_INDEPENDENCE,
    METHOD_THRESHOLD,
    EstimationError,
    InfrequentTargetError,
    build_store,
    choose_best_univariate,
    conditional_multiplier,
    estimate,
    estimate_frequent,
    estimate_infrequent,
    estimate_sigma,
    load_store,
    save_store,
)
from segcast.ets import ForecastResult, forecast_window
from segcast.mining import brute_force_mine

from conftest import random_log

TRAIN = TimeWindow(0, 48 * HOUR)
TEST = TimeWindow(48 * HOUR, 72 * HOUR)


def two_day_log(rng: np.random.Generator, n: int, cards=(3, 3)) -> TransactionLog:
    return random_log(rng, n, cards, t_max=48 * HOUR)


@pytest.fixture(scope="module")
def scenario_log() -> TransactionLog:
    cfg = ScenarioConfig.create(8, "high", "steep", rows=300_000, seed=31, values=4)
    return generate_scenario(cfg, TimestampPlan.daily_sine(0, 7, 0.5))


@pytest.fixture(scope="module")
def scenario_store(scenario_log):
    window = TimeWindow(0, 144 * HOUR)
    return scenario_log, window, *build_store(scenario_log, window, 0.004)


class TestBuildStore:
    def test_kappa_one_makes_every_value_a_univariate(self):
        rng = np.random.default_rng(0)
        log = two_day_log(rng, 400)
        store, uset = build_store(log, TRAIN, 1)
        observed = {
            ItemCode(a, v)
            for a in range(log.schema.k)
            for v in np.unique(log.values[:, a])
        }
        assert {m.item for m in uset.members} == observed
        assert uset.global_member.support == len(log)

    def test_kappa_above_singletons_leaves_only_global(self):
        rng = np.random.default_rng(1)
        log = two_day_log(rng, 300)
        store, uset = build_store(log, TRAIN, len(log))  # no single value hits n
        assert uset.members == ()
        assert uset.global_member is not None
        est = estimate(store, uset, TargetDefinition.parse(log.schema, "a0=v0"), TEST)
        assert est.chosen is None  # degraded to the global path

    def test_univariate_count_matches_oracle_singletons(self):
        cfg = ScenarioConfig.create(
            4, "high", "steep", rows=20_000, seed=6, values=3, allow_any_k=True
        )
        log = generate_scenario(cfg, TimestampPlan.uniform(0, 7 * 86400))
        window = TimeWindow(0, 144 * HOUR)
        store, uset = build_store(log, window, 0.01)
        train = log.slice_window(window)
        oracle = brute_force_mine(train, store.kappa)
        oracle_singletons = {r.itemset[0] for r in oracle if len(r.itemset) == 1}
        assert {m.item for m in uset.members} == oracle_singletons

    def test_empty_window_rejected(self):
        rng = np.random.default_rng(2)
        log = two_day_log(rng, 100)
        with pytest.raises(EstimationError):
            build_store(log, TimeWindow(100 * 86400, 101 * 86400), 1)


class TestConditionalMultiplier:
    def _store(self):
        # supports: a=u 2000, a=w 2000, b=x 1500, b=y 2500;
        # pairs: (u,x) 1000, (u,y) 1000, (w,x) 500, (w,y) 1500
        schema = AttributeSchema.from_lists([("a", ["u", "w"]), ("b", ["x", "y"])])
        n = 4000
        ts = np.linspace(0, 48 * HOUR - 1, n).astype(np.int64)
        vals = np.ones((n, 2), dtype=np.uint16)
        vals[:2000, 0] = 0
        vals[:1000, 1] = 0
        vals[2000:2500, 1] = 0
        log = TransactionLog(schema, ts, vals)
        store, uset = build_store(log, TRAIN, 600)  # (w,x) stays infrequent
        return log, store, uset

    def test_single_item_target_is_identity(self):
        _, store, uset = self._store()
        member = uset.by_item[ItemCode(0, 0)]
        target = TargetDefinition.from_items(2, [ItemCode(0, 0)])
        assert conditional_multiplier(store, target, member) == 1.0

    def test_ratio_arithmetic(self):
        _, store, uset = self._store()
        member = uset.by_item[ItemCode(0, 0)]  # support 2000
        target = TargetDefinition.from_items(2, [ItemCode(0, 0), ItemCode(1, 0)])
        # exactly half of the a=u rows also have b=x
        assert conditional_multiplier(store, target, member) == pytest.approx(0.5)

    def test_oracle_check_against_count_in_window(self):
        log, store, uset = self._store()
        member = uset.by_item[ItemCode(0, 0)]
        target = TargetDefinition.from_items(2, [ItemCode(0, 0), ItemCode(1, 0)])
        expected = count_in_window(log, target, TRAIN) / count_in_window(
            log, member.target(2), TRAIN
        )
        assert conditional_multiplier(store, target, member) == pytest.approx(expected)

    def test_infrequent_target_signals_independence_path(self):
        _, store, uset = self._store()
        member = uset.by_item[ItemCode(0, 1)]  # a=w
        rare = TargetDefinition.from_items(2, [ItemCode(0, 1), ItemCode(1, 0)])
        assert store.lookup((ItemCode(0, 1), ItemCode(1, 0))) is None
        with pytest.raises(InfrequentTargetError):
            conditional_multiplier(store, rare, member)

    def test_item_not_in_target_is_contract_violation(self):
        _, store, uset = self._store()
        member = uset.by_item[ItemCode(0, 0)]
        target = TargetDefinition.from_items(2, [ItemCode(1, 0)])
        with pytest.raises(EstimationError):
            conditional_multiplier(store, target, member)


class TestEstimateSigma:
    def test_multiplier_one_collapses_to_forecast_sigma(self):
        fc = ForecastResult(2, np.array([5.0, 5.0]), np.array([3.0, 4.0]), np.array([5.0, 5.0]))
        assert estimate_sigma(1.0, 1000, fc) == pytest.approx(5.0)

    def test_perfect_series_leaves_multiplier_error(self):
        fc = ForecastResult(2, np.array([600.0, 400.0]), np.zeros(2), np.array([600.0, 400.0]))
        p, s_u = 0.5, 10_000
        expected = 1000.0 * math.sqrt(p * (1 - p) / s_u)
        assert estimate_sigma(p, s_u, fc) == pytest.approx(expected)

    def test_hand_computation(self):
        fc = ForecastResult(3, np.array([10.0, 10.0, 10.0]), np.array([1.0, 2.0, 2.0]), np.array([10.0, 10.0, 10.0]))
        p, s_u = 0.5, 10_000
        sigma_s_sq = 1.0 + 4.0 + 4.0
        sigma_p_sq = 0.25 / s_u
        expected = math.sqrt(p * p * sigma_s_sq + 900.0 * sigma_p_sq)
        assert estimate_sigma(p, s_u, fc) == pytest.approx(expected)


class TestFrequentPath:
    def test_identity_collapse_to_univariate_forecast(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        member = uset.members[0]
        est = estimate_frequent(store, uset, member.target(store.schema.k), horizon)
        own = forecast_window(member.params, horizon)
        assert est.multiplier == 1.0
        assert est.method == METHOD_FREQUENT
        assert est.point == pytest.approx(float(own.points.sum()))
        assert np.array_equal(est.hourly, own.points)

    def test_point_is_exactly_multiplier_times_forecast(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        for itemset in list(store.supports)[:50]:
            target = TargetDefinition.from_items(store.schema.k, itemset)
            est = estimate_frequent(store, uset, target, horizon)
            assert est.point == est.multiplier * float(np.sum(est.univariate_hourly))
            assert np.array_equal(est.hourly, est.multiplier * est.univariate_hourly)

    def test_frequent_estimates_cover_heldout_truth(self, scenario_store):
        log, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        records = store.records()
        rng = np.random.default_rng(5)
        weights = np.array([r.support for r in records], dtype=float)
        idx = rng.choice(len(records), size=min(80, len(records)), replace=False,
                         p=weights / weights.sum())
        covered = 0
        for i in idx:
            target = TargetDefinition.from_items(store.schema.k, records[i].itemset)
            est = estimate_frequent(store, uset, target, horizon)
            actual = count_in_window(log, target, horizon)
            covered += abs(est.point - actual) <= 2 * est.sigma
        assert covered / len(idx) >= 0.90

    def test_infrequent_target_rejected(self, scenario_store):
        log, _, store, uset = scenario_store
        horizon = TimeWindow(store.window.end, store.window.end + 24 * HOUR)
        # build an infrequent target: most-specific all-attribute combination
        k = store.schema.k
        target = TargetDefinition(tuple(3 for _ in range(k)))
        assert store.lookup(tuple(target.items())) is None
        with pytest.raises(InfrequentTargetError):
            estimate_frequent(store, uset, target, horizon)


class TestInfrequentPath:
    def test_all_threshold_factors_formula(self):
        rng = np.random.default_rng(3)
        log = two_day_log(rng, 2000, cards=(2, 6, 6))
        store, uset = build_store(log, TRAIN, 900)  # only attr-0 values frequent
        horizon = TEST
        # target fixing one frequent item and two infrequent attributes
        frequent_item = uset.members[0].item
        target = TargetDefinition.from_items(
            3, [frequent_item, ItemCode(1, 0), ItemCode(2, 0)]
        )
        est = estimate_infrequent(store, uset, target, horizon)
        member = uset.by_item[frequent_item]
        fc = forecast_window(member.params, horizon)
        expected = (store.kappa / member.support) ** 2 * float(fc.points.sum())
        assert est.point == pytest.approx(expected)
        assert est.method == METHOD_THRESHOLD

    def test_single_nonwildcard_equal_to_u_reduces_to_frequent(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        member = uset.members[3]
        target = member.target(store.schema.k)
        est = estimate(store, uset, target, horizon)
        assert est.method == METHOD_FREQUENT
        assert est.multiplier == 1.0

    def test_independence_estimate_accuracy_under_identity_r(self):
        # independent attributes: the product approximation is exact in
        # expectation, so infrequent 5-item targets land near the truth
        from segcast.copula import CopulaSpec, flat_marginal, generate

        spec = CopulaSpec(np.eye(8), tuple(flat_marginal(2) for _ in range(8)))
        log = generate(spec, 400_000, 77, TimestampPlan.uniform(0, 7 * 86400))
        window = TimeWindow(0, 144 * HOUR)
        store, uset = build_store(log, window, 0.05)
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        rng = np.random.default_rng(8)
        checked = 0
        for _ in range(30):
            items = [
                ItemCode(a, int(rng.integers(0, 2)))
                for a in sorted(rng.choice(8, size=5, replace=False))
            ]
            target = TargetDefinition.from_items(8, items)
            assert store.lookup(tuple(items)) is None  # p = 2^-5 < 5%
            actual = count_in_window(log, target, horizon)
            if actual < 20 * 24:
                continue
            est = estimate_infrequent(store, uset, target, horizon)
            assert est.method == METHOD_INDEPENDENCE  # all factors frequent
            assert abs(est.point - actual) <= 0.25 * actual
            checked += 1
        assert checked >= 20

    def test_monotone_in_added_constraints(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        k = store.schema.k
        base_items = [ItemCode(0, 3), ItemCode(1, 3)]
        base = TargetDefinition.from_items(k, base_items)
        extended = TargetDefinition.from_items(k, base_items + [ItemCode(2, 3)])
        if store.lookup(tuple(sorted(base_items))) is None:
            est_base = estimate(store, uset, base, horizon)
            est_ext = estimate(store, uset, extended, horizon)
            assert est_ext.point <= est_base.point + 1e-9

    def test_multiplier_and_factors_in_unit_interval(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        rng = np.random.default_rng(9)
        k = store.schema.k
        for _ in range(40):
            size = int(rng.integers(1, 5))
            items = [
                ItemCode(a, int(rng.integers(0, 4)))
                for a in sorted(rng.choice(k, size=size, replace=False))
            ]
            est = estimate(store, uset, TargetDefinition.from_items(k, items), horizon)
            assert 0.0 < est.multiplier <= 1.0


class TestChooseBestUnivariate:
    def test_single_item_target_picks_itself(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        member = uset.members[1]
        chosen, est = choose_best_univariate(
            store, uset, member.target(store.schema.k), horizon
        )
        assert chosen.item == member.item

    def test_zero_residual_candidate_dominates(self):
        # two frequent values on different attributes; one has a perfectly
        # regular series (zero residuals), the other is noisy
        rng = np.random.default_rng(10)
        n_hours, per_hour = 48, 40
        rows = []
        for h in range(n_hours):
            noisy = 10 + int(rng.integers(0, 20))
            for i in range(per_hour):
                # attr0 = u for all rows; attr1 = x for the first `noisy` rows
                rows.append((h * HOUR + i * 9, 0, 0 if i < noisy else 1))
        schema = AttributeSchema.from_lists([("a", ["u", "w"]), ("b", ["x", "y"])])
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        vals = np.array([[r[1], r[2]] for r in rows], dtype=np.uint16)
        log = TransactionLog(schema, ts, vals)
        store, uset = build_store(log, TRAIN, 5)
        target = TargetDefinition.from_items(2, [ItemCode(0, 0), ItemCode(1, 0)])
        assert store.lookup((ItemCode(0, 0), ItemCode(1, 0))) is not None
        chosen, est = choose_best_univariate(store, uset, target, TEST)
        assert uset.by_item[ItemCode(0, 0)].params.resid_sigma == 0.0
        assert chosen.item == ItemCode(0, 0)

    def test_exhaustive_argmin_is_the_oracle(self, scenario_store):
        from segcast.estimator import _candidate_estimate

        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        rng = np.random.default_rng(11)
        k = store.schema.k
        for _ in range(25):
            size = int(rng.integers(2, 5))
            items = [
                ItemCode(a, int(rng.integers(0, 2)))
                for a in sorted(rng.choice(k, size=size, replace=False))
            ]
            target = TargetDefinition.from_items(k, items)
            candidates = [
                uset.by_item[c] for c in target.items() if c in uset.by_item
            ]
            if not candidates:
                continue
            chosen, est = choose_best_univariate(store, uset, target, horizon)
            sigmas = [
                _candidate_estimate(store, target, m, horizon).sigma for m in candidates
            ]
            assert est.sigma == min(sigmas)

    def test_global_target_routes_to_global(self, scenario_store):
        _, window, store, uset = scenario_store
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        est = estimate(store, uset, TargetDefinition.all_wildcards(store.schema.k), horizon)
        assert est.chosen is None
        assert est.multiplier == 1.0


class TestPersistence:
    def test_round_trip_preserves_estimates(self, scenario_store, tmp_path):
        _, window, store, uset = scenario_store
        base = tmp_path / "store"
        save_store(store, uset, base)
        store2, uset2 = load_store(base)
        assert store2.kappa == store.kappa
        assert store2.n_train == store.n_train
        assert store2.supports == store.supports
        horizon = TimeWindow(window.end, window.end + 24 * HOUR)
        rng = np.random.default_rng(12)
        itemsets = list(store.supports)
        for i in rng.choice(len(itemsets), size=20, replace=False):
            target = TargetDefinition.from_items(store.schema.k, itemsets[int(i)])
            a = estimate(store, uset, target, horizon)
            b = estimate(store2, uset2, target, horizon)
            assert a.point == b.point
            assert a.sigma == b.sigma
            assert a.method == b.method
            assert a.chosen == b.chosen

    def test_saved_files_deterministic(self, scenario_store, tmp_path):
        _, _, store, uset = scenario_store
        blobs = []
        for i in range(2):
            base = tmp_path / f"s{i}"
            save_store(store, uset, base)
            blobs.append(
                (
                    base.with_suffix(".fis").read_bytes(),
                    base.with_suffix(".univ").read_bytes(),
                    base.with_suffix(".meta.json").read_bytes(),
                )
            )
        assert blobs[0] == blobs[1]
