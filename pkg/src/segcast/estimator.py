"""Audience-size estimation from a frequent-itemset store and univariate forecasts.

A target that is itself frequent gets the empirical conditional multiplier
s(T)/s(U) applied to the best single-item univariate forecast.  Infrequent
targets fall back to a conditional-independence product over their
attributes, substituting the threshold bound kappa/s(U) for factors the
store does not retain.  "Best" means the candidate univariate minimizing
the delta-method standard error of the resulting estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    AttributeSchema,
    HourlySeries,
    ItemCode,
    TargetDefinition,
    TimeWindow,
    TransactionLog,
    hourly_series,
)
from .ets import EtsParams, ForecastResult, fit_ets, forecast_window
from .mining import (
    FISRecord,
    Itemset,
    MiningConfig,
    make_itemset,
    mine_eclat_cc,
    read_fis_file,
    write_fis_file,
)

METHOD_FREQUENT = "frequent-multiplier"
METHOD_INDEPENDENCE = "independence-product"
METHOD_THRESHOLD = "threshold-bound-mix"

GLOBAL_LABEL = "*"


class EstimationError(ValueError):
    """Caller broke an estimation contract (bad window, missing univariate)."""


class InfrequentTargetError(EstimationError):
    """The target is not in the store; use the independence path instead."""


@dataclass(frozen=True)
class FISStore:
    """Frequent itemsets with their training-window supports."""

    schema: AttributeSchema
    kappa: int
    window: TimeWindow
    n_train: int
    supports: dict[Itemset, int] = field(repr=False)

    def lookup(self, itemset: Itemset) -> int | None:
        """Support if the itemset is stored, else None (meaning: infrequent)."""
        if not itemset:
            return self.n_train
        return self.supports.get(itemset)

    def __len__(self) -> int:
        return len(self.supports)

    def records(self) -> list[FISRecord]:
        return sorted(
            (FISRecord(itemset, sup) for itemset, sup in self.supports.items()),
            key=lambda r: r.itemset,
        )


@dataclass(frozen=True)
class UnivariateMember:
    """A single-item target (item=None is the global target) with its fitted
    forecaster and training support."""

    item: ItemCode | None
    support: int
    params: EtsParams
    series: HourlySeries | None = field(default=None, repr=False)

    def target(self, k: int) -> TargetDefinition:
        if self.item is None:
            return TargetDefinition.all_wildcards(k)
        return TargetDefinition.from_items(k, [self.item])


@dataclass(frozen=True)
class UnivariateSet:
    """All frequent single-item targets plus the always-present global one."""

    global_member: UnivariateMember
    members: tuple[UnivariateMember, ...]

    def __post_init__(self) -> None:
        if self.global_member.item is not None:
            raise EstimationError("global member must have item=None")
        if any(m.item is None for m in self.members):
            raise EstimationError("members must be single-item targets")

    @property
    def by_item(self) -> dict[ItemCode, UnivariateMember]:
        return {m.item: m for m in self.members}


@dataclass(frozen=True)
class Estimate:
    """A forecast audience size for one target over one horizon window."""

    target: TargetDefinition
    window: TimeWindow
    point: float
    sigma: float
    multiplier: float
    hourly: np.ndarray = field(repr=False)
    univariate_hourly: np.ndarray = field(repr=False)
    chosen: ItemCode | None
    method: str


def build_store(
    db: TransactionLog, window: TimeWindow, threshold: int | float
) -> tuple[FISStore, UnivariateSet]:
    """Mine the window with eclat_cc and fit a forecaster per frequent item.

    The univariates are exactly the size-1 frequent itemsets; the global
    (all-wildcard) series is always fitted, so estimation never lacks a
    fallback even when no single value is frequent.
    """
    n_hours = window.n_hours  # hour alignment required for the series fits
    sub = db.slice_window(window)
    if len(sub) == 0:
        raise EstimationError("training window contains no transactions")
    cfg = MiningConfig(threshold, "eclat_cc")
    kappa = cfg.resolve_threshold(len(sub))
    records, _ = mine_eclat_cc(sub, cfg)
    store = FISStore(
        schema=db.schema,
        kappa=kappa,
        window=window,
        n_train=len(sub),
        supports={r.itemset: r.support for r in records},
    )

    k = db.schema.k
    members = []
    for record in records:
        if len(record.itemset) != 1:
            continue
        item = record.itemset[0]
        series = hourly_series(db, TargetDefinition.from_items(k, [item]), window)
        members.append(UnivariateMember(item, record.support, fit_ets(series), series))
    global_series = hourly_series(db, TargetDefinition.all_wildcards(k), window)
    global_member = UnivariateMember(None, len(sub), fit_ets(global_series), global_series)
    assert n_hours == len(global_series)
    return store, UnivariateSet(global_member, tuple(members))


def conditional_multiplier(
    store: FISStore, target: TargetDefinition, member: UnivariateMember
) -> float:
    """Empirical estimate s(T)/s(U) of the training-window conditional."""
    items = make_itemset(target.items())
    if member.item is not None and member.item not in items:
        raise EstimationError(
            f"univariate item {member.item} does not appear in the target"
        )
    support = store.lookup(items)
    if support is None:
        raise InfrequentTargetError(f"target {items} is not frequent in the store")
    return support / member.support


def estimate_sigma(
    multiplier: float, s_univariate: int, forecast: ForecastResult
) -> float:
    """Delta-method standard error of multiplier x forecast-sum.

    Combines the forecast error (per-step sigmas summed in quadrature) with
    the binomial sampling error of the empirical multiplier.
    """
    sigma_s_sq = float(np.sum(forecast.sigma**2))
    sigma_p_sq = multiplier * (1.0 - multiplier) / s_univariate
    s_u_hat = float(np.sum(forecast.points))
    return math.sqrt(multiplier**2 * sigma_s_sq + s_u_hat**2 * sigma_p_sq)


def _multiplier_for(
    store: FISStore, target: TargetDefinition, member: UnivariateMember
) -> tuple[float, str]:
    """Multiplier and method for this candidate: empirical if the target is
    frequent, otherwise the per-attribute independence product."""
    items = make_itemset(target.items())
    support = store.lookup(items)
    if support is not None:
        return support / member.support, METHOD_FREQUENT

    base = () if member.item is None else (member.item,)
    multiplier = 1.0
    used_bound = False
    for code in target.items():
        if member.item is not None and code == member.item:
            continue  # the univariate's own attribute contributes factor 1
        pair_support = store.lookup(make_itemset(base + (code,)))
        if pair_support is not None:
            multiplier *= pair_support / member.support
        else:
            multiplier *= store.kappa / member.support
            used_bound = True
    return multiplier, (METHOD_THRESHOLD if used_bound else METHOD_INDEPENDENCE)


def _candidate_estimate(
    store: FISStore,
    target: TargetDefinition,
    member: UnivariateMember,
    horizon: TimeWindow,
) -> Estimate:
    multiplier, method = _multiplier_for(store, target, member)
    fc = forecast_window(member.params, horizon)
    s_u_hat = float(np.sum(fc.points))
    return Estimate(
        target=target,
        window=horizon,
        point=multiplier * s_u_hat,
        sigma=estimate_sigma(multiplier, member.support, fc),
        multiplier=multiplier,
        hourly=multiplier * fc.points,
        univariate_hourly=fc.points,
        chosen=member.item,
        method=method,
    )


def choose_best_univariate(
    store: FISStore,
    uset: UnivariateSet,
    target: TargetDefinition,
    horizon: TimeWindow,
) -> tuple[UnivariateMember, Estimate]:
    """Evaluate every admissible univariate and keep the lowest-sigma estimate.

    Admissible candidates are the members whose item the target constrains;
    the global member steps in when there are none.  Ties go to the larger
    training support, then to the lexicographically smaller item.
    """
    if target.is_global:
        member = uset.global_member
        return member, _candidate_estimate(store, target, member, horizon)
    by_item = uset.by_item
    candidates = [by_item[code] for code in target.items() if code in by_item]
    if not candidates:
        candidates = [uset.global_member]
    best: tuple[float, int, tuple, UnivariateMember, Estimate] | None = None
    for member in candidates:
        est = _candidate_estimate(store, target, member, horizon)
        key = (
            est.sigma,
            -member.support,
            member.item if member.item is not None else ItemCode(-1, -1),
        )
        if best is None or key < best[:3]:
            best = (*key, member, est)
    assert best is not None
    return best[3], best[4]


def estimate_frequent(
    store: FISStore,
    uset: UnivariateSet,
    target: TargetDefinition,
    horizon: TimeWindow,
) -> Estimate:
    """Estimate for a target that is frequent in the store (or global)."""
    if not target.is_global and store.lookup(make_itemset(target.items())) is None:
        raise InfrequentTargetError("target is not frequent; use estimate_infrequent")
    return choose_best_univariate(store, uset, target, horizon)[1]


def estimate_infrequent(
    store: FISStore,
    uset: UnivariateSet,
    target: TargetDefinition,
    horizon: TimeWindow,
) -> Estimate:
    """Independence-product estimate for a target absent from the store."""
    if target.is_global:
        raise EstimationError("the global target is never infrequent")
    if store.lookup(make_itemset(target.items())) is not None:
        raise EstimationError("target is frequent; use estimate_frequent")
    return choose_best_univariate(store, uset, target, horizon)[1]


def estimate(
    store: FISStore,
    uset: UnivariateSet,
    target: TargetDefinition,
    horizon: TimeWindow,
) -> Estimate:
    """Route to the frequent or independence path based on the store."""
    return choose_best_univariate(store, uset, target, horizon)[1]


def _format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_store(store: FISStore, uset: UnivariateSet, base: str | Path) -> None:
    """Persist as three files: `<base>.fis` (itemset supports), `<base>.univ`
    (per-univariate forecaster parameters), `<base>.meta.json` (schema,
    threshold, window)."""
    base = Path(base)
    write_fis_file(base.with_suffix(".fis"), store.schema, store.records())

    lines = []
    for member in (uset.global_member, *uset.members):
        label = (
            GLOBAL_LABEL if member.item is None else store.schema.item_label(member.item)
        )
        p = member.params
        fields = _format_floats(
            [p.alpha, p.beta, p.gamma, p.level, p.trend, *p.seasonal, p.resid_sigma]
        )
        lines.append(f"{label}\t{fields}\t{member.support}")
    base.with_suffix(".univ").write_text("".join(l + "\n" for l in lines), encoding="utf-8")

    meta = {
        "kappa": store.kappa,
        "window": [store.window.start, store.window.end],
        "n_train": store.n_train,
        "schema": [[name, list(values)] for name, values in store.schema.attributes],
    }
    base.with_suffix(".meta.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )


def load_store(base: str | Path) -> tuple[FISStore, UnivariateSet]:
    """Inverse of save_store; loaded members carry no training series."""
    base = Path(base)
    meta = json.loads(base.with_suffix(".meta.json").read_text(encoding="utf-8"))
    schema = AttributeSchema.from_lists([(n, v) for n, v in meta["schema"]])
    window = TimeWindow(*meta["window"])
    records = read_fis_file(base.with_suffix(".fis"), schema)
    store = FISStore(
        schema=schema,
        kappa=int(meta["kappa"]),
        window=window,
        n_train=int(meta["n_train"]),
        supports={r.itemset: r.support for r in records},
    )

    origin_hour = window.end // 3600
    global_member: UnivariateMember | None = None
    members = []
    for lineno, line in enumerate(
        base.with_suffix(".univ").read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        label, params_text, support_text = line.split("\t")
        values = [float(v) for v in params_text.split(",")]
        if len(values) != 30:
            raise ValueError(f"{base}.univ:{lineno}: expected 30 parameter fields")
        params = EtsParams(
            alpha=values[0],
            beta=values[1],
            gamma=values[2],
            level=values[3],
            trend=values[4],
            seasonal=np.asarray(values[5:29]),
            resid_sigma=values[29],
            origin_hour=origin_hour,
        )
        if label == GLOBAL_LABEL:
            global_member = UnivariateMember(None, int(support_text), params)
        else:
            members.append(
                UnivariateMember(schema.parse_item(label), int(support_text), params)
            )
    if global_member is None:
        raise ValueError(f"{base}.univ has no global ({GLOBAL_LABEL}) record")
    members.sort(key=lambda m: m.item)
    return store, UnivariateSet(global_member, tuple(members))
