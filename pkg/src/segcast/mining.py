"""Frequent itemset miners over categorical transaction logs.

Five interchangeable engines (apriori, apriori_cc, eclat, eclat_cc,
fpgrowth) share one output contract: the exact set of itemsets whose
support meets the threshold, each satisfying the one-value-per-attribute
constraint, in lexicographic ItemCode order.  The *_cc variants discard
candidates that put two values on one attribute after candidate generation
and before any support work, which is where the speedup comes from.

A brute-force enumerator serves as the test oracle.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .dataset import AttributeSchema, ItemCode, TransactionLog

ALGORITHMS = ("apriori", "apriori_cc", "eclat", "eclat_cc", "fpgrowth")

Itemset = tuple[ItemCode, ...]


class MiningConfigError(ValueError):
    """Unusable mining configuration (threshold resolves below 1, bad algorithm)."""


class SearchSpaceError(ValueError):
    """Brute-force enumeration would exceed its safety guard."""


def make_itemset(items: Iterable[ItemCode]) -> Itemset:
    """Canonical form: sorted by the ItemCode total order, duplicates dropped."""
    return tuple(sorted(set(items)))


def categorical_constraint(itemset: Iterable[ItemCode], schema: AttributeSchema | None = None) -> bool:
    """True iff no attribute contributes more than one item."""
    items = tuple(itemset)
    if schema is not None:
        for code in items:
            schema.validate_code(code)
    return len({code.attr for code in items}) == len(items)


@dataclass(frozen=True, slots=True)
class FISRecord:
    itemset: Itemset
    support: int


@dataclass(frozen=True)
class MiningConfig:
    """Threshold (absolute count, or fraction of n resolved with ceiling),
    algorithm name, and an optional itemset-size cap."""

    threshold: int | float
    algorithm: str = "eclat_cc"
    max_size: int | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise MiningConfigError(
                f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}"
            )
        if isinstance(self.threshold, bool) or (
            isinstance(self.threshold, float) and not 0.0 < self.threshold <= 1.0
        ):
            raise MiningConfigError(f"fractional threshold must be in (0, 1], got {self.threshold}")
        if self.max_size is not None and self.max_size < 1:
            raise MiningConfigError("max_size must be at least 1")

    def resolve_threshold(self, n: int) -> int:
        """Absolute support threshold for a database of n transactions."""
        if isinstance(self.threshold, float):
            kappa = math.ceil(self.threshold * n)
        else:
            kappa = int(self.threshold)
        if kappa < 1:
            raise MiningConfigError(
                f"threshold {self.threshold} resolves to {kappa} on n={n}; must be >= 1"
            )
        return kappa


@dataclass
class MiningStats:
    candidates_generated: int = 0
    candidates_rejected_by_cc: int = 0
    tidlist_intersections: int = 0
    wall_time: float = 0.0

    def merge(self, other: "MiningStats") -> None:
        self.candidates_generated += other.candidates_generated
        self.candidates_rejected_by_cc += other.candidates_rejected_by_cc
        self.tidlist_intersections += other.tidlist_intersections


def _singleton_tidlists(db: TransactionLog) -> list[tuple[ItemCode, np.ndarray]]:
    """Sorted tid arrays for every item that occurs at least once."""
    out: list[tuple[ItemCode, np.ndarray]] = []
    for a in range(db.schema.k):
        n_values = len(db.schema.values(a))
        if n_values == 0 or len(db) == 0:
            continue
        col = db.values[:, a]
        order = np.argsort(col, kind="stable").astype(np.int32)
        counts = np.bincount(col, minlength=n_values)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        for v in range(n_values):
            tids = order[offsets[v] : offsets[v + 1]]
            if len(tids):
                out.append((ItemCode(a, v), tids))
    out.sort(key=lambda pair: pair[0])
    return out


# Covers (transaction-id sets) carry one of two layouts chosen by density:
# a sorted int32 index array, or a little-endian packed bit vector stored as
# uint64 words.  Dense covers cost O(n/64) per intersection regardless of
# support; sparse ones cost O(size).  Below _SPARSE_DIVISOR'th of the rows,
# indices win.
_SPARSE_DIVISOR = 256


def _bits_to_tids(bits: np.ndarray) -> np.ndarray:
    """Set-bit positions of a packed cover, ascending; cost scales with the
    number of set bits, not the row count."""
    as_bytes = bits.view(np.uint8)
    nz = np.flatnonzero(as_bytes)
    if len(nz) == 0:
        return np.empty(0, dtype=np.int32)
    expanded = np.unpackbits(as_bytes[nz], bitorder="little").reshape(-1, 8).astype(bool)
    base = nz.astype(np.int64) << 3
    return (base[:, None] + np.arange(8, dtype=np.int64)[None, :])[expanded].astype(np.int32)


def _tids_to_bits(tids: np.ndarray, n_rows: int) -> np.ndarray:
    mask = np.zeros(n_rows, dtype=bool)
    mask[tids] = True
    packed = np.packbits(mask, bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view(np.uint64)


class _CoverSpace:
    """Intersection kernels plus the dense/sparse crossover for one database."""

    def __init__(self, n_rows: int):
        self.n_rows = n_rows
        self.sparse_limit = max(n_rows // _SPARSE_DIVISOR, 16)

    def from_tids(self, tids: np.ndarray) -> np.ndarray:
        if len(tids) <= self.sparse_limit:
            return tids
        return _tids_to_bits(tids, self.n_rows)

    def intersect(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
        """Intersect two covers; returns (cover, support)."""
        a_sparse = a.dtype == np.int32
        b_sparse = b.dtype == np.int32
        if a_sparse and b_sparse:
            if len(a) > len(b):
                a, b = b, a
            if len(a) == 0:
                return a, 0
            pos = np.searchsorted(b, a)
            pos[pos == len(b)] = 0  # out-of-range probes can never match below
            out = a[b[pos] == a]
            return out, len(out)
        if a_sparse or b_sparse:
            bits, tids = (b, a) if a_sparse else (a, b)
            byte = bits.view(np.uint8)[tids >> 3]
            out = tids[(byte >> (tids & 7).astype(np.uint8)) & 1 == 1]
            return out, len(out)
        anded = np.bitwise_and(a, b)
        support = int(np.bitwise_count(anded).sum(dtype=np.int64))
        if support <= self.sparse_limit:
            return _bits_to_tids(anded), support
        return anded, support


def _frequent_frontier(
    db: TransactionLog, kappa: int, space: _CoverSpace
) -> list[tuple[ItemCode, np.ndarray, int]]:
    """Frequent singletons in ItemCode order, the candidate-generation order."""
    return [
        (item, space.from_tids(tids), len(tids))
        for item, tids in _singleton_tidlists(db)
        if len(tids) >= kappa
    ]


def _eclat_descend(
    prefix: tuple[ItemCode, ...],
    frontier: list[tuple[ItemCode, np.ndarray, int]],
    kappa: int,
    stats: MiningStats,
    check_cc: bool,
    max_size: int | None,
    space: _CoverSpace,
) -> Iterator[tuple[Itemset, int]]:
    """Depth-first growth of one equivalence class.

    Frontier items follow the ItemCode total order, so prefix + tail is
    already a canonical itemset and emission is in lexicographic order.
    """
    intersect = space.intersect
    for i, (item_a, cover_a, support_a) in enumerate(frontier):
        items_a = prefix + (item_a,)
        yield items_a, support_a
        if max_size is not None and len(items_a) >= max_size:
            continue
        children: list[tuple[ItemCode, np.ndarray, int]] = []
        attr_a = item_a.attr
        generated = rejected = 0
        for item_b, cover_b, _ in frontier[i + 1 :]:
            generated += 1
            if check_cc and item_b.attr == attr_a:
                rejected += 1
                continue
            cover, support = intersect(cover_a, cover_b)
            if support >= kappa:
                children.append((item_b, cover, support))
        stats.candidates_generated += generated
        stats.candidates_rejected_by_cc += rejected
        stats.tidlist_intersections += generated - rejected
        if children:
            yield from _eclat_descend(
                items_a, children, kappa, stats, check_cc, max_size, space
            )


def iter_eclat(
    db: TransactionLog,
    kappa: int,
    *,
    check_cc: bool = True,
    max_size: int | None = None,
    stats: MiningStats | None = None,
) -> Iterator[tuple[Itemset, int]]:
    """Stream (itemset, support) pairs without materializing the result set.

    Useful when the frequent set is large and only a sample is needed.  The
    stream order is deterministic but not lexicographic.
    """
    if kappa < 1:
        raise MiningConfigError(f"kappa must be >= 1, got {kappa}")
    if stats is None:
        stats = MiningStats()
    space = _CoverSpace(len(db))
    frontier = _frequent_frontier(db, kappa, space)
    yield from _eclat_descend((), frontier, kappa, stats, check_cc, max_size, space)


def _mine_eclat_impl(
    db: TransactionLog, cfg: MiningConfig, check_cc: bool, threads: int
) -> tuple[list[FISRecord], MiningStats]:
    stats = MiningStats()
    start = perf_counter()
    kappa = cfg.resolve_threshold(len(db))
    space = _CoverSpace(len(db))
    frontier = _frequent_frontier(db, kappa, space)

    records: list[FISRecord] = []
    if threads <= 1 or len(frontier) < 2:
        for itemset, support in _eclat_descend(
            (), frontier, kappa, stats, check_cc, cfg.max_size, space
        ):
            records.append(FISRecord(itemset, support))
    else:
        # First-level equivalence classes are independent subtrees; results are
        # merged in class order and stats summed, so output and stats (except
        # wall time) match the serial run exactly.
        def run_class(i: int) -> tuple[list[FISRecord], MiningStats]:
            local = MiningStats()
            item_a, cover_a, support_a = frontier[i]
            out = [FISRecord((item_a,), support_a)]
            if cfg.max_size is not None and cfg.max_size <= 1:
                return out, local
            children: list[tuple[ItemCode, np.ndarray, int]] = []
            generated = rejected = 0
            for item_b, cover_b, _ in frontier[i + 1 :]:
                generated += 1
                if check_cc and item_b.attr == item_a.attr:
                    rejected += 1
                    continue
                cover, support = space.intersect(cover_a, cover_b)
                if support >= kappa:
                    children.append((item_b, cover, support))
            local.candidates_generated += generated
            local.candidates_rejected_by_cc += rejected
            local.tidlist_intersections += generated - rejected
            for itemset, support in _eclat_descend(
                (item_a,), children, kappa, local, check_cc, cfg.max_size, space
            ):
                out.append(FISRecord(itemset, support))
            return out, local

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for out, local in pool.map(run_class, range(len(frontier))):
                records.extend(out)
                stats.merge(local)

    records.sort(key=lambda r: r.itemset)
    stats.wall_time = perf_counter() - start
    return records, stats


def mine_eclat(
    db: TransactionLog, cfg: MiningConfig, threads: int = 1
) -> tuple[list[FISRecord], MiningStats]:
    if cfg.algorithm != "eclat":
        raise MiningConfigError(f"mine_eclat called with algorithm {cfg.algorithm!r}")
    return _mine_eclat_impl(db, cfg, check_cc=False, threads=threads)


def mine_eclat_cc(
    db: TransactionLog, cfg: MiningConfig, threads: int = 1
) -> tuple[list[FISRecord], MiningStats]:
    if cfg.algorithm != "eclat_cc":
        raise MiningConfigError(f"mine_eclat_cc called with algorithm {cfg.algorithm!r}")
    return _mine_eclat_impl(db, cfg, check_cc=True, threads=threads)


def _support_mask_count(db: TransactionLog, itemset: Itemset) -> int:
    mask: np.ndarray | None = None
    for code in itemset:
        col_eq = db.values[:, code.attr] == code.value
        mask = col_eq if mask is None else (mask & col_eq)
    if mask is None:
        return len(db)
    return int(np.count_nonzero(mask))


def _mine_apriori_impl(
    db: TransactionLog, cfg: MiningConfig, check_cc: bool
) -> tuple[list[FISRecord], MiningStats]:
    stats = MiningStats()
    start = perf_counter()
    kappa = cfg.resolve_threshold(len(db))

    level: list[tuple[Itemset, int]] = []
    for item, tids in _singleton_tidlists(db):
        if len(tids) >= kappa:
            level.append(((item,), len(tids)))
    records = [FISRecord(itemset, sup) for itemset, sup in level]

    size = 2
    while level and (cfg.max_size is None or size <= cfg.max_size):
        prev_frequent = {itemset for itemset, _ in level}
        itemsets = [itemset for itemset, _ in level]  # already sorted

        candidates: list[Itemset] = []
        for i in range(len(itemsets)):
            head = itemsets[i][:-1]
            tail_a = itemsets[i][-1]
            for j in range(i + 1, len(itemsets)):
                if itemsets[j][:-1] != head:
                    break
                stats.candidates_generated += 1
                tail_b = itemsets[j][-1]
                if check_cc and tail_b.attr == tail_a.attr:
                    stats.candidates_rejected_by_cc += 1
                    continue
                cand = itemsets[i] + (tail_b,)
                # prune: every (size-1)-subset must be frequent; the two
                # parents are frequent by construction
                if size > 2 and any(
                    cand[:p] + cand[p + 1 :] not in prev_frequent for p in range(size - 2)
                ):
                    continue
                candidates.append(cand)

        level = []
        for cand in candidates:
            sup = _support_mask_count(db, cand)
            if sup >= kappa:
                level.append((cand, sup))
        records.extend(FISRecord(itemset, sup) for itemset, sup in level)
        size += 1

    records.sort(key=lambda r: r.itemset)
    stats.wall_time = perf_counter() - start
    return records, stats


def mine_apriori(db: TransactionLog, cfg: MiningConfig) -> tuple[list[FISRecord], MiningStats]:
    if cfg.algorithm != "apriori":
        raise MiningConfigError(f"mine_apriori called with algorithm {cfg.algorithm!r}")
    return _mine_apriori_impl(db, cfg, check_cc=False)


def mine_apriori_cc(db: TransactionLog, cfg: MiningConfig) -> tuple[list[FISRecord], MiningStats]:
    if cfg.algorithm != "apriori_cc":
        raise MiningConfigError(f"mine_apriori_cc called with algorithm {cfg.algorithm!r}")
    return _mine_apriori_impl(db, cfg, check_cc=True)


class _FPNode:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item: int, parent: "_FPNode | None"):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children: dict[int, _FPNode] = {}


def _fp_build(
    transactions: Iterable[tuple[Sequence[int], int]], n_items: int
) -> tuple[_FPNode, list[list[_FPNode]]]:
    """Build an FP-tree from (rank-sorted item list, weight) rows."""
    root = _FPNode(-1, None)
    node_lists: list[list[_FPNode]] = [[] for _ in range(n_items)]
    for items, weight in transactions:
        node = root
        for item in items:
            child = node.children.get(item)
            if child is None:
                child = _FPNode(item, node)
                node.children[item] = child
                node_lists[item].append(child)
            child.count += weight
            node = child
    return root, node_lists


def _fp_mine(
    node_lists: list[list[_FPNode]],
    item_supports: list[int],
    order: list[int],
    suffix: tuple[int, ...],
    kappa: int,
    max_size: int | None,
    out: list[tuple[tuple[int, ...], int]],
) -> None:
    # items are visited least-frequent-first so each conditional base is final
    for item in reversed(order):
        support = item_supports[item]
        itemset = (item,) + suffix
        out.append((itemset, support))
        if max_size is not None and len(itemset) >= max_size:
            continue
        # conditional pattern base for `item`
        cond_counts: dict[int, int] = {}
        paths: list[tuple[list[int], int]] = []
        for node in node_lists[item]:
            path: list[int] = []
            parent = node.parent
            while parent is not None and parent.item != -1:
                path.append(parent.item)
                parent = parent.parent
            if path:
                path.reverse()
                paths.append((path, node.count))
                for p in path:
                    cond_counts[p] = cond_counts.get(p, 0) + node.count
        cond_items = [p for p, c in cond_counts.items() if c >= kappa]
        if not cond_items:
            continue
        cond_order = sorted(cond_items, key=lambda p: (-cond_counts[p], p))
        rank = {p: r for r, p in enumerate(cond_order)}
        filtered = (
            (sorted((p for p in path if p in rank), key=rank.__getitem__), weight)
            for path, weight in paths
        )
        max_item = max(cond_items) + 1
        supports = [0] * max_item
        for p in cond_items:
            supports[p] = cond_counts[p]
        _, cond_nodes = _fp_build(filtered, max_item)
        _fp_mine(cond_nodes, supports, cond_order, itemset, kappa, max_size, out)


def mine_fpgrowth(db: TransactionLog, cfg: MiningConfig) -> tuple[list[FISRecord], MiningStats]:
    if cfg.algorithm != "fpgrowth":
        raise MiningConfigError(f"mine_fpgrowth called with algorithm {cfg.algorithm!r}")
    stats = MiningStats()
    start = perf_counter()
    kappa = cfg.resolve_threshold(len(db))

    singles = [(item, len(tids)) for item, tids in _singleton_tidlists(db)]
    frequent = [(item, sup) for item, sup in singles if sup >= kappa]
    codes = [item for item, _ in frequent]
    code_of = {item: i for i, item in enumerate(codes)}
    supports = [sup for _, sup in frequent]
    # canonical tree order: frequency descending, ItemCode ascending on ties
    order = sorted(range(len(codes)), key=lambda i: (-supports[i], codes[i]))
    rank = {i: r for r, i in enumerate(order)}

    def rows() -> Iterator[tuple[list[int], int]]:
        for rowidx in range(len(db)):
            row = db.values[rowidx]
            present = [
                code_of[ItemCode(a, int(row[a]))]
                for a in range(db.schema.k)
                if ItemCode(a, int(row[a])) in code_of
            ]
            present.sort(key=rank.__getitem__)
            yield present, 1

    _, node_lists = _fp_build(rows(), len(codes))
    mined: list[tuple[tuple[int, ...], int]] = []
    _fp_mine(node_lists, supports, order, (), kappa, cfg.max_size, mined)

    records = [
        FISRecord(make_itemset(codes[i] for i in dense_items), sup)
        for dense_items, sup in mined
    ]
    records.sort(key=lambda r: r.itemset)
    stats.wall_time = perf_counter() - start
    return records, stats


def brute_force_mine(db: TransactionLog, kappa: int) -> list[FISRecord]:
    """Oracle: enumerate every one-value-per-attribute itemset and scan-count it.

    Guarded against blowup: the product of (values+1) over attributes must
    not exceed 10^6.
    """
    if kappa < 1:
        raise MiningConfigError(f"kappa must be >= 1, got {kappa}")
    schema = db.schema
    space = 1
    for a in range(schema.k):
        space *= len(schema.values(a)) + 1
        if space > 10**6:
            raise SearchSpaceError(
                "brute-force space exceeds 10^6 itemsets; use a miner instead"
            )

    records: list[FISRecord] = []
    choices: list[list[int | None]] = [
        [None, *range(len(schema.values(a)))] for a in range(schema.k)
    ]

    def descend(a: int, items: list[ItemCode]) -> None:
        if a == schema.k:
            if items:
                sup = _support_mask_count(db, tuple(items))
                if sup >= kappa:
                    records.append(FISRecord(tuple(items), sup))
            return
        for v in choices[a]:
            if v is None:
                descend(a + 1, items)
            else:
                items.append(ItemCode(a, v))
                descend(a + 1, items)
                items.pop()

    descend(0, [])
    records.sort(key=lambda r: r.itemset)
    return records


_MINERS: dict[str, Callable[..., tuple[list[FISRecord], MiningStats]]] = {
    "apriori": mine_apriori,
    "apriori_cc": mine_apriori_cc,
    "eclat": mine_eclat,
    "eclat_cc": mine_eclat_cc,
    "fpgrowth": mine_fpgrowth,
}


def mine(
    db: TransactionLog, cfg: MiningConfig, threads: int = 1
) -> tuple[list[FISRecord], MiningStats]:
    """Dispatch to the engine named in cfg.algorithm."""
    miner = _MINERS[cfg.algorithm]
    if cfg.algorithm in ("eclat", "eclat_cc"):
        return miner(db, cfg, threads)
    return miner(db, cfg)


def render_itemset(schema: AttributeSchema, itemset: Itemset) -> str:
    return ";".join(schema.item_label(code) for code in itemset)


def write_fis_file(path: str | Path, schema: AttributeSchema, records: Iterable[FISRecord]) -> None:
    """One `item1;item2;...<TAB>support` record per line, lines sorted."""
    lines = sorted(f"{render_itemset(schema, r.itemset)}\t{r.support}" for r in records)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_fis_file(path: str | Path, schema: AttributeSchema) -> list[FISRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        item_part, sep, support_part = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'items<TAB>support', got {line!r}")
        itemset = make_itemset(schema.parse_item(p) for p in item_part.split(";"))
        records.append(FISRecord(itemset, int(support_part)))
    return records
