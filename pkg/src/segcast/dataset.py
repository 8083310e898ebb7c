"""Event-log data model: schemas, transactions, targets, and windowed counting.

Everything downstream (miners, the copula generator, the forecaster, the
estimator) consumes the types defined here.  A log is stored column-wise as
numpy arrays so that counting and bucketing stay vectorized even for
multi-million-row logs; `Transaction` objects are materialized on demand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

HOUR = 3600

# Characters that would break the CSV / FIS-file / target grammar.
_FORBIDDEN_LABEL_CHARS = set(",;=\t\n\r")


class CsvParseError(ValueError):
    """Malformed CSV input (bad timestamp, ragged row, bad header)."""


class SchemaViolationError(ValueError):
    """A row carries a value not present in the declared schema."""


class WindowAlignmentError(ValueError):
    """A window that must sit on hour boundaries does not."""


class ItemCode(NamedTuple):
    """An (attribute, value) pair encoded by index.

    The tuple ordering (attr first, then value) is the total order the
    miners rely on for candidate generation.
    """

    attr: int
    value: int


def _check_label(label: str, what: str) -> None:
    if not label or _FORBIDDEN_LABEL_CHARS & set(label):
        raise SchemaViolationError(
            f"{what} {label!r} is empty or contains a forbidden character (,;=/tab/newline)"
        )


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes, each with an ordered list of value labels.

    Value lists may be empty only in the degenerate case of a schema
    inferred from a header-only file.
    """

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self) -> None:
        if len(self.attributes) < 1:
            raise SchemaViolationError("schema needs at least one attribute")
        names = [name for name, _ in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaViolationError(f"duplicate attribute names in {names}")
        for name, values in self.attributes:
            _check_label(name, "attribute name")
            if len(set(values)) != len(values):
                raise SchemaViolationError(f"duplicate values for attribute {name!r}")
            if len(values) > 65535:
                raise SchemaViolationError(f"attribute {name!r} has too many values (>65535)")
            for v in values:
                _check_label(v, f"value of {name!r}")

    @classmethod
    def from_lists(cls, attributes: Sequence[tuple[str, Sequence[str]]]) -> "AttributeSchema":
        return cls(tuple((name, tuple(values)) for name, values in attributes))

    @property
    def k(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    def values(self, attr: int) -> tuple[str, ...]:
        return self.attributes[attr][1]

    @cached_property
    def _attr_index(self) -> dict[str, int]:
        return {name: i for i, (name, _) in enumerate(self.attributes)}

    @cached_property
    def _value_index(self) -> tuple[dict[str, int], ...]:
        return tuple({v: j for j, v in enumerate(values)} for _, values in self.attributes)

    def attr_index(self, name: str) -> int:
        try:
            return self._attr_index[name]
        except KeyError:
            raise SchemaViolationError(f"unknown attribute {name!r}") from None

    def item_code(self, attr_name: str, value_label: str) -> ItemCode:
        a = self.attr_index(attr_name)
        try:
            return ItemCode(a, self._value_index[a][value_label])
        except KeyError:
            raise SchemaViolationError(
                f"unknown value {value_label!r} for attribute {attr_name!r}"
            ) from None

    def item_label(self, code: ItemCode) -> str:
        name, values = self.attributes[code.attr]
        return f"{name}={values[code.value]}"

    def parse_item(self, text: str) -> ItemCode:
        name, sep, value = text.partition("=")
        if not sep:
            raise SchemaViolationError(f"item {text!r} is not of the form attr=value")
        return self.item_code(name, value)

    def validate_code(self, code: ItemCode) -> None:
        if not (0 <= code.attr < self.k) or not (0 <= code.value < len(self.values(code.attr))):
            raise SchemaViolationError(f"item code {code} out of range for schema")


@dataclass(frozen=True)
class Transaction:
    """One timestamped event: exactly one ItemCode per attribute, in attr order."""

    timestamp: int
    items: tuple[ItemCode, ...]

    def __post_init__(self) -> None:
        for l, code in enumerate(self.items):
            if code.attr != l:
                raise SchemaViolationError(
                    f"transaction items must carry one value per attribute in order; "
                    f"position {l} holds {code}"
                )


@dataclass(frozen=True)
class TargetDefinition:
    """Per-attribute constraint: a value index, or None for the wildcard."""

    constraints: tuple[int | None, ...]

    @property
    def is_global(self) -> bool:
        return all(c is None for c in self.constraints)

    def items(self) -> tuple[ItemCode, ...]:
        return tuple(
            ItemCode(a, v) for a, v in enumerate(self.constraints) if v is not None
        )

    @classmethod
    def from_items(cls, k: int, items: Sequence[ItemCode]) -> "TargetDefinition":
        constraints: list[int | None] = [None] * k
        for code in items:
            if constraints[code.attr] is not None:
                raise SchemaViolationError(f"two constraints for attribute {code.attr}")
            constraints[code.attr] = code.value
        return cls(tuple(constraints))

    @classmethod
    def all_wildcards(cls, k: int) -> "TargetDefinition":
        return cls((None,) * k)

    @classmethod
    def parse(cls, schema: AttributeSchema, text: str) -> "TargetDefinition":
        """Parse `attr=value,attr=value`; omitted attributes are wildcards.

        An empty or `*` string is the all-wildcard (global) target.
        """
        text = text.strip()
        if text in ("", "*"):
            return cls.all_wildcards(schema.k)
        codes = [schema.parse_item(part) for part in text.split(",")]
        return cls.from_items(schema.k, codes)

    def render(self, schema: AttributeSchema) -> str:
        if self.is_global:
            return "*"
        return ",".join(schema.item_label(code) for code in self.items())


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [start, end) in epoch seconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")

    @property
    def hour_aligned(self) -> bool:
        return self.start % HOUR == 0 and self.end % HOUR == 0

    @property
    def n_hours(self) -> int:
        if not self.hour_aligned:
            raise WindowAlignmentError(f"window [{self.start}, {self.end}) is not hour-aligned")
        return (self.end - self.start) // HOUR

    @property
    def start_hour(self) -> int:
        if self.start % HOUR != 0:
            raise WindowAlignmentError(f"window start {self.start} is not hour-aligned")
        return self.start // HOUR


@dataclass(frozen=True)
class HourlySeries:
    """Contiguous hourly counts starting at an epoch-hour index."""

    start_hour: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.values.ndim != 1 or len(self.values) < 1:
            raise ValueError("hourly series must be a non-empty vector")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_hour(self) -> int:
        return self.start_hour + len(self.values)


class TransactionLog:
    """Immutable, column-wise event log.

    `timestamps` is a non-decreasing int64 vector of epoch seconds;
    `values` is an (n, k) uint16 matrix of value indices.
    """

    __slots__ = ("schema", "timestamps", "values")

    def __init__(self, schema: AttributeSchema, timestamps: np.ndarray, values: np.ndarray):
        timestamps = np.ascontiguousarray(timestamps, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.uint16)
        if values.ndim != 2 or values.shape[1] != schema.k:
            raise SchemaViolationError(
                f"value matrix shape {values.shape} does not match k={schema.k}"
            )
        if len(timestamps) != len(values):
            raise SchemaViolationError("timestamp and value row counts differ")
        if len(timestamps) > 1 and np.any(np.diff(timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        for a in range(schema.k):
            n_vals = len(schema.values(a))
            if len(values) and int(values[:, a].max(initial=0)) >= n_vals:
                raise SchemaViolationError(
                    f"value index out of range for attribute {schema.names[a]!r}"
                )
        self.schema = schema
        self.timestamps = timestamps
        self.values = values
        self.timestamps.setflags(write=False)
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.timestamps)

    def transaction(self, i: int) -> Transaction:
        row = self.values[i]
        return Transaction(
            int(self.timestamps[i]),
            tuple(ItemCode(a, int(v)) for a, v in enumerate(row)),
        )

    def iter_transactions(self) -> Iterator[Transaction]:
        for i in range(len(self)):
            yield self.transaction(i)

    @classmethod
    def from_transactions(
        cls, schema: AttributeSchema, transactions: Sequence[Transaction]
    ) -> "TransactionLog":
        n = len(transactions)
        ts = np.empty(n, dtype=np.int64)
        vals = np.empty((n, schema.k), dtype=np.uint16)
        for i, t in enumerate(transactions):
            if len(t.items) != schema.k:
                raise SchemaViolationError("transaction arity does not match schema")
            ts[i] = t.timestamp
            for code in t.items:
                schema.validate_code(code)
                vals[i, code.attr] = code.value
        order = np.argsort(ts, kind="stable")
        return cls(schema, ts[order], vals[order])

    def window_bounds(self, window: TimeWindow) -> tuple[int, int]:
        """Row index range [lo, hi) of transactions inside the window."""
        lo = int(np.searchsorted(self.timestamps, window.start, side="left"))
        hi = int(np.searchsorted(self.timestamps, window.end, side="left"))
        return lo, hi

    def slice_window(self, window: TimeWindow) -> "TransactionLog":
        lo, hi = self.window_bounds(window)
        return TransactionLog(self.schema, self.timestamps[lo:hi], self.values[lo:hi])

    def span(self) -> TimeWindow:
        if len(self) == 0:
            raise ValueError("empty log has no span")
        return TimeWindow(int(self.timestamps[0]), int(self.timestamps[-1]) + 1)


def satisfies(transaction: Transaction, target: TargetDefinition) -> bool:
    """True iff every non-wildcard constraint matches the transaction's value."""
    if len(transaction.items) != len(target.constraints):
        raise SchemaViolationError("transaction and target are over different schemas")
    return all(
        c is None or transaction.items[a].value == c
        for a, c in enumerate(target.constraints)
    )


def _target_mask(log: TransactionLog, target: TargetDefinition, lo: int, hi: int) -> np.ndarray:
    mask = np.ones(hi - lo, dtype=bool)
    for a, c in enumerate(target.constraints):
        if c is not None:
            mask &= log.values[lo:hi, a] == c
    return mask


def count_in_window(log: TransactionLog, target: TargetDefinition, window: TimeWindow) -> int:
    """Exact number of transactions in the window satisfying the target."""
    lo, hi = log.window_bounds(window)
    if hi <= lo:
        return 0
    return int(np.count_nonzero(_target_mask(log, target, lo, hi)))


def hourly_series(
    log: TransactionLog, target: TargetDefinition, window: TimeWindow
) -> HourlySeries:
    """Per-hour counts of matching transactions; absent hours are zeros.

    The window must sit on hour boundaries.
    """
    n_hours = window.n_hours  # raises WindowAlignmentError if unaligned
    lo, hi = log.window_bounds(window)
    mask = _target_mask(log, target, lo, hi)
    buckets = (log.timestamps[lo:hi][mask] - window.start) // HOUR
    counts = np.bincount(buckets, minlength=n_hours).astype(np.int64)
    return HourlySeries(window.start // HOUR, counts)


def _parse_timestamp(text: str, row_num: int) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return int(float(text))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise CsvParseError(f"row {row_num}: cannot parse timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_csv(
    path: str | Path,
    schema_mode: str = "inferred",
    schema: AttributeSchema | None = None,
) -> TransactionLog:
    """Load a `timestamp,attr1,attr2,...` CSV into a TransactionLog.

    `schema_mode="inferred"` enumerates values in first-seen order;
    `schema_mode="declared"` validates every value against `schema`.
    Rows are sorted by timestamp.  Rows with missing values, unparseable
    timestamps, or (in declared mode) unknown values are rejected with the
    offending row number.
    """
    if schema_mode not in ("inferred", "declared"):
        raise ValueError(f"schema_mode must be 'inferred' or 'declared', got {schema_mode!r}")
    if schema_mode == "declared" and schema is None:
        raise ValueError("declared schema_mode requires a schema")

    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: file is empty (no header row)") from None
        if len(header) < 2 or header[0].strip() != "timestamp":
            raise CsvParseError(
                f"{path}: header must be 'timestamp,attr1,...', got {header!r}"
            )
        attr_names = [h.strip() for h in header[1:]]
        k = len(attr_names)

        if schema_mode == "declared":
            assert schema is not None
            if list(schema.names) != attr_names:
                raise SchemaViolationError(
                    f"header attributes {attr_names} do not match declared schema {list(schema.names)}"
                )
            value_maps = [dict(m) for m in schema._value_index]
        else:
            value_maps = [{} for _ in range(k)]

        timestamps: list[int] = []
        rows: list[list[int]] = []
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 1:
                raise CsvParseError(
                    f"row {row_num}: expected {k + 1} fields, got {len(row)}"
                )
            ts = _parse_timestamp(row[0], row_num)
            encoded = []
            for a, raw in enumerate(row[1:]):
                label = raw.strip()
                if not label:
                    raise SchemaViolationError(
                        f"row {row_num}: missing value for attribute {attr_names[a]!r}"
                    )
                if "," in raw:
                    raise CsvParseError(
                        f"row {row_num}: value {raw!r} contains a comma"
                    )
                idx = value_maps[a].get(label)
                if idx is None:
                    if schema_mode == "declared":
                        raise SchemaViolationError(
                            f"row {row_num}: value {label!r} not in declared schema "
                            f"for attribute {attr_names[a]!r}"
                        )
                    idx = len(value_maps[a])
                    value_maps[a][label] = idx
                encoded.append(idx)
            timestamps.append(ts)
            rows.append(encoded)

    if schema_mode == "inferred":
        schema = AttributeSchema.from_lists(
            [(name, list(value_maps[a].keys())) for a, name in enumerate(attr_names)]
        )
    assert schema is not None

    n = len(rows)
    ts_arr = np.asarray(timestamps, dtype=np.int64) if n else np.empty(0, dtype=np.int64)
    val_arr = (
        np.asarray(rows, dtype=np.uint16) if n else np.empty((0, k), dtype=np.uint16)
    )
    order = np.argsort(ts_arr, kind="stable")
    return TransactionLog(schema, ts_arr[order], val_arr[order])


def write_csv(log: TransactionLog, path: str | Path) -> None:
    """Write a log back out in the `timestamp,attr1,...` format (epoch seconds)."""
    path = Path(path)
    schema = log.schema
    value_labels = [schema.values(a) for a in range(schema.k)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *schema.names])
        for i in range(len(log)):
            row = log.values[i]
            writer.writerow(
                [int(log.timestamps[i])] + [value_labels[a][row[a]] for a in range(schema.k)]
            )
