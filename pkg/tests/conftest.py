from __future__ import annotations

import numpy as np
import pytest

from segcast.dataset import AttributeSchema, TransactionLog


@pytest.fixture
def two_attr_schema() -> AttributeSchema:
    return AttributeSchema.from_lists(
        [("country", ["US", "IN", "DE"]), ("browser", ["Chrome", "Firefox"])]
    )


def random_log(
    rng: np.random.Generator,
    n: int,
    cardinalities: tuple[int, ...],
    t_max: int = 10_000,
) -> TransactionLog:
    """Uniform random log over generic attributes a0, a1, ..."""
    schema = AttributeSchema.from_lists(
        [(f"a{i}", [f"v{j}" for j in range(c)]) for i, c in enumerate(cardinalities)]
    )
    timestamps = np.sort(rng.integers(0, t_max, size=n))
    values = np.empty((n, len(cardinalities)), dtype=np.uint16)
    for i, c in enumerate(cardinalities):
        values[:, i] = rng.integers(0, c, size=n)
    return TransactionLog(schema, timestamps, values)
