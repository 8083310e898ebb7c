"""Synthetic categorical log generation through a Gaussian copula.

Correlated standard normals are pushed through the normal CDF (giving
uniform marginals that retain the dependence) and then through per-attribute
inverse multinomial CDFs, yielding categorical rows with prescribed
marginal distributions and a controllable association structure.  Scenario
helpers reproduce a stress-test grid: k in {8, 16, 32}, high/low
correlation, steep (long-tailed) or flat marginals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from .dataset import AttributeSchema, TransactionLog

STEEP_DECAY = 0.5
SCENARIO_K = (8, 16, 32)
HIGH_RHO_RANGE = (0.2, 0.6)
_GEN_CHUNK = 1 << 20  # rows per sampling chunk; part of the deterministic stream layout


class CorrelationError(ValueError):
    """Correlation matrix cannot be used (asymmetric, bad diagonal, not PSD)."""


def std_normal_cdf(x):
    """Standard normal CDF, elementwise; |error| <= 1e-7."""
    out = ndtr(x)
    return float(out) if np.isscalar(x) else out


def cholesky(correlation: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == R (within 1e-8).

    Semi-definite inputs get diagonal jitter, growing from 1e-10 to 1e-6,
    before giving up.
    """
    R = np.asarray(correlation, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise CorrelationError(f"correlation matrix must be square, got shape {R.shape}")
    if not np.allclose(R, R.T, atol=1e-8):
        raise CorrelationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-8):
        raise CorrelationError("correlation matrix must have a unit diagonal")
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10
    while jitter <= 1e-6:
        try:
            return np.linalg.cholesky(R + jitter * np.eye(len(R)))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise CorrelationError("matrix is not positive semi-definite even after jitter")


def steep_marginal(n_values: int) -> "MarginalSpec":
    """Long-tailed marginal: p_j proportional to STEEP_DECAY**j, normalized."""
    weights = STEEP_DECAY ** np.arange(n_values, dtype=np.float64)
    return MarginalSpec(weights / weights.sum(), "steep")


def flat_marginal(n_values: int) -> "MarginalSpec":
    return MarginalSpec(np.full(n_values, 1.0 / n_values), "flat")


@dataclass(frozen=True)
class MarginalSpec:
    """Multinomial distribution over one attribute's values."""

    probabilities: np.ndarray = field(repr=False)
    shape: str = "custom"

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or len(p) < 1:
            raise ValueError("marginal must be a non-empty probability vector")
        if np.any(p < 0):
            raise ValueError("marginal probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"marginal probabilities sum to {p.sum()!r}, not 1")
        if self.shape not in ("steep", "flat", "custom"):
            raise ValueError(f"unknown marginal shape {self.shape!r}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    def __len__(self) -> int:
        return len(self.probabilities)

    @cached_property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        c[-1] = 1.0
        c.setflags(write=False)
        return c


def inverse_multinomial_cdf(u, marginal: MarginalSpec):
    """Smallest value index whose cumulative probability reaches u.

    u=0 maps to index 0; u=1 maps to the last index with positive mass.
    """
    idx = np.searchsorted(marginal.cumulative, u, side="left")
    idx = np.minimum(idx, len(marginal) - 1)
    return int(idx) if np.isscalar(u) else idx.astype(np.int64)


@dataclass(frozen=True)
class CopulaSpec:
    """Correlation matrix plus per-attribute marginals; the factorization is
    computed once at construction."""

    correlation: np.ndarray = field(repr=False)
    marginals: tuple[MarginalSpec, ...]
    cholesky_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        R = np.asarray(self.correlation, dtype=np.float64)
        if R.shape != (len(self.marginals), len(self.marginals)):
            raise CorrelationError(
                f"correlation shape {R.shape} does not match {len(self.marginals)} marginals"
            )
        if np.any(np.abs(R) > 1.0 + 1e-12):
            raise CorrelationError("correlation entries must lie in [-1, 1]")
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "correlation", R)
        object.__setattr__(self, "cholesky_factor", cholesky(R))

    @property
    def k(self) -> int:
        return len(self.marginals)

    def schema(self) -> AttributeSchema:
        return AttributeSchema.from_lists(
            [
                (f"a{i:02d}", [f"v{j}" for j in range(len(m))])
                for i, m in enumerate(self.marginals)
            ]
        )

    def summary(self) -> str:
        off = self.correlation[np.triu_indices(self.k, 1)]
        shapes = ",".join(m.shape for m in self.marginals)
        mean_off = float(off.mean()) if len(off) else 0.0
        return (
            f"k={self.k} values={[len(m) for m in self.marginals]} "
            f"shapes=[{shapes}] mean_offdiag={mean_off:.4f}"
        )


@dataclass(frozen=True)
class TimestampPlan:
    """How synthetic rows get timestamps: uniform over a span, or with a
    24-hour sinusoidal arrival intensity."""

    kind: str
    start: int
    end: int
    amplitude: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "daily-sine"):
            raise ValueError(f"unknown timestamp plan {self.kind!r}")
        if self.start >= self.end:
            raise ValueError("plan start must precede end")
        if self.kind == "daily-sine" and not 0.0 <= self.amplitude < 1.0:
            raise ValueError("daily-sine amplitude must be in [0, 1)")

    @classmethod
    def uniform(cls, start: int, end: int) -> "TimestampPlan":
        return cls("uniform", start, end)

    @classmethod
    def daily_sine(cls, start: int, days: int, amplitude: float = 0.5) -> "TimestampPlan":
        return cls("daily-sine", start, start + days * 86400, amplitude)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        span = self.end - self.start
        if self.kind == "uniform":
            ts = self.start + np.floor(u * span).astype(np.int64)
        else:
            # invert the cumulative arrival intensity 1 + a*sin(2*pi*t/day)
            # on a per-minute grid
            grid = np.linspace(0.0, span, span // 60 + 1)
            lam = 1.0 + self.amplitude * np.sin(2.0 * np.pi * grid / 86400.0)
            cum = np.concatenate(([0.0], np.cumsum((lam[1:] + lam[:-1]) / 2.0)))
            cum /= cum[-1]
            ts = self.start + np.floor(np.interp(np.sort(u), cum, grid)).astype(np.int64)
        ts.sort(kind="stable")
        return np.minimum(ts, self.end - 1)


def generate(
    spec: CopulaSpec, n: int, seed: int, timestamp_plan: TimestampPlan
) -> TransactionLog:
    """Sample n transactions from the copula; deterministic given the seed.

    Rows are sampled in fixed-size chunks from a single PCG64 stream, then
    timestamps are drawn, so identical inputs yield identical logs.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    L = spec.cholesky_factor
    cumulatives = [m.cumulative for m in spec.marginals]
    values = np.empty((n, spec.k), dtype=np.uint16)
    done = 0
    while done < n:
        m = min(_GEN_CHUNK, n - done)
        z = rng.standard_normal((m, spec.k))
        u = ndtr(z @ L.T)
        for j in range(spec.k):
            idx = np.searchsorted(cumulatives[j], u[:, j], side="left")
            values[done : done + m, j] = np.minimum(idx, len(cumulatives[j]) - 1)
        done += m
    timestamps = timestamp_plan.draw(rng, n)
    return TransactionLog(spec.schema(), timestamps, values)


def cramers_v_matrix(log: TransactionLog) -> np.ndarray:
    """Pairwise Cramer's V between attributes (bias-uncorrected formula).

    Attributes with a single observed value get V=0 against everything.
    """
    n = len(log)
    if n < 2:
        raise ValueError("need at least 2 transactions for association measures")
    k = log.schema.k
    cards = [max(len(log.schema.values(a)), 1) for a in range(k)]
    cols = [log.values[:, a].astype(np.int64) for a in range(k)]
    V = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            table = np.bincount(
                cols[i] * cards[j] + cols[j], minlength=cards[i] * cards[j]
            ).reshape(cards[i], cards[j])
            table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
            r, c = table.shape
            if r < 2 or c < 2:
                v = 0.0
            else:
                row = table.sum(axis=1, keepdims=True)
                col = table.sum(axis=0, keepdims=True)
                expected = row * col / n
                chi2 = float(((table - expected) ** 2 / expected).sum())
                v = min(math.sqrt(chi2 / (n * min(r - 1, c - 1))), 1.0)
            V[i, j] = V[j, i] = v
    return V


def project_to_correlation(matrix: np.ndarray) -> np.ndarray:
    """Nearest-correlation repair: clip eigenvalues at 1e-6, restore unit diagonal."""
    sym = (matrix + matrix.T) / 2.0
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    rebuilt = (eigenvectors * np.maximum(eigenvalues, 1e-6)) @ eigenvectors.T
    scale = np.sqrt(np.diag(rebuilt))
    out = rebuilt / np.outer(scale, scale)
    out = (out + out.T) / 2.0
    np.fill_diagonal(out, 1.0)
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the stress-test grid."""

    k: int
    correlation: str  # high | low
    marginal_shape: str  # steep | flat
    values_per_attribute: tuple[int, ...]
    rows: int
    seed: int
    allow_any_k: bool = False

    def __post_init__(self) -> None:
        if self.correlation not in ("high", "low"):
            raise ValueError(f"correlation must be 'high' or 'low', got {self.correlation!r}")
        if self.marginal_shape not in ("steep", "flat"):
            raise ValueError(
                f"marginal_shape must be 'steep' or 'flat', got {self.marginal_shape!r}"
            )
        if self.k not in SCENARIO_K and not self.allow_any_k:
            raise ValueError(f"k must be one of {SCENARIO_K} (or set allow_any_k)")
        if self.k < 1:
            raise ValueError("k must be positive")
        if len(self.values_per_attribute) != self.k:
            raise ValueError("values_per_attribute length must equal k")
        if any(v < 1 for v in self.values_per_attribute):
            raise ValueError("every attribute needs at least one value")
        if self.rows < 1:
            raise ValueError("rows must be positive")

    @classmethod
    def create(
        cls,
        k: int,
        correlation: str,
        marginal_shape: str,
        rows: int,
        seed: int,
        values: int = 8,
        allow_any_k: bool = False,
    ) -> "ScenarioConfig":
        return cls(k, correlation, marginal_shape, (values,) * k, rows, seed, allow_any_k)


def make_scenario(cfg: ScenarioConfig) -> CopulaSpec:
    """Build the copula for one grid cell.

    The base ('high') matrix draws off-diagonals uniformly from
    HIGH_RHO_RANGE, seeded, then projects to the nearest valid correlation
    matrix; the 'low' variant halves those off-diagonals exactly, which
    stays valid because it is a convex mix with the identity.
    """
    rng = np.random.default_rng(cfg.seed)
    high = np.eye(cfg.k)
    upper = np.triu_indices(cfg.k, 1)
    draws = rng.uniform(*HIGH_RHO_RANGE, size=len(upper[0]))
    high[upper] = draws
    high.T[upper] = draws
    high = project_to_correlation(high)
    R = high if cfg.correlation == "high" else np.eye(cfg.k) + (high - np.eye(cfg.k)) * 0.5

    build = steep_marginal if cfg.marginal_shape == "steep" else flat_marginal
    marginals = tuple(build(v) for v in cfg.values_per_attribute)
    return CopulaSpec(R, marginals)


def generate_scenario(cfg: ScenarioConfig, timestamp_plan: TimestampPlan) -> TransactionLog:
    """Convenience wrapper: scenario spec + sampling with the config's seed."""
    return generate(make_scenario(cfg), cfg.rows, cfg.seed, timestamp_plan)
