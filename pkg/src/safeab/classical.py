"""Fixed-horizon baselines: t-tests, Cohen's d, chi-squared tests, sizing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics
from .errors import DegenerateError, DomainError


@dataclass(frozen=True)
class SummaryStats:
    """Count, mean and sample variance (n - 1 denominator) of one group."""

    n: int
    mean: float
    var: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"SummaryStats needs n >= 1, got {self.n}")
        if not self.var >= 0:
            raise DomainError(f"variance must be >= 0, got {self.var}")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "SummaryStats":
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise DomainError("no observations")
        var = float(arr.var(ddof=1)) if arr.size > 1 else 0.0
        return cls(int(arr.size), float(arr.mean()), var)

    @classmethod
    def from_stddev(cls, n: int, mean: float, stddev: float) -> "SummaryStats":
        return cls(int(n), float(mean), float(stddev) ** 2)

    @property
    def sum_squares(self) -> float:
        return (self.n - 1) * self.var


@dataclass(frozen=True)
class TestReport:
    statistic: float
    p_value: float
    df: float

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts laid out as rows ``(a, b)`` and ``(c, d)``."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise DomainError("contingency counts must be >= 0")
        if self.a + self.b + self.c + self.d < 1:
            raise DomainError("contingency table is empty")

    def observed(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    def expected(self) -> np.ndarray:
        obs = self.observed()
        return np.outer(obs.sum(axis=1), obs.sum(axis=0)) / obs.sum()

    def chi2_test(self) -> TestReport:
        return chi2_test(self.observed().ravel(), self.expected().ravel(), df=1)


def pooled_variance(x: SummaryStats, y: SummaryStats) -> float:
    dof = x.n + y.n - 2
    if dof < 1:
        raise DegenerateError("pooled variance needs n + m >= 3")
    return (x.sum_squares + y.sum_squares) / dof


def welch_t(x: SummaryStats, y: SummaryStats, satterthwaite: bool = False) -> TestReport:
    """Two-sided Welch t-test.

    By default the statistic is referred to a t distribution with
    ``n + m - 2`` degrees of freedom; ``satterthwaite=True`` switches to the
    Welch-Satterthwaite approximation.
    """
    if x.n < 2 or y.n < 2:
        raise DomainError("welch_t needs at least two observations per group")
    vx, vy = x.var / x.n, y.var / y.n
    se2 = vx + vy
    if se2 <= 0:
        raise DegenerateError("both groups have zero variance")
    t = (x.mean - y.mean) / math.sqrt(se2)
    if satterthwaite:
        df = se2 ** 2 / (vx ** 2 / (x.n - 1) + vy ** 2 / (y.n - 1))
    else:
        df = float(x.n + y.n - 2)
    p = 2.0 * numerics.student_t_sf(abs(t), df)
    return TestReport(t, min(1.0, p), df)


def pooled_t(x: SummaryStats, y: SummaryStats) -> TestReport:
    """Two-sided Student t-test with pooled variance."""
    sp2 = pooled_variance(x, y)
    if sp2 <= 0:
        raise DegenerateError("pooled variance is zero")
    t = (x.mean - y.mean) / math.sqrt(sp2 * (1.0 / x.n + 1.0 / y.n))
    df = float(x.n + y.n - 2)
    return TestReport(t, min(1.0, 2.0 * numerics.student_t_sf(abs(t), df)), df)


def cohens_d(x: SummaryStats, y: SummaryStats) -> float:
    sp2 = pooled_variance(x, y)
    if sp2 <= 0:
        raise DegenerateError("pooled variance is zero")
    return (x.mean - y.mean) / math.sqrt(sp2)


def chi2_test(observed: Sequence[float], expected: Sequence[float], df: int) -> TestReport:
    """Pearson's statistic sum((O - E)^2 / E) with a chi-squared p-value."""
    obs = np.asarray(observed, dtype=float).ravel()
    exp = np.asarray(expected, dtype=float).ravel()
    if obs.shape != exp.shape:
        raise DomainError("observed and expected differ in size")
    if np.any(~(exp > 0)):
        raise DomainError("expected counts must be > 0")
    if df < 1:
        raise DomainError("df must be >= 1")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return TestReport(stat, numerics.chi2_sf(stat, df), float(df))


def srm_chi2_test(n_a: int, n_b: int, theta0: float = 0.5) -> TestReport:
    """Goodness-of-fit of an assignment split against intended share ``theta0`` for group a."""
    if not 0 < theta0 < 1:
        raise DomainError("theta0 must lie in (0, 1)")
    total = n_a + n_b
    return chi2_test([n_a, n_b], [total * theta0, total * (1 - theta0)], df=1)


def _z_sum(alpha: float, beta: float) -> float:
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0 < v < 1:
            raise DomainError(f"{name} must lie in (0, 1)")
    return numerics.normal_quantile(1 - alpha / 2) + numerics.normal_quantile(1 - beta)


def fixed_horizon_sample_size(alpha: float, beta: float, delta: float) -> int:
    """Per-group n of a two-sided two-sample test at standardized effect ``delta``."""
    if not delta > 0:
        raise DomainError("delta must be > 0")
    z = _z_sum(alpha, beta)
    return math.ceil(2.0 * z * z / (delta * delta))


def srm_sample_size(theta0: float, epsilon: float, alpha: float, beta: float) -> int:
    """Total assignments for a one-sample proportion test to detect ``theta0 + epsilon``."""
    if not 0 < theta0 < 1 or not 0 < theta0 + epsilon < 1 or epsilon == 0:
        raise DomainError("theta0 and theta0 + epsilon must lie in (0, 1), epsilon != 0")
    _z_sum(alpha, beta)
    za = numerics.normal_quantile(1 - alpha / 2)
    zb = numerics.normal_quantile(1 - beta)
    t1 = theta0 + epsilon
    root = za * math.sqrt(theta0 * (1 - theta0)) + zb * math.sqrt(t1 * (1 - t1))
    return math.ceil((root / epsilon) ** 2)


def two_proportion_sample_size(p_a: float, p_b: float, alpha: float, beta: float) -> int:
    """Per-group n for the 2x2 chi-squared test of ``p_a`` against ``p_b``."""
    if not (0 < p_a < 1 and 0 < p_b < 1) or p_a == p_b:
        raise DomainError("need distinct proportions in (0, 1)")
    _z_sum(alpha, beta)
    za = numerics.normal_quantile(1 - alpha / 2)
    zb = numerics.normal_quantile(1 - beta)
    pbar = 0.5 * (p_a + p_b)
    root = za * math.sqrt(2 * pbar * (1 - pbar)) + zb * math.sqrt(p_a * (1 - p_a) + p_b * (1 - p_b))
    return math.ceil((root / (p_a - p_b)) ** 2)


def cumulative_stats(values: Sequence[float]):
    """Running ``(n, mean, sum of squared deviations)`` after each observation.

    Sums are taken about the first observation, which keeps the
    sum-of-squares subtraction well conditioned for shifted data.
    """
    arr = np.asarray(values, dtype=float)
    n = np.arange(1, arr.size + 1, dtype=float)
    if arr.size == 0:
        return n, n.copy(), n.copy()
    shifted = arr - arr[0]
    s1 = np.cumsum(shifted)
    s2 = np.cumsum(shifted * shifted)
    mean = arr[0] + s1 / n
    ss = np.maximum(s2 - s1 * s1 / n, 0.0)
    return n, mean, ss
