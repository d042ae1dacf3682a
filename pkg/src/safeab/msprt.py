"""Two-sample mixture SPRT with a normal mixing distribution.

For paired streams with ``n`` observations per group the statistic is

    Lambda_n = sqrt(2 s2 / (2 s2 + n g2))
               * exp(n^2 g2 (ybar - xbar - theta0)^2 / (4 s2 (2 s2 + n g2)))

where ``s2`` is the observation variance and ``g2`` the mixing variance.
The mixing variance is picked once from a warmup prefix as
``|d| * s_p^2`` (Cohen's d times the pooled variance) and then frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import classical
from .classical import SummaryStats
from .eprocess import EProcess, EValue, Trajectory, first_crossing, running_min_pvalue
from .errors import DegenerateError, DomainError

DEFAULT_WARMUP = 100


@dataclass(frozen=True)
class MsprtConfig:
    """``sigma2=None`` plugs in the running pooled variance; ``gamma2=None`` selects it on warmup."""

    theta0: float = 0.0
    sigma2: Optional[float] = None
    gamma2: Optional[float] = None
    warmup_n: int = DEFAULT_WARMUP
    default_gamma2: float = 1.0

    def __post_init__(self):
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise DomainError("sigma2 must be > 0")
        if self.gamma2 is not None and not self.gamma2 > 0:
            raise DomainError("gamma2 must be > 0")
        if not self.default_gamma2 > 0:
            raise DomainError("default_gamma2 must be > 0")
        if self.warmup_n < 2:
            raise DomainError("warmup_n must be >= 2")


@dataclass(frozen=True)
class MsprtState:
    """Paired-stream summary: count, running means and pooled variance."""

    n: int = 0
    mean_x: float = 0.0
    mean_y: float = 0.0
    pooled_var: float = 0.0
    gamma2: Optional[float] = None

    @classmethod
    def from_summaries(cls, x: SummaryStats, y: SummaryStats,
                       gamma2: Optional[float] = None) -> "MsprtState":
        # Unequal snapshot groups are mapped to the harmonic pair count 2 n_d.
        n = 2.0 / (1.0 / x.n + 1.0 / y.n)
        sp2 = classical.pooled_variance(x, y) if x.n + y.n > 2 else 0.0
        return cls(n=n, mean_x=x.mean, mean_y=y.mean, pooled_var=sp2, gamma2=gamma2)


def log_lambda(n, diff, sigma2, gamma2, theta0: float = 0.0):
    """Vectorized log statistic; ``diff`` is ``ybar - xbar``."""
    n = np.asarray(n, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    g2 = np.asarray(gamma2, dtype=float)
    denom = 2.0 * s2 + n * g2
    shift = np.asarray(diff, dtype=float) - theta0
    return 0.5 * np.log(2.0 * s2 / denom) + n * n * g2 * shift * shift / (4.0 * s2 * denom)


def msprt_lambda(state: MsprtState, config: MsprtConfig) -> EValue:
    if state.n <= 0:
        return EValue(0.0)
    sigma2 = config.sigma2 if config.sigma2 is not None else state.pooled_var
    if not sigma2 > 0:
        raise DomainError("sigma2 must be > 0")
    gamma2 = config.gamma2 if config.gamma2 is not None else state.gamma2
    if gamma2 is None:
        raise DomainError("gamma2 has not been fixed yet")
    return EValue(float(log_lambda(state.n, state.mean_y - state.mean_x, sigma2, gamma2,
                                   config.theta0)))


def select_gamma2(warmup_x: SummaryStats, warmup_y: SummaryStats) -> float:
    """Mixing variance ``|d| * s_p^2`` from a warmup prefix."""
    sp2 = classical.pooled_variance(warmup_x, warmup_y)
    if sp2 <= 0:
        raise DegenerateError("warmup pooled variance is zero")
    d = classical.cohens_d(warmup_x, warmup_y)
    if d == 0:
        raise DegenerateError("warmup effect is zero")
    return abs(d) * sp2


def gamma2_or_default(warmup_x: SummaryStats, warmup_y: SummaryStats, config: MsprtConfig) -> float:
    try:
        return select_gamma2(warmup_x, warmup_y)
    except DegenerateError:
        return config.default_gamma2


@dataclass(frozen=True)
class MsprtResult:
    eprocess: EProcess
    trajectory: Trajectory
    p_values: np.ndarray
    gamma2: Optional[float]


def msprt_stream(x_values: Sequence[float], y_values: Sequence[float], config: MsprtConfig,
                 alpha: float) -> MsprtResult:
    """Run the test over paired streams, one pair per step.

    The statistic is undefined (NaN, p-value unchanged) until the mixing
    variance is fixed and, in plug-in mode, the pooled variance is positive.
    """
    x = np.asarray(x_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.size != y.size:
        raise DomainError("x and y streams must have the same length")
    n, mx, ssx = classical.cumulative_stats(x)
    _, my, ssy = classical.cumulative_stats(y)
    gamma2 = config.gamma2
    start = 0
    if gamma2 is None:
        w = config.warmup_n
        if x.size >= w:
            gamma2 = gamma2_or_default(SummaryStats.from_values(x[:w]),
                                       SummaryStats.from_values(y[:w]), config)
        start = w - 1
    log_l = np.full(n.size, np.nan)
    if gamma2 is not None and n.size > start:
        k = n[start:]
        if config.sigma2 is not None:
            s2 = np.full(k.size, config.sigma2)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                s2 = (ssx[start:] + ssy[start:]) / (2 * k - 2)
        ok = s2 > 0
        vals = np.full(k.size, np.nan)
        vals[ok] = log_lambda(k[ok], my[start:][ok] - mx[start:][ok], s2[ok], gamma2,
                              config.theta0)
        log_l[start:] = vals
    traj = Trajectory(n.astype(int), log_l, alpha)
    lam = np.where(np.isnan(log_l), 0.0, np.exp(np.minimum(log_l, 700.0)))
    p_values = running_min_pvalue(lam)
    crossed = first_crossing(np.nan_to_num(log_l, nan=-np.inf), alpha)
    last = log_l[~np.isnan(log_l)]
    proc = EProcess(alpha=alpha, log_e=float(last[-1]) if last.size else 0.0,
                    n_observations=int(n.size), rejected_at=crossed)
    return MsprtResult(proc, traj, p_values, gamma2)


def update_state(state: MsprtState, x: float, y: float) -> MsprtState:
    """Add one pair with Welford updates of both means and the pooled sum of squares."""
    n = state.n + 1
    ss = state.pooled_var * max(2 * state.n - 2, 0)
    dx = x - state.mean_x
    dy = y - state.mean_y
    mean_x = state.mean_x + dx / n
    mean_y = state.mean_y + dy / n
    ss += dx * (x - mean_x) + dy * (y - mean_y)
    pooled = ss / (2 * n - 2) if n > 1 else 0.0
    return replace(state, n=n, mean_x=mean_x, mean_y=mean_y, pooled_var=pooled)
