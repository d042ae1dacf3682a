"""Two-sided safe t-test.

The e-value for a standardized effect ``delta`` under a symmetric two-point
prior, with the right Haar prior on the common standard deviation, is

    E = exp(-n_d delta^2 / 2) * 1F1((nu + 1)/2; 1/2; a n_d delta^2 / 2)

with ``nu = n + m - 2``, ``n_d = (1/n + 1/m)^-1`` and ``a = t^2 / (nu + t^2)``
for the pooled-variance t statistic. Kummer's transformation turns this
into ``exp(-(1 - a) n_d delta^2 / 2) * 1F1(-nu/2; 1/2; z)`` with
``z = -a n_d delta^2 / 2``, which is the form evaluated in production.
Everything is computed on the log scale.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import interpolate, optimize

from . import classical
from .classical import SummaryStats
from .eprocess import EValue, Trajectory, log_threshold
from .errors import DegenerateError, DomainError, NotReachableError
from .numerics import hyp1f1_log

DEFAULT_DESIGN_CAP = 10 ** 9


@dataclass(frozen=True)
class SafeTConfig:
    delta: float
    alpha: float = 0.05

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise DomainError(f"delta must be a finite positive effect size, got {self.delta!r}")
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")


@dataclass(frozen=True)
class SafeTState:
    """Sufficient statistics of both groups; derived quantities on demand."""

    group_x: SummaryStats
    group_y: SummaryStats

    @property
    def nu(self) -> int:
        return self.group_x.n + self.group_y.n - 2

    @property
    def n_delta(self) -> float:
        return 1.0 / (1.0 / self.group_x.n + 1.0 / self.group_y.n)

    @property
    def pooled_var(self) -> float:
        return classical.pooled_variance(self.group_x, self.group_y)

    @property
    def t(self) -> float:
        sp2 = self.pooled_var
        if sp2 <= 0:
            raise DegenerateError("pooled variance is zero")
        return (self.group_x.mean - self.group_y.mean) * math.sqrt(self.n_delta / sp2)

    @property
    def a(self) -> float:
        t2 = self.t ** 2
        return t2 / (self.nu + t2)

    def z(self, delta: float) -> float:
        return -self.a * self.n_delta * delta * delta / 2.0


def _split_a(t: float, nu: float) -> tuple[float, float]:
    t2 = t * t
    return t2 / (nu + t2), nu / (nu + t2)


def log_e_kummer(a: float, nu: float, n_delta: float, delta: float,
                 one_minus_a: Optional[float] = None) -> float:
    """Kummer-form log e-value from ``a = t^2/(nu + t^2)``.

    The exponent ``(1/a - 1) z`` is written as ``-(1 - a) n_d delta^2 / 2``,
    which is the same number and stays defined at ``a = 0``.
    """
    if one_minus_a is None:
        one_minus_a = 1.0 - a
    half_lam2 = 0.5 * n_delta * delta * delta
    return -one_minus_a * half_lam2 + hyp1f1_log(-0.5 * nu, 0.5, -a * half_lam2)[0]


def log_e_canonical(a: float, nu: float, n_delta: float, delta: float) -> float:
    """Bayes-factor form ``exp(-n_d delta^2/2) 1F1((nu+1)/2; 1/2; a n_d delta^2/2)``."""
    half_lam2 = 0.5 * n_delta * delta * delta
    return -half_lam2 + hyp1f1_log(0.5 * (nu + 1.0), 0.5, a * half_lam2)[0]


def log_e_from_t(t: float, n: int, m: int, delta: float) -> float:
    nu = n + m - 2
    if nu < 1:
        raise DomainError("need n + m >= 3")
    a, one_minus_a = _split_a(t, nu)
    return log_e_kummer(a, nu, 1.0 / (1.0 / n + 1.0 / m), delta, one_minus_a)


def safe_t_evalue(state: SafeTState, config: SafeTConfig) -> EValue:
    """Two-sided safe t e-value from summary statistics."""
    if state.nu < 1:
        raise DomainError("need n + m >= 3 observations")
    a, one_minus_a = _split_a(state.t, state.nu)
    return EValue(log_e_kummer(a, state.nu, state.n_delta, config.delta, one_minus_a))


def safe_t_from_summaries(x: SummaryStats, y: SummaryStats, config: SafeTConfig) -> EValue:
    return safe_t_evalue(SafeTState(x, y), config)


def safe_t_from_raw(x_values: Sequence[float], y_values: Sequence[float],
                    config: SafeTConfig) -> Trajectory:
    """E-value after each new pair of observations.

    Entries stay NaN until both groups have two observations and the
    pooled variance is positive.
    """
    x = np.asarray(x_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.size != y.size:
        raise DomainError("x and y streams must have the same length")
    n, mx, ssx = classical.cumulative_stats(x)
    _, my, ssy = classical.cumulative_stats(y)
    log_e = np.full(n.size, np.nan)
    for i in range(1, n.size):
        k = int(n[i])
        sp2 = (ssx[i] + ssy[i]) / (2 * k - 2)
        if sp2 <= 0:
            continue
        t = (mx[i] - my[i]) / math.sqrt(sp2 * 2.0 / k)
        log_e[i] = log_e_from_t(t, k, k, config.delta)
    return Trajectory(n.astype(int), log_e, config.alpha)


# -- design --------------------------------------------------------------

def log_e_at_design_effect(n: int, delta: float) -> float:
    """Log e-value for ``n`` per group when the observed Cohen's d equals ``delta``."""
    t = delta * math.sqrt(n / 2.0)
    return log_e_from_t(t, n, n, delta)


def design_batch_n(config: SafeTConfig, cap: int = DEFAULT_DESIGN_CAP) -> int:
    """Smallest per-group n whose e-value at observed effect ``delta`` reaches ``1/alpha``.

    The e-value first dips below one and then grows without bound in n,
    so "reached the threshold" is monotone in n and bisection applies.
    """
    target = log_threshold(config.alpha)

    def ok(n):
        return log_e_at_design_effect(n, config.delta) >= target

    # n = 1 per group leaves no degrees of freedom, so the search starts at 2.
    lo, hi = 1, 2
    while not ok(hi):
        if hi >= cap:
            raise NotReachableError(
                f"e-value never reaches 1/alpha below n = {cap} (delta={config.delta})")
        lo, hi = hi, min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def power_stopping_simulation(config: SafeTConfig, true_effect: float, beta: float,
                              n_sims: int, seed: int, **kwargs):
    """Stopping-time summary of the safe t-test on simulated normal streams.

    Thin wrapper over :func:`safeab.simlab.stopping_study`.
    """
    from . import simlab

    study = simlab.stopping_study(
        delta=config.delta, true_effect=true_effect, alpha=config.alpha, beta=beta,
        n_sims=n_sims, seed=seed, tests=("safe_t",), **kwargs)
    return study.summaries["safe_t"]


# -- critical |t| curve for balanced streams ------------------------------------

class CriticalCurve:
    """Critical ``a = t^2/(nu + t^2)`` of the balanced safe t-test, per n.

    For n = m the e-value is increasing in |t|, so ``E >= 1/alpha`` iff
    ``a >= a_crit(n)``. ``a_crit`` is solved exactly on adaptively placed
    nodes and interpolated between them; observations that land within
    ``band`` of the interpolant are re-decided with the exact e-value, so
    decisions match exact evaluation.
    """

    def __init__(self, delta: float, alpha: float, n_max: int, band: float = 1e-6):
        self.delta = float(delta)
        self.alpha = float(alpha)
        self.n_max = int(n_max)
        self.band = band
        self.target = log_threshold(alpha)
        self.n_min = self._first_reachable()
        self._build()

    def _log_e(self, n: int, a: float) -> float:
        nu = 2 * n - 2
        return log_e_kummer(a, nu, n / 2.0, self.delta)

    def _first_reachable(self) -> Optional[int]:
        # The supremum over t (a -> 1) grows with n.
        def ok(n):
            return self._log_e(n, 1.0) >= self.target

        if self.n_max < 2 or not ok(self.n_max):
            return None
        lo, hi = 1, 2
        while not ok(hi):
            lo, hi = hi, min(2 * hi, self.n_max)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
        return hi

    def exact(self, n: int) -> float:
        if self.n_min is None or n < self.n_min:
            return math.inf
        if self._log_e(n, 0.0) >= self.target:
            return 0.0
        return optimize.brentq(lambda a: self._log_e(n, a) - self.target, 0.0, 1.0,
                               xtol=1e-300, rtol=1e-14)

    def _build(self):
        self._spline = None
        if self.n_min is None:
            return
        lo, hi = self.n_min, self.n_max
        grid = np.unique(np.round(np.geomspace(lo, hi, 2 + int(20 * math.log(hi / lo + 1)))))
        values = {int(n): math.log(self.exact(int(n))) for n in grid}
        # Log relative error allowed at interval midpoints.
        tol = self.band / 10.0
        pending = None
        for _ in range(40):
            ns = np.array(sorted(values))
            spline = interpolate.CubicSpline(np.log(ns), [values[n] for n in ns])
            refine = []
            for left, right in zip(ns[:-1], ns[1:]):
                if right - left < 2 or (pending is not None and (left, right) not in pending):
                    continue
                mid = int((left + right) // 2)
                exact = math.log(self.exact(mid))
                if abs(float(spline(math.log(mid))) - exact) > tol:
                    values[mid] = exact
                    refine.append((left, mid))
                    refine.append((mid, right))
            if not refine:
                break
            # Neighbouring intervals shift when the spline changes; recheck them too.
            ns = np.array(sorted(values))
            flagged = set()
            for left, right in refine:
                i = int(np.searchsorted(ns, left))
                for j in range(max(0, i - 2), min(len(ns) - 1, i + 3)):
                    flagged.add((int(ns[j]), int(ns[j + 1])))
            pending = flagged
        ns = np.array(sorted(values))
        self._nodes = ns
        self._spline = interpolate.CubicSpline(np.log(ns), [values[n] for n in ns])

    def a_crit(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        out = np.full(n.shape, np.inf)
        if self._spline is None:
            return out
        ok = n >= self.n_min
        out[ok] = np.exp(self._spline(np.log(n[ok])))
        return out

    def crosses(self, n, a) -> np.ndarray:
        """Exact ``E >= 1/alpha`` decision for balanced counts ``n`` and statistics ``a``."""
        n = np.atleast_1d(np.asarray(n))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        crit = self.a_crit(n)
        hit = a >= crit
        near = np.flatnonzero(np.isfinite(crit) & (np.abs(a - crit) <= self.band * crit))
        for i in near:
            hit[i] = self._log_e(int(n[i]), float(a[i])) >= self.target
        return hit


@functools.lru_cache(maxsize=64)
def critical_curve(delta: float, alpha: float, n_max: int) -> CriticalCurve:
    return CriticalCurve(delta, alpha, n_max)
