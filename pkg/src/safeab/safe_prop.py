"""Safe tests for Bernoulli streams.

Two tests live here. The two-sample test compares success rates of groups
a and b batch by batch with a plug-in likelihood ratio whose parameters are
posterior means learned from earlier batches only. The sample-ratio
mismatch (SRM) monitor is a one-sample test of the assignment share
against its intended value ``theta0``; it integrates the alternative over a
beta prior in closed form, so its product over batches telescopes to a
single beta-binomial marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from .eprocess import Decision, EProcess, EValue
from .errors import DomainError


def _check_prob(name: str, p: float) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {p!r}")


@dataclass(frozen=True)
class BetaPrior:
    alpha1: float
    beta1: float

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.beta1 > 0):
            raise DomainError("beta prior parameters must be > 0")

    @classmethod
    def from_epsilon(cls, epsilon: float, center: float = 0.5) -> "BetaPrior":
        """Prior of total mass ``2 / (10 epsilon^2)`` centred at ``center``.

        At ``center = 0.5`` both parameters equal ``1 / (10 epsilon^2)``.
        """
        if not epsilon > 0:
            raise DomainError("epsilon must be > 0")
        _check_prob("center", center)
        total = 2.0 / (10.0 * epsilon * epsilon)
        return cls(total * center, total * (1.0 - center))

    @property
    def mean(self) -> float:
        return self.alpha1 / (self.alpha1 + self.beta1)

    def posterior(self, successes: int, failures: int) -> "BetaPrior":
        return BetaPrior(self.alpha1 + successes, self.beta1 + failures)

    def to_dict(self) -> dict:
        return {"alpha1": self.alpha1, "beta1": self.beta1}


@dataclass(frozen=True)
class PropBatch:
    n_a: int
    n_a1: int
    n_b: int
    n_b1: int

    def __post_init__(self):
        if not (0 <= self.n_a1 <= self.n_a and 0 <= self.n_b1 <= self.n_b):
            raise DomainError(f"invalid batch counts {self}")


def two_sample_log_evalue(n_a, n_a1, n_b, n_b1, theta_a, theta_b):
    """Log plug-in e-value of one batch; works elementwise on numpy arrays."""
    n_a = np.asarray(n_a, dtype=float)
    n_b = np.asarray(n_b, dtype=float)
    n = n_a + n_b
    safe_n = np.where(n > 0, n, 1.0)
    theta0 = (n_a * theta_a + n_b * theta_b) / safe_n
    n_a0 = n_a - n_a1
    n_b0 = n_b - n_b1
    num = (n_a1 * np.log(theta_a) + n_a0 * np.log1p(-theta_a)
           + n_b1 * np.log(theta_b) + n_b0 * np.log1p(-theta_b))
    den = (n_a1 + n_b1) * np.log(theta0) + (n_a0 + n_b0) * np.log1p(-theta0)
    return np.where(n > 0, num - den, 0.0)


def two_sample_batch_evalue(batch: PropBatch, theta_a: float, theta_b: float) -> EValue:
    _check_prob("theta_a", theta_a)
    _check_prob("theta_b", theta_b)
    if batch.n_a + batch.n_b == 0:
        return EValue(0.0)
    if theta_a == theta_b:
        return EValue(0.0)
    return EValue(float(two_sample_log_evalue(batch.n_a, batch.n_a1, batch.n_b, batch.n_b1,
                                              theta_a, theta_b)))


@dataclass(frozen=True)
class PropState:
    """Posterior counts of both groups plus the running e-process."""

    prior: BetaPrior
    eprocess: EProcess
    a_success: int = 0
    a_failure: int = 0
    b_success: int = 0
    b_failure: int = 0

    @property
    def posterior_a(self) -> BetaPrior:
        return self.prior.posterior(self.a_success, self.a_failure)

    @property
    def posterior_b(self) -> BetaPrior:
        return self.prior.posterior(self.b_success, self.b_failure)

    def update(self, batch: PropBatch) -> "PropState":
        e = two_sample_batch_evalue(batch, self.posterior_a.mean, self.posterior_b.mean)
        return replace(
            self,
            eprocess=self.eprocess.update(e, batch.n_a + batch.n_b),
            a_success=self.a_success + batch.n_a1,
            a_failure=self.a_failure + batch.n_a - batch.n_a1,
            b_success=self.b_success + batch.n_b1,
            b_failure=self.b_failure + batch.n_b - batch.n_b1,
        )


def sequential_two_sample(batches: Iterable[PropBatch], prior: BetaPrior, alpha: float) -> EProcess:
    state = PropState(prior, EProcess(alpha))
    for batch in batches:
        state = state.update(batch)
    return state.eprocess


# -- sample ratio mismatch ------------------------------------------------------

# Bernoulli coefficients B_2k / (2k (2k - 1)) of the Stirling remainder.
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156)
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _stirling_remainder(x):
    """``log Gamma(x) - (x - 1/2) log x + x - log(2 pi)/2`` for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    big = x >= 10.0
    xb = x[big]
    inv2 = 1.0 / (xb * xb)
    acc = np.zeros_like(xb)
    for c in reversed(_STIRLING):
        acc = acc * inv2 + c
    out[big] = acc / xb
    xs = x[~big]
    out[~big] = gammaln(xs) - ((xs - 0.5) * np.log(xs) - xs + _HALF_LOG_2PI)
    return out


def _kl_mass(a, b, d, q, qc):
    """``a log(a/(c q)) + b log(b/(c qc))`` with ``c = a + b``, ``qc = 1 - q``, ``d = a - c q``."""
    c = a + b
    return a * np.log1p(d / (c * q)) + b * np.log1p(-d / (c * qc))


def _log_ratio(q, p, e):
    """``log(q / p)`` given ``e = q - p``, via log1p only near one."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(e) < 0.5 * p, np.log1p(e / p), np.log(q / p))


def srm_log_evalue(successes, total, alpha1, beta1, theta0):
    """Beta-binomial marginal over the ``theta0`` likelihood, on the log scale.

    Accepts numpy arrays; binomial coefficients cancel between the two.
    The log-gamma terms are regrouped around a centre ``q`` so that their
    large parts cancel analytically, leaving two KL-type masses, a plain
    Bernoulli log-likelihood ratio of ``q`` against ``theta0``, small
    logarithms and Stirling remainders. Three centres are tried (``theta0``,
    the prior mean, the posterior mean) and the one with the smallest
    cancelling parts is kept per element.
    """
    s = np.asarray(successes, dtype=float)
    n = np.asarray(total, dtype=float)
    f = n - s
    a, b = float(alpha1), float(beta1)
    c = a + b
    big_a, big_b = a + s, b + f
    big_c = big_a + big_b
    shift = a - c * theta0
    data_shift = s - n * theta0
    zero = np.zeros_like(s)
    # (q, 1 - q, A - C q, a - c q, q - theta0) per centre
    centres = (
        (zero + theta0, zero + (1.0 - theta0), shift + data_shift, zero + shift, zero),
        (zero + a / c, zero + b / c, s - n * (a / c), zero, zero + shift / c),
        (big_a / big_c, big_b / big_c, zero, (a * f - b * s) / big_c,
         (shift + data_shift) / big_c),
    )
    best, best_size = None, None
    for q, qc, d_post, d_prior, e in centres:
        post = _kl_mass(big_a, big_b, d_post, q, qc)
        prior = _kl_mass(a, b, d_prior, q, qc)
        lr = s * _log_ratio(q, theta0, e) + f * _log_ratio(qc, 1.0 - theta0, -e)
        size = np.abs(post) + np.abs(prior) + np.abs(lr)
        val = post - prior + lr
        if best is None:
            best, best_size = val, size
        else:
            pick = size < best_size
            best = np.where(pick, val, best)
            best_size = np.where(pick, size, best_size)
    half = -0.5 * (np.log(big_a / a) + np.log(big_b / b) - np.log(big_c / c))
    rem = (_stirling_remainder(big_a) + _stirling_remainder(big_b) - _stirling_remainder(big_c)
           - (_stirling_remainder(a) + _stirling_remainder(b) - _stirling_remainder(c)))
    out = best + half + rem
    return out if out.ndim else float(out)


def srm_batch_evalue(successes: int, total: int, posterior: BetaPrior, theta0: float) -> EValue:
    _check_prob("theta0", theta0)
    if not 0 <= successes <= total:
        raise DomainError("need 0 <= successes <= total")
    if total == 0:
        return EValue(0.0)
    return EValue(float(srm_log_evalue(successes, total, posterior.alpha1, posterior.beta1, theta0)))


@dataclass(frozen=True)
class SrmConfig:
    """``theta0`` is the intended share of group a (control).

    ``prior=None`` uses the ``1/(10 epsilon^2)`` rule centred at ``theta0``.
    ``adaptive=True`` rebuilds the prior before each batch from the effect
    observed in earlier batches, never tighter than ``epsilon`` implies.
    """

    theta0: float = 0.5
    epsilon: float = 0.01
    alpha: float = 0.01
    prior: Optional[BetaPrior] = None
    adaptive: bool = False

    def __post_init__(self):
        _check_prob("theta0", self.theta0)
        if not self.epsilon > 0:
            raise DomainError("epsilon must be > 0")
        _check_prob("theta0 - epsilon", self.theta0 - self.epsilon)
        _check_prob("theta0 + epsilon", self.theta0 + self.epsilon)
        _check_prob("alpha", self.alpha)

    def base_prior(self) -> BetaPrior:
        if self.prior is not None:
            return self.prior
        return BetaPrior.from_epsilon(self.epsilon, self.theta0)


@dataclass(frozen=True)
class SrmState:
    config: SrmConfig
    eprocess: EProcess
    successes: int = 0
    failures: int = 0

    @classmethod
    def start(cls, config: SrmConfig) -> "SrmState":
        return cls(config, EProcess(config.alpha))

    def prior_for_next(self) -> BetaPrior:
        cfg = self.config
        if not cfg.adaptive or self.successes + self.failures == 0:
            return cfg.base_prior()
        observed = abs(self.successes / (self.successes + self.failures) - cfg.theta0)
        return BetaPrior.from_epsilon(max(observed, cfg.epsilon), cfg.theta0)

    @property
    def posterior(self) -> BetaPrior:
        return self.prior_for_next().posterior(self.successes, self.failures)

    def update(self, n_a: int, n_b: int) -> "SrmState":
        if n_a < 0 or n_b < 0:
            raise DomainError("assignment counts must be >= 0")
        e = srm_batch_evalue(n_a, n_a + n_b, self.posterior, self.config.theta0)
        return replace(self, eprocess=self.eprocess.update(e, n_a + n_b),
                       successes=self.successes + n_a, failures=self.failures + n_b)

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"theta0": cfg.theta0, "epsilon": cfg.epsilon, "alpha": cfg.alpha,
                       "prior": None if cfg.prior is None else cfg.prior.to_dict(),
                       "adaptive": cfg.adaptive},
            "prior": self.config.base_prior().to_dict(),
            "successes": self.successes,
            "failures": self.failures,
            "eprocess": self.eprocess.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SrmState":
        c = d["config"]
        prior = None if c.get("prior") is None else BetaPrior(**c["prior"])
        config = SrmConfig(theta0=float(c["theta0"]), epsilon=float(c["epsilon"]),
                           alpha=float(c["alpha"]), prior=prior, adaptive=bool(c["adaptive"]))
        return cls(config, EProcess.from_dict(d["eprocess"]),
                   int(d["successes"]), int(d["failures"]))


def srm_monitor(stream: Iterable[Tuple[int, int]], config: SrmConfig,
                state: Optional[SrmState] = None) -> Tuple[SrmState, Decision]:
    """Feed ``(assigned_to_a, assigned_to_b)`` batches; returns the final state and decision."""
    state = state or SrmState.start(config)
    for n_a, n_b in stream:
        state = state.update(int(n_a), int(n_b))
    return state, state.eprocess.decision()


def pooled_srm_log_evalue(successes: int, total: int, config: SrmConfig) -> float:
    """Single-batch log e-value of pooled data; equals the telescoped product."""
    p = config.base_prior()
    return float(srm_log_evalue(successes, total, p.alpha1, p.beta1, config.theta0))
