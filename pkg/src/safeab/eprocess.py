"""E-values, e-processes and the threshold decision rule.

Evidence is carried as a natural log throughout: products of e-values
become sums and long streams never overflow. A process rejects the null
the first time its running evidence reaches ``1/alpha`` and stays
rejected from then on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError

# Saturation bound for log-evidence; keeps -inf + inf from ever producing NaN.
LOG_E_CAP = 1e300


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def ville_threshold(alpha: float) -> float:
    """Rejection threshold ``1/alpha`` for a test supermartingale."""
    return 1.0 / _check_alpha(alpha)


def log_threshold(alpha: float) -> float:
    return -math.log(_check_alpha(alpha))


@dataclass(frozen=True)
class EValue:
    """A nonnegative e-value stored as its natural log."""

    log_e: float

    @property
    def value(self) -> float:
        if self.log_e > 709.78:
            return math.inf
        return math.exp(self.log_e)

    @classmethod
    def from_value(cls, e: float) -> "EValue":
        if e < 0 or math.isnan(e):
            raise DomainError(f"e-values are nonnegative, got {e!r}")
        return cls(math.log(e) if e > 0 else -math.inf)

    def __mul__(self, other: "EValue") -> "EValue":
        return EValue(_saturate(self.log_e + other.log_e))


class Verdict(str, enum.Enum):
    REJECT_NULL = "reject"
    ACCEPT_NULL = "accept"
    CONTINUE = "continue"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    at_n: int


def _saturate(x: float) -> float:
    if math.isnan(x):
        raise DomainError("log e-value is NaN")
    return min(max(x, -LOG_E_CAP), LOG_E_CAP)


@dataclass(frozen=True)
class EProcess:
    """Running product of per-segment e-values.

    ``rejected_at`` is the observation count at which the running
    evidence first reached ``1/alpha``; ``None`` while still running.
    """

    alpha: float
    log_e: float = 0.0
    n_observations: int = 0
    rejected_at: Optional[int] = None

    def __post_init__(self):
        _check_alpha(self.alpha)

    @property
    def rejected(self) -> bool:
        return self.rejected_at is not None

    @property
    def state(self) -> str:
        return "rejected" if self.rejected else "running"

    @property
    def log_threshold(self) -> float:
        return -math.log(self.alpha)

    @property
    def e_value(self) -> EValue:
        return EValue(self.log_e)

    def update(self, segment, n: int = 1) -> "EProcess":
        """Multiply in one segment's e-value covering ``n`` observations.

        ``segment`` may be an :class:`EValue` or a plain log e-value.
        """
        seg = segment.log_e if isinstance(segment, EValue) else float(segment)
        log_e = _saturate(self.log_e + _saturate(seg))
        count = self.n_observations + int(n)
        rejected_at = self.rejected_at
        if rejected_at is None and log_e >= self.log_threshold:
            rejected_at = count
        return replace(self, log_e=log_e, n_observations=count, rejected_at=rejected_at)

    def update_many(self, segments: Iterable, counts: Optional[Iterable[int]] = None) -> "EProcess":
        proc = self
        if counts is None:
            for seg in segments:
                proc = proc.update(seg)
        else:
            for seg, n in zip(segments, counts):
                proc = proc.update(seg, n)
        return proc

    def decision(self) -> Decision:
        # Acceptance is never issued here; a harness does that at its horizon.
        if self.rejected:
            return Decision(Verdict.REJECT_NULL, self.rejected_at)
        return Decision(Verdict.CONTINUE, self.n_observations)

    def to_dict(self) -> dict:
        return {
            "log_e": self.log_e,
            "n": self.n_observations,
            "alpha": self.alpha,
            "state": self.state,
            "rejected_at": self.rejected_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EProcess":
        state = d["state"]
        rejected_at = d.get("rejected_at")
        if state not in ("running", "rejected") or (state == "rejected") != (rejected_at is not None):
            raise DomainError(f"inconsistent e-process state {state!r}")
        return cls(alpha=float(d["alpha"]), log_e=float(d["log_e"]),
                   n_observations=int(d["n"]),
                   rejected_at=None if rejected_at is None else int(rejected_at))


def running_min_pvalue(lambdas: Sequence[float]) -> np.ndarray:
    """Anytime p-values ``p_n = min(p_{n-1}, 1/Lambda_n)`` starting from ``p_0 = 1``.

    A zero statistic leaves the p-value where it was.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.size == 0:
        return np.empty(0)
    if np.any(~(lam >= 0)):
        raise DomainError("statistics must be nonnegative")
    with np.errstate(divide="ignore"):
        inv = np.where(lam > 0, 1.0 / lam, np.inf)
    return np.minimum.accumulate(np.minimum(inv, 1.0))


def first_crossing(log_e: Sequence[float], alpha: float, start: int = 1) -> Optional[int]:
    """Index (offset by ``start``) of the first ``log_e >= ln(1/alpha)``, else ``None``."""
    arr = np.asarray(log_e, dtype=float)
    hits = np.flatnonzero(arr >= log_threshold(alpha))
    return int(hits[0]) + start if hits.size else None


TRAJECTORY_COLUMNS = ("n", "log_e", "e", "decision")


@dataclass
class Trajectory:
    """Log e-values recorded after each update of a stream.

    ``log_e`` holds NaN where the statistic is undefined (too little data
    or zero variance). Decisions are sticky once the threshold is hit.
    """

    n: np.ndarray
    log_e: np.ndarray
    alpha: float

    @property
    def first_crossing(self) -> Optional[int]:
        hits = np.flatnonzero(self.log_e >= log_threshold(self.alpha))
        return int(self.n[hits[0]]) if hits.size else None

    def decisions(self) -> list[str]:
        crossed = self.first_crossing
        out = []
        for n, le in zip(self.n, self.log_e):
            if crossed is not None and n >= crossed:
                out.append(Verdict.REJECT_NULL.value)
            elif math.isnan(le):
                out.append("undefined")
            else:
                out.append(Verdict.CONTINUE.value)
        return out

    def rows(self):
        for n, le, dec in zip(self.n, self.log_e, self.decisions()):
            if math.isnan(le):
                yield (int(n), "", "", dec)
            else:
                yield (int(n), repr(float(le)), repr(EValue(float(le)).value), dec)

    def write_csv(self, fh) -> None:
        import csv

        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(self.rows())
