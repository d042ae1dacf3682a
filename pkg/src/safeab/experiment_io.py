"""Ingestion, day-by-day replay and persistence for real experiment data.

Snapshot files hold cumulative per-day summary statistics for each
(experiment, metric, group). Replays recompute every sequential statistic
on the cumulative data of each day and flag a rejection if it ever reached
``1/alpha``. That running maximum over daily recomputations is a
*semi-sequential* procedure, not a strict e-process, because consecutive
days share data. A strict mode is available for Bernoulli metrics, where
daily increments can be recovered and multiplied as independent batches.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
import tempfile
import threading
import urllib.parse
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import classical, msprt, safe_prop, safe_t
from .classical import SummaryStats
from .eprocess import EProcess, log_threshold
from .errors import DegenerateError, DomainError, SchemaError, ValidationError

log = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ("experiment_id", "metric_id", "day", "group", "n", "mean", "stddev")
ASSIGNMENT_COLUMNS = ("experiment_id", "day", "n_control", "n_treatment")
VERDICT_COLUMNS = ("experiment_id", "metric_id", "variant", "test", "decision",
                   "first_rejection_day", "final_statistic", "max_statistic", "statistic",
                   "days", "skipped_days")
SCHEMA_VERSION = 1
CONTROL = "control"
SEQUENTIAL_TESTS = ("safe_t", "msprt")
ALL_TESTS = ("safe_t", "msprt", "classical_t")


@dataclass(frozen=True)
class SnapshotRecord:
    experiment_id: str
    metric_id: str
    day: dt.date
    group: str
    n: int
    mean: float
    stddev: float

    @property
    def stats(self) -> SummaryStats:
        return SummaryStats.from_stddev(self.n, self.mean, self.stddev)


@dataclass(frozen=True)
class AssignmentRecord:
    """Assignments made on ``day`` (daily increments, not running totals)."""

    experiment_id: str
    day: dt.date
    n_control: int
    n_treatment: int


@dataclass(frozen=True)
class DayPair:
    day: dt.date
    control: SummaryStats
    treatment: SummaryStats


@dataclass
class ExperimentVerdict:
    test: str
    decision: str
    first_rejection_day: Optional[dt.date]
    final_statistic: float
    max_statistic: float
    statistic: str
    days: int
    skipped_days: int = 0

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"


def _is_treatment(group: str) -> bool:
    return group == "treatment" or group.startswith("treatment_") or group.startswith("treatment-")


def _check_header(reader: csv.DictReader, expected: Sequence[str]) -> None:
    got = reader.fieldnames or []
    missing = [c for c in expected if c not in got]
    if missing:
        raise ValidationError(f"missing column(s): {', '.join(missing)}",
                              [(1, f"header lacks {c}") for c in missing])


def _parse_int(text: str, name: str) -> int:
    v = float(text)
    if v != math.floor(v) or v < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {text!r}")
    return int(v)


def parse_snapshots(fh) -> List[SnapshotRecord]:
    """Read and validate a snapshot CSV.

    Row numbers in error reports count the header as row 1. Allowed groups
    are ``control`` and ``treatment`` (or ``treatment_<label>`` for extra
    variants, each compared against the shared control).
    """
    reader = csv.DictReader(fh)
    _check_header(reader, SNAPSHOT_COLUMNS)
    records: List[Tuple[int, SnapshotRecord]] = []
    problems: List[Tuple[int, str]] = []
    for row_no, row in enumerate(reader, start=2):
        try:
            group = row["group"].strip()
            if group != CONTROL and not _is_treatment(group):
                raise ValueError(f"unknown group {group!r}")
            rec = SnapshotRecord(
                experiment_id=row["experiment_id"].strip(),
                metric_id=row["metric_id"].strip(),
                day=dt.date.fromisoformat(row["day"].strip()),
                group=group,
                n=_parse_int(row["n"], "n"),
                mean=float(row["mean"]),
                stddev=float(row["stddev"]),
            )
            if not (math.isfinite(rec.mean) and math.isfinite(rec.stddev)) or rec.stddev < 0:
                raise ValueError("mean must be finite and stddev finite and >= 0")
            if not rec.experiment_id or not rec.metric_id:
                raise ValueError("experiment_id and metric_id must be non-empty")
        except (ValueError, TypeError, AttributeError) as exc:
            problems.append((row_no, str(exc)))
            continue
        records.append((row_no, rec))

    seen: Dict[tuple, int] = {}
    by_series: Dict[tuple, List[Tuple[int, SnapshotRecord]]] = {}
    for row_no, rec in records:
        key = (rec.experiment_id, rec.metric_id, rec.day, rec.group)
        if key in seen:
            problems.append((row_no, f"duplicate of row {seen[key]}"))
            continue
        seen[key] = row_no
        by_series.setdefault((rec.experiment_id, rec.metric_id, rec.group), []).append((row_no, rec))
    for series in by_series.values():
        series.sort(key=lambda item: item[1].day)
        for (_, prev), (row_no, rec) in zip(series, series[1:]):
            if rec.n < prev.n:
                problems.append((row_no, f"n decreased from {prev.n} to {rec.n} "
                                         f"on {rec.day} (snapshots are cumulative)"))
    days: Dict[tuple, set] = {}
    for row_no, rec in records:
        days.setdefault((rec.experiment_id, rec.metric_id, rec.day), set()).add(rec.group)
    for row_no, rec in records:
        groups = days[(rec.experiment_id, rec.metric_id, rec.day)]
        if rec.group == CONTROL and not any(_is_treatment(g) for g in groups):
            problems.append((row_no, f"control on {rec.day} has no treatment row"))
        elif rec.group != CONTROL and CONTROL not in groups:
            problems.append((row_no, f"{rec.group} on {rec.day} has no control row"))
    if problems:
        problems.sort()
        raise ValidationError(f"{len(problems)} problem(s) in snapshot file", problems)
    return [rec for _, rec in records]


def group_snapshots(records: Iterable[SnapshotRecord]) -> Dict[Tuple[str, str, str], List[DayPair]]:
    """Day pairs per (experiment, metric, treatment variant), sorted by day."""
    control: Dict[tuple, SnapshotRecord] = {}
    treat: Dict[tuple, Dict[dt.date, SnapshotRecord]] = {}
    for rec in records:
        if rec.group == CONTROL:
            control[(rec.experiment_id, rec.metric_id, rec.day)] = rec
        else:
            key = (rec.experiment_id, rec.metric_id, rec.group)
            treat.setdefault(key, {})[rec.day] = rec
    out = {}
    for key in sorted(treat):
        exp, metric, variant = key
        pairs = []
        for day in sorted(treat[key]):
            c = control.get((exp, metric, day))
            if c is None:
                raise ValidationError("missing control row", [(0, f"{exp}/{metric} {day}")])
            pairs.append(DayPair(day, c.stats, treat[key][day].stats))
        out[key] = pairs
    return out


# -- replays ------------------------------------------------------------------------

def group_sequential_replay(pairs: Sequence[DayPair], tests: Sequence[str] = ALL_TESTS,
                            alpha: float = 0.05, delta: float = 0.1,
                            msprt_config: Optional[msprt.MsprtConfig] = None
                            ) -> Dict[str, ExperimentVerdict]:
    """Semi-sequential replay of cumulative daily snapshots.

    Sequential tests are recomputed each day and reject if the daily value
    ever reaches ``1/alpha``. The classical t-test runs on the final day
    only. The mSPRT mixing variance comes from the first usable day unless
    ``msprt_config.gamma2`` is set, and its pair count is ``2 n_d``.
    """
    if not pairs:
        raise DomainError("replay needs at least one complete day")
    for t in tests:
        if t not in ALL_TESTS:
            raise DomainError(f"unknown test {t!r}")
    pairs = sorted(pairs, key=lambda p: p.day)
    target = log_threshold(alpha)
    mcfg = msprt_config or msprt.MsprtConfig()
    verdicts = {}
    for test in tests:
        if test == "classical_t":
            last = pairs[-1]
            try:
                rep = classical.welch_t(last.treatment, last.control)
                p = rep.p_value
            except (DegenerateError, DomainError) as exc:
                log.warning("classical t skipped on %s: %s", last.day, exc)
                p = 1.0
            rejected = p < alpha
            verdicts[test] = ExperimentVerdict(test, "reject" if rejected else "accept",
                                               last.day if rejected else None, p, p,
                                               "p_value", len(pairs))
            continue
        first_day = None
        final = math.nan
        best = -math.inf
        skipped = 0
        gamma2 = mcfg.gamma2
        for pair in pairs:
            try:
                if test == "safe_t":
                    le = safe_t.safe_t_from_summaries(pair.treatment, pair.control,
                                                      safe_t.SafeTConfig(delta, alpha)).log_e
                else:
                    if gamma2 is None:
                        gamma2 = msprt.gamma2_or_default(pair.control, pair.treatment, mcfg)
                    state = msprt.MsprtState.from_summaries(pair.control, pair.treatment, gamma2)
                    le = msprt.msprt_lambda(state, mcfg).log_e
            except (DegenerateError, DomainError) as exc:
                log.warning("%s skipped on %s: %s", test, pair.day, exc)
                skipped += 1
                continue
            final = le
            best = max(best, le)
            if first_day is None and le >= target:
                first_day = pair.day
        verdicts[test] = ExperimentVerdict(
            test, "reject" if first_day else "accept", first_day,
            _exp(final), _exp(best), "e_value", len(pairs), skipped)
    return verdicts


def _exp(log_e: float) -> float:
    if math.isnan(log_e):
        return math.nan
    if log_e == -math.inf:
        return 0.0
    return math.exp(min(log_e, 709.0))


def bernoulli_increments(pairs: Sequence[DayPair]) -> List[safe_prop.PropBatch]:
    """Daily batches (group a = control) recovered from cumulative proportions."""
    batches = []
    prev = (0, 0, 0, 0)
    for pair in sorted(pairs, key=lambda p: p.day):
        cur = []
        for s in (pair.control, pair.treatment):
            succ = round(s.n * s.mean)
            if abs(succ - s.n * s.mean) > 1e-6 * max(1, s.n) or not 0 <= succ <= s.n:
                raise DomainError(f"mean {s.mean} on {pair.day} is not a proportion of n={s.n}")
            cur += [s.n, succ]
        inc = [c - p for c, p in zip(cur, prev)]
        if min(inc) < 0 or inc[1] > inc[0] or inc[3] > inc[2]:
            raise DomainError(f"cumulative counts decrease on {pair.day}")
        batches.append(safe_prop.PropBatch(inc[0], inc[1], inc[2], inc[3]))
        prev = tuple(cur)
    return batches


def strict_bernoulli_replay(pairs: Sequence[DayPair], prior: safe_prop.BetaPrior,
                            alpha: float = 0.05) -> ExperimentVerdict:
    """Strict e-process over daily Bernoulli increments (two-sample proportion test)."""
    pairs = sorted(pairs, key=lambda p: p.day)
    state = safe_prop.PropState(prior, EProcess(alpha))
    first_day = None
    best = -math.inf
    for pair, batch in zip(pairs, bernoulli_increments(pairs)):
        state = state.update(batch)
        best = max(best, state.eprocess.log_e)
        if first_day is None and state.eprocess.rejected:
            first_day = pair.day
    return ExperimentVerdict("safe_prop", "reject" if first_day else "accept", first_day,
                             _exp(state.eprocess.log_e), _exp(best), "e_value", len(pairs))


def parse_assignments(fh, cumulative: bool = False) -> List[AssignmentRecord]:
    """Read an assignment CSV; ``cumulative=True`` differences running totals per experiment."""
    reader = csv.DictReader(fh)
    _check_header(reader, ASSIGNMENT_COLUMNS)
    rows: List[Tuple[int, AssignmentRecord]] = []
    problems: List[Tuple[int, str]] = []
    for row_no, row in enumerate(reader, start=2):
        try:
            rec = AssignmentRecord(
                experiment_id=row["experiment_id"].strip(),
                day=dt.date.fromisoformat(row["day"].strip()),
                n_control=_parse_int(row["n_control"], "n_control"),
                n_treatment=_parse_int(row["n_treatment"], "n_treatment"),
            )
            if not rec.experiment_id:
                raise ValueError("experiment_id must be non-empty")
        except (ValueError, TypeError, AttributeError) as exc:
            problems.append((row_no, str(exc)))
            continue
        rows.append((row_no, rec))
    seen: Dict[tuple, int] = {}
    for row_no, rec in rows:
        key = (rec.experiment_id, rec.day)
        if key in seen:
            problems.append((row_no, f"duplicate of row {seen[key]}"))
        seen[key] = row_no
    if problems:
        raise ValidationError(f"{len(problems)} problem(s) in assignment file", sorted(problems))
    rows.sort(key=lambda item: (item[1].experiment_id, item[1].day))
    if not cumulative:
        return [rec for _, rec in rows]
    out = []
    prev: Dict[str, AssignmentRecord] = {}
    for row_no, rec in rows:
        p = prev.get(rec.experiment_id)
        dc = rec.n_control - (p.n_control if p else 0)
        dtr = rec.n_treatment - (p.n_treatment if p else 0)
        if dc < 0 or dtr < 0:
            problems.append((row_no, "cumulative assignment counts decreased"))
        out.append(AssignmentRecord(rec.experiment_id, rec.day, max(dc, 0), max(dtr, 0)))
        prev[rec.experiment_id] = rec
    if problems:
        raise ValidationError(f"{len(problems)} problem(s) in assignment file", sorted(problems))
    return out


def group_assignments(records: Iterable[AssignmentRecord]) -> Dict[str, List[AssignmentRecord]]:
    out: Dict[str, List[AssignmentRecord]] = {}
    for rec in records:
        out.setdefault(rec.experiment_id, []).append(rec)
    return {k: sorted(v, key=lambda r: r.day) for k, v in sorted(out.items())}


def srm_replay(records: Sequence[AssignmentRecord], config: safe_prop.SrmConfig,
               state: Optional[safe_prop.SrmState] = None
               ) -> Tuple[ExperimentVerdict, ExperimentVerdict, safe_prop.SrmState]:
    """Safe SRM monitor over daily increments and a final-day chi-squared test.

    ``theta0`` is the intended share of control. Passing ``state`` resumes
    a monitor saved earlier; the chi-squared test then covers only the new
    records.
    """
    records = sorted(records, key=lambda r: r.day)
    if not records:
        raise DomainError("no assignment records")
    state = state or safe_prop.SrmState.start(config)
    first_day = None
    already = state.eprocess.rejected
    best = state.eprocess.log_e
    for rec in records:
        state = state.update(rec.n_control, rec.n_treatment)
        best = max(best, state.eprocess.log_e)
        if first_day is None and not already and state.eprocess.rejected:
            first_day = rec.day
    safe_v = ExperimentVerdict("safe_srm", "reject" if state.eprocess.rejected else "accept",
                               first_day, _exp(state.eprocess.log_e), _exp(best), "e_value",
                               len(records))
    total_c = sum(r.n_control for r in records)
    total_t = sum(r.n_treatment for r in records)
    if total_c + total_t == 0:
        p = 1.0
    else:
        p = classical.srm_chi2_test(total_c, total_t, config.theta0).p_value
    chi_rej = p < config.alpha
    chi_v = ExperimentVerdict("chi2", "reject" if chi_rej else "accept",
                              records[-1].day if chi_rej else None, p, p, "p_value", len(records))
    return safe_v, chi_v, state


# -- state store ------------------------------------------------------------------

class StateStore:
    """One JSON document per experiment id in ``directory``.

    Writes go to a temporary file that is renamed into place, so a reader
    never sees a half-written document.
    """

    _locks: Dict[str, threading.Lock] = {}
    _guard = threading.Lock()

    def __init__(self, directory: str):
        self.directory = directory

    def path(self, experiment_id: str) -> str:
        return os.path.join(self.directory, urllib.parse.quote(experiment_id, safe="") + ".json")

    def _lock(self, experiment_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(os.path.abspath(self.path(experiment_id)), threading.Lock())

    def save(self, experiment_id: str, kind: str, state: dict) -> str:
        os.makedirs(self.directory, exist_ok=True)
        doc = {"schema_version": SCHEMA_VERSION, "experiment_id": experiment_id,
               "kind": kind, "state": state}
        text = json.dumps(doc, sort_keys=True, indent=2)
        target = self.path(experiment_id)
        with self._lock(experiment_id):
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".json")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return target

    def load(self, experiment_id: str, kind: Optional[str] = None) -> Optional[dict]:
        """Stored state, or ``None`` if nothing was saved for this id."""
        target = self.path(experiment_id)
        if not os.path.exists(target):
            return None
        try:
            with open(target, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError(f"corrupted state file {target}: {exc}") from None
        if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"state file {target} has schema_version "
                              f"{doc.get('schema_version') if isinstance(doc, dict) else None!r}, "
                              f"expected {SCHEMA_VERSION}")
        if kind is not None and doc.get("kind") != kind:
            raise SchemaError(f"state file {target} holds {doc.get('kind')!r}, expected {kind!r}")
        if "state" not in doc:
            raise SchemaError(f"state file {target} has no state")
        return doc["state"]


def save_srm_state(store: StateStore, experiment_id: str, state: safe_prop.SrmState) -> str:
    return store.save(experiment_id, "srm", state.to_dict())


def load_srm_state(store: StateStore, experiment_id: str) -> Optional[safe_prop.SrmState]:
    d = store.load(experiment_id, "srm")
    if d is None:
        return None
    try:
        return safe_prop.SrmState.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed srm state for {experiment_id}: {exc}") from None


def save_prop_state(store: StateStore, experiment_id: str, state: safe_prop.PropState) -> str:
    return store.save(experiment_id, "safe_prop", {
        "prior": state.prior.to_dict(), "eprocess": state.eprocess.to_dict(),
        "a_success": state.a_success, "a_failure": state.a_failure,
        "b_success": state.b_success, "b_failure": state.b_failure})


def load_prop_state(store: StateStore, experiment_id: str) -> Optional[safe_prop.PropState]:
    d = store.load(experiment_id, "safe_prop")
    if d is None:
        return None
    try:
        return safe_prop.PropState(safe_prop.BetaPrior(**d["prior"]),
                                   EProcess.from_dict(d["eprocess"]),
                                   int(d["a_success"]), int(d["a_failure"]),
                                   int(d["b_success"]), int(d["b_failure"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed proportion state for {experiment_id}: {exc}") from None


def verdict_row(experiment_id: str, metric_id: str, variant: str, v: ExperimentVerdict) -> dict:
    return {
        "experiment_id": experiment_id, "metric_id": metric_id, "variant": variant,
        "test": v.test, "decision": v.decision,
        "first_rejection_day": v.first_rejection_day.isoformat() if v.first_rejection_day else "",
        "final_statistic": v.final_statistic, "max_statistic": v.max_statistic,
        "statistic": v.statistic, "days": v.days, "skipped_days": v.skipped_days,
    }
