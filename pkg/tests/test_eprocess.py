import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeab.eprocess import (EProcess, EValue, Trajectory, Verdict, first_crossing, log_threshold,
                             running_min_pvalue, ville_threshold)
from safeab.errors import DomainError


def test_threshold_is_inverse_alpha():
    assert ville_threshold(0.05) == pytest.approx(20.0)
    assert log_threshold(0.01) == pytest.approx(math.log(100))
    with pytest.raises(DomainError):
        ville_threshold(1.0)


def test_evalue_round_trip_and_product():
    e = EValue.from_value(4.0) * EValue.from_value(0.5)
    assert e.value == pytest.approx(2.0)
    assert EValue.from_value(0.0).log_e == -math.inf
    with pytest.raises(DomainError):
        EValue.from_value(-1.0)


def test_rejection_at_exact_threshold_and_sticky():
    proc = EProcess(alpha=0.05).update(EValue.from_value(20.0), n=3)
    assert proc.rejected_at == 3
    proc = proc.update(EValue.from_value(0.001), n=2)
    assert proc.decision().verdict is Verdict.REJECT_NULL
    assert proc.decision().at_n == 3
    assert proc.n_observations == 5


def test_log_space_never_overflows():
    proc = EProcess(alpha=0.05)
    for _ in range(5):
        proc = proc.update(1e308)
    assert math.isfinite(proc.log_e)
    proc = proc.update(-math.inf)
    assert not math.isnan(proc.log_e)


@given(st.lists(st.floats(-50, 50), max_size=30))
def test_update_many_equals_sum_of_logs(logs):
    proc = EProcess(alpha=0.1).update_many(logs)
    assert proc.log_e == pytest.approx(sum(logs), abs=1e-9)
    running = np.cumsum(logs) if logs else np.array([])
    expected = first_crossing(running, 0.1)
    assert proc.rejected_at == expected


def test_state_dict_round_trip():
    proc = EProcess(alpha=0.05).update_many([0.3, 2.9, 0.1])
    back = EProcess.from_dict(proc.to_dict())
    assert back == proc
    with pytest.raises(DomainError):
        EProcess.from_dict({**proc.to_dict(), "state": "running"})


def test_running_min_pvalue():
    p = running_min_pvalue([0.5, 4.0, 2.0, 0.0, 10.0])
    assert p.tolist() == [1.0, 0.25, 0.25, 0.25, 0.1]


def test_trajectory_csv_layout():
    traj = Trajectory(np.array([1, 2, 3]), np.array([np.nan, 0.5, 3.5]), 0.05)
    buf = io.StringIO()
    traj.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "n,log_e,e,decision"
    assert lines[1] == "1,,,undefined"
    assert lines[3].endswith(",reject")
    assert traj.first_crossing == 3
