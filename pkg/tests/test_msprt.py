import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeab import msprt, simlab
from safeab.classical import SummaryStats
from safeab.errors import DegenerateError, DomainError
from safeab.msprt import MsprtConfig, MsprtState


def test_no_data_gives_one():
    assert msprt.msprt_lambda(MsprtState(), MsprtConfig(sigma2=1, gamma2=1)).value == 1.0


def test_hand_values():
    cfg = MsprtConfig(sigma2=1.0, gamma2=1.0)
    one = MsprtState(n=1, mean_x=0.2, mean_y=0.2)
    assert msprt.msprt_lambda(one, cfg).value == pytest.approx(math.sqrt(2 / 3), rel=1e-15)
    two = MsprtState(n=2, mean_x=0.0, mean_y=1.0)
    assert msprt.msprt_lambda(two, cfg).value == pytest.approx(0.9079430, abs=1e-7)
    assert msprt.msprt_lambda(two, cfg).value == pytest.approx(math.sqrt(0.5) * math.exp(0.25),
                                                                rel=1e-15)


@settings(max_examples=100)
@given(n=st.integers(1, 10 ** 6), diff=st.floats(-3, 3), theta0=st.floats(-1, 1),
       s2=st.floats(0.1, 10), g2=st.floats(1e-4, 5))
def test_group_exchange_with_negated_null(n, diff, theta0, s2, g2):
    a = msprt.log_lambda(n, diff, s2, g2, theta0)
    b = msprt.log_lambda(n, -diff, s2, g2, -theta0)
    assert a == b


def test_increasing_in_effect():
    diffs = np.linspace(0, 2, 200)
    vals = msprt.log_lambda(50, diffs, 1.0, 0.3)
    assert np.all(np.diff(vals) > 0)


def test_log_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 500))
        d, s2, g2 = rng.normal(0, 0.3), rng.uniform(0.5, 2), rng.uniform(0.01, 1)
        direct = math.sqrt(2 * s2 / (2 * s2 + n * g2)) * math.exp(
            n * n * g2 * d * d / (4 * s2 * (2 * s2 + n * g2)))
        assert math.exp(float(msprt.log_lambda(n, d, s2, g2))) == pytest.approx(direct, rel=1e-12)


def test_select_gamma2():
    x = SummaryStats(50, 1.0, 1.0)
    y = SummaryStats(50, 0.0, 1.0)
    assert msprt.select_gamma2(x, y) == pytest.approx(1.0)
    x = SummaryStats(50, 0.02, 4.0)
    y = SummaryStats(50, 0.0, 4.0)
    assert msprt.select_gamma2(x, y) == pytest.approx(0.04)
    same = SummaryStats(50, 0.0, 4.0)
    with pytest.raises(DegenerateError):
        msprt.select_gamma2(same, same)
    cfg = MsprtConfig(default_gamma2=0.7)
    assert msprt.gamma2_or_default(same, same, cfg) == 0.7


def test_config_validation():
    with pytest.raises(DomainError):
        MsprtConfig(sigma2=0.0)
    with pytest.raises(DomainError):
        msprt.msprt_lambda(MsprtState(n=3, pooled_var=0.0, gamma2=1.0), MsprtConfig())


def test_stream_freezes_gamma_after_warmup():
    rng = np.random.default_rng(6)
    x, y = rng.normal(0, 1, 400), rng.normal(0.5, 1, 400)
    res = msprt.msprt_stream(x, y, MsprtConfig(warmup_n=100), alpha=0.05)
    expected = msprt.select_gamma2(SummaryStats.from_values(x[:100]), SummaryStats.from_values(y[:100]))
    assert res.gamma2 == pytest.approx(expected, rel=1e-14)
    assert np.isnan(res.trajectory.log_e[:99]).all()
    assert not np.isnan(res.trajectory.log_e[99:]).any()
    assert np.all(np.diff(res.p_values) <= 0)
    if res.eprocess.rejected:
        assert res.p_values[res.eprocess.rejected_at - 1] <= 0.05


def test_stream_state_update_matches_batch():
    rng = np.random.default_rng(7)
    x, y = rng.normal(0, 1, 30), rng.normal(0, 2, 30)
    state = MsprtState()
    for a, b in zip(x, y):
        state = msprt.update_state(state, a, b)
    sx, sy = SummaryStats.from_values(x), SummaryStats.from_values(y)
    assert state.mean_x == pytest.approx(sx.mean)
    assert state.pooled_var == pytest.approx((sx.var + sy.var) / 2, rel=1e-12)


def test_known_variance_mean_under_null_quick():
    mean, se = simlab.mean_evalue_at_n("msprt", 100, 2000, seed=3)
    assert mean <= 1 + 3 * se
