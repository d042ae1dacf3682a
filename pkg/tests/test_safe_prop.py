import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeab import classical, simlab
from safeab.eprocess import EProcess, Verdict
from safeab.errors import DomainError
from safeab.safe_prop import (BetaPrior, PropBatch, PropState, SrmConfig, SrmState,
                              pooled_srm_log_evalue, sequential_two_sample, srm_batch_evalue,
                              srm_monitor, two_sample_batch_evalue)


def test_equal_plugins_give_unit_evalue():
    batch = PropBatch(10, 7, 12, 2)
    assert two_sample_batch_evalue(batch, 0.3, 0.3).log_e == 0.0


def test_hand_evaluated_batch():
    e = two_sample_batch_evalue(PropBatch(1, 1, 1, 0), 0.8, 0.2)
    assert e.value == pytest.approx(2.56, rel=1e-14)


def test_empty_batch_is_neutral():
    assert two_sample_batch_evalue(PropBatch(0, 0, 0, 0), 0.6, 0.4).value == 1.0
    assert srm_batch_evalue(0, 0, BetaPrior(3, 3), 0.5).value == 1.0


def test_boundary_parameters_are_rejected():
    with pytest.raises(DomainError):
        two_sample_batch_evalue(PropBatch(1, 1, 1, 1), 1.0, 0.5)
    with pytest.raises(DomainError):
        PropBatch(2, 3, 1, 0)
    with pytest.raises(DomainError):
        SrmConfig(theta0=0.995, epsilon=0.01)


def test_first_batch_with_symmetric_prior_is_neutral():
    state = PropState(BetaPrior(4, 4), EProcess(0.05)).update(PropBatch(5, 5, 5, 0))
    assert state.eprocess.log_e == 0.0
    assert state.posterior_a.alpha1 == 9 and state.posterior_b.beta1 == 9


def test_plugins_use_only_past_batches():
    prior = BetaPrior(1, 1)
    b1, b2 = PropBatch(4, 3, 4, 1), PropBatch(2, 2, 2, 0)
    proc = sequential_two_sample([b1, b2], prior, 0.05)
    ta, tb = (1 + 3) / (2 + 4), (1 + 1) / (2 + 4)
    assert proc.log_e == pytest.approx(two_sample_batch_evalue(b2, ta, tb).log_e, rel=1e-14)


def test_prior_rule():
    assert BetaPrior.from_epsilon(0.01) == BetaPrior(1000.0, 1000.0)
    assert SrmConfig().base_prior() == BetaPrior(1000.0, 1000.0)


def test_srm_closed_form_beta_moment():
    e = srm_batch_evalue(2, 2, BetaPrior(1000, 1000), 0.5)
    assert e.value == pytest.approx((1000 * 1001) / (2000 * 2001) / 0.25, rel=1e-13)
    assert e.value == pytest.approx(1.0005, abs=1e-4)


def mp_beta_binomial_log_ratio(s, f, a, b, theta0):
    a, b = mpmath.mpf(a), mpmath.mpf(b)
    num = mpmath.log(mpmath.beta(a + s, b + f)) - mpmath.log(mpmath.beta(a, b))
    return float(num - s * mpmath.log(theta0) - f * mpmath.log(1 - mpmath.mpf(theta0)))


def test_sequential_telescoping_matches_pooled_marginal():
    rng = np.random.default_rng(0)
    cfg = SrmConfig(theta0=0.5, epsilon=0.02)
    batches = [(int(rng.integers(0, 500)), int(rng.integers(0, 500))) for _ in range(40)]
    state, _ = srm_monitor(batches, cfg)
    s = sum(b[0] for b in batches)
    f = sum(b[1] for b in batches)
    pooled = mp_beta_binomial_log_ratio(s, f, 250, 250, 0.5)
    assert abs(state.eprocess.log_e - pooled) <= 1e-12 * max(1.0, abs(pooled))
    assert abs(pooled_srm_log_evalue(s, s + f, cfg) - pooled) <= 1e-12 * max(1.0, abs(pooled))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=400), st.data())
def test_batch_partition_invariance(bits, data):
    cfg = SrmConfig(theta0=0.5, epsilon=0.05)
    cuts = sorted(set(data.draw(st.lists(st.integers(0, len(bits)), max_size=12))))
    edges = [0] + cuts + [len(bits)]
    batches = [(sum(bits[a:b]), (b - a) - sum(bits[a:b])) for a, b in zip(edges, edges[1:])]
    one = srm_monitor([(sum(bits), len(bits) - sum(bits))], cfg)[0].eprocess.log_e
    many = srm_monitor(batches, cfg)[0].eprocess.log_e
    assert abs(one - many) <= 1e-12 * max(1.0, abs(one))


def test_srm_state_json_round_trip_is_exact():
    cfg = SrmConfig(theta0=0.4, epsilon=0.03, alpha=0.01)
    state, _ = srm_monitor([(40, 61), (33, 50)], cfg)
    back = SrmState.from_dict(json.loads(json.dumps(state.to_dict())))
    assert back == state
    assert back.eprocess.log_e == state.eprocess.log_e


def test_adaptive_prior_uses_past_data_only():
    cfg = SrmConfig(theta0=0.5, epsilon=0.01, adaptive=True)
    state = SrmState.start(cfg)
    assert state.prior_for_next() == cfg.base_prior()
    state = state.update(70, 30)
    # observed mismatch 0.2 loosens the prior for the next batch
    nxt = state.prior_for_next()
    assert nxt.alpha1 == pytest.approx(2.5, rel=1e-12) and nxt.beta1 == pytest.approx(2.5, rel=1e-12)


def test_large_mismatch_is_detected():
    cfg = SrmConfig(theta0=0.5, epsilon=0.01, alpha=0.01)
    state, decision = srm_monitor([(600, 400)] * 5, cfg)
    assert decision.verdict is Verdict.REJECT_NULL


def test_null_srm_crossing_fraction_quick():
    paths = simlab.srm_paths(0.5, 0.5, 1000, 1000, 2000, 300, seed=2)
    assert simlab.crossing_fraction(paths, 0.01) <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / 300)


def _mean_stop_at_power_horizon(crossings, beta):
    horizon = simlab.power_quantile(crossings, beta)
    return np.minimum(crossings, horizon).mean()


def test_two_sample_mean_stop_below_chi2_n():
    eps, alpha = 0.2, 0.01
    c = 1 / (10 * eps * eps)
    n_fixed = classical.two_proportion_sample_size(0.6, 0.4, alpha, 0.2)
    paths = simlab.two_sample_prop_paths(0.6, 0.4, c, c, 10 * n_fixed, 2000, seed=1)
    assert _mean_stop_at_power_horizon(simlab.first_crossings(paths, alpha), 0.2) < n_fixed


def test_srm_first_crossings_match_paths():
    paths = simlab.srm_paths(0.55, 0.5, 50, 50, 3000, 20, seed=3)
    fast = simlab.srm_first_crossings(0.55, 0.5, 50, 50, 0.01, 3000, 20, seed=3, chunk=257)
    assert fast.tolist() == simlab.first_crossings(paths, 0.01).tolist()


@pytest.mark.slow
def test_srm_mean_detection_below_chi2_n():
    n_fixed = classical.srm_sample_size(0.5, 0.01, 0.01, 0.2)
    cross = simlab.srm_first_crossings(0.51, 0.5, 1000, 1000, 0.01, 4 * n_fixed, 1000, seed=4)
    assert _mean_stop_at_power_horizon(cross, 0.2) < n_fixed
