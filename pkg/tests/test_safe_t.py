import io
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeab import safe_t, simlab
from safeab.classical import SummaryStats
from safeab.eprocess import log_threshold
from safeab.errors import DegenerateError, DomainError, NotReachableError
from safeab.numerics import hyp1f1_log
from safeab.safe_t import SafeTConfig, SafeTState


def direct_series(a, b, z, terms=200):
    total, term = mpmath.mpf(1), mpmath.mpf(1)
    for k in range(terms):
        term *= (a + k) * z / ((b + k) * (k + 1))
        total += term
    return total


def test_equal_means_reduce_to_exponential_factor():
    state = SafeTState(SummaryStats(2, 0.0, 1.0), SummaryStats(2, 0.0, 1.0))
    e = safe_t.safe_t_evalue(state, SafeTConfig(1.0))
    assert e.value == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert e.value == pytest.approx(0.6065307, abs=1e-7)


def test_small_sample_value_against_direct_series():
    # n = m = 2, delta = 1, t = sqrt(2) so a = 0.5
    expected = mpmath.exp(-0.5) * direct_series(mpmath.mpf(1.5), mpmath.mpf(0.5), mpmath.mpf(0.25))
    got = safe_t.log_e_from_t(math.sqrt(2), 2, 2, 1.0)
    assert got == pytest.approx(float(mpmath.log(expected)), rel=1e-14)


def test_tiny_delta_gives_unit_evalue():
    x = SummaryStats(30, 1.0, 2.0)
    y = SummaryStats(25, 0.2, 1.5)
    assert safe_t.safe_t_from_summaries(x, y, SafeTConfig(1e-9)).value == pytest.approx(1.0, abs=1e-9)


def test_zero_pooled_variance_is_degenerate():
    s = SummaryStats(5, 1.0, 0.0)
    with pytest.raises(DegenerateError):
        safe_t.safe_t_from_summaries(s, s, SafeTConfig(0.5))


def test_config_validation():
    with pytest.raises(DomainError):
        SafeTConfig(0.0)
    with pytest.raises(DomainError):
        SafeTConfig(0.5, alpha=1.5)


def test_kummer_and_bayes_factor_forms_agree():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n, m = rng.integers(2, 5000, size=2)
        nu = n + m - 2
        t = rng.normal(0, 4)
        delta = 10 ** rng.uniform(-2, 0.5)
        a = t * t / (nu + t * t)
        nd = 1 / (1 / n + 1 / m)
        k = safe_t.log_e_kummer(a, nu, nd, delta)
        c = safe_t.log_e_canonical(a, nu, nd, delta)
        assert math.exp(k - c) == pytest.approx(1.0, rel=1e-9)


def test_kummer_exponent_sign():
    # With the exponent (1 - 1/a) z instead of (1/a - 1) z the two forms
    # disagree, and at t -> 0 the value would be e^{+n_d delta^2/2} > 1.
    n, delta, t = 20, 0.5, 1e-3
    nu, nd = 2 * n - 2, n / 2
    a = t * t / (nu + t * t)
    z = -a * nd * delta ** 2 / 2
    f = hyp1f1_log(-nu / 2, 0.5, z)[0]
    corrected = (1 / a - 1) * z + f
    flipped = (1 - 1 / a) * z + f
    canonical = safe_t.log_e_canonical(a, nu, nd, delta)
    assert corrected == pytest.approx(canonical, rel=1e-9)
    assert flipped == pytest.approx(-canonical, rel=1e-3)
    assert flipped > 0 > canonical


@settings(max_examples=80, deadline=None)
@given(n=st.integers(2, 3000), m=st.integers(2, 3000), t=st.floats(0, 30),
       delta=st.floats(0.01, 2.0))
def test_symmetric_in_sign_of_t(n, m, t, delta):
    assert safe_t.log_e_from_t(t, n, m, delta) == safe_t.log_e_from_t(-t, n, m, delta)


@pytest.mark.parametrize("n, m, delta", [(2, 2, 1.0), (10, 14, 0.3), (500, 500, 0.1),
                                         (20000, 20000, 0.01), (3, 40, 2.0)])
def test_monotone_in_abs_t(n, m, delta):
    ts = np.linspace(0, 12, 400)
    vals = [safe_t.log_e_from_t(t, n, m, delta) for t in ts]
    assert np.all(np.diff(vals) >= -1e-12)


def linear_scan(config, start=2):
    target = log_threshold(config.alpha)
    n = start
    while safe_t.log_e_at_design_effect(n, config.delta) < target:
        n += 1
    return n


def test_design_matches_linear_scan_on_examples():
    for delta, alpha in [(1.0, 0.05), (0.5, 0.05), (0.8, 0.01), (1.5, 0.2)]:
        cfg = SafeTConfig(delta, alpha)
        assert safe_t.design_batch_n(cfg) == linear_scan(cfg)
    assert safe_t.design_batch_n(SafeTConfig(1.0)) == 17


def test_design_monotone_in_delta():
    ns = [safe_t.design_batch_n(SafeTConfig(d)) for d in (0.1, 0.2, 0.3, 0.5, 1.0, 2.0)]
    assert ns == sorted(ns, reverse=True)


def test_design_cap_reports_unreachable():
    with pytest.raises(NotReachableError):
        safe_t.design_batch_n(SafeTConfig(0.01), cap=1000)


def test_raw_stream_matches_summary_path():
    rng = np.random.default_rng(3)
    x, y = rng.normal(0.4, 1, 60), rng.normal(0, 1, 60)
    traj = safe_t.safe_t_from_raw(x, y, SafeTConfig(0.5))
    assert math.isnan(traj.log_e[0])
    for k in (2, 13, 60):
        e = safe_t.safe_t_from_summaries(SummaryStats.from_values(x[:k]),
                                         SummaryStats.from_values(y[:k]), SafeTConfig(0.5))
        assert traj.log_e[k - 1] == pytest.approx(e.log_e, rel=1e-10, abs=1e-12)
    buf = io.StringIO()
    traj.write_csv(buf)
    assert buf.getvalue().startswith("n,log_e,e,decision\n")


def test_constant_streams_stay_undefined():
    traj = safe_t.safe_t_from_raw(np.ones(10), np.ones(10), SafeTConfig(0.5))
    assert np.isnan(traj.log_e).all()
    assert set(traj.decisions()) == {"undefined"}


def test_critical_curve_matches_exact_decisions():
    curve = safe_t.CriticalCurve(0.1, 0.05, 20000)
    rng = np.random.default_rng(8)
    ns = rng.integers(2, 20000, 400)
    crit = np.array([curve.exact(int(n)) for n in ns])
    finite = np.isfinite(crit)
    # probe just above and below the exact boundary plus random points
    a = np.concatenate([np.where(finite, crit * (1 + 1e-9), 0.5), np.where(finite, crit * (1 - 1e-9), 0.5),
                        rng.uniform(0, 1, ns.size)])
    n_all = np.concatenate([ns, ns, ns])
    got = curve.crosses(n_all, a)
    want = [curve._log_e(int(n), float(v)) >= curve.target for n, v in zip(n_all, a)]
    assert got.tolist() == want


def test_simulated_crossings_equal_exact_stream_evaluation():
    run = simlab.simulate_normal(0.3, 0.3, 0.05, 6, seed=5, tests=("safe_t",), n_cap=600, block=97)
    for rep in range(6):
        x = simlab.rep_generator(5, rep, simlab.STREAM_X).standard_normal(600) + 0.3
        y = simlab.rep_generator(5, rep, simlab.STREAM_Y).standard_normal(600)
        traj = safe_t.safe_t_from_raw(x, y, SafeTConfig(0.3))
        first = traj.first_crossing
        assert run.crossing["safe_t"][rep] == (first if first is not None else math.inf)


def test_fixed_n_mean_under_null_quick():
    mean, se = simlab.mean_evalue_at_n("safe_t", 10, 1500, seed=1)
    assert mean <= 1 + 3 * se
