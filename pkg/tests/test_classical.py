import math
from statistics import NormalDist

import numpy as np
import pytest
from scipy import stats

from safeab import classical
from safeab.classical import ContingencyTable2x2, SummaryStats
from safeab.errors import DegenerateError, DomainError


def test_summary_stats_from_values():
    s = SummaryStats.from_values([1.0, 2.0, 3.0, 6.0])
    assert (s.n, s.mean) == (4, 3.0)
    assert s.var == pytest.approx(14.0 / 3.0)
    with pytest.raises(DomainError):
        SummaryStats(0, 1.0)


def test_pooled_t_matches_scipy():
    rng = np.random.default_rng(4)
    x, y = rng.normal(0.3, 1.2, 40), rng.normal(0.0, 0.9, 55)
    rep = classical.pooled_t(SummaryStats.from_values(x), SummaryStats.from_values(y))
    ref = stats.ttest_ind(x, y, equal_var=True)
    assert rep.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert rep.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_welch_t_with_satterthwaite_matches_scipy():
    rng = np.random.default_rng(5)
    x, y = rng.normal(0.0, 3.0, 12), rng.normal(1.0, 1.0, 30)
    sx, sy = SummaryStats.from_values(x), SummaryStats.from_values(y)
    ref = stats.ttest_ind(x, y, equal_var=False)
    rep = classical.welch_t(sx, sy, satterthwaite=True)
    assert rep.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert rep.p_value == pytest.approx(ref.pvalue, rel=1e-10)
    default = classical.welch_t(sx, sy)
    assert default.df == 40.0
    assert default.statistic == rep.statistic


def test_zero_variance_is_degenerate():
    s = SummaryStats(5, 1.0, 0.0)
    with pytest.raises(DegenerateError):
        classical.pooled_t(s, s)
    with pytest.raises(DegenerateError):
        classical.cohens_d(s, s)


def test_cohens_d_hand_value():
    x = SummaryStats(10, 1.0, 4.0)
    y = SummaryStats(10, 0.0, 4.0)
    assert classical.cohens_d(x, y) == pytest.approx(0.5)


def test_two_by_two_chi2_matches_scipy():
    table = ContingencyTable2x2(30, 70, 45, 55)
    ref = stats.chi2_contingency(table.observed(), correction=False)
    rep = table.chi2_test()
    assert rep.statistic == pytest.approx(ref[0], rel=1e-12)
    assert rep.p_value == pytest.approx(ref[1], rel=1e-10)


def test_srm_chi2_hand_value():
    rep = classical.srm_chi2_test(600, 400, 0.5)
    assert rep.statistic == pytest.approx(40.0)


def _z(p):
    return NormalDist().inv_cdf(p)


@pytest.mark.parametrize("delta, expected", [(1.0, 16), (0.01, 156978)])
def test_fixed_horizon_sample_size(delta, expected):
    assert classical.fixed_horizon_sample_size(0.05, 0.2, delta) == expected
    oracle = math.ceil(2 * (_z(0.975) + _z(0.8)) ** 2 / delta ** 2)
    assert oracle == expected


def test_proportion_sizes_match_stdlib_formula():
    za, zb = _z(0.975), _z(0.8)
    pa, pb = 0.6, 0.4
    pbar = 0.5
    expected = math.ceil(((za * math.sqrt(2 * pbar * (1 - pbar))
                           + zb * math.sqrt(pa * (1 - pa) + pb * (1 - pb))) / 0.2) ** 2)
    assert classical.two_proportion_sample_size(pa, pb, 0.05, 0.2) == expected
    t1 = 0.51
    expected = math.ceil(((za * 0.5 + zb * math.sqrt(t1 * (1 - t1))) / 0.01) ** 2)
    assert classical.srm_sample_size(0.5, 0.01, 0.05, 0.2) == expected


def test_cumulative_stats_match_direct():
    rng = np.random.default_rng(2)
    v = rng.normal(1e6, 1.0, 500)
    n, mean, ss = classical.cumulative_stats(v)
    for k in (2, 17, 500):
        assert mean[k - 1] == pytest.approx(v[:k].mean(), rel=1e-14)
        assert ss[k - 1] == pytest.approx(((v[:k] - v[:k].mean()) ** 2).sum(), rel=1e-9)
