import math

import numpy as np
import pytest
from scipy import stats as sps

from asglimits.stats import (McReport, chi_square_updown, config_hash, cov_se, ks_one_sample,
                             mean_se, moment_ratio_se, normal_cdf, paired_ratio_se, stream_for,
                             var_se)


def test_stream_reproducible_and_distinct():
    a = stream_for(7, 3).random(5)
    b = stream_for(7, 3).random(5)
    assert np.array_equal(a, b)
    others = [stream_for(7, 4).random(5), stream_for(8, 3).random(5), stream_for(7, 3, 1).random(5)]
    for o in others:
        assert not np.array_equal(a, o)


def test_stream_range_checks():
    with pytest.raises(ValueError):
        stream_for(1, -1)
    with pytest.raises(ValueError):
        stream_for(1, 0, 256)


def test_streams_uncorrelated():
    x = np.array([stream_for(11, i).random(2000) for i in range(20)])
    c = np.corrcoef(x)
    off = c[~np.eye(20, dtype=bool)]
    # 2000 draws: correlation sd ~ 0.022
    assert np.max(np.abs(off)) < 0.11


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    d, p = ks_one_sample(x, normal_cdf)
    ref = sps.kstest(x, "norm", method="asymp")
    assert d == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_pvalues_uniform_under_null():
    pvals = []
    for i in range(300):
        x = stream_for(5, i).normal(2.0, 3.0, size=200)
        pvals.append(ks_one_sample(x, lambda z: normal_cdf(z, 2.0, 3.0))[1])
    # meta-test: the p-values themselves should look uniform
    assert sps.kstest(pvals, "uniform").pvalue > 0.001


def test_ks_power():
    x = np.random.default_rng(1).normal(0.3, 1.0, size=1000)
    assert ks_one_sample(x, normal_cdf)[1] < 1e-6


def test_ks_needs_samples():
    with pytest.raises(ValueError):
        ks_one_sample(np.zeros(10), normal_cdf)


def test_normal_cdf_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.0, 1.0, 2.0) == 0.5
    assert normal_cdf(1.959963984540054) == pytest.approx(0.975, abs=1e-12)


def test_mean_and_var_se_normal_theory():
    x = np.random.default_rng(2).normal(0, 2, size=20000)
    m, se = mean_se(x)
    assert se == pytest.approx(2 / math.sqrt(20000), rel=0.02)
    v, vse = var_se(x)
    assert v == pytest.approx(4, rel=0.05)
    # normal data: Var(s^2) = 2 sigma^4 / (n - 1)
    assert vse == pytest.approx(4 * math.sqrt(2 / 19999), rel=0.05)


def test_var_se_coverage():
    hits = 0
    for i in range(400):
        x = stream_for(3, i).exponential(size=300)
        v, se = var_se(x)
        hits += abs(v - 1.0) < 2 * se
    assert hits / 400 > 0.88


def test_cov_se():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(2, 50000))
    x, y = z[0], 0.5 * z[0] + z[1]
    c, se = cov_se(x, y)
    assert abs(c - 0.5) < 4 * se
    assert se == pytest.approx(math.sqrt(1.25 + 0.25) / math.sqrt(50000), rel=0.05)


def test_ratio_ses():
    r, se = moment_ratio_se(2.0, 0.1, 4.0, 0.2)
    assert r == 0.5
    assert se == pytest.approx(0.5 * math.sqrt(0.05**2 * 2))
    hits = 0
    for i in range(300):
        rng = stream_for(4, i)
        x = rng.exponential(size=200)
        y = x + rng.exponential(size=200)
        r, se = paired_ratio_se(x, y)
        hits += abs(r - 0.5) < 2 * se
    assert hits / 300 > 0.9


def test_chi_square_hand_computed():
    stat, dof, p = chi_square_updown([30, 10], [100, 40], [0.25, 0.25])
    expected = (5**2 / 25 + 5**2 / 75) + 0.0
    assert stat == pytest.approx(expected)
    assert dof == 2
    assert p == pytest.approx(sps.chi2.sf(expected, 2))


def test_chi_square_pools_sparse_levels():
    stat, dof, _ = chi_square_updown([1, 50], [2, 100], [0.5, 0.5])
    assert dof == 1 and stat == 0.0
    with pytest.raises(ValueError):
        chi_square_updown([1], [2], [0.5])


def test_config_hash_canonical():
    a = config_hash({"x": 1, "y": [1.0, 2.0]})
    assert a == config_hash({"y": [1.0, 2.0], "x": 1})
    assert a != config_hash({"x": 1, "y": [1.0, 2.5]})
    assert config_hash({"v": np.float64(0.5)}) == config_hash({"v": 0.5})


def test_report_round_trip_and_validation():
    rep = McReport("h", 1, 10)
    rep.add(experiment="e", statistic="s", estimate=1.0, stderr=0.1, target=1.0, tag="derived",
            t=0.5)
    rep.add(experiment="e", statistic="s", estimate=2.0, stderr=0.1, t=1.0)
    assert rep.get("s", t=0.5).estimate == 1.0
    assert len(rep.find("s")) == 2
    with pytest.raises(KeyError):
        rep.get("s")
    back = McReport.from_dict(rep.to_dict())
    assert back.to_json() == rep.to_json()
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("# config_hash=h")
    assert lines[1] == "experiment,epsilon,t,statistic,estimate,stderr,target,tag"
    with pytest.raises(ValueError):
        rep.add(experiment="e", statistic="bad", estimate=0.0, stderr=1.0, tag="derived")
    rep.add(experiment="e", statistic="flat", estimate=0.0, stderr=0.0)
    with pytest.raises(ValueError):
        rep.validate()
