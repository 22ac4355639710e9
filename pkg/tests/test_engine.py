import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from asglimits.analytics import asg_step_moments
from asglimits.engine import (CountPath, EventCapExceeded, Mark, MarkKind, ModelParams,
                              apply_mark, arrival_rates, counts_at_times, embedded_jump_counts,
                              hitting_time, sample_arrival, simulate_birth_death,
                              simulate_coupled, simulate_coupled_reference)
from asglimits.stats import chi_square_updown, mean_se, stream_for


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(-1.0, 0.0)
    with pytest.raises(ValueError):
        ModelParams(0.0, float("nan"))
    p = ModelParams(1.0, 2.0)
    assert p.death_rate(4) == 8.0 and p.birth_rate(4) == 4.0
    assert p.holding_rate(4) == 12.0
    assert p.up_probability(4) == pytest.approx(2 / 6)


def test_rates_example():
    rates = arrival_rates((5, 3, 4), ModelParams(1, 1))
    assert sum(rates) == 14.0
    assert rates[0] / sum(rates) == pytest.approx(10 / 14)


def test_absorbed_triple():
    assert sample_arrival((1, 1, 1), ModelParams(0, 0), np.random.default_rng(0)) is None


def test_two_lineages_pair_mark_exp1():
    rng = np.random.default_rng(1)
    hs = []
    for _ in range(2000):
        h, mark = sample_arrival((2, 2, 2), ModelParams(0, 0), rng)
        assert mark == Mark.pair(1, 2)
        hs.append(h)
    assert sps.kstest(hs, "expon").pvalue > 0.001


def test_mark_frequencies():
    rng = np.random.default_rng(2)
    kinds = [sample_arrival((5, 3, 4), ModelParams(1, 1), rng)[1].kind for _ in range(14000)]
    n_pair = sum(k == MarkKind.PAIR for k in kinds)
    # binomial(14000, 10/14): sd ~ 53
    assert abs(n_pair - 10000) < 250


def test_apply_mark_examples():
    c, ap = apply_mark((5, 3, 4), Mark.pair(2, 4))
    assert c == (4, 3, 3) and ap == (True, False, True)
    c, ap = apply_mark(c, Mark.mutation(2))
    assert c == (4, 2, 2) and ap == (False, True, True)
    c, ap = apply_mark(c, Mark.selection(1))
    assert c == (4, 2, 3) and ap == (False, False, True)


def test_mark_constructors_reject_bad_indices():
    with pytest.raises(ValueError):
        Mark.pair(2, 2)
    with pytest.raises(ValueError):
        Mark.mutation(0)
    with pytest.raises(ValueError):
        apply_mark((2, 3, 2), Mark.selection(1))


def test_degenerate_coupling_identical_paths():
    traj = simulate_coupled(ModelParams(0, 0), 100, np.random.default_rng(3))
    assert len(traj) == 99
    assert np.array_equal(traj.counts[:, 0], traj.counts[:, 1])
    assert np.array_equal(traj.counts[:, 0], traj.counts[:, 2])
    assert traj.applied.all()


def test_two_lineages_stop_time_mean():
    times = [simulate_coupled(ModelParams(0, 0), 2, stream_for(4, i)).stop_time for i in range(4000)]
    m, se = mean_se(times)
    assert abs(m - 1.0) < 4 * se
    traj = simulate_coupled(ModelParams(0, 0), 2, stream_for(4, 0))
    assert len(traj) == 1 and hitting_time(traj, "kingman", 1) == traj.times[0]


def test_hitting_level_five_matches_recursion():
    p = ModelParams(1, 1)
    target = float(np.sum(asg_step_moments(p, 20, 1).value(np.arange(6, 11), 1)))
    vals = [hitting_time(simulate_coupled(p, 10, stream_for(5, i), stop_level=5,
                                          stop_coordinate="asg"), "asg", 5)
            for i in range(20000)]
    m, se = mean_se(vals)
    assert abs(m - target) < 4 * se


def test_hitting_time_at_start_and_unreached():
    traj = simulate_coupled(ModelParams(0, 0), 50, np.random.default_rng(6), stop_level=40)
    assert hitting_time(traj, "kingman", 50) == 0.0
    assert hitting_time(traj, "kingman", 10) is None


def test_kingman_hitting_ten_from_ten_thousand():
    # telescoping sum of 2/(k(k-1)) over k = 11..10^4: 2/10 - 2/10^4
    vals = [simulate_birth_death(ModelParams(0, 0), 10**4, stream_for(6, i), stop_level=10).end_time
            for i in range(10**4)]
    m, se = mean_se(vals)
    assert abs(m - 0.1998) < 4 * se


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(0, 5), sigma=st.floats(0, 5), n0=st.integers(1, 200),
       seed=st.integers(0, 2**32))
def test_pathwise_order(theta, sigma, n0, seed):
    traj = simulate_coupled(ModelParams(theta, sigma), n0, np.random.default_rng(seed),
                            stop_level=1, max_events=10**6)
    assert traj.order_violations() == 0
    steps = np.diff(traj.counts, axis=0)
    assert np.all(np.abs(steps) <= 1)
    assert np.array_equal(steps != 0, traj.applied)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(0, 3), sigma=st.floats(0, 3), n0=st.integers(1, 40),
       seed=st.integers(0, 2**32))
def test_compiled_and_reference_agree(theta, sigma, n0, seed):
    p = ModelParams(theta, sigma)
    traj = simulate_coupled(p, n0, np.random.default_rng(seed), stop_level=1)
    ref = simulate_coupled_reference(p, n0, np.random.default_rng(seed), stop_level=1)
    assert len(ref) == len(traj)
    for a, b in zip(ref, traj.events):
        assert a == b


def test_determinism():
    p = ModelParams(0.7, 1.3)
    a = simulate_coupled(p, 300, stream_for(9, 2), stop_level=1)
    b = simulate_coupled(p, 300, stream_for(9, 2), stop_level=1)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.counts, b.counts)


def test_buffer_growth_matches_single_chunk():
    p = ModelParams(1, 3)
    a = simulate_birth_death(p, 5000, stream_for(1, 0), stop_level=1)
    b = simulate_birth_death(p, 5000, stream_for(1, 0), stop_level=1, max_events=10**7)
    assert np.array_equal(a.times, b.times)
    with pytest.raises(EventCapExceeded):
        simulate_birth_death(p, 5000, stream_for(1, 0), stop_level=1, max_events=2000)


def test_horizon_stop():
    traj = simulate_coupled(ModelParams(1, 1), 100, stream_for(2, 0), stop_level=None, horizon=0.01)
    assert traj.stop_reason == "horizon" and traj.stop_time == 0.01
    assert np.all(traj.times <= 0.01)


def test_birth_death_embedded_chain():
    p = ModelParams(1, 1)
    paths = [simulate_birth_death(p, 10, stream_for(3, i), stop_level=1) for i in range(3000)]
    ups, jumps = embedded_jump_counts(paths, 400)
    levels = np.arange(401)
    probs = np.where(levels >= 2, p.sigma / np.maximum(levels - 1 + p.theta + p.sigma, 1), 0)
    _, _, pval = chi_square_updown(ups[2:], jumps[2:], probs[2:])
    assert pval > 0.001


def test_birth_death_matches_coupled_marginal():
    p = ModelParams(1, 1)
    a = [simulate_birth_death(p, 30, stream_for(7, i), stop_level=5).end_time for i in range(3000)]
    b = [hitting_time(simulate_coupled(p, 30, stream_for(8, i), stop_level=5,
                                       stop_coordinate="asg"), "asg", 5) for i in range(3000)]
    assert sps.ks_2samp(a, b).pvalue > 0.001


def test_holding_time_rate():
    p = ModelParams(1, 1)
    h = [simulate_birth_death(p, 5, stream_for(10, i), stop_level=4).times[0] for i in range(4000)]
    assert sps.kstest(h, "expon", args=(0, 1 / p.holding_rate(5))).pvalue > 0.001


@pytest.mark.parametrize("params", [ModelParams(0, 0), ModelParams(1, 1), ModelParams(0.5, 3)])
def test_counts_at_times_draw_for_draw(params):
    q = np.array([0.001, 0.002, 0.01, 0.05, 0.05, 0.3])
    for i in range(20):
        path = simulate_birth_death(params, 2000, stream_for(3, i), stop_level=None,
                                    horizon=q[-1], start_time=0.0005)
        got = counts_at_times(params, 2000, stream_for(3, i), q, start_time=0.0005)
        assert np.array_equal(got, path.count_at(q))
        seg = simulate_birth_death(params, 2000, stream_for(4, i), stop_level=1000, start_time=1e-4)
        got, t_hit = counts_at_times(params, 2000, stream_for(4, i), q, 1e-4, stop_level=1000)
        assert t_hit == seg.end_time
        inside = q <= seg.end_time
        assert np.array_equal(got[inside], seg.count_at(q[inside]))
        assert np.all(got[~inside] == -2)
    assert counts_at_times(params, 10, stream_for(0, 0), [0.1, 1.0], start_time=0.5)[0] == -1


def test_count_path_helpers():
    a = CountPath(0.0, np.array([1.0, 2.0]), np.array([5, 4, 3]), 2.5)
    b = CountPath(2.5, np.array([3.0]), np.array([3, 2]), 4.0)
    c = a.then(b)
    assert list(c.counts) == [5, 4, 3, 2] and c.end_time == 4.0
    assert c.hitting_time(2) == 3.0 and c.hitting_time(1) is None
    assert list(c.count_at([0.0, 1.0, 2.7, 4.0])) == [5, 4, 3, 2]
    s = a.shifted(1.0)
    assert s.start_time == 1.0 and list(s.times) == [2.0, 3.0]
    with pytest.raises(ValueError):
        a.then(a)
    with pytest.raises(ValueError):
        a.count_at(3.0)
