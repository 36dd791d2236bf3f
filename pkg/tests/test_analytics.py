import io
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazardlab.analytics import (
    algorithm_pairs,
    box_stats,
    histogram,
    paired_t_test,
    rating_distribution_by_grasp,
    rating_time_histograms,
    t_sf,
    trust_change_by_algorithm,
)
from hazardlab.eventlog import GraspEpisode
from oracles import paired_t_reference, reg_inc_beta


def episode(alg="gamma", change=None, grasp=1, tRT=None, t_place=10.0, subject="A",
            horizon=20.0):
    ratings = ((tRT, 50.0 + (change or 0.0)),) if tRT is not None else ()
    return GraspEpisode(subject, 1, grasp, grasp == 4, alg, 0.0, t_place, True, 50.0,
                        horizon, ratings, tRT, change)


finite = st.floats(-100, 100, allow_nan=False)


class TestTrustChange:
    def test_constant_zero(self):
        s = trust_change_by_algorithm([episode(change=0.0, tRT=1.0)] * 5)
        g = s["gamma"]
        assert (g.mean, g.q1, g.median, g.q3, g.sd) == (0, 0, 0, 0, 0)

    def test_means(self):
        eps = [episode("gamma", 5.0, tRT=1), episode("gamma", 3.0, tRT=1),
               episode("echo", -10.0, tRT=1), episode("echo", 2.0, tRT=1)]
        s = trust_change_by_algorithm(eps)
        assert s["gamma"].mean == 4.0 and s["echo"].mean == -4.0
        assert s["gamma"].count == 2

    def test_no_ratings(self):
        s = trust_change_by_algorithm([episode(), episode("echo")])
        assert s["gamma"].empty and s["echo"].empty

    def test_csv(self):
        buf = io.StringIO()
        trust_change_by_algorithm([episode(change=1.0, tRT=1)]).write_csv(buf)
        rows = buf.getvalue().splitlines()
        assert rows[0].startswith("algorithm,count,mean,sd,q1,median,q3")
        assert rows[2].startswith("echo,0,")

    def test_type7_quartiles(self):
        b = box_stats([1, 2, 3, 4])
        assert (b.q1, b.median, b.q3) == (1.75, 2.5, 3.25)

    def test_whiskers_exclude_outlier(self):
        b = box_stats([1, 2, 3, 4, 100])
        assert b.whisker_high == 4 and b.maximum == 100

    @settings(max_examples=200)
    @given(st.lists(finite, min_size=1, max_size=40))
    def test_box_ordering(self, xs):
        b = box_stats(xs)
        assert b.minimum <= b.whisker_low <= b.q1 <= b.median <= b.q3 <= b.whisker_high <= b.maximum


class TestPairedT:
    def test_degenerate(self):
        r = paired_t_test([(1.0, 1.0), (2.0, 2.0), (5.0, 5.0)])
        assert r.degenerate and math.isnan(r.p_value) and r.mean_diff == 0

    def test_hand_example(self):
        r = paired_t_test([(2, 0), (-1, 0), (3, 0), (0, 0)])
        assert r.mean_diff == 1.0
        assert r.t_statistic == pytest.approx(1.0954451150103321, abs=1e-12)
        assert r.degrees_of_freedom == 3
        # closed form for df = 3
        u = r.t_statistic / math.sqrt(3)
        p3 = 1 - 2 / math.pi * (math.atan(u) + u / (1 + u * u))
        assert r.p_value == pytest.approx(p3, abs=1e-13)
        assert r.p_value == pytest.approx(0.3533874662886982, abs=1e-12)

    def test_cauchy_case(self):
        # df = 1 is a Cauchy variable: p = 1 - 2 atan(|t|) / pi
        assert t_sf(3.0, 1) == pytest.approx(1 - 2 * math.atan(3.0) / math.pi, abs=1e-14)

    @pytest.mark.parametrize("pairs", [[], [(1, 2)]])
    def test_too_few(self, pairs):
        with pytest.raises(ValueError):
            paired_t_test(pairs)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(finite, finite), min_size=2, max_size=20), finite)
    def test_swap_and_shift(self, pairs, c):
        r = paired_t_test(pairs)
        if r.degenerate:
            return
        sw = paired_t_test([(b, a) for a, b in pairs])
        assert sw.t_statistic == pytest.approx(-r.t_statistic, rel=1e-9)
        assert sw.p_value == pytest.approx(r.p_value, rel=1e-9, abs=1e-300)
        sh = paired_t_test([(a + c, b + c) for a, b in pairs])
        if not sh.degenerate and abs(r.t_statistic) < 1e6:
            assert sh.t_statistic == pytest.approx(r.t_statistic, rel=1e-6, abs=1e-6)
        assert 0 <= r.p_value <= 1
        assert np.sign(r.t_statistic) == np.sign(r.mean_diff)

    def test_oracle_moderate(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=12), rng.normal(0.4, size=12)
        r = paired_t_test(list(zip(a, b)))
        t, p = paired_t_reference(a, b)
        assert r.t_statistic == pytest.approx(t, abs=1e-12)
        assert r.p_value == pytest.approx(p, abs=1e-12)

    def test_oracle_beta_symmetry(self):
        assert reg_inc_beta(2.5, 0.5, 0.3) == pytest.approx(1 - reg_inc_beta(0.5, 2.5, 0.7),
                                                            abs=1e-14)


class TestPairs:
    def test_subject_means(self):
        eps = [episode("gamma", 4.0, tRT=1, subject="A"), episode("gamma", 2.0, tRT=1, subject="A"),
               episode("echo", -6.0, tRT=1, subject="A"), episode("gamma", 1.0, tRT=1, subject="B")]
        assert algorithm_pairs(eps) == [(3.0, -6.0)]

    def test_grasp_level(self):
        eps = [episode("gamma", 4.0, 1, 1.0), episode("echo", -2.0, 1, 1.0),
               episode("gamma", 1.0, 2, 1.0), episode("echo", 0.0, 2, 1.0)]
        assert algorithm_pairs(eps, "grasp") == [(4.0, -2.0), (1.0, 0.0)]

    def test_bad_level(self):
        with pytest.raises(ValueError):
            algorithm_pairs([], "trial")


class TestHistograms:
    def test_single_bucket(self):
        h = rating_distribution_by_grasp([episode(grasp=4, tRT=2.0)] * 3 + [episode(grasp=2)])
        assert list(h.counts) == [0, 0, 0, 3]

    def test_uniform(self):
        h = rating_distribution_by_grasp([episode(grasp=g, tRT=1.0) for g in range(1, 5)])
        assert list(h.counts) == [1, 1, 1, 1]

    def test_empty(self):
        early, final = rating_time_histograms([episode()], 1.0)
        assert early.total == final.total == 0 and early.edges.size == 0

    def test_place_centered_bins(self):
        eps = [episode(tRT=t + 10.0, t_place=10.0) for t in (-2.0, -1.0, 3.0)]
        early, _ = rating_time_histograms(eps, 1.0, "place")
        assert list(early.edges) == [-2, -1, 0, 1, 2, 3, 4]
        assert list(early.counts) == [1, 1, 0, 0, 0, 1]

    def test_bad_width(self):
        with pytest.raises(ValueError):
            histogram([1.0], 0)

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 60), max_size=30), st.floats(0.05, 10))
    def test_total_matches_rated(self, times, width):
        eps = [episode(tRT=t, grasp=1 + i % 4, horizon=60.0, t_place=5.0)
               for i, t in enumerate(times)]
        eps.append(episode(grasp=2))
        early, final = rating_time_histograms(eps, width)
        assert early.total + final.total == len(times)
        for h in (early, final):
            assert np.all(np.diff(h.edges) > 0)

    def test_early_support_below_gap(self, default_episodes):
        early, final = rating_time_histograms(default_episodes, 1.0)
        assert early.edges[-1] <= 10.0 + 1.0
        h = rating_distribution_by_grasp(default_episodes)
        assert int(np.argmax(h.counts)) == 3


def test_degenerate_csv_row():
    buf = io.StringIO()
    paired_t_test([(1, 1), (1, 1)]).write_csv(buf)
    assert buf.getvalue().splitlines()[1] == "2,0,,1,,true"


def test_result_is_plain_data():
    r = paired_t_test([(1, 0), (3, 0), (2, 1)])
    assert replace(r) == r
