import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazardlab.eventlog import (
    EPISODE_COLUMNS,
    EventLog,
    EventLogError,
    EventRecord,
    ExclusionRules,
    apply_exclusions,
    correct_latency,
    count_picks,
    dumps_event_log,
    median_rtt,
    parse_event_log,
    read_episodes_csv,
    segment_grasps,
    segment_with_drops,
    write_episodes_csv,
)


def lines(*objs):
    return [json.dumps(o).encode() for o in objs]


def ev(t, kind, subject="A", **kw):
    return EventRecord(float(t), subject, kind, **kw)


def full_subject(sid, trials=10, rtt=50.0, trial_len=40.0, long_trial=None):
    """A complete session: each trial has 4 grasps 10 s apart and one rating."""
    out, clock = [], 0.0
    for k in range(1, trials + 1):
        length = trial_len * 5 if k == long_trial else trial_len
        out.append(ev(clock, "latency", sid, rtt_ms=rtt))
        out.append(ev(clock, "trial_start", sid, trial=k, algorithm="gamma"))
        for g in range(1, 5):
            pick = clock + 1 + 8 * (g - 1)
            out.append(ev(pick, "pick", sid, grasp=g))
            out.append(ev(pick + 4, "place", sid, grasp=g, success=True))
        out.append(ev(clock + length - 1, "trust", sid, value=60.0))
        out.append(ev(clock + length, "trial_end", sid, trial=k))
        clock += length + 2
    return out


class TestParse:
    def test_empty_stream(self):
        assert len(parse_event_log([])) == 0

    def test_five_event_subject(self):
        log = parse_event_log(lines(
            {"t": 0, "subject": "s1", "kind": "trial_start", "trial": 1, "algorithm": "gamma"},
            {"t": 1, "subject": "s1", "kind": "pick", "grasp": 1},
            {"t": 2, "subject": "s1", "kind": "trust", "value": 60},
            {"t": 5, "subject": "s1", "kind": "place", "grasp": 1, "success": True},
            {"t": 9, "subject": "s1", "kind": "trial_end", "trial": 1},
        ))
        assert log.subjects == ["s1"]
        assert log.n_events() == 5
        assert [e.kind for e in log.events["s1"]] == [
            "trial_start", "pick", "trust", "place", "trial_end"]

    def test_trust_out_of_range_reports_line(self):
        with pytest.raises(EventLogError, match="line 2: trust out of range") as info:
            parse_event_log(lines(
                {"t": 0, "subject": "s", "kind": "latency", "rtt_ms": 3},
                {"t": 1, "subject": "s", "kind": "trust", "value": 150},
            ))
        assert info.value.line == 2

    @pytest.mark.parametrize("bad, msg", [
        ({"t": 0, "subject": "s", "kind": "wave"}, "unknown event kind"),
        ({"subject": "s", "kind": "pick", "grasp": 1}, "missing field 't'"),
        ({"t": 0, "subject": "s", "kind": "latency", "rtt_ms": -1}, "negative rtt"),
        ({"t": 0, "subject": "s", "kind": "trial_start", "trial": 1, "algorithm": "x"},
         "algorithm"),
        ({"t": 0, "subject": "s", "kind": "place", "grasp": 2, "success": True}, "without"),
        ({"t": "0", "subject": "s", "kind": "pick", "grasp": 1}, "number"),
    ])
    def test_rejects_malformed_records(self, bad, msg):
        with pytest.raises(EventLogError, match=msg):
            parse_event_log(lines(bad))

    def test_invalid_json(self):
        with pytest.raises(EventLogError, match="line 1: invalid JSON"):
            parse_event_log([b"{not json"])

    def test_non_monotone_within_subject(self):
        with pytest.raises(EventLogError, match="line 3: non-monotone"):
            parse_event_log(lines(
                {"t": 5, "subject": "a", "kind": "latency", "rtt_ms": 1},
                {"t": 1, "subject": "b", "kind": "latency", "rtt_ms": 1},
                {"t": 4, "subject": "a", "kind": "latency", "rtt_ms": 1},
            ))

    def test_blank_lines_and_str_input(self):
        log = parse_event_log(["", '{"t": 0, "subject": "x", "kind": "latency", "rtt_ms": 0}\n'])
        assert log.n_events() == 1

    def test_serialization_round_trip(self, default_session):
        log, _ = default_session
        text = dumps_event_log(log)
        again = parse_event_log(io.StringIO(text))
        assert again.events == log.events
        assert dumps_event_log(again) == text


class TestLatency:
    def _log(self, rtts, event_times):
        events = [ev(10.0 * k, "latency", rtt_ms=r) for k, r in enumerate(rtts)]
        events += [ev(t, "trust", value=50.0) for t in event_times]
        events.sort(key=lambda e: e.t)
        return EventLog({"A": events})

    def test_rolling_median_window_three(self):
        out = correct_latency(self._log([40, 300, 42], [11.0]), window=3)
        trust = [e for e in out.events["A"] if e.kind == "trust"][0]
        assert trust.t == pytest.approx(11.0 - 0.021, abs=1e-12)

    def test_zero_rtt_moves_nothing(self):
        log = self._log([0.0], [1.0, 2.5])
        assert correct_latency(log, 5).events == log.events

    def test_constant_rtt_shift(self):
        times = [3.0, 14.0, 27.5]
        out = correct_latency(self._log([100, 100, 100], times), window=5)
        shifted = [e.t for e in out.events["A"] if e.kind == "trust"]
        np.testing.assert_allclose(shifted, np.array(times) - 0.05, atol=1e-12)

    def test_probes_unshifted(self):
        out = correct_latency(self._log([100, 250, 80], [5.0]), window=3)
        assert [e.t for e in out.events["A"] if e.kind == "latency"] == [0.0, 10.0, 20.0]

    @pytest.mark.parametrize("window", [0, 2, 4, -1])
    def test_bad_window(self, window):
        with pytest.raises(ValueError, match="odd"):
            correct_latency(self._log([1], [1.0]), window)

    def test_no_probes_passes_through_with_warning(self):
        log = EventLog({"A": [ev(1, "trust", value=5.0)]})
        with pytest.warns(UserWarning, match="no latency probes"):
            assert correct_latency(log, 5).events == log.events

    @settings(max_examples=60, deadline=None)
    @given(
        rtts=st.lists(st.floats(0, 2000), min_size=1, max_size=8),
        gaps=st.lists(st.floats(0, 3), min_size=1, max_size=25),
        window=st.sampled_from([1, 3, 5, 7]),
    )
    def test_order_preserved(self, rtts, gaps, window):
        times = np.cumsum(gaps)
        log = self._log(rtts, list(times))
        out = correct_latency(log, window).events["A"]
        t = [e.t for e in out]
        assert t == sorted(t)
        shifted = [e.t for e in out if e.kind == "trust"]
        assert shifted == sorted(shifted)
        assert len(out) == len(log.events["A"])


class TestMedianRtt:
    @pytest.mark.parametrize("probes, expected", [
        ([10], 10), ([100, 400, 200], 200), ([100, 400], 250)])
    def test_examples(self, probes, expected):
        log = EventLog({"A": [ev(k, "latency", rtt_ms=r) for k, r in enumerate(probes)]})
        assert median_rtt(log, "A") == expected

    def test_no_probes(self):
        with pytest.raises(ValueError, match="no latency probes"):
            median_rtt(EventLog({"A": [ev(0, "trust", value=1.0)]}), "A")


class TestSegment:
    def _one(self, *extra, end=20):
        events = [ev(0, "trial_start", trial=1, algorithm="echo"), ev(0, "pick", grasp=1)]
        events += list(extra)
        events.append(ev(12, "pick", grasp=2))
        events.append(ev(15, "place", grasp=2, success=True))
        if end is not None:
            events.append(ev(end, "trial_end", trial=1))
        return EventLog({"A": sorted(events, key=lambda e: e.t)})

    def test_rating_example(self):
        log = self._one(ev(2, "trust", value=60.0), ev(5, "trust", value=55.0),
                        ev(6, "place", grasp=1, success=True))
        ep = segment_grasps(log)[0]
        assert (ep.t_place, ep.horizon, ep.tRT) == (6.0, 12.0, 5.0)
        assert ep.trust_at_pick == 50.0
        assert ep.trust_change == 55.0 - 50.0
        assert ep.ratings == ((2.0, 60.0), (5.0, 55.0))

    def test_unrated(self):
        ep = segment_grasps(self._one(ev(6, "place", grasp=1, success=False)))[0]
        assert ep.tRT is None and ep.trust_change is None and not ep.success

    def test_rating_after_place_belongs_to_current(self):
        log = self._one(ev(6, "place", grasp=1, success=True), ev(11, "trust", value=70.0))
        first, second = segment_grasps(log)
        assert first.tRT == 11.0 and second.trust_at_pick == 70.0

    def test_final_horizon_is_trial_end(self):
        events = [ev(0, "trial_start", trial=1, algorithm="gamma")]
        for g, t in enumerate([0, 10, 20], start=1):
            events += [ev(t, "pick", grasp=g), ev(t + 5, "place", grasp=g, success=True)]
        events += [ev(30, "pick", grasp=4), ev(36, "place", grasp=4, success=True),
                   ev(60, "trial_end", trial=1)]
        eps = segment_grasps(EventLog({"A": events}))
        assert eps[-1].is_final and eps[-1].horizon == 30.0 and eps[-1].t_place == 6.0

    def test_pick_without_place_dropped(self):
        log = self._one()
        with pytest.warns(UserWarning, match="dropped 1 pick"):
            eps = segment_grasps(log)
        assert len(eps) == 1
        _, drops = segment_with_drops(log)
        assert drops == {"A": 1}

    def test_slider_retained_across_trials(self, default_episodes):
        by_subject = {}
        for ep in default_episodes:
            by_subject.setdefault(ep.subject, []).append(ep)
        for eps in by_subject.values():
            level = 50.0
            for ep in eps:
                assert ep.trust_at_pick == level
                if ep.ratings:
                    level = ep.ratings[-1][1]

    def test_totality_and_trt_is_last(self, default_session, default_episodes):
        log, _ = default_session
        _, drops = segment_with_drops(log)
        assert len(default_episodes) + sum(drops.values()) == count_picks(log)
        for ep in default_episodes:
            assert 0 < ep.t_place < ep.horizon
            assert (ep.trust_change is None) == (not ep.ratings)
            if ep.tRT is not None:
                assert ep.tRT == max(t for t, _ in ep.ratings)
                assert 0 <= ep.tRT <= ep.horizon

    def test_episode_csv_round_trip(self, default_episodes):
        buf = io.StringIO()
        write_episodes_csv(default_episodes[:50], buf)
        assert buf.getvalue().splitlines()[0] == ",".join(EPISODE_COLUMNS)
        back = read_episodes_csv(io.StringIO(buf.getvalue()))
        for a, b in zip(default_episodes[:50], back):
            assert (a.tRT, a.t_place, a.horizon, a.trust_change, a.success) == (
                b.tRT, b.t_place, b.horizon, b.trust_change, b.success)


class TestExclusions:
    def test_paper_examples(self):
        log = EventLog({
            "ok": full_subject("ok", rtt=50),
            "lag": full_subject("lag", rtt=350),
            "short": full_subject("short", trials=9),
            "slow": full_subject("slow", long_trial=3),
        })
        report = apply_exclusions(log, ExclusionRules())
        assert report.included == ["ok"]
        assert report.reason("lag") == "high_latency"
        assert report.reason("short") == "incomplete"
        assert report.reason("slow") == "long_trials"

    def test_first_matching_reason(self):
        log = EventLog({"a": full_subject("a"), "b": full_subject("b", trials=9, rtt=900)})
        assert apply_exclusions(log).reason("b") == "incomplete"

    def test_empty_input(self):
        with pytest.raises(ValueError):
            apply_exclusions(EventLog())

    def test_partition(self, default_session):
        log, _ = default_session
        report = apply_exclusions(log)
        names = report.included + [s for s, _ in report.excluded]
        assert sorted(names) == sorted(log.subjects)
        assert len(set(names)) == len(names)
        assert report.included == log.subjects


def test_no_warnings_on_clean_simulation(default_session):
    log, _ = default_session
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        segment_grasps(correct_latency(log, 5))
