"""Session event logs: parsing, latency correction, grasp segmentation and
subject exclusion.

An event log is a line-delimited stream of JSON objects, one event per line::

    {"t": 12.5, "subject": "S001", "kind": "pick", "grasp": 1}

Times are client-clock seconds. Events of one subject must be non-decreasing
in time; lines of different subjects may interleave.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

KINDS = ("trial_start", "pick", "place", "trust", "latency", "trial_end")
ALGORITHMS = ("gamma", "echo")

DEFAULT_WINDOW = 5
DEFAULT_TRUST = 50.0
GRASPS_PER_TRIAL = 4
TRIALS_PER_SUBJECT = 10

EPISODE_COLUMNS = [
    "subject", "trial", "grasp", "is_final", "algorithm", "t_place", "success",
    "trust_at_pick", "horizon", "tRT", "trust_change",
]


class EventLogError(ValueError):
    """A malformed or inconsistent event log."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EventRecord:
    t: float
    subject: str
    kind: str
    trial: int | None = None
    algorithm: str | None = None
    grasp: int | None = None
    success: bool | None = None
    value: float | None = None
    rtt_ms: float | None = None

    def to_dict(self) -> dict:
        out = {"t": self.t, "subject": self.subject, "kind": self.kind}
        for name in ("trial", "algorithm", "grasp", "success", "value", "rtt_ms"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out


@dataclass
class EventLog:
    """Events grouped per subject, each group ordered by time."""

    events: dict[str, list[EventRecord]] = field(default_factory=dict)

    @property
    def subjects(self) -> list[str]:
        return list(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def n_events(self) -> int:
        return sum(len(v) for v in self.events.values())

    def restrict(self, subjects: Iterable[str]) -> EventLog:
        keep = set(subjects)
        return EventLog({s: list(ev) for s, ev in self.events.items() if s in keep})


@dataclass(frozen=True)
class GraspEpisode:
    """One pick-to-next-pick window. All times are seconds since the pick."""

    subject: str
    trial: int
    grasp_number: int
    is_final: bool
    algorithm: str
    t_pick: float
    t_place: float
    success: bool
    trust_at_pick: float
    horizon: float
    ratings: tuple[tuple[float, float], ...] = ()
    tRT: float | None = None
    trust_change: float | None = None

    @property
    def rated(self) -> bool:
        return self.tRT is not None

    @property
    def x_trust(self) -> float:
        return self.trust_at_pick / 100.0


@dataclass
class ExclusionReport:
    included: list[str]
    excluded: list[tuple[str, str]]

    def reason(self, subject: str) -> str | None:
        for s, r in self.excluded:
            if s == subject:
                return r
        return None


@dataclass(frozen=True)
class ExclusionRules:
    latency_ms: float = 300.0
    trial_duration_factor: float = 3.0
    require_complete: bool = True
    trials: int = TRIALS_PER_SUBJECT
    grasps_per_trial: int = GRASPS_PER_TRIAL


# --------------------------------------------------------------------------
# parsing / writing


def _as_number(obj: dict, key: str, lineno: int) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EventLogError(f"field {key!r} must be a number", lineno)
    v = float(v)
    if not math.isfinite(v):
        raise EventLogError(f"field {key!r} must be finite", lineno)
    return v


def _as_index(obj: dict, key: str, lineno: int) -> int:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise EventLogError(f"field {key!r} must be a positive integer", lineno)
    return v


def _record_from_obj(obj: dict, lineno: int) -> EventRecord:
    if not isinstance(obj, dict):
        raise EventLogError("record is not an object", lineno)
    for key in ("t", "subject", "kind"):
        if key not in obj:
            raise EventLogError(f"missing field {key!r}", lineno)
    kind = obj["kind"]
    if kind not in KINDS:
        raise EventLogError(f"unknown event kind {kind!r}", lineno)
    t = _as_number(obj, "t", lineno)
    subject = obj["subject"]
    if isinstance(subject, bool) or not isinstance(subject, (str, int)):
        raise EventLogError("field 'subject' must be a string or integer", lineno)
    rec = {"t": t, "subject": str(subject), "kind": kind}

    if "trial" in obj:
        rec["trial"] = _as_index(obj, "trial", lineno)
    if kind == "trial_start":
        rec["trial"] = _as_index(obj, "trial", lineno)
        if obj.get("algorithm") not in ALGORITHMS:
            raise EventLogError(f"algorithm must be one of {ALGORITHMS}", lineno)
        rec["algorithm"] = obj["algorithm"]
    elif kind == "pick":
        rec["grasp"] = _as_index(obj, "grasp", lineno)
    elif kind == "place":
        rec["grasp"] = _as_index(obj, "grasp", lineno)
        if not isinstance(obj.get("success"), bool):
            raise EventLogError("field 'success' must be a boolean", lineno)
        rec["success"] = obj["success"]
    elif kind == "trust":
        value = _as_number(obj, "value", lineno)
        if not 0.0 <= value <= 100.0:
            raise EventLogError(f"trust out of range [0, 100]: {value}", lineno)
        rec["value"] = value
    elif kind == "latency":
        rtt = _as_number(obj, "rtt_ms", lineno)
        if rtt < 0:
            raise EventLogError(f"negative rtt_ms: {rtt}", lineno)
        rec["rtt_ms"] = rtt
    return EventRecord(**rec)


def parse_event_log(stream: Iterable[bytes | str]) -> EventLog:
    """Parse line-delimited JSON events.

    The whole stream is rejected on the first bad line; the error carries the
    1-based line number.
    """
    events: dict[str, list[EventRecord]] = {}
    # open picks per subject within the current trial, for place validation
    open_picks: dict[str, set[int]] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EventLogError(f"invalid JSON ({exc.msg})", lineno) from None
        rec = _record_from_obj(obj, lineno)
        group = events.setdefault(rec.subject, [])
        if group and rec.t < group[-1].t:
            raise EventLogError(
                f"non-monotone timestamp for subject {rec.subject!r}: "
                f"{rec.t} < {group[-1].t}",
                lineno,
            )
        picks = open_picks.setdefault(rec.subject, set())
        if rec.kind == "trial_start":
            picks.clear()
        elif rec.kind == "pick":
            picks.add(rec.grasp)
        elif rec.kind == "place" and rec.grasp not in picks:
            raise EventLogError(
                f"place of grasp {rec.grasp} without a preceding pick", lineno
            )
        group.append(rec)
    return EventLog(events)


def load_event_log(path: str | Path) -> EventLog:
    with open(path, "rb") as fh:
        return parse_event_log(fh)


def iter_event_lines(log: EventLog) -> Iterator[str]:
    for subject in log.events:
        for rec in log.events[subject]:
            yield json.dumps(rec.to_dict(), separators=(",", ":"))


def write_event_log(log: EventLog, fh: IO[str]) -> None:
    for line in iter_event_lines(log):
        fh.write(line + "\n")


def dumps_event_log(log: EventLog) -> str:
    buf = io.StringIO()
    write_event_log(log, buf)
    return buf.getvalue()


# --------------------------------------------------------------------------
# latency


def median_rtt(log: EventLog, subject: str) -> float:
    """Median round-trip time of a subject's latency probes, in ms."""
    if subject not in log.events:
        raise KeyError(subject)
    rtts = [e.rtt_ms for e in log.events[subject] if e.kind == "latency"]
    if not rtts:
        raise ValueError(f"subject {subject!r} has no latency probes")
    return float(np.median(rtts))


def _rolling_median(values: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    n = len(values)
    return np.array(
        [np.median(values[max(0, k - half):min(n, k + half + 1)]) for k in range(n)]
    )


def _correct_subject(events: list[EventRecord], window: int) -> list[EventRecord]:
    probes = [e for e in events if e.kind == "latency"]
    if not probes:
        warnings.warn(
            f"subject {events[0].subject!r} has no latency probes; "
            "timestamps left uncorrected",
            stacklevel=3,
        )
        return list(events)
    probe_t = np.array([p.t for p in probes])
    smoothed = _rolling_median(np.array([p.rtt_ms for p in probes]), window)

    others = [(i, e) for i, e in enumerate(events) if e.kind != "latency"]
    shifted = []
    for _, e in others:
        # nearest probe; ties go to the earlier one
        k = int(np.searchsorted(probe_t, e.t))
        if k == len(probe_t) or (k > 0 and e.t - probe_t[k - 1] <= probe_t[k] - e.t):
            k -= 1
        shifted.append(e.t - smoothed[k] / 2000.0)
    # varying medians could invert neighbours; keep original order
    shifted = np.maximum.accumulate(np.array(shifted)) if shifted else np.array([])

    keyed = [(e.t, i, e) for i, e in enumerate(events) if e.kind == "latency"]
    keyed += [
        (float(t), i, replace(e, t=float(t))) for (i, e), t in zip(others, shifted)
    ]
    keyed.sort(key=lambda item: (item[0], item[1]))
    return [e for _, _, e in keyed]


def correct_latency(log: EventLog, window: int = DEFAULT_WINDOW) -> EventLog:
    """Shift every non-latency event earlier by half the rolling-median RTT.

    The median is taken over ``window`` probes centred on the probe nearest in
    time to the event, truncated at the ends of the session. Latency probes
    keep their own timestamps.
    """
    if not isinstance(window, int) or window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window!r}")
    for events in log.events.values():
        for e in events:
            if e.kind == "latency" and e.rtt_ms < 0:
                raise ValueError(f"negative rtt_ms for subject {e.subject!r}")
    return EventLog(
        {s: _correct_subject(ev, window) if ev else [] for s, ev in log.events.items()}
    )


# --------------------------------------------------------------------------
# segmentation


def _segment_subject(
    events: list[EventRecord], grasps_per_trial: int
) -> tuple[list[GraspEpisode], int]:
    trial = 0
    algorithm = None
    slider = DEFAULT_TRUST
    trial_of: list[tuple[int, str | None]] = []
    slider_at: list[float] = []
    pick_idx: list[int] = []
    trial_last_t: dict[int, float] = {}
    ended: set[int] = set()
    for e in events:
        if e.kind == "trial_start":
            trial, algorithm = e.trial, e.algorithm
        elif e.kind == "trust":
            slider = e.value
        elif e.kind == "pick":
            pick_idx.append(len(trial_of))
            slider_at.append(slider)
        trial_of.append((trial, algorithm))
        # an explicit trial_end fixes the end of observation for its trial
        if e.kind == "trial_end":
            closing = e.trial if e.trial is not None else trial
            trial_last_t[closing] = e.t
            ended.add(closing)
        elif e.kind != "latency" and trial not in ended:
            trial_last_t[trial] = e.t

    episodes = []
    dropped = 0
    for n, pi in enumerate(pick_idx):
        pick = events[pi]
        trial, algorithm = trial_of[pi]
        next_pi = pick_idx[n + 1] if n + 1 < len(pick_idx) else len(events)
        is_final = pick.grasp == grasps_per_trial
        if is_final or n + 1 == len(pick_idx):
            end_t = trial_last_t.get(trial, pick.t)
        else:
            end_t = events[next_pi].t
        place = next(
            (e for e in events[pi + 1:next_pi]
             if e.kind == "place" and e.grasp == pick.grasp),
            None,
        )
        if place is None or algorithm is None:
            dropped += 1
            continue
        horizon = end_t - pick.t
        t_place = place.t - pick.t
        if not 0 < t_place < horizon:
            dropped += 1
            continue
        ratings = tuple(
            (e.t - pick.t, e.value)
            for e in events[pi + 1:next_pi]
            if e.kind == "trust" and e.t - pick.t <= horizon
        )
        trust0 = slider_at[n]
        tRT = ratings[-1][0] if ratings else None
        change = ratings[-1][1] - trust0 if ratings else None
        episodes.append(
            GraspEpisode(
                subject=pick.subject,
                trial=trial,
                grasp_number=pick.grasp,
                is_final=is_final,
                algorithm=algorithm,
                t_pick=pick.t,
                t_place=t_place,
                success=place.success,
                trust_at_pick=trust0,
                horizon=horizon,
                ratings=ratings,
                tRT=tRT,
                trust_change=change,
            )
        )
    return episodes, dropped


def segment_with_drops(
    log: EventLog, grasps_per_trial: int = GRASPS_PER_TRIAL
) -> tuple[list[GraspEpisode], dict[str, int]]:
    episodes: list[GraspEpisode] = []
    drops: dict[str, int] = {}
    for subject, events in log.events.items():
        eps, dropped = _segment_subject(events, grasps_per_trial)
        episodes.extend(eps)
        drops[subject] = dropped
    return episodes, drops


def segment_grasps(
    log: EventLog, grasps_per_trial: int = GRASPS_PER_TRIAL
) -> list[GraspEpisode]:
    """Split each subject's events into grasp episodes (t=0 at the pick).

    Picks that are not followed by their place before the next pick are
    dropped with a warning.
    """
    episodes, drops = segment_with_drops(log, grasps_per_trial)
    total = sum(drops.values())
    if total:
        warnings.warn(f"dropped {total} pick(s) without a matching place", stacklevel=2)
    return episodes


def count_picks(log: EventLog) -> int:
    return sum(e.kind == "pick" for ev in log.events.values() for e in ev)


# --------------------------------------------------------------------------
# exclusions


def trial_durations(events: list[EventRecord]) -> dict[int, float]:
    """Seconds from each trial_start to its trial_end (or last event)."""
    starts: dict[int, float] = {}
    ends: dict[int, float] = {}
    ended: set[int] = set()
    trial = None
    for e in events:
        if e.kind == "trial_start":
            trial = e.trial
            starts[trial] = e.t
        elif e.kind == "trial_end":
            closing = e.trial if e.trial is not None else trial
            ends[closing] = e.t
            ended.add(closing)
        elif trial is not None and e.kind != "latency" and trial not in ended:
            ends[trial] = e.t
    return {k: ends.get(k, starts[k]) - starts[k] for k in starts}


def apply_exclusions(
    log: EventLog, rules: ExclusionRules | None = None
) -> ExclusionReport:
    """Classify subjects as included or excluded.

    Reasons are checked in the order incomplete, long_trials, high_latency and
    the first match is reported. A subject without latency probes cannot fail
    the latency rule.
    """
    rules = rules or ExclusionRules()
    if not log.events:
        raise ValueError("no subjects to screen")
    episodes, _ = segment_with_drops(log, rules.grasps_per_trial)
    n_episodes: dict[str, int] = {s: 0 for s in log.events}
    for ep in episodes:
        n_episodes[ep.subject] += 1
    durations = {s: trial_durations(ev) for s, ev in log.events.items()}
    pooled = [d for per in durations.values() for d in per.values()]
    cutoff = rules.trial_duration_factor * float(np.median(pooled)) if pooled else math.inf

    included, excluded = [], []
    for subject, events in log.events.items():
        reason = None
        expected = rules.trials * rules.grasps_per_trial
        if rules.require_complete and (
            len(durations[subject]) < rules.trials or n_episodes[subject] < expected
        ):
            reason = "incomplete"
        elif any(d > cutoff for d in durations[subject].values()):
            reason = "long_trials"
        elif any(e.kind == "latency" for e in events) and (
            median_rtt(log, subject) > rules.latency_ms
        ):
            reason = "high_latency"
        if reason is None:
            included.append(subject)
        else:
            excluded.append((subject, reason))
    return ExclusionReport(included, excluded)


# --------------------------------------------------------------------------
# episode table


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_episodes_csv(episodes: Iterable[GraspEpisode], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(EPISODE_COLUMNS)
    for ep in episodes:
        writer.writerow(
            _fmt(v) for v in (
                ep.subject, ep.trial, ep.grasp_number, ep.is_final, ep.algorithm,
                ep.t_place, ep.success, ep.trust_at_pick, ep.horizon, ep.tRT,
                ep.trust_change,
            )
        )


def read_episodes_csv(fh: IO[str]) -> list[GraspEpisode]:
    """Inverse of :func:`write_episodes_csv`; ratings keep only the last one."""

    def opt(s):
        return float(s) if s != "" else None

    out = []
    for row in csv.DictReader(fh):
        tRT = opt(row["tRT"])
        change = opt(row["trust_change"])
        trust0 = float(row["trust_at_pick"])
        ratings = ((tRT, trust0 + change),) if tRT is not None else ()
        out.append(
            GraspEpisode(
                subject=row["subject"],
                trial=int(row["trial"]),
                grasp_number=int(row["grasp"]),
                is_final=row["is_final"] == "true",
                algorithm=row["algorithm"],
                t_pick=0.0,
                t_place=float(row["t_place"]),
                success=row["success"] == "true",
                trust_at_pick=trust0,
                horizon=float(row["horizon"]),
                ratings=ratings,
                tRT=tRT,
                trust_change=change,
            )
        )
    return out
