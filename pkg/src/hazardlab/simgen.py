"""Synthetic pick-and-place sessions with hazard-driven trust ratings.

Each subject runs a number of trials of consecutive grasps under one robot
profile per trial: ``gamma`` always places correctly, ``echo`` fails with a
configurable probability. Rating times are drawn from the hazard model by
inverting the closed-form cumulative hazard; a grasp whose draw falls past
its horizon goes unrated. Per-subject random streams make the output
independent of generation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from typing import IO

import numpy as np

from .eventlog import EventLog, EventRecord
from .hazardmodel import CovariateRow, HazardParams, invert_cumulative_hazard

GROUND_TRUTH_COLUMNS = [
    "subject", "trial", "grasp", "algorithm", "success", "trust_at_pick",
    "t_place", "horizon", "tRT",
]

DEFAULT_TRUE_PARAMS = HazardParams(math.log(0.02), 0.5, 0.0, 3.0)


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = 65
    trials_per_subject: int = 10
    grasps_per_trial: int = 4
    echo_failure_prob: float = 0.5
    t_place_mean: float = 10.0
    t_place_sd: float = 1.0
    inter_grasp_gap: float = 10.0
    final_grasp_horizon: float = 60.0
    trial_setup: float = 2.0
    inter_trial_gap: float = 3.0
    true_params: HazardParams = field(default_factory=lambda: DEFAULT_TRUE_PARAMS)
    delta_up: float = 4.0
    delta_down: float = 10.0
    initial_trust: float = 50.0
    rtt_ms: float = 0.0
    rtt_jitter_ms: float = 0.0
    probe_period: float = 10.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.echo_failure_prob <= 1.0:
            problems.append(("echo_failure_prob", "must lie in [0, 1]"))
        for name in ("n_subjects", "trials_per_subject", "grasps_per_trial"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name == "n_subjects" else 1):
                problems.append((name, "must be a non-negative integer" if name == "n_subjects"
                                 else "must be a positive integer"))
        for name in ("t_place_mean", "inter_grasp_gap", "final_grasp_horizon", "probe_period"):
            if not getattr(self, name) > 0:
                problems.append((name, "must be positive"))
        for name in ("t_place_sd", "trial_setup", "inter_trial_gap", "delta_up", "delta_down",
                     "rtt_ms", "rtt_jitter_ms"):
            if not getattr(self, name) >= 0:
                problems.append((name, "must be non-negative"))
        if not 0.0 <= self.initial_trust <= 100.0:
            problems.append(("initial_trust", "must lie in [0, 100]"))
        if problems:
            name, why = problems[0]
            raise ValueError(f"invalid SimConfig.{name}: {why}")

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SimConfig field(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        if "true_params" in data and not isinstance(data["true_params"], HazardParams):
            tp = dict(data["true_params"])
            if "lambda0" in tp:
                tp["log_lambda0"] = math.log(tp.pop("lambda0"))
            data["true_params"] = HazardParams(**tp)
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["true_params"] = asdict(self.true_params)
        return out


@dataclass(frozen=True)
class TruthEpisode:
    subject: str
    trial: int
    grasp: int
    algorithm: str
    success: bool
    trust_at_pick: float
    t_place: float
    horizon: float
    tRT: float | None


@dataclass
class GroundTruth:
    episodes: list[TruthEpisode]

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GROUND_TRUTH_COLUMNS)
        for ep in self.episodes:
            writer.writerow([
                ep.subject, ep.trial, ep.grasp, ep.algorithm,
                "true" if ep.success else "false", repr(ep.trust_at_pick),
                repr(ep.t_place), repr(ep.horizon), "" if ep.tRT is None else repr(ep.tRT),
            ])


def sample_rating_time(params: HazardParams, x: CovariateRow, horizon: float,
                       rng: np.random.Generator) -> float | None:
    """One inverse-transform draw; ``None`` when it lands past ``horizon``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    u = 1.0 - rng.random()  # (0, 1]
    t = invert_cumulative_hazard(params, x, -math.log(u))
    return t if t <= horizon else None


def sample_rating_times(params: HazardParams, x: CovariateRow, size: int,
                        rng: np.random.Generator, horizon: float = math.inf) -> np.ndarray:
    """Vectorised draws; unrated grasps come back as ``nan``."""
    u = 1.0 - rng.random(size)
    t = np.asarray(invert_cumulative_hazard(params, x, -np.log(u)), dtype=float)
    return np.where(t <= horizon, t, np.nan)


def _draw_t_place(cfg: SimConfig, rng: np.random.Generator) -> float:
    # truncated normal; placement must come strictly after the pick
    while True:
        t = cfg.t_place_mean + cfg.t_place_sd * rng.standard_normal()
        if t > 0:
            return t


def _simulate_subject(cfg: SimConfig, subject: str, seq: np.random.SeedSequence):
    task_seq, latency_seq = seq.spawn(2)
    rng = np.random.default_rng(task_seq)
    lat_rng = np.random.default_rng(latency_seq)

    true_events: list[EventRecord] = []
    truth: list[TruthEpisode] = []
    slider = cfg.initial_trust
    clock = 0.0
    for trial in range(1, cfg.trials_per_subject + 1):
        algorithm = "gamma" if rng.random() < 0.5 else "echo"
        true_events.append(EventRecord(clock, subject, "trial_start", trial=trial, algorithm=algorithm))
        pick_t = clock + cfg.trial_setup
        for grasp in range(1, cfg.grasps_per_trial + 1):
            final = grasp == cfg.grasps_per_trial
            success = True if algorithm == "gamma" else bool(rng.random() >= cfg.echo_failure_prob)
            t_place = _draw_t_place(cfg, rng)
            if final:
                planned = max(cfg.final_grasp_horizon, t_place + cfg.inter_grasp_gap)
            else:
                planned = t_place + cfg.inter_grasp_gap
            trust0 = slider
            place_abs = pick_t + t_place
            end_abs = pick_t + planned
            x = CovariateRow(float(success), trust0 / 100.0, place_abs - pick_t)
            rt = sample_rating_time(cfg.true_params, x, end_abs - pick_t, rng)

            true_events.append(EventRecord(pick_t, subject, "pick", grasp=grasp))
            rating_abs = None
            if rt is not None:
                rating_abs = pick_t + rt
                if rating_abs > end_abs:
                    rating_abs = end_abs
            stream = [(place_abs, 0, EventRecord(place_abs, subject, "place", grasp=grasp,
                                                 success=success))]
            if rating_abs is not None:
                step = cfg.delta_up if success else -cfg.delta_down
                slider = min(100.0, max(0.0, slider + step))
                stream.append((rating_abs, 1, EventRecord(rating_abs, subject, "trust",
                                                          value=slider)))
            stream.sort(key=lambda item: (item[0], item[1]))
            true_events.extend(rec for _, _, rec in stream)
            truth.append(TruthEpisode(
                subject=subject, trial=trial, grasp=grasp, algorithm=algorithm,
                success=success, trust_at_pick=trust0, t_place=place_abs - pick_t,
                horizon=end_abs - pick_t,
                tRT=None if rating_abs is None else rating_abs - pick_t,
            ))
            if final:
                true_events.append(EventRecord(end_abs, subject, "trial_end", trial=trial))
                clock = end_abs + cfg.inter_trial_gap
            else:
                pick_t = end_abs

    # latency probes over the whole session; events are logged late by half an RTT
    session_end = true_events[-1].t if true_events else 0.0
    n_probes = int(math.floor(session_end / cfg.probe_period)) + 1
    probe_t = cfg.probe_period * np.arange(n_probes)
    if cfg.rtt_jitter_ms > 0:
        rtt = np.maximum(0.0, cfg.rtt_ms + cfg.rtt_jitter_ms * lat_rng.standard_normal(n_probes))
    else:
        rtt = np.full(n_probes, float(cfg.rtt_ms))
    k = np.clip(np.round(np.array([e.t for e in true_events]) / cfg.probe_period), 0,
                n_probes - 1).astype(int)
    delayed = np.array([e.t for e in true_events]) + rtt[k] / 2000.0
    # jitter must not reorder the session, so logged times stay monotone
    delayed = np.maximum.accumulate(delayed) if len(delayed) else delayed
    logged = [
        (float(t), 1, order, EventRecord(float(t), *_rest(e)) if t != e.t else e)
        for order, (t, e) in enumerate(zip(delayed, true_events))
    ]
    logged += [
        (float(probe_t[j]), 0, j,
         EventRecord(float(probe_t[j]), subject, "latency", rtt_ms=float(rtt[j])))
        for j in range(n_probes)
    ]
    logged.sort(key=lambda item: (item[0], item[1], item[2]))
    return [rec for *_, rec in logged], truth


def _rest(e: EventRecord) -> tuple:
    return (e.subject, e.kind, e.trial, e.algorithm, e.grasp, e.success, e.value, e.rtt_ms)


def simulate_sessions(config: SimConfig) -> tuple[EventLog, GroundTruth]:
    """Generate an event log and the episode table it was generated from."""
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_subjects)
    width = max(3, len(str(config.n_subjects)))
    log = EventLog()
    truth = []
    for i, seq in enumerate(seqs):
        subject = f"S{i + 1:0{width}d}"
        events, eps = _simulate_subject(config, subject, seq)
        log.events[subject] = events
        truth.extend(eps)
    return log, GroundTruth(truth)
