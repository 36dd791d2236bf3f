"""Descriptive analyses of segmented grasp episodes."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.special import betainc

from .eventlog import ALGORITHMS, GraspEpisode


@dataclass(frozen=True)
class BoxStats:
    count: int
    mean: float = math.nan
    sd: float = math.nan
    q1: float = math.nan
    median: float = math.nan
    q3: float = math.nan
    whisker_low: float = math.nan
    whisker_high: float = math.nan
    minimum: float = math.nan
    maximum: float = math.nan

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class TrustChangeSummary:
    by_algorithm: dict[str, BoxStats]

    def __getitem__(self, algorithm: str) -> BoxStats:
        return self.by_algorithm[algorithm]

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "count", "mean", "sd", "q1", "median", "q3",
                         "whisker_low", "whisker_high", "min", "max"])
        for alg, b in self.by_algorithm.items():
            writer.writerow([alg, b.count, *(_cell(v) for v in (
                b.mean, b.sd, b.q1, b.median, b.q3, b.whisker_low, b.whisker_high,
                b.minimum, b.maximum))])


@dataclass(frozen=True)
class TTestResult:
    n_pairs: int
    mean_diff: float
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    degenerate: bool = False

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n_pairs", "mean_diff", "t_statistic", "df", "p_value", "degenerate"])
        writer.writerow([self.n_pairs, _cell(self.mean_diff), _cell(self.t_statistic),
                         self.degrees_of_freedom, _cell(self.p_value),
                         "true" if self.degenerate else "false"])


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            writer.writerow([_cell(lo), _cell(hi), int(c)])


def _cell(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}"


def box_stats(values: Sequence[float]) -> BoxStats:
    """Box-plot statistics with type-7 quartiles and 1.5 IQR whiskers.

    A whisker reaches the most extreme datum inside its fence but never falls
    inside the box.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        return BoxStats(0)
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside_low = x[x >= q1 - 1.5 * iqr]
    inside_high = x[x <= q3 + 1.5 * iqr]
    lo = min(inside_low.min(), q1) if inside_low.size else q1
    hi = max(inside_high.max(), q3) if inside_high.size else q3
    return BoxStats(
        count=int(x.size),
        mean=float(x.mean()),
        sd=float(x.std(ddof=1)) if x.size > 1 else math.nan,
        q1=float(q1), median=float(med), q3=float(q3),
        whisker_low=float(lo), whisker_high=float(hi),
        minimum=float(x[0]), maximum=float(x[-1]),
    )


def trust_change_by_algorithm(episodes: Iterable[GraspEpisode]) -> TrustChangeSummary:
    """Per-algorithm box statistics of per-grasp trust change.

    Every rated grasp counts once, independent of its subject.
    """
    groups: dict[str, list[float]] = {alg: [] for alg in ALGORITHMS}
    for ep in episodes:
        if ep.trust_change is not None:
            groups.setdefault(ep.algorithm, []).append(ep.trust_change)
    return TrustChangeSummary({alg: box_stats(v) for alg, v in groups.items()})


def t_sf(t: float, df: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) of Student's t."""
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(pairs: Sequence[tuple[float, float]]) -> TTestResult:
    """Paired t-test on ``a - b`` with a two-sided p-value.

    Zero variance of the differences yields a result flagged ``degenerate``
    with nan statistic and p-value.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise ValueError("paired t-test needs at least 2 (a, b) pairs")
    diff = arr[:, 0] - arr[:, 1]
    n = diff.size
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        return TTestResult(n, mean, math.nan, n - 1, math.nan, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(n, mean, t, n - 1, t_sf(t, n - 1))


def algorithm_pairs(episodes: Iterable[GraspEpisode], level: str = "subject"
                    ) -> list[tuple[float, float]]:
    """(gamma, echo) mean trust change pairs.

    ``level="subject"`` pairs each subject's means; ``level="grasp"`` pairs
    means per (subject, grasp number). Units lacking either algorithm are
    skipped.
    """
    if level not in ("subject", "grasp"):
        raise ValueError(f"unknown pairing level {level!r}")
    cells: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for ep in episodes:
        if ep.trust_change is None:
            continue
        key = (ep.subject,) if level == "subject" else (ep.subject, ep.grasp_number)
        cells[key][ep.algorithm].append(ep.trust_change)
    out = []
    for key in cells:
        c = cells[key]
        if c["gamma"] and c["echo"]:
            out.append((float(np.mean(c["gamma"])), float(np.mean(c["echo"]))))
    return out


def rating_distribution_by_grasp(episodes: Iterable[GraspEpisode],
                                 grasps_per_trial: int = 4) -> Histogram:
    counts = np.zeros(grasps_per_trial, dtype=int)
    for ep in episodes:
        if ep.tRT is not None:
            counts[ep.grasp_number - 1] += 1
    return Histogram(np.arange(grasps_per_trial + 1) + 0.5, counts)


def histogram(values: Sequence[float], bin_width: float) -> Histogram:
    """Counts in half-open bins ``[k w, (k+1) w)`` spanning the data."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return Histogram(np.array([]), np.array([], dtype=int))
    k = np.floor(x / bin_width).astype(int)
    k0 = k.min()
    counts = np.bincount(k - k0)
    edges = bin_width * np.arange(k0, k0 + len(counts) + 1)
    return Histogram(edges, counts)


def rating_time_histograms(episodes: Iterable[GraspEpisode], bin_width: float = 1.0,
                           center: str = "place") -> tuple[Histogram, Histogram]:
    """Rating-time histograms for non-final and final grasps.

    With ``center="place"`` times are measured from the placement, so the pick
    sits at minus the placement duration.
    """
    if center not in ("pick", "place"):
        raise ValueError(f"center must be 'pick' or 'place', got {center!r}")
    early, final = [], []
    for ep in episodes:
        if ep.tRT is None:
            continue
        t = ep.tRT - ep.t_place if center == "place" else ep.tRT
        (final if ep.is_final else early).append(t)
    return histogram(early, bin_width), histogram(final, bin_width)
