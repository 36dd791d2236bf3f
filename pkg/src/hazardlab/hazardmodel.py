"""Proportional-hazards model for trust-rating times.

The hazard of a rating at time ``t`` after the pick is

    lambda(t) = lambda0 * exp(beta_success * x_success + beta_trust * x_trust
                              + eta * y(t))

with ``y(t) = 0`` before the stowage is placed and ``1`` afterwards. The
baseline ``lambda0`` is constant, so every survival quantity has a closed
form with one kink at the placement time.

Fitting goes through the piecewise-exponential ("equivalent Poisson")
expansion: each episode is cut into grid intervals, each interval carries a
rating indicator ``d`` and an exposure ``e``, and the rows are treated as
Poisson counts with mean ``e * lambda``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

PARAM_NAMES = ("log_lambda0", "beta_success", "beta_trust", "eta")
DEFAULT_WIDTH = 0.5
INTERVAL_COLUMNS = ["episode", "interval", "start", "e", "d", "x_success", "x_trust", "y"]


class LikelihoodError(ValueError):
    """Invalid table rows or a non-finite likelihood evaluation."""


@dataclass(frozen=True)
class HazardParams:
    log_lambda0: float
    beta_success: float = 0.0
    beta_trust: float = 0.0
    eta: float = 0.0

    @classmethod
    def from_lambda0(cls, lambda0: float, beta_success: float = 0.0,
                     beta_trust: float = 0.0, eta: float = 0.0) -> HazardParams:
        log_l0 = math.log(lambda0) if lambda0 > 0 else -math.inf
        return cls(log_l0, beta_success, beta_trust, eta)

    @classmethod
    def from_array(cls, theta: Sequence[float]) -> HazardParams:
        return cls(*(float(v) for v in theta))

    @property
    def lambda0(self) -> float:
        return math.exp(self.log_lambda0)

    def as_array(self) -> np.ndarray:
        return np.array([self.log_lambda0, self.beta_success, self.beta_trust, self.eta])


@dataclass(frozen=True)
class CovariateRow:
    x_success: float
    x_trust: float
    t_place: float

    @classmethod
    def from_episode(cls, ep) -> CovariateRow:
        return cls(float(ep.success), ep.trust_at_pick / 100.0, ep.t_place)


def hazard(params: HazardParams, x: CovariateRow, y: int) -> float:
    """Rating rate per second for covariates ``x`` and grasp state ``y``."""
    lin = params.beta_success * x.x_success + params.beta_trust * x.x_trust + params.eta * y
    with np.errstate(over="ignore"):
        return float(np.exp(params.log_lambda0 + lin))


def _pieces(params: HazardParams, x: CovariateRow) -> tuple[float, float]:
    return hazard(params, x, 0), hazard(params, x, 1)


def hazard_at(params: HazardParams, x: CovariateRow, t):
    """Hazard at time ``t``; the grasp state switches on at ``t >= t_place``."""
    pre, post = _pieces(params, x)
    t = np.asarray(t, dtype=float)
    out = np.where(t >= x.t_place, post, pre)
    return float(out) if out.ndim == 0 else out


def _check_time(t: np.ndarray) -> None:
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("time must be non-negative")


def cumulative_hazard(params: HazardParams, x: CovariateRow, t):
    """Integrated hazard from the pick to ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    _check_time(t)
    pre, post = _pieces(params, x)
    before = np.minimum(t, x.t_place)
    after = np.maximum(0.0, t - x.t_place)
    # 0 * inf must stay 0 for t inside a zero-length piece
    out = np.where(before > 0, pre * before, 0.0) + np.where(after > 0, post * after, 0.0)
    return float(out) if out.ndim == 0 else out


def survival(params: HazardParams, x: CovariateRow, t):
    """Probability that the rating time exceeds ``t``."""
    out = np.exp(-np.asarray(cumulative_hazard(params, x, t)))
    return float(out) if out.ndim == 0 else out


def rating_time_cdf(params: HazardParams, x: CovariateRow, t):
    """Probability that the rating happened by ``t``."""
    out = -np.expm1(-np.asarray(cumulative_hazard(params, x, t)))
    return float(out) if out.ndim == 0 else out


def invert_cumulative_hazard(params: HazardParams, x: CovariateRow, target):
    """Smallest ``t`` with cumulative hazard equal to ``target``.

    Returns ``inf`` where the hazard never accumulates that much.
    """
    target = np.asarray(target, dtype=float)
    pre, post = _pieces(params, x)
    at_place = pre * x.t_place
    with np.errstate(divide="ignore", invalid="ignore"):
        early = np.where(pre > 0, target / pre, np.inf)
        late = np.where(post > 0, x.t_place + (target - at_place) / post, np.inf)
    out = np.where(target <= at_place, early, late)
    out = np.where(target == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# equivalent Poisson expansion


@dataclass
class IntervalTable:
    """Poisson rows, one per (episode, interval) cell."""

    episode: np.ndarray
    interval: np.ndarray
    start: np.ndarray
    width: float
    e: np.ndarray
    d: np.ndarray
    x_success: np.ndarray
    x_trust: np.ndarray
    y: np.ndarray
    cohort: np.ndarray

    def __len__(self) -> int:
        return len(self.e)

    @property
    def n_episodes(self) -> int:
        return len(np.unique(self.episode))

    @property
    def n_events(self) -> int:
        return int(self.d.sum())

    def design(self) -> np.ndarray:
        """Covariates multiplying each parameter: (1, x_success, x_trust, y)."""
        return np.column_stack(
            [np.ones(len(self.e)), self.x_success, self.x_trust, self.y.astype(float)]
        )

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INTERVAL_COLUMNS)
        for row in zip(self.episode, self.interval, self.start, self.e, self.d,
                       self.x_success, self.x_trust, self.y):
            ep, j, s, e, d, xs, xt, y = row
            writer.writerow([int(ep), int(j), repr(float(s)), repr(float(e)), int(d),
                             int(xs), repr(float(xt)), int(y)])


def _episode_grid(end: float, t_place: float, width: float) -> np.ndarray:
    k = max(1, math.ceil(end / width))
    points = width * np.arange(k + 1)
    points = points[(points == 0) | (points < end)]
    if 0 < t_place < end:
        points = np.union1d(points, [t_place])
    return points


def expand_to_intervals(
    episodes: Iterable, width: float = DEFAULT_WIDTH, censored: bool = False
) -> IntervalTable:
    """Expand rated episodes into Poisson interval rows.

    The grid ``0, width, 2*width, ...`` is also split at each episode's
    placement time so the grasp-state covariate is constant per row. The row
    holding the rating is right-closed and its exposure stops at the rating.
    Unrated episodes are skipped unless ``censored`` is set, in which case
    they contribute exposure up to their horizon with no rating.
    """
    if not width > 0:
        raise ValueError(f"interval width must be positive, got {width}")
    cols: dict[str, list[np.ndarray]] = {k: [] for k in
                                         ("episode", "interval", "start", "e", "d",
                                          "xs", "xt", "y", "cohort")}
    for i, ep in enumerate(episodes):
        if ep.tRT is None:
            if not censored:
                raise ValueError(
                    f"episode {i} has no rating; pass censored=True or filter rated episodes"
                )
            end, rated = ep.horizon, False
        else:
            if ep.tRT > ep.horizon:
                raise ValueError(f"episode {i}: rating time {ep.tRT} beyond horizon {ep.horizon}")
            end, rated = ep.tRT, True
        starts = _episode_grid(end, ep.t_place, width)
        stops = np.append(starts[1:], end)
        n = len(starts)
        d = np.zeros(n, dtype=np.int8)
        if rated:
            d[-1] = 1
        cols["episode"].append(np.full(n, i))
        cols["interval"].append(np.arange(n))
        cols["start"].append(starts)
        cols["e"].append(stops - starts)
        cols["d"].append(d)
        cols["xs"].append(np.full(n, float(ep.success)))
        cols["xt"].append(np.full(n, ep.trust_at_pick / 100.0))
        cols["y"].append((starts >= ep.t_place).astype(np.int8))
        cols["cohort"].append(np.full(n, "final" if ep.is_final else "early"))

    def cat(key, dtype):
        return np.concatenate(cols[key]).astype(dtype) if cols[key] else np.array([], dtype=dtype)

    return IntervalTable(
        episode=cat("episode", np.int64),
        interval=cat("interval", np.int64),
        start=cat("start", float),
        width=float(width),
        e=cat("e", float),
        d=cat("d", np.int8),
        x_success=cat("xs", float),
        x_trust=cat("xt", float),
        y=cat("y", np.int8),
        cohort=cat("cohort", object),
    )


def _log_rates(params: HazardParams, table: IntervalTable) -> np.ndarray:
    return table.design() @ params.as_array()


def _check_rows(table: IntervalTable) -> None:
    if np.any((table.e == 0) & (table.d == 1)):
        raise LikelihoodError("row with a rating but zero exposure")
    if np.any(table.e < 0):
        raise LikelihoodError("negative exposure")


def log_likelihood(params: HazardParams, table: IntervalTable) -> float:
    """Poisson log-likelihood sum(d * log(e * lambda) - e * lambda)."""
    _check_rows(table)
    log_rate = _log_rates(params, table)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        mu = table.e * np.exp(log_rate)
        mu = np.where(table.e == 0, 0.0, mu)
        events = np.where(table.d == 1, np.log(np.where(table.d == 1, table.e, 1.0)) + log_rate, 0.0)
        total = float(np.sum(events - mu))
    if not math.isfinite(total):
        raise LikelihoodError(f"non-finite log-likelihood at {params}")
    return total


def grad_log_likelihood(params: HazardParams, table: IntervalTable) -> np.ndarray:
    """Gradient over (log_lambda0, beta_success, beta_trust, eta)."""
    _check_rows(table)
    with np.errstate(over="ignore", invalid="ignore"):
        resid = table.d - np.where(table.e == 0, 0.0, table.e * np.exp(_log_rates(params, table)))
        g = table.design().T @ resid
    if not np.all(np.isfinite(g)):
        raise LikelihoodError(f"non-finite gradient at {params}")
    return g


# --------------------------------------------------------------------------
# exact piecewise-exponential likelihood (no grid)


def _event_state(ep) -> int:
    # rating row is right-closed, so a rating exactly at t_place counts as y=0
    return int(ep.tRT > ep.t_place)


def exact_log_likelihood(params: HazardParams, episodes: Iterable, censored: bool = False) -> float:
    """sum_i [log lambda(tRT_i) - Lambda(tRT_i)] over rated episodes.

    With ``censored`` set, unrated episodes add ``-Lambda(horizon)``.
    """
    total = 0.0
    for ep in episodes:
        x = CovariateRow.from_episode(ep)
        if ep.tRT is None:
            if censored:
                total -= cumulative_hazard(params, x, ep.horizon)
            continue
        total += math.log(hazard(params, x, _event_state(ep))) - cumulative_hazard(params, x, ep.tRT)
    return total


def exact_grad_log_likelihood(params: HazardParams, episodes: Iterable,
                              censored: bool = False) -> np.ndarray:
    g = np.zeros(4)
    for ep in episodes:
        x = CovariateRow.from_episode(ep)
        end = ep.tRT if ep.tRT is not None else ep.horizon
        if ep.tRT is None and not censored:
            continue
        pre, post = _pieces(params, x)
        u_pre = np.array([1.0, x.x_success, x.x_trust, 0.0])
        u_post = np.array([1.0, x.x_success, x.x_trust, 1.0])
        g -= pre * min(end, x.t_place) * u_pre + post * max(0.0, end - x.t_place) * u_post
        if ep.tRT is not None:
            g += u_post if _event_state(ep) else u_pre
    return g


# --------------------------------------------------------------------------
# compressed form used by the samplers


@dataclass
class PoissonStats:
    """Sufficient statistics of an :class:`IntervalTable`.

    Rows sharing a covariate vector are merged by summing exposure, so the
    log-likelihood becomes ``theta @ s - sum_g E_g exp(u_g @ theta) + c`` with
    ``s = sum d * u`` and ``c = sum d * log e``. Identical in value to
    :func:`log_likelihood`, but far fewer rows.
    """

    design: np.ndarray
    exposure: np.ndarray
    score: np.ndarray
    constant: float
    n_events: int

    @classmethod
    def from_table(cls, table: IntervalTable) -> PoissonStats:
        _check_rows(table)
        U = table.design()
        keep = table.e > 0
        uniq, inverse = np.unique(U[keep], axis=0, return_inverse=True)
        exposure = np.bincount(inverse.ravel(), weights=table.e[keep], minlength=len(uniq))
        rated = table.d == 1
        return cls(
            design=uniq,
            exposure=exposure,
            score=U[rated].sum(axis=0),
            constant=float(np.log(table.e[rated]).sum()),
            n_events=int(rated.sum()),
        )

    def log_likelihood(self, theta: np.ndarray) -> float:
        with np.errstate(over="ignore"):
            val = theta @ self.score - self.exposure @ np.exp(self.design @ theta) + self.constant
        return float(val)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            mu = self.exposure * np.exp(self.design @ theta)
        return self.score - self.design.T @ mu

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            mu = self.exposure * np.exp(self.design @ theta)
        return -(self.design.T * mu) @ self.design
