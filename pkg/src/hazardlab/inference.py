"""Posterior sampling for the hazard model.

Chains are run with an adaptive random-walk Metropolis sampler: during warmup
a diagonal proposal is tuned toward a target acceptance rate, then frozen.
Each chain owns a private random stream seeded from ``(seed, chain)`` so a run
is reproducible regardless of how chains are scheduled.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np

from .hazardmodel import PARAM_NAMES, HazardParams, IntervalTable, PoissonStats

RHAT_GATE = 1.05
INTERVAL_MASS = 0.94


@dataclass(frozen=True)
class FitConfig:
    chains: int = 4
    draws: int = 5000
    warmup: int = 2000
    seed: int = 0
    prior_mean: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    prior_sd: tuple[float, ...] = (2.0, 2.0, 2.0, 2.0)
    target_accept: float = 0.30
    max_init_tries: int = 100

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("chains must be >= 2")
        if self.draws < 1 or self.warmup < 0:
            raise ValueError("draws must be >= 1 and warmup >= 0")
        if len(self.prior_mean) != 4 or len(self.prior_sd) != 4:
            raise ValueError("priors need one entry per parameter")
        if any(not sd > 0 for sd in self.prior_sd):
            raise ValueError("prior sd must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class PosteriorChains:
    """Post-warmup draws, shape (chains, draws, 4), in ``PARAM_NAMES`` order."""

    draws: np.ndarray
    acceptance: np.ndarray
    seeds: list = field(default_factory=list)
    names: tuple[str, ...] = PARAM_NAMES

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def param(self, name: str) -> np.ndarray:
        if name == "lambda0":
            return np.exp(self.draws[..., self.names.index("log_lambda0")])
        return self.draws[..., self.names.index(name)]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["chain", "draw", *self.names])
        for c in range(self.n_chains):
            for i in range(self.n_draws):
                writer.writerow([c, i, *(repr(float(v)) for v in self.draws[c, i])])

    @classmethod
    def read_csv(cls, fh: IO[str]) -> PosteriorChains:
        rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = tuple(header[2:])
        if not body:
            raise ValueError("posterior file holds no draws")
        data = np.array([[float(v) for v in r] for r in body])
        chains = data[:, 0].astype(int)
        n_chains = chains.max() + 1
        per = [data[chains == c, 2:] for c in range(n_chains)]
        if len({len(p) for p in per}) != 1:
            raise ValueError("chains have unequal draw counts")
        return cls(np.stack(per), np.full(n_chains, np.nan), [], names)


# --------------------------------------------------------------------------
# sampler harness


def _adaptive_phases(warmup: int) -> list[int]:
    return sorted({int(warmup * f) for f in (0.15, 0.4, 0.75)} - {0})


def adaptive_metropolis(
    log_density: Callable[[np.ndarray], float],
    init: np.ndarray,
    n_warmup: int,
    n_draws: int,
    rng: np.random.Generator,
    target_accept: float = 0.30,
    scale: np.ndarray | None = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Random-walk Metropolis with a diagonal proposal tuned during warmup.

    The global step multiplier follows a Robbins-Monro recursion on the
    acceptance probability. At the end of each warmup phase the per-coordinate
    shape is reset to the spread of that phase's draws. Returns the kept draws,
    their acceptance rate and the frozen proposal scale.
    """
    x = np.array(init, dtype=float)
    dim = x.size
    shape = np.full(dim, 0.1) if scale is None else np.array(scale, dtype=float)
    log_mult = 0.0
    lp = log_density(x)
    if not np.isfinite(lp):
        raise ValueError("log density is not finite at the initial point")

    total = n_warmup + n_draws
    noise = rng.standard_normal((total, dim))
    log_u = np.log(rng.random(total))
    boundaries = _adaptive_phases(n_warmup)
    phase_start, phase_iter, phase_accepts = 0, 0, 0
    warm = np.empty((n_warmup, dim))
    out = np.empty((n_draws, dim))
    accepted = 0

    for it in range(total):
        step = np.exp(log_mult) * shape
        prop = x + step * noise[it]
        lp_prop = log_density(prop)
        delta = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
        accept = log_u[it] < delta
        if accept:
            x, lp = prop, lp_prop
        if it < n_warmup:
            warm[it] = x
            phase_iter += 1
            phase_accepts += accept
            prob = math.exp(min(0.0, delta)) if np.isfinite(delta) else 0.0
            log_mult += (prob - target_accept) / phase_iter ** 0.6
            if it + 1 in boundaries:
                block = warm[phase_start:it + 1]
                spread = block.std(axis=0)
                if len(block) >= 20 and np.all(spread > 0) and phase_accepts / len(block) > 0.05:
                    shape = spread
                    log_mult = math.log(2.38 / math.sqrt(dim))
                phase_start, phase_iter, phase_accepts = it + 1, 0, 0
        else:
            out[it - n_warmup] = x
            accepted += accept
    return out, accepted / max(n_draws, 1), np.exp(log_mult) * shape


# --------------------------------------------------------------------------
# posterior for the hazard model


def _log_prior(theta: np.ndarray, config: FitConfig) -> float:
    z = (theta - np.asarray(config.prior_mean)) / np.asarray(config.prior_sd)
    return -0.5 * float(z @ z)


def log_posterior(theta: np.ndarray, stats: PoissonStats, config: FitConfig) -> float:
    return stats.log_likelihood(theta) + _log_prior(theta, config)


class _Centering:
    """Linear reparameterisation that decorrelates the intercept.

    Sampling happens in ``phi`` where ``phi_0 = theta_0 + sum_k c_k theta_k``
    with ``c`` the event-weighted covariate means. Unit Jacobian, so the
    target density is unchanged.
    """

    def __init__(self, stats: PoissonStats):
        self.c = stats.score / stats.n_events
        self.c[0] = 0.0

    def to_theta(self, phi: np.ndarray) -> np.ndarray:
        theta = np.array(phi, dtype=float)
        theta[..., 0] = phi[..., 0] - phi[..., 1:] @ self.c[1:]
        return theta

    def to_phi(self, theta: np.ndarray) -> np.ndarray:
        phi = np.array(theta, dtype=float)
        phi[..., 0] = theta[..., 0] + theta[..., 1:] @ self.c[1:]
        return phi


def _run_chain(stats: PoissonStats, config: FitConfig, chain: int):
    rng = np.random.default_rng([config.seed, chain])
    center = _Centering(stats)
    mean = np.asarray(config.prior_mean, dtype=float)
    sd = np.asarray(config.prior_sd, dtype=float)
    init_sd = np.where(np.isfinite(sd), sd, 1.0)

    def target(phi):
        return log_posterior(center.to_theta(phi), stats, config)

    for _ in range(config.max_init_tries):
        theta0 = mean + init_sd * rng.standard_normal(4)
        if np.isfinite(target(center.to_phi(theta0))):
            break
    else:
        raise RuntimeError(
            f"chain {chain}: no finite posterior after {config.max_init_tries} initial draws"
        )
    draws, acc, _ = adaptive_metropolis(
        target, center.to_phi(theta0), config.warmup, config.draws, rng,
        config.target_accept, scale=np.minimum(0.1, init_sd),
    )
    return center.to_theta(draws), acc


def fit(table: IntervalTable, config: FitConfig | None = None, n_jobs: int = 1) -> PosteriorChains:
    """Draw posterior samples of the hazard parameters.

    Prior: independent normals on (log_lambda0, beta_success, beta_trust,
    eta). Chains start from independent prior draws.
    """
    config = config or FitConfig()
    if len(table) == 0 or table.n_events == 0:
        raise ValueError("zero rated episodes in the interval table")
    stats = PoissonStats.from_table(table)
    runs = [None] * config.chains
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_chain, stats, config, c) for c in range(config.chains)]
            runs = [f.result() for f in futures]
    else:
        runs = [_run_chain(stats, config, c) for c in range(config.chains)]
    draws = np.stack([r[0] for r in runs])
    return PosteriorChains(
        draws=draws,
        acceptance=np.array([r[1] for r in runs]),
        seeds=[(config.seed, c) for c in range(config.chains)],
    )


def map_estimate(table: IntervalTable, config: FitConfig | None = None,
                 max_iter: int = 500, tol: float = 1e-8) -> HazardParams:
    """Posterior mode by damped Newton ascent with a backtracking line search.

    Infinite prior sds give flat priors, i.e. the maximum-likelihood point.
    """
    config = config or FitConfig()
    stats = PoissonStats.from_table(table)
    mean = np.asarray(config.prior_mean, dtype=float)
    prec = 1.0 / np.asarray(config.prior_sd, dtype=float) ** 2

    def objective(theta):
        return stats.log_likelihood(theta) - 0.5 * float(prec @ (theta - mean) ** 2)

    theta = np.where(np.isfinite(config.prior_sd), mean, 0.0)
    if stats.n_events and stats.exposure.sum() > 0:
        theta[0] = math.log(stats.n_events / stats.exposure.sum())
    f = objective(theta)
    for _ in range(max_iter):
        g = stats.grad(theta) - prec * (theta - mean)
        if np.max(np.abs(g)) < tol:
            return HazardParams.from_array(theta)
        neg_h = -stats.hessian(theta) + np.diag(prec)
        ridge = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(neg_h + ridge * np.eye(4))
                break
            except np.linalg.LinAlgError:
                ridge = max(1e-12, 10 * ridge) * (1 + np.trace(neg_h))
        direction = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        step = 1.0
        slope = float(g @ direction)
        while step > 1e-12:
            cand = theta + step * direction
            f_cand = objective(cand)
            # round-off slack lets the last Newton steps through near the optimum
            if np.isfinite(f_cand) and f_cand >= f + 1e-4 * step * slope - 1e-13 * abs(f):
                break
            step *= 0.5
        else:
            # no ascent left at round-off level
            break
        theta, f = cand, f_cand
    g = stats.grad(theta) - prec * (theta - mean)
    if np.max(np.abs(g)) < tol:
        return HazardParams.from_array(theta)
    raise RuntimeError(f"MAP search did not converge (|grad| = {np.max(np.abs(g)):.3g})")


# --------------------------------------------------------------------------
# diagnostics and summaries


def r_hat(chains, parameter: str | None = None) -> float:
    """Split-chain potential scale reduction factor.

    ``chains`` is a :class:`PosteriorChains` (with ``parameter``) or an array of
    shape (chains, draws). Returns nan when the within-chain variance is zero.
    """
    x = chains.param(parameter) if isinstance(chains, PosteriorChains) else np.asarray(chains, float)
    m, n = x.shape
    if m < 2 or n < 4:
        raise ValueError("r_hat needs at least 2 chains of 4 draws")
    half = n // 2
    splits = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    w = splits.var(axis=1, ddof=1).mean()
    if not w > 0:
        return math.nan
    b = half * splits.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(var_plus / w))


@dataclass(frozen=True)
class ParamRow:
    name: str
    mean: float
    sd: float
    low: float
    high: float
    r_hat: float

    @property
    def degenerate(self) -> bool:
        return math.isnan(self.r_hat)


@dataclass
class ParamSummary:
    rows: dict[str, ParamRow]

    def __getitem__(self, name: str) -> ParamRow:
        return self.rows[name]

    def converged(self, gate: float = RHAT_GATE) -> bool:
        return all(not r.degenerate and r.r_hat < gate for r in self.rows.values())

    def write_csv(self, fh: IO[str], names: Sequence[str] = ("lambda0", "beta_success",
                                                               "beta_trust", "eta")) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "mean", "sd", "hdi_low", "hdi_high", "r_hat"])
        for name in names:
            r = self.rows[name]
            writer.writerow([name, *(f"{v:.6g}" for v in (r.mean, r.sd, r.low, r.high, r.r_hat))])

    def table(self) -> str:
        lines = [f"{'parameter':<14}{'mean':>11}{'sd':>11}{'3%':>11}{'97%':>11}{'r_hat':>8}"]
        for r in self.rows.values():
            lines.append(f"{r.name:<14}{r.mean:>11.4g}{r.sd:>11.4g}{r.low:>11.4g}"
                         f"{r.high:>11.4g}{r.r_hat:>8.3f}")
        return "\n".join(lines)


def summarize(chains: PosteriorChains, mass: float = INTERVAL_MASS) -> ParamSummary:
    """Pooled mean, sd, central interval and r_hat for every parameter.

    The baseline hazard appears twice: on the log scale and exponentiated.
    """
    tail = (1 - mass) / 2
    rows = {}
    for name in ("log_lambda0", "lambda0", *chains.names[1:]):
        x = chains.param(name)
        flat = x.ravel()
        low, high = np.quantile(flat, [tail, 1 - tail])
        rh = r_hat(x) if chains.n_chains >= 2 and chains.n_draws >= 4 else math.nan
        rows[name] = ParamRow(name, float(flat.mean()), float(flat.std(ddof=1)) if flat.size > 1
                              else 0.0, float(low), float(high), rh)
    return ParamSummary(rows)
