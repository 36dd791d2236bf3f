"""Posterior-predictive survival curves and the empirical overlay."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .hazardmodel import CovariateRow, HazardParams, survival
from .inference import PosteriorChains

BAND_QUANTILES = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class SurvivalCurve:
    grid: np.ndarray
    values: np.ndarray
    provenance: str
    curve_id: int = 0


@dataclass(frozen=True)
class SurvivalBand:
    grid: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray

    def write_csv(self, fh: IO[str], empirical: SurvivalCurve | None = None) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "q05", "q50", "q95", "empirical"])
        emp = empirical.values if empirical is not None else [None] * len(self.grid)
        for row in zip(self.grid, self.q05, self.q50, self.q95, emp):
            writer.writerow([f"{row[0]:.10g}", *(f"{v:.10g}" for v in row[1:4]),
                             "" if row[4] is None else f"{row[4]:.10g}"])


def default_grid(cohort: str, step: float = 0.1) -> np.ndarray:
    end = 60.0 if cohort == "final" else 30.0
    return step * np.arange(int(round(end / step)) + 1)


def _check_grid(grid: np.ndarray) -> None:
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0:
        raise ValueError("grid must be 1-D, start at 0 and hold at least two points")
    steps = np.diff(grid)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform and increasing")


def posterior_survival_curves(
    chains: PosteriorChains,
    rows: Sequence[CovariateRow],
    grid: Sequence[float],
    n_draws: int = 500,
    seed: int = 0,
) -> tuple[list[SurvivalCurve], SurvivalBand]:
    """Survival curves for random (posterior draw, covariate row) pairs.

    Draws are sampled without replacement from the pooled chains; each is
    paired with a covariate row chosen uniformly at random. The band holds
    pointwise 5/50/95 % quantiles across the curves.
    """
    grid = np.asarray(grid, dtype=float)
    _check_grid(grid)
    if not rows:
        raise ValueError("no covariate rows")
    pooled = chains.pooled()
    if pooled.shape[0] == 0:
        raise ValueError("no posterior draws")
    if n_draws > pooled.shape[0]:
        raise ValueError(f"n_draws={n_draws} exceeds the {pooled.shape[0]} available draws")
    rng = np.random.default_rng(seed)
    draw_ids = rng.choice(pooled.shape[0], size=n_draws, replace=False)
    row_ids = rng.integers(len(rows), size=n_draws)
    curves = []
    for k, (di, ri) in enumerate(zip(draw_ids, row_ids)):
        params = HazardParams.from_array(pooled[di])
        curves.append(SurvivalCurve(grid, survival(params, rows[ri], grid),
                                    f"draw{int(di)}:row{int(ri)}", k))
    stack = np.vstack([c.values for c in curves])
    q05, q50, q95 = np.quantile(stack, BAND_QUANTILES, axis=0)
    return curves, SurvivalBand(grid, q05, q50, q95)


def empirical_survival(tRTs: Sequence[float], grid: Sequence[float]) -> SurvivalCurve:
    """Fraction of rating times strictly greater than each grid point."""
    grid = np.asarray(grid, dtype=float)
    t = np.sort(np.asarray(tRTs, dtype=float))
    if t.size == 0:
        warnings.warn("no rating times; empirical survival is constant 1", stacklevel=2)
        return SurvivalCurve(grid, np.ones_like(grid), "empirical")
    greater = t.size - np.searchsorted(t, grid, side="right")
    return SurvivalCurve(grid, greater / t.size, "empirical")


def band_coverage(band: SurvivalBand, empirical: SurvivalCurve, slack: float = 0.0) -> float:
    """Share of grid points where the empirical curve lies inside the band.

    ``slack`` widens the band on both sides; the natural choice is the
    empirical curve's resolution, one over the number of rating times.
    """
    v = empirical.values
    inside = (v >= band.q05 - slack) & (v <= band.q95 + slack)
    return float(inside.mean())


def write_curves_csv(curves: Sequence[SurvivalCurve], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["curve_id", "provenance", "t", "value"])
    for c in curves:
        for t, v in zip(c.grid, c.values):
            writer.writerow([c.curve_id, c.provenance, f"{t:.10g}", f"{v:.10g}"])
