"""Interval recalibration by per-level halfwidth scaling.

For each confidence level the member's Gaussian interval ``mean +/- z * sd``
is widened or shrunk by a factor found by grid search on held-out data so
that the fraction of covered truths matches the nominal level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnn import z_score

DEFAULT_LEVELS = tuple(float(r) for r in range(5, 100, 5))
DEFAULT_GRID_SIZE = 200
GRID_LOW, GRID_HIGH = 0.01, 10.0


@dataclass(frozen=True)
class CalibrationTable:
    levels: tuple[float, ...]
    zetas: tuple[float, ...]
    zeta_max_used: tuple[float, ...]

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if len(self.levels) != len(self.zetas) or len(self.levels) != len(self.zeta_max_used):
            raise ValueError("levels, zetas and zeta_max_used must have equal length")
        if lv.size and (np.any(np.diff(lv) <= 0) or lv[0] <= 0 or lv[-1] >= 100):
            raise ValueError("levels must be strictly increasing inside (0, 100)")
        if any(z <= 0 for z in self.zetas):
            raise ValueError("scaling factors must be positive")

    def to_dict(self) -> dict:
        return {"levels": list(self.levels), "zetas": list(self.zetas),
                "zeta_max": list(self.zeta_max_used)}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationTable":
        return cls(tuple(d["levels"]), tuple(d["zetas"]), tuple(d["zeta_max"]))

    @classmethod
    def identity(cls, levels=DEFAULT_LEVELS) -> "CalibrationTable":
        n = len(levels)
        return cls(tuple(levels), (1.0,) * n, (1.0,) * n)


def observed_frequency(lo, hi, truths) -> float:
    """Percentage of truths inside their closed interval ``[lo, hi]``."""
    lo, hi, truths = (np.asarray(a, dtype=float).ravel() for a in (lo, hi, truths))
    if not (lo.size == hi.size == truths.size) or truths.size == 0:
        raise ValueError("intervals and truths must be non-empty and equally long")
    if np.any(lo > hi):
        raise ValueError("interval with lo > hi")
    return float(np.count_nonzero((truths >= lo) & (truths <= hi)) * 100.0 / truths.size)


def _scaled_distances(means, halfwidths, truths) -> np.ndarray:
    means, halfwidths, truths = (np.asarray(a, dtype=float).ravel() for a in (means, halfwidths, truths))
    if not (means.size == halfwidths.size == truths.size) or truths.size == 0:
        raise ValueError("means, halfwidths and truths must be non-empty and equally long")
    if np.any(halfwidths <= 0):
        raise ValueError("halfwidths must be positive")
    return np.abs(truths - means) / halfwidths


def zeta_max(means, halfwidths, truths) -> float:
    """Smallest scale at which every truth lies inside its scaled interval (1 if all exact)."""
    d = _scaled_distances(means, halfwidths, truths)
    top = float(d.max())
    return top if top > 0 else 1.0


def scaling_grid(zmax: float, grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    return np.geomspace(GRID_LOW * zmax, GRID_HIGH * zmax, grid_size)


def coverage_curve(distances: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Observed frequency (percent) at each scale in ``grid``."""
    d = np.sort(distances)
    return np.searchsorted(d, grid, side="right") * 100.0 / d.size


def search_scaling(means, halfwidths, truths, rho: float,
                   grid_size: int = DEFAULT_GRID_SIZE) -> float:
    """Grid scale minimising |rho - observed frequency|; smallest scale wins ties."""
    d = _scaled_distances(means, halfwidths, truths)
    top = float(d.max())
    grid = scaling_grid(top if top > 0 else 1.0, grid_size)
    gap = np.abs(rho - coverage_curve(d, grid))
    return float(grid[np.argmin(gap)])


def calibrate_member(means, sds, truths, levels=DEFAULT_LEVELS,
                     grid_size: int = DEFAULT_GRID_SIZE) -> CalibrationTable:
    """Fit one scale per level from a member's predictive means/sds on its evaluation fold."""
    means = np.asarray(means, dtype=float).ravel()
    if means.size == 0:
        raise ValueError("empty evaluation set")
    sds = np.asarray(sds, dtype=float).ravel()
    zetas, zmaxes = [], []
    for rho in levels:
        half = z_score(rho) * sds
        zmaxes.append(zeta_max(means, half, truths))
        zetas.append(search_scaling(means, half, truths, rho, grid_size))
    return CalibrationTable(tuple(float(r) for r in levels), tuple(zetas), tuple(zmaxes))


def zeta_at(table: CalibrationTable, rho: float) -> float:
    """Scale for any level: exact at fitted levels, clamped outside them.

    Between two fitted levels the halfwidth multiplier ``zeta * z(rho)`` is
    interpolated linearly, not ``zeta`` itself. Fitted multipliers are
    non-decreasing across levels (every level searches the same multiplier
    grid), so this keeps interval width monotone in ``rho``; interpolating
    ``zeta`` directly does not when ``zeta`` falls steeply between levels.
    """
    if not table.levels:
        raise ValueError("empty calibration table")
    if not 0 < rho < 100:
        raise ValueError(f"confidence level must be in (0, 100), got {rho}")
    levels = np.asarray(table.levels, dtype=float)
    zetas = np.asarray(table.zetas, dtype=float)
    hit = np.flatnonzero(levels == rho)
    if hit.size:
        return float(zetas[hit[0]])
    if rho < levels[0]:
        return float(zetas[0])
    if rho > levels[-1]:
        return float(zetas[-1])
    multiplier = np.interp(rho, levels, zetas * z_score(levels))
    return float(multiplier / z_score(rho))
