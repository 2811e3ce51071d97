"""Accuracy and calibration metrics, repeat summaries and Welch's t-test."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .bnn import z_score
from .calibration import DEFAULT_LEVELS, observed_frequency


def mape(predicted, truths) -> float:
    """Mean absolute percentage error; points with a zero truth are skipped with a warning."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if predicted.size != truths.size or truths.size == 0:
        raise ValueError("predicted and truths must be non-empty and equally long")
    keep = truths != 0
    if not keep.any():
        raise ValueError("all truths are zero; MAPE undefined")
    if not keep.all():
        warnings.warn(f"MAPE: skipped {int((~keep).sum())} point(s) with zero truth", stacklevel=2)
    return float(np.mean(np.abs(predicted[keep] - truths[keep]) / np.abs(truths[keep])) * 100.0)


def cal_from_frequencies(levels, alphas, weights=None) -> float:
    levels = np.asarray(levels, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    w = np.ones_like(levels) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w * ((levels - alphas) / 100.0) ** 2) * 100.0)


IntervalFn = Callable[[np.ndarray, float], tuple]


def frequencies(interval_fn: IntervalFn, x, truths, levels=DEFAULT_LEVELS) -> list[float]:
    """Observed frequency at each level; ``interval_fn(x, rho)`` returns (lo, hi) arrays."""
    truths = np.asarray(truths, dtype=float).ravel()
    if truths.size == 0:
        raise ValueError("empty test set")
    out = []
    for rho in levels:
        lo, hi = interval_fn(x, rho)
        out.append(observed_frequency(lo, hi, truths))
    return out


def cal_score(interval_fn: IntervalFn, x, truths, levels=DEFAULT_LEVELS, weights=None) -> float:
    return cal_from_frequencies(levels, frequencies(interval_fn, x, truths, levels), weights)


@dataclass(frozen=True)
class EvalSummary:
    scores: tuple[float, ...]
    mean: float
    margin: float

    def to_dict(self) -> dict:
        return {"scores": list(self.scores), "mean": self.mean, "margin": self.margin}


def summarize(scores: Sequence[float]) -> EvalSummary:
    """Mean and half-width of the 95% t confidence interval over repeats."""
    s = np.asarray(scores, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two repeats")
    sd = s.std(ddof=1)
    margin = float(stats.t.ppf(0.975, s.size - 1) * sd / math.sqrt(s.size))
    return EvalSummary(tuple(float(v) for v in s), float(s.mean()), margin)


A_BETTER, B_BETTER, SAME = "a_better", "b_better", "same"


def welch_statistic(a, b) -> tuple[float, float]:
    """Welch t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return float(t), float(df)


def welch_t_test(a, b, alpha: float = 0.05) -> str:
    """Two-sided Welch test on scores where lower is better."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    diff = a.mean() - b.mean()
    if a.var() == 0 and b.var() == 0:
        if diff == 0:
            return SAME
        return A_BETTER if diff < 0 else B_BETTER
    t, df = welch_statistic(a, b)
    p = 2.0 * stats.t.sf(abs(t), df)
    if p >= alpha:
        return SAME
    return A_BETTER if diff < 0 else B_BETTER


def platt_levels(means, sds, truths, levels=DEFAULT_LEVELS, resolution: int = 999) -> list[float]:
    """Recalibrated nominal levels in the style of standard Platt-type recalibration.

    For each target level, pick the nominal level whose unscaled Gaussian
    interval reaches the closest observed frequency on held-out data. Levels
    are confined to (0, 100), so intervals that are too narrow everywhere
    cannot be rescued; that limitation is the point of the comparison.
    """
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    d = np.sort(np.abs(truths - means) / sds)
    candidates = np.linspace(100.0 / (resolution + 1), 100.0 - 100.0 / (resolution + 1), resolution)
    freq = np.searchsorted(d, z_score(candidates), side="right") * 100.0 / d.size
    return [float(candidates[np.argmin(np.abs(rho - freq))]) for rho in levels]
