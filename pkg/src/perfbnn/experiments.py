"""Seeded end-to-end trials on synthetic systems (tune, train, evaluate).

Shared by the acceptance suite and the scripts in ``scripts/``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import baselines, bnn, calibration, dataset, ensemble, hpo, metrics
from .calibration import DEFAULT_LEVELS
from .synthetic import SyntheticSystem


@dataclass(frozen=True)
class TrialResult:
    seed: int
    mape: float
    ols_mape: float
    cal_before: float
    cal_after: float
    cal_platt: float
    alpha_before: tuple[float, ...]
    alpha_after: tuple[float, ...]
    depth: int
    seconds: float

    def alpha_at(self, rho: float, calibrated: bool = True) -> float:
        alphas = self.alpha_after if calibrated else self.alpha_before
        return alphas[list(DEFAULT_LEVELS).index(float(rho))]

    def to_dict(self) -> dict:
        return asdict(self)


def platt_cal(em: ensemble.EnsembleModel, train: dataset.PerformanceDataset, x, truths,
              levels=DEFAULT_LEVELS) -> float:
    """Cal score when each member is recalibrated by nominal-level remapping instead of scaling.

    Each member's remapping is fitted on the same evaluation fold its scaling
    table was fitted on, so the two recalibrations see identical data.
    """
    means, sds = em.member_moments(x)
    lo = np.zeros((len(levels), em.k, means.shape[1]))
    hi = np.zeros_like(lo)
    for j, m in enumerate(em.members):
        xe = em.prepare(train.rows[m.eval_index])
        pd = bnn.predict_samples(m.model, xe, em.predictive_samples)
        ye = em.normalizer.forward(train.performance[m.eval_index])
        mapped = metrics.platt_levels(pd.mean, pd.sd, ye, levels)
        for i, r in enumerate(mapped):
            half = bnn.z_score(r) * sds[j]
            lo[i, j], hi[i, j] = means[j] - half, means[j] + half
    alphas = [calibration.observed_frequency(em.normalizer.inverse(lo[i].mean(axis=0)),
                                             em.normalizer.inverse(hi[i].mean(axis=0)), truths)
              for i in range(len(levels))]
    return metrics.cal_from_frequencies(levels, alphas)


def run_trial(system: SyntheticSystem, seed: int, n_train: int, n_test: int,
              hp: hpo.Hyperparams | None = None, **tune_kw) -> TrialResult:
    """Draw train/test sets, tune (unless ``hp`` is given), train the ensemble, evaluate."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    train = system.sample(n_train, rng)
    test = system.sample(n_test, rng)
    if hp is None:
        reduced, _ = dataset.remove_collinear(train)
        result = hpo.tune(reduced, seed, **tune_kw)
        hp = result.hyperparams
    em = ensemble.train_ensemble(train, hp, seed=seed)
    x, y = test.rows, test.performance
    after = metrics.frequencies(lambda xx, r: ensemble.ensemble_interval(em, xx, r, True), x, y)
    before = metrics.frequencies(lambda xx, r: ensemble.ensemble_interval(em, xx, r, False), x, y)
    ols = baselines.fit_ols(train.rows, train.performance)
    return TrialResult(
        seed=seed,
        mape=metrics.mape(ensemble.ensemble_predict(em, x), y),
        ols_mape=metrics.mape(ols.predict(x), y),
        cal_before=metrics.cal_from_frequencies(DEFAULT_LEVELS, before),
        cal_after=metrics.cal_from_frequencies(DEFAULT_LEVELS, after),
        cal_platt=platt_cal(em, train, x, y),
        alpha_before=tuple(before),
        alpha_after=tuple(after),
        depth=hp.depth,
        seconds=time.perf_counter() - start,
    )
