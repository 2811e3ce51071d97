"""K-member ensemble of calibrated BNNs: the trained, serialisable artifact."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import bnn, dataset
from .calibration import (DEFAULT_GRID_SIZE, DEFAULT_LEVELS, CalibrationTable,
                          calibrate_member, zeta_at)
from .hpo import Hyperparams

DEFAULT_K = 3
FORMAT_VERSION = 1


@dataclass
class Member:
    model: bnn.BnnModel
    calibration: CalibrationTable
    train_index: np.ndarray
    eval_index: np.ndarray

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "calibration": self.calibration.to_dict(),
                "train_index": self.train_index.tolist(), "eval_index": self.eval_index.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Member":
        return cls(bnn.BnnModel.from_dict(d["model"]), CalibrationTable.from_dict(d["calibration"]),
                   np.array(d["train_index"], dtype=int), np.array(d["eval_index"], dtype=int))


@dataclass
class EnsembleModel:
    members: list[Member]
    normalizer: dataset.Normalizer
    preprocess: dataset.PreprocessReport
    schema: dataset.OptionSchema
    hyperparams: Hyperparams
    seed: int
    predictive_samples: int = bnn.DEFAULT_PREDICTIVE_SAMPLES
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.members)

    def prepare(self, x) -> np.ndarray:
        """Raw configurations (original schema order) -> model inputs."""
        return dataset.apply_report(x, self.schema, self.preprocess)

    def member_moments(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Per-member predictive means and total sds on the normalised scale, shape (K, B)."""
        xp = self.prepare(x)
        key = xp.tobytes()
        if key not in self._cache:
            means, sds = [], []
            for m in self.members:
                pd = bnn.predict_samples(m.model, xp, self.predictive_samples)
                means.append(pd.mean)
                sds.append(pd.sd)
            self._cache.clear()
            self._cache[key] = (np.array(means), np.array(sds))
        return self._cache[key]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "k": self.k,
            "predictive_samples": self.predictive_samples,
            "hyperparams": self.hyperparams.to_dict(),
            "schema": self.schema.to_dict(),
            "preprocess": self.preprocess.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        return cls(
            members=[Member.from_dict(m) for m in d["members"]],
            normalizer=dataset.Normalizer(**d["normalizer"]),
            preprocess=dataset.PreprocessReport.from_dict(d["preprocess"]),
            schema=dataset.OptionSchema.from_dict(d["schema"]),
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            seed=int(d["seed"]),
            predictive_samples=int(d["predictive_samples"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "EnsembleModel":
        return cls.from_dict(json.loads(text))


def derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def train_ensemble(train: dataset.PerformanceDataset, hp: Hyperparams, k: int = DEFAULT_K,
                   seed: int = 0, levels=DEFAULT_LEVELS, grid_size: int = DEFAULT_GRID_SIZE,
                   predictive_samples: int = bnn.DEFAULT_PREDICTIVE_SAMPLES) -> EnsembleModel:
    """Preprocess, split into ``k`` folds, train member i on fold i and calibrate it on the rest."""
    if k < 2:
        raise ValueError("ensemble needs at least 2 members")
    if len(train) < 3 * k:
        raise dataset.DataError(f"{len(train)} training points are too few for {k} folds (need {3 * k})")
    reduced, report = dataset.remove_collinear(train)
    normed, nz = dataset.normalize_performance(reduced)
    fold_seed, *member_seeds = derive_seeds(seed, k + 1)
    folds = dataset.kfold_split(len(train), k, fold_seed)
    members = []
    for i, fold in enumerate(folds):
        rest = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        model = bnn.train_bnn(normed.rows[fold], normed.performance[fold], hp, member_seeds[i])
        pd = bnn.predict_samples(model, normed.rows[rest], predictive_samples)
        table = calibrate_member(pd.mean, pd.sd, normed.performance[rest], levels, grid_size)
        members.append(Member(model, table, fold, rest))
    return EnsembleModel(members, nz, report, train.schema, hp, int(seed), predictive_samples)


def _member_mean(v: np.ndarray) -> np.ndarray:
    # Sorting first makes the float sum independent of member order.
    return np.sort(v, axis=0).mean(axis=0)


def ensemble_predict(em: EnsembleModel, x) -> np.ndarray:
    """Mean of member predictive means, in original units."""
    means, _ = em.member_moments(x)
    return em.normalizer.inverse(_member_mean(means))


def member_intervals(em: EnsembleModel, x, rho: float, calibrated: bool = True):
    """Per-member (lo, hi) on the normalised scale, shape (K, B) each."""
    means, sds = em.member_moments(x)
    z = bnn.z_score(rho)
    scale = np.array([zeta_at(m.calibration, rho) if calibrated else 1.0 for m in em.members])
    half = scale[:, None] * z * sds
    return means - half, means + half


def ensemble_interval(em: EnsembleModel, x, rho: float, calibrated: bool = True):
    """Endpoint-averaged member intervals, in original units."""
    lo, hi = member_intervals(em, x, rho, calibrated)
    return em.normalizer.inverse(_member_mean(lo)), em.normalizer.inverse(_member_mean(hi))
