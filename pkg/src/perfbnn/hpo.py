"""Bayesian-optimisation hyperparameter tuning with depth growth.

Depth is searched incrementally: at each depth a short BO run tunes the other
hyperparameters, and growth stops once the best validation error gets worse
than at the previous depth. A final BO run at the chosen depth is
warm-started with every evaluation made so far, with depth as a GP input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from . import bnn, dataset, metrics

log = logging.getLogger(__name__)

EPOCH_CHOICES = (500, 1000, 2000)
WIDTH_MULTIPLIERS = (1, 2, 4)
LR_RANGE = (1e-4, 0.1)
LAPLACE_RANGE = (1e-4, 1.0)
MAX_DEPTH = 8
N_INIT, N_ITER, N_FINAL = 4, 12, 8
N_CANDIDATES = 2048
VALIDATION_FRACTION = 1.0 / 3.0


@dataclass(frozen=True)
class Hyperparams:
    depth: int
    epochs: int
    base_lr: float
    neurons_per_layer: int
    laplace_scale: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(int(d["depth"]), int(d["epochs"]), float(d["base_lr"]),
                   int(d["neurons_per_layer"]), float(d["laplace_scale"]))


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter domain for a system with ``n_options`` (post-preprocessing) options.

    Encoded vectors are ``[depth, epochs, log lr, neurons, log laplace]`` with
    every coordinate in [0, 1].
    """

    n_options: int
    max_depth: int = MAX_DEPTH

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(m * self.n_options for m in WIDTH_MULTIPLIERS)

    def validate(self, hp: Hyperparams):
        if not 1 <= hp.depth <= self.max_depth:
            raise ValueError(f"depth {hp.depth} outside [1, {self.max_depth}]")
        if hp.epochs not in EPOCH_CHOICES:
            raise ValueError(f"epochs {hp.epochs} not in {EPOCH_CHOICES}")
        if hp.neurons_per_layer not in self.widths:
            raise ValueError(f"neurons_per_layer {hp.neurons_per_layer} not in {self.widths}")
        if not LR_RANGE[0] <= hp.base_lr <= LR_RANGE[1]:
            raise ValueError(f"base_lr {hp.base_lr} outside {LR_RANGE}")
        if not LAPLACE_RANGE[0] <= hp.laplace_scale <= LAPLACE_RANGE[1]:
            raise ValueError(f"laplace_scale {hp.laplace_scale} outside {LAPLACE_RANGE}")

    def _depth_unit(self, depth: int) -> float:
        return (depth - 1) / (self.max_depth - 1) if self.max_depth > 1 else 0.0

    def encode(self, hp: Hyperparams) -> np.ndarray:
        self.validate(hp)
        return np.array([
            self._depth_unit(hp.depth),
            EPOCH_CHOICES.index(hp.epochs) / (len(EPOCH_CHOICES) - 1),
            _log_unit(hp.base_lr, LR_RANGE),
            self.widths.index(hp.neurons_per_layer) / (len(self.widths) - 1),
            _log_unit(hp.laplace_scale, LAPLACE_RANGE),
        ])

    def decode(self, u) -> Hyperparams:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return Hyperparams(
            depth=1 + int(round(u[0] * (self.max_depth - 1))),
            epochs=EPOCH_CHOICES[int(round(u[1] * (len(EPOCH_CHOICES) - 1)))],
            base_lr=_from_log_unit(u[2], LR_RANGE),
            neurons_per_layer=self.widths[int(round(u[3] * (len(self.widths) - 1)))],
            laplace_scale=_from_log_unit(u[4], LAPLACE_RANGE),
        )

    def random_candidates(self, rng, depth: int, n: int) -> np.ndarray:
        """``n`` grid-feasible encoded points at a fixed depth."""
        u = np.empty((n, 5))
        u[:, 0] = self._depth_unit(depth)
        u[:, 1] = rng.integers(len(EPOCH_CHOICES), size=n) / (len(EPOCH_CHOICES) - 1)
        u[:, 2] = rng.random(n)
        u[:, 3] = rng.integers(len(WIDTH_MULTIPLIERS), size=n) / (len(WIDTH_MULTIPLIERS) - 1)
        u[:, 4] = rng.random(n)
        return u

    def neighbours(self, u: np.ndarray) -> np.ndarray:
        """Grid neighbours of an encoded point: one discrete step or a small continuous nudge."""
        out = []
        for dim in (1, 3):
            for step in (-0.5, 0.5):
                v = u.copy()
                v[dim] = u[dim] + step
                if 0.0 <= v[dim] <= 1.0:
                    out.append(v)
        for dim in (2, 4):
            for step in (-0.05, -0.01, 0.01, 0.05):
                v = u.copy()
                v[dim] = min(1.0, max(0.0, u[dim] + step))
                out.append(v)
        return np.array(out)


def _log_unit(v, bounds):
    lo, hi = math.log10(bounds[0]), math.log10(bounds[1])
    return (math.log10(v) - lo) / (hi - lo)


def _from_log_unit(u, bounds):
    lo, hi = math.log10(bounds[0]), math.log10(bounds[1])
    return float(10 ** (lo + float(u) * (hi - lo)))


@dataclass
class EvaluationRecord:
    hyperparams: Hyperparams
    score: float
    seed: int
    phase: str = "bo"

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.score)

    def to_dict(self) -> dict:
        return {"hyperparams": self.hyperparams.to_dict(),
                "score": None if self.failed else self.score,
                "failed": self.failed, "seed": self.seed, "phase": self.phase}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationRecord":
        score = math.inf if d.get("failed") or d["score"] is None else float(d["score"])
        return cls(Hyperparams.from_dict(d["hyperparams"]), score, int(d["seed"]), d.get("phase", "bo"))


# ---------------------------------------------------------------------------
# Gaussian-process surrogate
# ---------------------------------------------------------------------------

JITTER_START, JITTER_MAX = 1e-8, 1e-4
GP_RESTARTS = 16
_LOG_BOUNDS = [(-4.6, 2.3)] * 5 + [(-4.6, 4.6), (-13.8, 0.0)]  # lengthscales, signal var, noise var


def _sq_dists(a, b, ls):
    a = a / ls
    b = b / ls
    return np.maximum(np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T, 0.0)


def _cholesky_with_jitter(k):
    jitter = JITTER_START
    n = k.shape[0]
    while True:
        try:
            return linalg.cholesky(k + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            jitter *= 10
            if jitter > JITTER_MAX:
                raise


@dataclass
class GpSurrogate:
    """Zero-mean GP on standardised targets with a squared-exponential ARD kernel."""

    x: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float = 0.0
    y_std: float = 1.0
    _chol: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        k = self.signal_var * np.exp(-0.5 * _sq_dists(self.x, self.x, self.lengthscales))
        k[np.diag_indices_from(k)] += self.noise_var
        try:
            self._chol, _ = _cholesky_with_jitter(k)
        except linalg.LinAlgError:
            raise np.linalg.LinAlgError("GP kernel matrix singular after maximum jitter") from None
        z = (self.y - self.y_mean) / self.y_std
        self._alpha = linalg.cho_solve((self._chol, True), z)

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and sd (of the latent function) in target units."""
        xq = np.atleast_2d(xq)
        ks = self.signal_var * np.exp(-0.5 * _sq_dists(xq, self.x, self.lengthscales))
        mu = ks @ self._alpha
        v = linalg.solve_triangular(self._chol, ks.T, lower=True)
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), 0.0)
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def _neg_log_marginal(theta, x, z):
    """Negative log marginal likelihood and its gradient in log-hyperparameters."""
    ls = np.exp(theta[:5])
    sv, nv = math.exp(theta[5]), math.exp(theta[6])
    diff2 = (x[:, None, :] - x[None, :, :]) ** 2 / ls**2
    k_se = sv * np.exp(-0.5 * diff2.sum(axis=2))
    k = k_se.copy()
    k[np.diag_indices_from(k)] += nv + JITTER_START
    try:
        c = linalg.cholesky(k, lower=True)
    except linalg.LinAlgError:
        return 1e10, np.zeros_like(theta)
    a = linalg.cho_solve((c, True), z)
    nll = float(0.5 * z @ a + np.sum(np.log(np.diag(c))) + 0.5 * len(z) * math.log(2 * math.pi))
    w = np.outer(a, a) - linalg.cho_solve((c, True), np.eye(len(z)))
    grad = np.empty_like(theta)
    grad[:5] = -0.5 * np.einsum("ij,ijd->d", w * k_se, diff2)
    grad[5] = -0.5 * np.sum(w * k_se)
    grad[6] = -0.5 * nv * np.trace(w)
    return nll, grad


def gp_fit_xy(x, y, rng=None) -> GpSurrogate:
    """Fit kernel hyperparameters by maximising the log marginal likelihood (multi-start)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two observations")
    rng = rng if rng is not None else np.random.default_rng(0)
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    z = (y - y_mean) / y_std
    lo = np.array([b[0] for b in _LOG_BOUNDS])
    hi = np.array([b[1] for b in _LOG_BOUNDS])
    starts = [np.array([math.log(0.3)] * 5 + [0.0, math.log(1e-2)])]
    starts += [lo + rng.random(lo.size) * (hi - lo) for _ in range(GP_RESTARTS - 1)]
    best = None
    for s in starts:
        res = optimize.minimize(_neg_log_marginal, s, args=(x, z), jac=True, method="L-BFGS-B",
                                bounds=_LOG_BOUNDS)
        if best is None or res.fun < best.fun:
            best = res
    th = best.x
    return GpSurrogate(x, y, np.exp(th[:5]), math.exp(th[5]), math.exp(th[6]), y_mean, y_std)


def _targets(records: Sequence[EvaluationRecord]) -> np.ndarray:
    """GP targets: log1p of the score, with failed runs pinned just above the worst success."""
    s = np.array([r.score for r in records], dtype=float)
    finite = s[np.isfinite(s)]
    worst = finite.max() if finite.size else 100.0
    s = np.where(np.isfinite(s), s, 2.0 * worst + 1.0)
    return np.log1p(s)


def gp_fit(records: Sequence[EvaluationRecord], space: SearchSpace, rng=None) -> GpSurrogate:
    x = np.array([space.encode(r.hyperparams) for r in records])
    return gp_fit_xy(x, _targets(records), rng)


def expected_improvement(mean, sd, best):
    """EI for minimisation; reduces to max(best - mean, 0) where sd is zero."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be non-negative")
    gain = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, gain / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, gain * stats.norm.cdf(u) + sd * stats.norm.pdf(u), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def propose_encoded(surrogate: GpSurrogate, space: SearchSpace, rng, depth: int,
                    best: float, incumbent: np.ndarray | None = None,
                    n_candidates: int = N_CANDIDATES) -> np.ndarray:
    cand = space.random_candidates(rng, depth, n_candidates)
    if incumbent is not None:
        cand = np.vstack([cand, space.neighbours(incumbent)])
    mu, sd = surrogate.predict(cand)
    ei = expected_improvement(mu, sd, best)
    if not np.any(ei > 0):
        return cand[0]
    return cand[int(np.argmax(ei))]


def propose_next(surrogate: GpSurrogate, space: SearchSpace, rng, depth: int,
                 records: Sequence[EvaluationRecord] = ()) -> Hyperparams:
    """Maximise EI over seeded random candidates plus neighbours of the incumbent."""
    at_depth = [r for r in records if r.hyperparams.depth == depth]
    incumbent, best = None, float(np.min(surrogate.y))
    if at_depth:
        t = _targets(records)
        idx = [i for i, r in enumerate(records) if r.hyperparams.depth == depth]
        j = idx[int(np.argmin(t[idx]))]
        incumbent, best = space.encode(records[j].hyperparams), float(t[j])
    return space.decode(propose_encoded(surrogate, space, rng, depth, best, incumbent))


# ---------------------------------------------------------------------------
# BO loops
# ---------------------------------------------------------------------------

Objective = Callable[[Hyperparams, int], float]


def _eval(objective: Objective, hp: Hyperparams, seed: int, phase: str) -> EvaluationRecord:
    try:
        score = float(objective(hp, seed))
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("evaluation failed for %s: %s", hp, exc)
        score = math.inf
    if not (score >= 0 or math.isinf(score)):
        score = math.inf
    return EvaluationRecord(hp, score, seed, phase)


def _eval_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def bo_minimize(objective: Objective, space: SearchSpace, depth: int, seed: int,
                n_init: int = N_INIT, n_iter: int = N_ITER,
                prior: Sequence[EvaluationRecord] = (), phase: str = "bo") -> list[EvaluationRecord]:
    """Run ``n_init`` random then ``n_iter`` EI-guided evaluations at a fixed depth.

    ``prior`` records (any depth) seed the surrogate but are not re-evaluated.
    Returns only the new records, in evaluation order.
    """
    rng = np.random.default_rng([seed, depth, len(prior)])
    new: list[EvaluationRecord] = []
    for u in space.random_candidates(rng, depth, n_init):
        new.append(_eval(objective, space.decode(u), _eval_seed(seed, len(prior) + len(new)), "init"))
    for _ in range(n_iter):
        history = list(prior) + new
        gp = gp_fit(history, space, rng)
        hp = propose_next(gp, space, rng, depth, history)
        new.append(_eval(objective, hp, _eval_seed(seed, len(prior) + len(new)), phase))
    return new


def best_record(records: Sequence[EvaluationRecord], depth: int | None = None) -> EvaluationRecord:
    pool = [r for r in records if depth is None or r.hyperparams.depth == depth]
    return min(pool, key=lambda r: r.score)


def layer_growth(objective: Objective, space: SearchSpace, seed: int,
                 n_init: int = N_INIT, n_iter: int = N_ITER):
    """Grow depth until the best score at a depth is worse than at the previous one.

    Returns ``(best_depth, records)`` with the records of every visited depth.
    """
    records: list[EvaluationRecord] = []
    best_by_depth: dict[int, float] = {}
    for depth in range(1, space.max_depth + 1):
        run = bo_minimize(objective, space, depth, seed, n_init, n_iter, prior=records)
        records.extend(run)
        best_by_depth[depth] = best_record(run).score
        log.info("depth %d: best validation score %.4g", depth, best_by_depth[depth])
        if depth > 1 and best_by_depth[depth] > best_by_depth[depth - 1]:
            break
    best_depth = min(best_by_depth, key=lambda d: (best_by_depth[d], d))
    return best_depth, records


def final_bo(objective: Objective, space: SearchSpace, depth: int, prior: Sequence[EvaluationRecord],
             seed: int, n_iter: int = N_FINAL):
    """Warm-started BO at ``depth``; returns (best hyperparams at that depth, new records)."""
    if not prior:
        raise ValueError("final tuning needs prior evaluations")
    new = bo_minimize(objective, space, depth, seed, n_init=0, n_iter=n_iter, prior=prior, phase="final")
    return best_record(list(prior) + new, depth).hyperparams, new


# ---------------------------------------------------------------------------
# Dataset-backed objective
# ---------------------------------------------------------------------------

def validation_objective(train: dataset.PerformanceDataset, seed: int,
                         predictive_samples: int = bnn.DEFAULT_PREDICTIVE_SAMPLES) -> tuple[Objective, SearchSpace]:
    """Hold out a third of ``train`` (already collinearity-reduced) and score by MAPE on it."""
    n = len(train)
    n_val = max(1, int(round(n * VALIDATION_FRACTION)))
    if n - n_val < 2:
        raise dataset.DataError(f"{n} points are too few for a train/validation split")
    perm = np.random.default_rng([seed, 101]).permutation(n)
    fit_part, val_part = train.subset(np.sort(perm[n_val:])), train.subset(np.sort(perm[:n_val]))
    fit_norm, nz = dataset.normalize_performance(fit_part)

    def objective(hp: Hyperparams, eval_seed: int) -> float:
        model = bnn.train_bnn(fit_norm.rows, fit_norm.performance, hp, eval_seed)
        pd = bnn.predict_samples(model, val_part.rows, predictive_samples)
        return metrics.mape(nz.inverse(pd.mean), val_part.performance)

    return objective, SearchSpace(len(train.schema))


def tune_depth(train: dataset.PerformanceDataset, seed: int, **kw):
    objective, space = validation_objective(train, seed)
    return layer_growth(objective, space, seed, **kw)


def final_tune(train: dataset.PerformanceDataset, depth: int, prior_records, seed: int,
               n_iter: int = N_FINAL):
    objective, space = validation_objective(train, seed)
    return final_bo(objective, space, depth, prior_records, seed, n_iter)


@dataclass
class TuningResult:
    best_depth: int
    hyperparams: Hyperparams
    records: list[EvaluationRecord]

    def to_dict(self) -> dict:
        return {"best_depth": self.best_depth, "hyperparams": self.hyperparams.to_dict(),
                "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "TuningResult":
        return cls(int(d["best_depth"]), Hyperparams.from_dict(d["hyperparams"]),
                   [EvaluationRecord.from_dict(r) for r in d["records"]])


def tune(train: dataset.PerformanceDataset, seed: int, n_init: int = N_INIT, n_iter: int = N_ITER,
         n_final: int = N_FINAL, max_depth: int = MAX_DEPTH) -> TuningResult:
    """Layer growth followed by the warm-started final run, on a collinearity-reduced dataset."""
    objective, space = validation_objective(train, seed)
    space = SearchSpace(space.n_options, max_depth)
    depth, records = layer_growth(objective, space, seed, n_init, n_iter)
    hp, new = final_bo(objective, space, depth, records, seed, n_final)
    return TuningResult(depth, hp, records + new)
