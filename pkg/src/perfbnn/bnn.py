"""Mean-field variational Bayesian neural network.

Every weight has an independent Gaussian posterior ``N(mean, softplus(raw)^2)``.
The first layer's weights get a Laplace prior (L1-style sparsity over the
configuration options); everything else gets ``N(0, prior_sd^2)``. Training
minimises summed Gaussian NLL plus ``KL / N`` with reparameterised draws and
full-batch Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import special

from . import net

if TYPE_CHECKING:
    from .hpo import Hyperparams

DEFAULT_PREDICTIVE_SAMPLES = 300
INITIAL_POSTERIOR_SD = 0.05
# A single extreme weight draw can produce a gradient many orders of magnitude
# above typical; one such step poisons Adam's second-moment estimate and
# freezes training in a high-noise state. Gradients whose norm exceeds this
# multiple of the running typical norm are rescaled down to that bound.
SPIKE_CLIP_FACTOR = 10.0
SPIKE_NORM_DECAY = 0.9
GAUSSIAN_PRIOR_SD = 1.0
_LOG_2PI = math.log(2 * math.pi)
_PREDICT_STREAM = 7


def z_score(rho):
    """Two-sided standard-normal quantile for a confidence level in percent."""
    rho = np.asarray(rho, dtype=float)
    if np.any((rho <= 0) | (rho >= 100)):
        raise ValueError(f"confidence level must be in (0, 100), got {rho}")
    z = special.ndtri(0.5 + rho / 200.0)
    return float(z) if z.ndim == 0 else z


@dataclass(frozen=True)
class PriorSpec:
    laplace_scale: float
    gaussian_sd: float = GAUSSIAN_PRIOR_SD

    def __post_init__(self):
        if not (self.laplace_scale > 0 and self.gaussian_sd > 0):
            raise ValueError("prior scales must be positive")


@dataclass
class BnnModel:
    topology: net.Topology
    mean: np.ndarray
    raw_scale: np.ndarray
    prior: PriorSpec
    meta: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list, repr=False)

    @property
    def layout(self) -> net.Layout:
        return self.topology.layout()

    @property
    def sd(self) -> np.ndarray:
        return net.softplus(self.raw_scale)

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.to_dict(),
            "layout": self.layout.to_dict(),
            "posterior": {"mean": self.mean.tolist(), "raw_scale": self.raw_scale.tolist()},
            "prior": {"laplace_scale": self.prior.laplace_scale,
                      "gaussian_sd": self.prior.gaussian_sd},
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BnnModel":
        topo = net.Topology.from_dict(d["topology"])
        mean = np.array(d["posterior"]["mean"], dtype=float)
        raw = np.array(d["posterior"]["raw_scale"], dtype=float)
        if mean.shape != (topo.n_params,) or raw.shape != mean.shape:
            raise ValueError("posterior arrays do not match topology")
        return cls(topo, mean, raw, PriorSpec(**d["prior"]), dict(d["meta"]))


def sample_weights(mean, raw_scale, rng) -> np.ndarray:
    """One reparameterised draw ``mean + softplus(raw) * eps``."""
    mean = np.asarray(mean, dtype=float)
    return mean + net.softplus(raw_scale) * rng.standard_normal(mean.shape)


def kl_gaussian(mean, sd, prior_sd: float) -> float:
    """Closed-form sum of KL(N(mean, sd^2) || N(0, prior_sd^2))."""
    if prior_sd <= 0:
        raise ValueError("prior_sd must be positive")
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    return float(np.sum(np.log(prior_sd / sd) + (sd**2 + mean**2) / (2 * prior_sd**2) - 0.5))


def laplace_logpdf(w, b: float):
    return -math.log(2 * b) - np.abs(w) / b


def _gauss_logpdf(w, mean, sd):
    return -0.5 * ((w - mean) / sd) ** 2 - np.log(sd) - 0.5 * _LOG_2PI


def kl_laplace_mc_stats(mean, sd, b: float, n_samples: int, rng,
                        chunk: int = 1 << 20) -> tuple[float, float]:
    """Monte-Carlo KL(q || Laplace(0, b)) summed over coordinates: (estimate, stderr)."""
    if b <= 0 or n_samples < 1:
        raise ValueError("need b > 0 and at least one sample")
    mean = np.asarray(mean, dtype=float).ravel()
    sd = np.asarray(sd, dtype=float).ravel()
    per_chunk = max(1, chunk // max(1, mean.size))
    total = total_sq = 0.0
    done = 0
    while done < n_samples:
        s = min(per_chunk, n_samples - done)
        w = mean + sd * rng.standard_normal((s, mean.size))
        vals = np.sum(_gauss_logpdf(w, mean, sd) - laplace_logpdf(w, b), axis=1)
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += s
    est = total / n_samples
    var = max(total_sq / n_samples - est**2, 0.0) * n_samples / max(n_samples - 1, 1)
    return float(est), float(math.sqrt(var / n_samples))


def kl_laplace_mc(mean, sd, b: float, n_samples: int, rng) -> float:
    return kl_laplace_mc_stats(mean, sd, b, n_samples, rng)[0]


def _elbo_terms(topology, layout, prior, mean, raw, x, y, kl_weight, eps):
    """Loss and gradients w.r.t. (mean, raw) for the given standard-normal draws.

    ``eps`` has shape (S, P). The Laplace part of the KL reuses the same draws;
    the Gaussian part is exact.
    """
    sd = net.softplus(raw)
    dsd_draw = net.sigmoid(raw)
    lap = layout.first_layer_weights()
    gauss_mask = np.ones(mean.size, dtype=bool)
    gauss_mask[lap] = False
    b, s0 = prior.laplace_scale, prior.gaussian_sd

    g_mean = np.zeros_like(mean)
    g_sd = np.zeros_like(mean)
    data, lap_kl = 0.0, 0.0
    for e in eps:
        w = mean + sd * e
        mu, noise_raw = net.forward(topology, w, x, layout)
        terms, d_mu, d_raw = net.gaussian_nll(mu, noise_raw, y)
        net.check_finite(terms, mu, noise_raw, y, "gaussian_nll")
        g_w = net.backprop(topology, w, x, d_mu, d_raw, layout)
        data += terms.sum()

        wl, el, sl = w[lap], e[lap], sd[lap]
        lap_kl += np.sum(_gauss_logpdf(wl, mean[lap], sl) - laplace_logpdf(wl, b))
        sign = np.sign(wl)
        g_w[lap] += kl_weight * sign / b
        g_mean += g_w
        g_sd += g_w * e
        # pathwise derivative of log q at its own draw reduces to -1/sd
        g_sd[lap] -= kl_weight / sl
    k = len(eps)
    data /= k
    lap_kl /= k
    g_mean /= k
    g_sd /= k

    mg, sg = mean[gauss_mask], sd[gauss_mask]
    gauss_kl = kl_gaussian(mg, sg, s0)
    g_mean[gauss_mask] += kl_weight * mg / s0**2
    g_sd[gauss_mask] += kl_weight * (sg / s0**2 - 1.0 / sg)

    loss = data + kl_weight * (gauss_kl + lap_kl)
    if not math.isfinite(loss):
        raise net.NumericalError(f"non-finite ELBO (data={data}, kl={gauss_kl + lap_kl})")
    return loss, g_mean, g_sd * dsd_draw, (data, gauss_kl + lap_kl)


def elbo_loss_and_grad(model: BnnModel, x, y, kl_weight: float, eps):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    eps = np.atleast_2d(eps)
    loss, gm, gr, _ = _elbo_terms(model.topology, model.layout, model.prior,
                                  model.mean, model.raw_scale, x, y, kl_weight, eps)
    return loss, gm, gr


def elbo_loss(model: BnnModel, x, y, n_samples: int, kl_weight: float, rng) -> float:
    """Gaussian NLL summed over the batch (averaged over weight draws) plus kl_weight * KL."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if np.size(y) == 0:
        raise ValueError("empty batch")
    eps = rng.standard_normal((n_samples, model.mean.size))
    return elbo_loss_and_grad(model, x, y, kl_weight, eps)[0]


def init_model(topology: net.Topology, prior: PriorSpec, rng, meta=None) -> BnnModel:
    mean = net.init_means(topology, rng)
    raw = np.full(mean.size, float(net.softplus_inv(INITIAL_POSTERIOR_SD)))
    return BnnModel(topology, mean, raw, prior, dict(meta or {}))


def train_bnn(x, y, hp: "Hyperparams", seed: int, train_samples: int = 1) -> BnnModel:
    """Fit one BNN by full-batch Adam on the ELBO for ``hp.epochs`` epochs.

    ``y`` is expected on the normalised [0, 100] scale. Deterministic in ``seed``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    n_in = x.shape[1]
    topology = net.Topology(n_in, (hp.neurons_per_layer,) * hp.depth)
    prior = PriorSpec(hp.laplace_scale)
    rng = np.random.default_rng(seed)
    model = init_model(topology, prior, rng, {
        "epochs": hp.epochs, "base_lr": hp.base_lr, "seed": int(seed), "n_train": int(x.shape[0]),
    })
    layout = model.layout
    kl_weight = 1.0 / x.shape[0]
    p = model.mean.size
    theta = np.concatenate([model.mean, model.raw_scale])
    state = net.AdamState.zeros(theta.size, hp.base_lr)
    trace = []
    typical = None
    for epoch in range(hp.epochs):
        eps = rng.standard_normal((train_samples, p))
        try:
            loss, gm, gr, _ = _elbo_terms(topology, layout, prior, theta[:p], theta[p:],
                                          x, y, kl_weight, eps)
        except net.NumericalError as exc:
            raise net.NumericalError(f"training diverged at epoch {epoch}: {exc}") from None
        trace.append(loss)
        g = np.concatenate([gm, gr])
        norm = float(np.linalg.norm(g))
        if typical is None:
            typical = norm
        elif norm > SPIKE_CLIP_FACTOR * typical:
            g *= SPIKE_CLIP_FACTOR * typical / norm
            norm = typical  # a spike must not inflate the running scale
        typical = SPIKE_NORM_DECAY * typical + (1.0 - SPIKE_NORM_DECAY) * norm
        theta, state = net.adam_step(state, theta, g, epoch)
        if not np.all(np.isfinite(theta)):
            raise net.NumericalError(f"training diverged at epoch {epoch}: non-finite parameters")
    model.mean, model.raw_scale = theta[:p].copy(), theta[p:].copy()
    model.loss_trace = trace
    return model


@dataclass
class PredictiveDistribution:
    """Weight-sample draws of (f, sigma); shape (S,) for one input or (S, B) for a batch."""

    f: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.f.shape[0] < 2:
            raise ValueError("need at least two predictive samples")

    @property
    def mean(self):
        return self.f.mean(axis=0)

    @property
    def epistemic_var(self):
        return self.f.var(axis=0, ddof=1)

    @property
    def aleatoric_var(self):
        return np.mean(self.sigma**2, axis=0)

    @property
    def sd(self):
        return np.sqrt(self.epistemic_var + self.aleatoric_var)


def predict_samples(model: BnnModel, x, n_samples: int = DEFAULT_PREDICTIVE_SAMPLES,
                    rng=None) -> PredictiveDistribution:
    """Sample weights ``n_samples`` times and record (f(x), sigma(x)) for each draw.

    The same weight draws are shared by every row of a batch, so a row's result
    does not depend on what else is in the batch. Without ``rng`` a stream
    derived from the model's training seed is used.
    """
    if rng is None:
        rng = np.random.default_rng([int(model.meta.get("seed", 0)), _PREDICT_STREAM])
    single = np.ndim(x) == 1
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    if xb.shape[1] != model.topology.input_dim:
        raise ValueError(f"input has {xb.shape[1]} features, model expects {model.topology.input_dim}")
    layout = model.layout
    sd = model.sd
    f = np.empty((n_samples, xb.shape[0]))
    sig = np.empty_like(f)
    for s in range(n_samples):
        w = model.mean + sd * rng.standard_normal(sd.shape)
        mu, raw = net.forward(model.topology, w, xb, layout)
        f[s], sig[s] = mu, net.noise_scale(raw)
    if single:
        f, sig = f[:, 0], sig[:, 0]
    return PredictiveDistribution(f, sig)


def interval(pd: PredictiveDistribution, rho: float):
    """Gaussian ``mean -/+ z(rho) * total_sd`` interval."""
    half = z_score(rho) * pd.sd
    m = pd.mean
    return m - half, m + half
