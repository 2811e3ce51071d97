"""Dense relu network with a mean head and a noise head, plus Adam.

Parameters live in one flat vector; ``Layout`` records where each weight
matrix and bias vector sits. The output layer has two units: the predicted
mean and the raw (pre-softplus) noise scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7
DECAY_START = 1000
DECAY_RATE = 0.001


class NumericalError(ArithmeticError):
    """Raised when a loss or gradient becomes non-finite."""


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def noise_scale(raw):
    """Aleatoric sd from the raw noise-head output."""
    return softplus(raw) + SIGMA_FLOOR


@dataclass(frozen=True)
class Topology:
    input_dim: int
    hidden: tuple[int, ...]

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError(f"hidden widths must be >= 1 and non-empty, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def depth(self) -> int:
        return len(self.hidden)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, 2]
        return list(zip(dims[:-1], dims[1:]))

    def layout(self) -> "Layout":
        return Layout.build(self)

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(int(d["input_dim"]), tuple(d["hidden"]))


@dataclass(frozen=True)
class Layout:
    """Offsets of each (weight, bias) block inside the flat parameter vector."""

    blocks: tuple[tuple[int, int, int, int], ...]  # (w_offset, b_offset, fan_in, fan_out)
    size: int

    @classmethod
    def build(cls, topology: Topology) -> "Layout":
        blocks, off = [], 0
        for fan_in, fan_out in topology.shapes:
            blocks.append((off, off + fan_in * fan_out, fan_in, fan_out))
            off += fan_in * fan_out + fan_out
        return cls(tuple(blocks), off)

    def unpack(self, params: np.ndarray):
        out = []
        for w_off, b_off, fi, fo in self.blocks:
            out.append((params[w_off:b_off].reshape(fi, fo), params[b_off:b_off + fo]))
        return out

    def first_layer_weights(self) -> slice:
        w_off, b_off, _, _ = self.blocks[0]
        return slice(w_off, b_off)

    def to_dict(self) -> list[dict]:
        return [{"weight_offset": w, "bias_offset": b, "shape": [fi, fo]}
                for w, b, fi, fo in self.blocks]


def _check_params(layout: Layout, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (layout.size,):
        raise ValueError(f"expected {layout.size} parameters, got {params.shape}")
    return params


def _as_batch(topology: Topology, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != topology.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {topology.input_dim}")
    return x


def forward(topology: Topology, params, x, layout: Layout | None = None):
    """Evaluate the network on one configuration or a batch.

    Returns ``(mu, raw_noise)``; the aleatoric sd is ``noise_scale(raw_noise)``.
    Scalars come back for a 1-D input, arrays for a batch.
    """
    layout = layout or topology.layout()
    params = _check_params(layout, params)
    single = np.ndim(x) == 1
    h = _as_batch(topology, x)
    blocks = layout.unpack(params)
    for w, b in blocks[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = blocks[-1]
    out = h @ w + b
    if single:
        return float(out[0, 0]), float(out[0, 1])
    return out[:, 0], out[:, 1]


def backprop(topology: Topology, params, x, d_mu, d_raw, layout: Layout | None = None):
    """Vector-Jacobian product: gradient of sum(d_mu*mu + d_raw*raw) w.r.t. params."""
    layout = layout or topology.layout()
    h = _as_batch(topology, x)
    blocks = layout.unpack(params)
    acts, pre = [h], []
    for w, b in blocks[:-1]:
        a = acts[-1] @ w + b
        pre.append(a)
        acts.append(np.maximum(a, 0.0))
    grad = np.empty(layout.size)
    delta = np.column_stack([d_mu, d_raw])
    for li in range(len(blocks) - 1, -1, -1):
        w_off, b_off, fi, fo = layout.blocks[li]
        grad[w_off:b_off] = (acts[li].T @ delta).ravel()
        grad[b_off:b_off + fo] = delta.sum(axis=0)
        if li:
            delta = (delta @ blocks[li][0].T) * (pre[li - 1] > 0)
    return grad


def squared_loss(mu, raw, y):
    """Per-point squared errors; the noise head is ignored."""
    r = mu - y
    return r * r, 2.0 * r, np.zeros_like(raw)


def gaussian_nll(mu, raw, y):
    """Per-point heteroscedastic Gaussian negative log-likelihood and its partials."""
    sigma = noise_scale(raw)
    r = y - mu
    z2 = (r / sigma) ** 2
    loss = 0.5 * z2 + np.log(sigma) + 0.5 * np.log(2 * np.pi)
    d_mu = -r / sigma**2
    d_sigma = (1.0 - z2) / sigma
    return loss, d_mu, d_sigma * sigmoid(raw)


LOSSES = {"squared": squared_loss, "gaussian_nll": gaussian_nll}


def loss_and_gradient(topology: Topology, params, x, y, loss: str = "gaussian_nll",
                      layout: Layout | None = None):
    layout = layout or topology.layout()
    params = _check_params(layout, params)
    x = _as_batch(topology, x)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    y = np.asarray(y, dtype=float).reshape(-1)
    mu, raw = forward(topology, params, x, layout)
    terms, d_mu, d_raw = LOSSES[loss](mu, raw, y)
    check_finite(terms, mu, raw, y, loss)
    return float(np.sum(terms)), backprop(topology, params, x, d_mu, d_raw, layout)


def check_finite(terms, mu, raw, y, what: str):
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"non-finite {what} term at point {i}: value={terms[i]}, "
                             f"mu={mu[i]}, raw_noise={raw[i]}, y={y[i]}")


def gradient(topology: Topology, params, x, y, loss: str = "gaussian_nll") -> np.ndarray:
    return loss_and_gradient(topology, params, x, y, loss)[1]


def init_means(topology: Topology, rng) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    layout = topology.layout()
    params = np.zeros(layout.size)
    for w_off, b_off, fi, fo in layout.blocks:
        limit = np.sqrt(6.0 / (fi + fo))
        params[w_off:b_off] = rng.uniform(-limit, limit, size=fi * fo)
    return params


def lr_at_epoch(base_lr: float, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch <= DECAY_START:
        return base_lr
    return base_lr * float(np.exp(-DECAY_RATE * (epoch - DECAY_START)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    base_lr: float = 1e-3
    decay: float = DECAY_RATE

    @classmethod
    def zeros(cls, n: int, base_lr: float) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, base_lr)


def adam_step(state: AdamState, params, grads, epoch: int | None = None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    The step size follows ``lr_at_epoch``; ``epoch`` defaults to the step count.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    step = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    lr = lr_at_epoch(state.base_lr, state.step if epoch is None else epoch)
    new = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, AdamState(m, v, step, state.base_lr, state.decay)
