"""Feed-forward data value estimator with hand-written backpropagation.

The network maps a full transition row ``[x, u, x', r, e]`` to a value in
(0, 1): ReLU hidden layers, one sigmoid output unit, float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Logits are clipped here so the sigmoid stays strictly inside (0, 1) in f64.
LOGIT_CLIP = 35.0
# Values are clamped to [LOG_EPS, 1 - LOG_EPS] inside the logarithms only.
LOG_EPS = 1e-6

MAGIC = b"DVNN"
FORMAT_VERSION = 1


@dataclass
class ValueNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "ValueNet":
        return ValueNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init(input_dim: int, hidden_sizes=(128, 128), seed: int = 0) -> ValueNet:
    """Glorot-uniform weights, ``bound = sqrt(6 / (fan_in + fan_out))``; zero biases."""
    sizes = [int(input_dim)] + [int(h) for h in hidden_sizes] + [1]
    if min(sizes) < 1:
        raise ValueError("all layer sizes must be >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ValueNet(weights, biases)


def zeros_like(net: ValueNet) -> ValueNet:
    return ValueNet([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _forward(net: ValueNet, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected feature width {net.input_dim}, got shape {x.shape}")
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    logits = acts[-1][:, 0]
    return logits, pre, acts


def forward(net: ValueNet, batch_features) -> np.ndarray:
    """Per-row values ``w`` in (0, 1)."""
    logits, _, _ = _forward(net, batch_features)
    return _sigmoid(np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP))


def logprob_grad(net: ValueNet, batch_features, s) -> tuple[float, GradientBundle]:
    """Bernoulli log-likelihood of the selection vector ``s`` and its gradient.

    ``log pi = sum_i s_i log w_i + (1 - s_i) log(1 - w_i)`` with ``w``
    recomputed from ``net``. The gradient is exact for the function as
    computed, including the logit clip and the log clamp (both have zero
    derivative where active). Note that ``s == w`` makes the gradient
    vanish identically: d log pi / d logit_i = s_i - w_i.
    """
    logits, pre, acts = _forward(net, batch_features)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape[0] != logits.shape[0]:
        raise ValueError(f"selection vector has {s.shape[0]} entries for {logits.shape[0]} rows")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("selection entries must lie in [0, 1]")

    clipped = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    w = _sigmoid(clipped)
    wc = np.clip(w, LOG_EPS, 1.0 - LOG_EPS)
    logprob = float(np.sum(s * np.log(wc) + (1.0 - s) * np.log(1.0 - wc)))

    # d logprob / d wc, then through the clamp, the sigmoid and the clip
    dwc = s / wc - (1.0 - s) / (1.0 - wc)
    dw = np.where((w >= LOG_EPS) & (w <= 1.0 - LOG_EPS), dwc, 0.0)
    dz = dw * w * (1.0 - w)
    dz = np.where(np.abs(logits) <= LOGIT_CLIP, dz, 0.0)
    return logprob, _backprop(net, pre, acts, dz)


def logit_grad(net: ValueNet, batch_features, dlogit) -> GradientBundle:
    """Gradient of ``sum_i dlogit_i * logit_i`` for fixed coefficients ``dlogit``."""
    _, pre, acts = _forward(net, batch_features)
    dlogit = np.asarray(dlogit, dtype=np.float64).reshape(-1)
    if dlogit.shape[0] != acts[0].shape[0]:
        raise ValueError(f"{dlogit.shape[0]} coefficients for {acts[0].shape[0]} rows")
    return _backprop(net, pre, acts, dlogit)


def _backprop(net: ValueNet, pre, acts, dz) -> GradientBundle:
    delta = dz[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0)
    return GradientBundle(gw, gb)


def apply_update(net: ValueNet, grads: GradientBundle, scale: float) -> ValueNet:
    """In-place ``params += scale * grads``; returns ``net``.

    Callers pass ``scale = +alpha * r_sig`` for gradient ascent on the
    expected reward.
    """
    for w, g in zip(net.weights, grads.weights):
        if w.shape != g.shape:
            raise ValueError("gradient shape does not match the network")
        w += scale * g
    for b, g in zip(net.biases, grads.biases):
        if b.shape != g.shape:
            raise ValueError("gradient shape does not match the network")
        b += scale * g
    return net


def to_bytes(net: ValueNet) -> bytes:
    """``DVNN | u8 version | u32 n_sizes | u32 sizes... | f64 params``.

    Parameters are written layer by layer, weights (row-major, fan_in x
    fan_out) then biases, little-endian.
    """
    sizes = net.layer_sizes
    head = struct.pack(f"<4sBI{len(sizes)}I", MAGIC, FORMAT_VERSION, len(sizes), *sizes)
    return head + net.flat().astype("<f8").tobytes()


def from_bytes(data: bytes) -> ValueNet:
    if len(data) < 9 or data[:4] != MAGIC:
        raise ValueError("not a DVNN checkpoint")
    version, n_sizes = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 9
    if len(data) < offset + 4 * n_sizes or n_sizes < 2:
        raise ValueError("truncated checkpoint header")
    sizes = struct.unpack_from(f"<{n_sizes}I", data, offset)
    offset += 4 * n_sizes
    params = np.frombuffer(data, dtype="<f8", offset=offset)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if params.size != expected or (len(data) - offset) % 8:
        raise ValueError("checkpoint payload does not match its layer sizes")
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float64))
        pos += fan_in * fan_out
        biases.append(params[pos : pos + fan_out].astype(np.float64))
        pos += fan_out
    return ValueNet(weights, biases)


def save(net: ValueNet, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path) -> ValueNet:
    return from_bytes(Path(path).read_bytes())
