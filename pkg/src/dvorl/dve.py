"""Data value estimator training, valuation and buffer filtering.

Training walks the source buffer in consecutive batches. For each batch:

1. ``w = v_phi(batch)``;
2. the reward ``r_phi = 1 / KL(batch features || target features)``;
3. ``r_sig = r_phi - r_rolling``;
4. ``phi += sign * alpha * r_sig * grad log pi(s | w)``;
5. ``r_rolling = (omega - 1) / omega * r_rolling + r_phi / omega``.

The selection vector ``s`` is the values themselves in ``soft`` mode and a
Bernoulli draw from them in ``bernoulli`` mode. In ``weighted`` reward mode
the source side of the KL is weighted by ``s``; ``batch`` mode compares the
unweighted batch, which makes ``r_phi`` independent of the network.

With ``standardize`` the network is trained on z-scored inputs (source
buffer statistics) and the scaling is folded into the first layer when
training ends, so the returned network consumes raw transition rows.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import neural
from .buffer import ReplayBuffer, batch_slices
from .divergence import (
    GAUSSIAN,
    HISTOGRAM,
    KNN,
    FeatureMode,
    KlEstimatorConfig,
    estimate_kl,
    cell_codes,
    extract_features,
    grid_spacing,
    kl_histogram_codes,
    reward_from_kl,
    weighted_kl,
)

log = logging.getLogger(__name__)

SOFT = "soft"
BERNOULLI = "bernoulli"
BATCH = "batch"
WEIGHTED = "weighted"


@dataclass(frozen=True)
class DveConfig:
    batch_size: int = 200
    moving_average_window: int = 20
    selection_threshold: float = 0.1
    learning_rate: float = 0.01
    feature_mode: FeatureMode = FeatureMode.STATE_ACTION_NEXT
    kl: KlEstimatorConfig = field(default_factory=KlEstimatorConfig)
    surrogate_mode: str = BERNOULLI
    reward_mode: str = WEIGHTED
    epochs: int = 5
    hidden_sizes: tuple[int, ...] = (128, 128)
    # +1 ascends the expected reward; -1 reproduces the literal minus sign
    update_sign: int = 1
    standardize: bool = True
    # when a batch's mean value drops below this, the update also pushes
    # every value up (0 disables it)
    min_mean_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_mode", FeatureMode(self.feature_mode))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 <= self.selection_threshold <= 1.0:
            raise ValueError("selection_threshold must lie in [0, 1]")
        if self.moving_average_window < 1:
            raise ValueError("moving_average_window must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.surrogate_mode not in (SOFT, BERNOULLI):
            raise ValueError(f"surrogate_mode must be soft or bernoulli, got {self.surrogate_mode!r}")
        if self.reward_mode not in (BATCH, WEIGHTED):
            raise ValueError(f"reward_mode must be batch or weighted, got {self.reward_mode!r}")
        if self.update_sign not in (1, -1):
            raise ValueError("update_sign must be +1 or -1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.min_mean_value < 1.0:
            raise ValueError("min_mean_value must lie in [0, 1)")


@dataclass
class DveTrainerState:
    window: int
    r_rolling: float = 0.0
    step: int = 0
    floor_steps: int = 0
    history: list[tuple[float, float, float]] = field(default_factory=list)

    def observe(self, r_phi: float) -> float:
        """Record one batch reward; returns ``r_sig`` against the pre-update baseline."""
        r_sig = r_phi - self.r_rolling
        self.r_rolling = (self.window - 1) / self.window * self.r_rolling + r_phi / self.window
        self.step += 1
        self.history.append((r_phi, r_sig, self.r_rolling))
        return r_sig


def dve_inputs(buffer: ReplayBuffer) -> np.ndarray:
    """Full-transition rows ``[x, u, x', r, e]`` fed to the value network."""
    a = buffer.arrays
    n = len(a)
    return np.hstack(
        [
            a.states,
            a.actions.reshape(n, -1).astype(np.float64),
            a.next_states,
            a.rewards.reshape(n, 1),
            a.terminals.reshape(n, 1).astype(np.float64),
        ]
    )


def input_dim(state_dim: int, action_width: int) -> int:
    return 2 * state_dim + action_width + 2


def train_dve(source: ReplayBuffer, target: ReplayBuffer, cfg: DveConfig):
    """Train the value network on ``source`` against ``target``.

    Returns ``(net, state)`` where ``state.history`` holds one
    ``(r_phi, r_sig, r_rolling)`` triple per batch update.
    """
    if len(target) == 0:
        raise ValueError("target buffer is empty")
    if len(source) == 0:
        raise ValueError("source buffer is empty")
    if source.state_dim != target.state_dim or source.action_spec != target.action_spec:
        raise ValueError("source and target buffers have incompatible dimensions")

    kl_cfg = cfg.kl
    if kl_cfg.method == KNN and len(target) < kl_cfg.k + 1:
        log.warning(
            "target buffer has %d rows, too few for the %d-NN estimator; using the Gaussian fit",
            len(target),
            kl_cfg.k,
        )
        kl_cfg = replace(kl_cfg, method=GAUSSIAN)

    x_in = dve_inputs(source)
    batch_reward = _reward_function(
        extract_features(source, cfg.feature_mode),
        extract_features(target, cfg.feature_mode),
        cfg.reward_mode,
        kl_cfg,
    )
    shift, scale = input_scaling(x_in) if cfg.standardize else (None, None)
    if shift is not None:
        x_in = (x_in - shift) / scale

    net = neural.init(x_in.shape[1], cfg.hidden_sizes, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    state = DveTrainerState(cfg.moving_average_window)
    slices = batch_slices(len(source), cfg.batch_size)
    for _ in range(cfg.epochs):
        for sl in slices:
            x = x_in[sl]
            w = neural.forward(net, x)
            if cfg.surrogate_mode == BERNOULLI:
                s = (rng.random(len(w)) < w).astype(np.float64)
            else:
                s = w.copy()
            r_sig = state.observe(batch_reward(sl, s, rng))
            _, grads = neural.logprob_grad(net, x, s)
            neural.apply_update(net, grads, cfg.update_sign * cfg.learning_rate * r_sig)
            if w.mean() < cfg.min_mean_value:
                push_values_up(net, x, cfg.learning_rate)
                state.floor_steps += 1
    if shift is not None:
        net = fold_scaling(net, shift, scale)
    return net, state


def push_values_up(net, x, learning_rate: float):
    """One ascent step on ``sum(log w)`` over the rows ``x``; returns ``net``.

    The logit gradient ``1 - w`` is applied without the log clamp and logit
    clip of ``logprob_grad``, so it stays near 1 on a network whose outputs
    have saturated at 0, where the REINFORCE term ``s - w`` vanishes.
    """
    w = neural.forward(net, x)
    return neural.apply_update(net, neural.logit_grad(net, x, 1.0 - w), learning_rate)


def _reward_function(src_feats, tgt_feats, reward_mode, kl_cfg):
    """``reward(batch_slice, s, rng) -> r_phi`` for one training run."""
    if kl_cfg.method == HISTOGRAM:
        src_codes, tgt_codes = cell_codes(src_feats, tgt_feats)

        def reward(sl, s, rng):
            # an empty selection falls back to the unweighted batch
            weights = s if reward_mode == WEIGHTED and s.sum() > 0 else None
            kl = kl_histogram_codes(src_codes[sl], tgt_codes, weights, kl_cfg.smoothing, kl_cfg.bias_correction)
            return reward_from_kl(kl, kl_cfg)

        return reward

    spacing = None
    if kl_cfg.method == KNN and kl_cfg.dequantize:
        spacing = grid_spacing(np.vstack([src_feats, tgt_feats]))

    def reward(sl, s, rng):
        feats = src_feats[sl]
        cfg = kl_cfg
        if cfg.method == KNN and len(feats) < cfg.k + 1:
            cfg = replace(cfg, method=GAUSSIAN)
        if reward_mode == BATCH or not s.sum() > 0:
            kl = estimate_kl(feats, tgt_feats, cfg, rng=rng, spacing=spacing)
        else:
            kl = weighted_kl(feats, tgt_feats, s, cfg, rng, spacing=spacing)
        return reward_from_kl(kl, cfg)

    return reward


def input_scaling(x):
    """Column means and standard deviations; constant columns get scale 1."""
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return shift, scale


def fold_scaling(net: neural.ValueNet, shift, scale) -> neural.ValueNet:
    """Network on raw rows equivalent to ``net`` applied to ``(x - shift) / scale``."""
    out = net.copy()
    w0 = net.weights[0] / scale[:, None]
    out.weights[0] = w0
    out.biases[0] = net.biases[0] - shift @ w0
    return out


# --------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class ValuedBuffer:
    buffer: ReplayBuffer
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(values) != len(self.buffer):
            raise ValueError("one value per transition is required")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def value_buffer(net: neural.ValueNet, buffer: ReplayBuffer, batch_size: int = 200) -> ValuedBuffer:
    """Per-transition values computed batch by batch, aligned with buffer order."""
    x = dve_inputs(buffer) if len(buffer) else np.empty((0, net.input_dim))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"network expects {net.input_dim} inputs, buffer yields {x.shape[1]}")
    values = np.empty(len(buffer))
    for sl in batch_slices(len(buffer), batch_size):
        values[sl] = neural.forward(net, x[sl])
    return ValuedBuffer(buffer, values)


def filter_buffer(vb: ValuedBuffer, threshold: float) -> ReplayBuffer:
    """Keep transitions with ``w >= threshold``, in original order."""
    keep = np.flatnonzero(vb.values >= threshold)
    return vb.buffer.subset(keep, domain_tag=f"{vb.buffer.domain_tag}|filtered(eps={threshold!r})")


def removal_order(values, side: str) -> np.ndarray:
    """Indices in removal order; equal values go lower index first."""
    values = np.asarray(values)
    idx = np.arange(len(values))
    if side == "highest":
        return np.lexsort((idx, -values))
    if side == "lowest":
        return np.lexsort((idx, values))
    raise ValueError(f"side must be 'highest' or 'lowest', got {side!r}")


def n_removed(fraction: float, n: int) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    # tolerance absorbs representation error such as 0.29 * 100 = 28.999...
    return min(n, int(math.floor(fraction * n + 1e-9)))


def exclude_fraction(vb: ValuedBuffer, fraction: float, side: str) -> ReplayBuffer:
    """Drop the ``floor(fraction * N)`` highest- or lowest-valued transitions."""
    n = len(vb.buffer)
    drop = removal_order(vb.values, side)[: n_removed(fraction, n)]
    keep = np.setdiff1d(np.arange(n), drop)
    return vb.buffer.subset(keep, domain_tag=f"{vb.buffer.domain_tag}|excluded({side},{fraction!r})")


# --------------------------------------------------------------------------
# CSV artifacts


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "r_phi", "r_sig", "r_rolling"])
        for i, (r_phi, r_sig, r_rolling) in enumerate(history):
            writer.writerow([i, repr(r_phi), repr(r_sig), repr(r_rolling)])


def write_values_csv(values, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "w"])
        for i, w in enumerate(values):
            writer.writerow([i, repr(float(w))])


def read_values_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["index", "w"]:
            raise ValueError(f"{path}: expected header 'index,w'")
        rows = [(int(i), float(w)) for i, w in reader]
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: indices must be 0..N-1 in order")
    return np.array([w for _, w in rows])
