"""Tabular offline learners (FQI and a discrete BCQ analog) and policy evaluation.

States are identified by their exact feature vectors, so any discrete
state encoding works. Each sweep applies the empirical Bellman backup

    Q(x, u) <- mean over buffer rows (x, u, r, x', e) of r + gamma (1 - e) V(x')

where ``V(x') = max_u' Q(x', u')`` for FQI, and for DiscreteBCQ the max
only ranges over actions whose behaviour count satisfies
``N(x', u') / max_a N(x', a) >= constraint``. Pairs absent from the buffer
keep Q = 0; states never seen as a source state act greedily over a zero
Q row, i.e. they pick action 0.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffer import ReplayBuffer
from .envs import DomainConfig, make_env

FQI = "fqi"
BCQ = "bcq"

MAGIC = b"DVQP"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = BCQ
    gamma: float = 0.9
    iterations: int = 300
    mini_batch_size: int = 100
    constraint: float = 0.3
    checkpoint_every: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in (FQI, BCQ):
            raise ValueError(f"algorithm must be fqi or bcq, got {self.algorithm!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.constraint <= 1.0:
            raise ValueError("constraint must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class OfflinePolicy:
    state_keys: np.ndarray  # (n_states, m) feature vector of each state id
    q: np.ndarray  # (n_states, n_actions)
    counts: np.ndarray  # (n_states, n_actions) behaviour counts N(x, u)
    constraint: float
    algorithm: str
    _index: dict = field(default=None, repr=False, compare=False)
    _greedy: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._index = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(self.state_keys))}
        self._greedy = self.greedy_actions()

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    def allowed(self) -> np.ndarray:
        """Action mask used by the greedy rule (all True for FQI or unseen states)."""
        return _allowed_mask(self.counts, self.constraint if self.algorithm == BCQ else 0.0)

    def state_id(self, state) -> int | None:
        return self._index.get(np.asarray(state, dtype=np.float64).tobytes())

    def greedy_actions(self) -> np.ndarray:
        return _masked_argmax(self.q, self.allowed())

    def act(self, state) -> int:
        sid = self.state_id(state)
        if sid is None:
            return 0
        return int(self._greedy[sid])


def _allowed_mask(counts, tau) -> np.ndarray:
    top = counts.max(axis=1, keepdims=True)
    seen = top > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ok = counts / np.where(seen, top, 1) >= tau
    # tau == 0 admits unsupported actions too; unseen states stay unconstrained
    if tau <= 0:
        ok = np.ones_like(ok, dtype=bool)
    return np.where(seen, ok, True)


def _masked_argmax(q, mask) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest action id on ties
    return np.argmax(np.where(mask, q, -np.inf), axis=1)


@dataclass
class TrainingResult:
    policy: OfflinePolicy
    sup_diffs: list[float]
    checkpoints: list[tuple[int, np.ndarray]]


def _index_states(states, next_states):
    both = np.vstack([states, next_states])
    keys, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = len(states)
    return keys, inverse[:n], inverse[n:]


def train_offline(buffer: ReplayBuffer, cfg: LearnerConfig) -> TrainingResult:
    """Fitted Q iteration over the buffer's empirical MDP.

    Runs exactly ``cfg.iterations`` full sweeps; Q snapshots are kept every
    ``ceil(checkpoint_every * iterations)`` sweeps and after the last one.
    """
    if len(buffer) == 0:
        raise ValueError("cannot train on an empty buffer")
    if not buffer.action_spec.is_discrete:
        raise ValueError("tabular learners need discrete actions")
    a = buffer.arrays
    n_actions = buffer.action_spec.size
    keys, sid, nsid = _index_states(a.states, a.next_states)
    n_states = len(keys)
    pair = sid * n_actions + a.actions
    counts = np.bincount(pair, minlength=n_states * n_actions).astype(np.float64)
    visited = counts > 0
    counts2d = counts.reshape(n_states, n_actions)
    tau = cfg.constraint if cfg.algorithm == BCQ else 0.0
    mask = _allowed_mask(counts2d, tau)
    cont = cfg.gamma * (~a.terminals).astype(np.float64)
    mean_reward = np.bincount(pair, weights=a.rewards, minlength=n_states * n_actions)
    mean_reward[visited] /= counts[visited]

    q = np.zeros((n_states, n_actions))
    every = max(1, math.ceil(cfg.checkpoint_every * cfg.iterations))
    sup_diffs, checkpoints = [], []
    for it in range(1, cfg.iterations + 1):
        v = np.max(np.where(mask, q, -np.inf), axis=1)
        boot = np.bincount(pair, weights=cont * v[nsid], minlength=n_states * n_actions)
        new = np.zeros(n_states * n_actions)
        new[visited] = mean_reward[visited] + boot[visited] / counts[visited]
        new = new.reshape(n_states, n_actions)
        sup_diffs.append(float(np.max(np.abs(new - q))))
        q = new
        if it % every == 0 or it == cfg.iterations:
            checkpoints.append((it, q.copy()))
    policy = OfflinePolicy(keys, q, counts2d, cfg.constraint, cfg.algorithm)
    return TrainingResult(policy, sup_diffs, checkpoints)


def with_q(policy: OfflinePolicy, q: np.ndarray) -> OfflinePolicy:
    return OfflinePolicy(policy.state_keys, q, policy.counts, policy.constraint, policy.algorithm)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    mean_return: float
    std: float
    returns: list[float]

    @property
    def std_error(self) -> float:
        return self.std / math.sqrt(len(self.returns))

    def to_dict(self) -> dict:
        return {
            "mean_return": self.mean_return,
            "std": self.std,
            "std_error": self.std_error,
            "episodes": len(self.returns),
            "returns": list(self.returns),
        }


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def evaluate_policy(policy, env_cfg: DomainConfig, episodes: int, seed: int) -> EvalResult:
    """Undiscounted return of the greedy policy over seeded episodes.

    Episode ``i`` runs in an environment seeded by ``(seed, i)``, so two
    policies evaluated with the same seed face the same random draws.
    ``std`` is the sample standard deviation (0 for a single episode).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    for i in range(episodes):
        env = make_env(env_cfg, episode_seed(seed, i))
        x = env.reset()
        total = 0.0
        while not env.done:
            x, r, _ = env.step(policy.act(x))
            total += r
        returns.append(total)
    arr = np.array(returns)
    std = float(arr.std(ddof=1)) if episodes > 1 else 0.0
    return EvalResult(float(arr.mean()), std, returns)


# --------------------------------------------------------------------------
# persistence


def to_bytes(policy: OfflinePolicy) -> bytes:
    """``DVQP | u8 version | u8 algorithm (0 fqi, 1 bcq) | f64 constraint |
    u32 n_states | u32 n_actions | u32 m | keys f64 | Q f64 | counts f64``."""
    n_states, n_actions = policy.q.shape
    m = policy.state_keys.shape[1]
    head = struct.pack(
        "<4sBBdIII",
        MAGIC,
        FORMAT_VERSION,
        0 if policy.algorithm == FQI else 1,
        policy.constraint,
        n_states,
        n_actions,
        m,
    )
    body = b"".join(
        np.ascontiguousarray(x, dtype="<f8").tobytes()
        for x in (policy.state_keys, policy.q, policy.counts)
    )
    return head + body


def from_bytes(data: bytes) -> OfflinePolicy:
    head = struct.Struct("<4sBBdIII")
    if len(data) < head.size:
        raise ValueError("truncated policy file")
    magic, version, alg, tau, n_states, n_actions, m = head.unpack_from(data, 0)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise ValueError("not a version-1 DVQP policy file")
    sizes = [n_states * m, n_states * n_actions, n_states * n_actions]
    payload = np.frombuffer(data, dtype="<f8", offset=head.size)
    if payload.size != sum(sizes) or (len(data) - head.size) % 8:
        raise ValueError("policy payload does not match its header")
    keys = payload[: sizes[0]].reshape(n_states, m).astype(np.float64)
    q = payload[sizes[0] : sizes[0] + sizes[1]].reshape(n_states, n_actions).astype(np.float64)
    counts = payload[sizes[0] + sizes[1] :].reshape(n_states, n_actions).astype(np.float64)
    return OfflinePolicy(keys, q, counts, tau, FQI if alg == 0 else BCQ)


def save(policy: OfflinePolicy, path) -> None:
    Path(path).write_bytes(to_bytes(policy))


def load(path) -> OfflinePolicy:
    return from_bytes(Path(path).read_bytes())
